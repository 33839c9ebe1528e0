#pragma once

#include <cmath>
#include <vector>

namespace crowdcount {

// Adaptive-moment optimizer over externally owned (weight, grad) spans.
class Adam {
  public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

    void register_params(float* w, float* g, int n) {
        slots_.push_back({w, g, n, std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)});
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (auto& s : slots_) {
            for (int i = 0; i < s.n; ++i) {
                const double g = s.g[i];
                s.m[i] = static_cast<float>(b1_ * s.m[i] + (1.0 - b1_) * g);
                s.v[i] = static_cast<float>(b2_ * s.v[i] + (1.0 - b2_) * g * g);
                const double m_hat = s.m[i] / bc1;
                const double v_hat = s.v[i] / bc2;
                s.w[i] -= static_cast<float>(lr_ * m_hat / (std::sqrt(v_hat) + eps_));
            }
        }
    }

  private:
    struct Slot {
        float* w;
        float* g;
        int n;
        std::vector<float> m;
        std::vector<float> v;
    };

    std::vector<Slot> slots_;
    double lr_, b1_, b2_, eps_;
    long long t_ = 0;
};

}  // namespace crowdcount
