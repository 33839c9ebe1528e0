#include "crowdcount/image.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace crowdcount {

Image make_image(int height, int width, std::string source_id) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("image dimensions must be positive");
    Image img;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<std::size_t>(height) * width * 3, 0.0f);
    img.source_id = std::move(source_id);
    return img;
}

Image resize_bilinear(const Image& img, int out_height, int out_width) {
    if (out_height <= 0 || out_width <= 0) throw std::invalid_argument("resize target must be positive");
    if (out_height == img.height && out_width == img.width) return img;

    Image out = make_image(out_height, out_width, img.source_id);
    const float sy = static_cast<float>(img.height) / out_height;
    const float sx = static_cast<float>(img.width) / out_width;

    for (int y = 0; y < out_height; ++y) {
        float src_y = (y + 0.5f) * sy - 0.5f;
        src_y = std::clamp(src_y, 0.0f, static_cast<float>(img.height - 1));
        const int y0 = static_cast<int>(src_y);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const float fy = src_y - y0;
        for (int x = 0; x < out_width; ++x) {
            float src_x = (x + 0.5f) * sx - 0.5f;
            src_x = std::clamp(src_x, 0.0f, static_cast<float>(img.width - 1));
            const int x0 = static_cast<int>(src_x);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const float fx = src_x - x0;
            for (int c = 0; c < 3; ++c) {
                const float top = img.at(y0, x0, c) * (1.0f - fx) + img.at(y0, x1, c) * fx;
                const float bot = img.at(y1, x0, c) * (1.0f - fx) + img.at(y1, x1, c) * fx;
                out.at(y, x, c) = top * (1.0f - fy) + bot * fy;
            }
        }
    }
    return out;
}

void flip_horizontal_inplace(Image& img) {
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width / 2; ++x) {
            for (int c = 0; c < 3; ++c) {
                std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
            }
        }
    }
}

void scale_brightness_inplace(Image& img, float factor) {
    for (float& v : img.pixels) v = std::clamp(v * factor, 0.0f, 1.0f);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(n)));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> cursor{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = cursor.fetch_add(1, std::memory_order_relaxed);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace crowdcount
