#include "crowdcount/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "crowdcount/errors.hpp"
#include "crowdcount/rng.hpp"

namespace crowdcount::synth {

namespace {

constexpr float kPedHalfWidthFactor = 2.0f;
constexpr float kPedAspect = 2.0f;  // half-height = aspect * half-width

struct Rgb {
    float r, g, b;
};

// Smoothstep-interpolated value noise on a square lattice.
float value_noise(std::uint64_t seed, float x, float y, float cell, int octave) {
    const float gx = x / cell;
    const float gy = y / cell;
    const auto x0 = static_cast<std::int64_t>(std::floor(gx));
    const auto y0 = static_cast<std::int64_t>(std::floor(gy));
    float fx = gx - x0;
    float fy = gy - y0;
    fx = fx * fx * (3.0f - 2.0f * fx);
    fy = fy * fy * (3.0f - 2.0f * fy);
    const float v00 = hash01(seed, x0, y0, octave);
    const float v10 = hash01(seed, x0 + 1, y0, octave);
    const float v01 = hash01(seed, x0, y0 + 1, octave);
    const float v11 = hash01(seed, x0 + 1, y0 + 1, octave);
    const float top = v00 * (1.0f - fx) + v10 * fx;
    const float bot = v01 * (1.0f - fx) + v11 * fx;
    return top * (1.0f - fy) + bot * fy;
}

void paint_ellipse(Image& img, float cx, float cy, float half_w, float half_h, Rgb color) {
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - half_w - 1.0f)));
    const int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(cx + half_w + 1.0f)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - half_h - 1.0f)));
    const int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(cy + half_h + 1.0f)));
    for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
            const float dx = (x + 0.5f - cx) / half_w;
            const float dy = (y + 0.5f - cy) / half_h;
            const float d = dx * dx + dy * dy;
            const float alpha = std::clamp((1.15f - d) / 0.3f, 0.0f, 1.0f);
            if (alpha <= 0.0f) continue;
            img.at(y, x, 0) = img.at(y, x, 0) * (1.0f - alpha) + color.r * alpha;
            img.at(y, x, 1) = img.at(y, x, 1) * (1.0f - alpha) + color.g * alpha;
            img.at(y, x, 2) = img.at(y, x, 2) * (1.0f - alpha) + color.b * alpha;
        }
    }
}

void paint_rect(Image& img, float cx, float cy, float half_w, float half_h, Rgb color) {
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - half_w)));
    const int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(cx + half_w)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - half_h)));
    const int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(cy + half_h)));
    for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
            if (std::abs(x + 0.5f - cx) > half_w || std::abs(y + 0.5f - cy) > half_h) continue;
            img.at(y, x, 0) = color.r;
            img.at(y, x, 1) = color.g;
            img.at(y, x, 2) = color.b;
        }
    }
}

void paint_distractor(Image& img, const SceneSpec& spec, const Distractor& d, int index) {
    const float m = perspective_scale(spec, d.y);
    // Equal shift on all channels keeps the red margin unchanged.
    const float jitter = 0.08f * (hash01(static_cast<std::uint64_t>(spec.background_seed) ^ 0x5d1573u, index, 7) - 0.5f);
    switch (d.kind) {
        case DistractorKind::crate:
            paint_rect(img, d.x, d.y, 2.4f * d.scale * m, 1.8f * d.scale * m,
                       {0.22f + jitter, 0.30f + jitter, 0.72f + jitter});
            break;
        case DistractorKind::pole:
            paint_rect(img, d.x, d.y, 0.5f * d.scale * m, 4.5f * d.scale * m,
                       {0.44f + jitter, 0.46f + jitter, 0.50f + jitter});
            break;
        case DistractorKind::bush:
            paint_ellipse(img, d.x, d.y, 2.6f * d.scale * m, 2.6f * d.scale * m,
                          {0.18f + jitter, 0.52f + jitter, 0.24f + jitter});
            break;
    }
}

}  // namespace

void validate_scene(const SceneSpec& spec) {
    if (spec.width <= 0 || spec.height <= 0) throw std::invalid_argument("scene has zero-area canvas");
    if (spec.perspective_factor < 0) throw std::invalid_argument("perspective_factor must be >= 0");
    auto in_bounds = [&](float x, float y) {
        return x >= 0 && x < static_cast<float>(spec.width) && y >= 0 && y < static_cast<float>(spec.height);
    };
    for (const auto& p : spec.pedestrians) {
        if (!in_bounds(p.x, p.y)) throw std::invalid_argument("pedestrian placement out of bounds");
        if (!(p.scale > 0)) throw std::invalid_argument("pedestrian scale must be > 0");
    }
    for (const auto& d : spec.distractors) {
        if (!in_bounds(d.x, d.y)) throw std::invalid_argument("distractor placement out of bounds");
        if (!(d.scale > 0)) throw std::invalid_argument("distractor scale must be > 0");
    }
}

float perspective_scale(const SceneSpec& spec, float y) {
    const float depth = 1.0f - y / static_cast<float>(spec.height);
    return 1.0f / (1.0f + spec.perspective_factor * depth);
}

void pedestrian_half_extents(const SceneSpec& spec, const Placement& p, float& half_w, float& half_h) {
    const float m = perspective_scale(spec, p.y);
    half_w = kPedHalfWidthFactor * p.scale * m;
    half_h = kPedAspect * half_w;
}

Image render_scene(const SceneSpec& spec) {
    validate_scene(spec);
    Image img = make_image(spec.height, spec.width);
    const auto seed = static_cast<std::uint64_t>(spec.background_seed);

    for (int y = 0; y < spec.height; ++y) {
        const float shade = 0.92f + 0.08f * (static_cast<float>(y) / spec.height);
        for (int x = 0; x < spec.width; ++x) {
            const float n = 0.65f * value_noise(seed, static_cast<float>(x), static_cast<float>(y), 8.0f, 1) +
                            0.35f * value_noise(seed, static_cast<float>(x), static_cast<float>(y), 3.0f, 2);
            const float grain = 0.06f * (hash01(seed, x, y, 3) - 0.5f);
            img.at(y, x, 0) = std::clamp((0.30f + 0.14f * n + grain) * shade, 0.0f, 1.0f);
            img.at(y, x, 1) = std::clamp((0.34f + 0.16f * n + grain) * shade, 0.0f, 1.0f);
            img.at(y, x, 2) = std::clamp((0.29f + 0.13f * n + grain) * shade, 0.0f, 1.0f);
        }
    }

    for (std::size_t i = 0; i < spec.distractors.size(); ++i) {
        paint_distractor(img, spec, spec.distractors[i], static_cast<int>(i));
    }

    // Pedestrians on top so occlusion by distractors cannot hide one.
    for (std::size_t i = 0; i < spec.pedestrians.size(); ++i) {
        const auto& p = spec.pedestrians[i];
        float half_w = 0, half_h = 0;
        pedestrian_half_extents(spec, p, half_w, half_h);
        const float jitter = 0.10f * (hash01(seed ^ 0x9c41u, static_cast<std::int64_t>(i), 11) - 0.5f);
        paint_ellipse(img, p.x, p.y, half_w, half_h, {0.85f + jitter, 0.20f + jitter, 0.24f + jitter});
    }
    return img;
}

SceneSpec remove_pedestrians(const SceneSpec& spec, double removal_fraction, std::uint64_t rng_seed) {
    if (removal_fraction < 0.0 || removal_fraction > 1.0) {
        throw std::invalid_argument("removal_fraction must be in [0, 1]");
    }
    const int n = spec.pedestrian_count();
    const int k = static_cast<int>(std::floor(removal_fraction * n));

    Rng rng(rng_seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::vector<bool> removed(n, false);
    for (int i = 0; i < k; ++i) removed[order[i]] = true;

    SceneSpec out = spec;
    out.pedestrians.clear();
    for (int i = 0; i < n; ++i) {
        if (!removed[i]) out.pedestrians.push_back(spec.pedestrians[i]);
    }
    for (int i = 0; i < k; ++i) {
        const auto& p = spec.pedestrians[order[i]];
        const auto kind = static_cast<DistractorKind>(rng.bounded(3));
        out.distractors.push_back({p.x, p.y, p.scale, kind});
    }
    return out;
}

SceneSpec sample_scene(const SceneParams& params, int pedestrian_count, std::uint64_t seed) {
    Rng rng(seed);
    SceneSpec spec;
    spec.width = params.width;
    spec.height = params.height;
    spec.perspective_factor = params.perspective;
    spec.background_seed = static_cast<std::int64_t>(rng.next());

    const int n_distractors = static_cast<int>(rng.uniform_int(params.distractors_min, params.distractors_max));
    for (int i = 0; i < n_distractors; ++i) {
        Distractor d;
        d.x = static_cast<float>(rng.uniform(0.0, params.width));
        d.y = static_cast<float>(rng.uniform(0.0, params.height));
        d.scale = static_cast<float>(rng.uniform(params.scale_min, params.scale_max));
        d.kind = static_cast<DistractorKind>(rng.bounded(3));
        spec.distractors.push_back(d);
    }
    for (int i = 0; i < pedestrian_count; ++i) {
        Placement p;
        p.x = static_cast<float>(rng.uniform(0.0, params.width));
        p.y = static_cast<float>(rng.uniform(0.0, params.height));
        p.scale = static_cast<float>(rng.uniform(params.scale_min, params.scale_max));
        spec.pedestrians.push_back(p);
    }
    return spec;
}

SceneSpec sample_scene_non_overlapping(const SceneParams& params, int pedestrian_count, std::uint64_t seed) {
    Rng rng(seed);
    SceneSpec spec;
    spec.width = params.width;
    spec.height = params.height;
    spec.perspective_factor = params.perspective;
    spec.background_seed = static_cast<std::int64_t>(rng.next());

    struct Box {
        float x_lo, x_hi, y_lo, y_hi;
    };
    std::vector<Box> boxes;
    const float margin = 2.0f;
    const long long max_tries = 200LL * std::max(1, pedestrian_count);
    long long tries = 0;
    while (spec.pedestrian_count() < pedestrian_count) {
        if (++tries > max_tries) {
            throw DataError("sample_scene_non_overlapping: cannot place " + std::to_string(pedestrian_count) +
                            " pedestrians on a " + std::to_string(params.width) + "x" +
                            std::to_string(params.height) + " canvas");
        }
        Placement p;
        p.scale = static_cast<float>(rng.uniform(params.scale_min, params.scale_max));
        p.x = static_cast<float>(rng.uniform(0.0, params.width));
        p.y = static_cast<float>(rng.uniform(0.0, params.height));
        float half_w = 0, half_h = 0;
        pedestrian_half_extents(spec, p, half_w, half_h);
        const Box box{p.x - half_w - margin, p.x + half_w + margin, p.y - half_h - margin, p.y + half_h + margin};
        if (box.x_lo < 0 || box.y_lo < 0 || box.x_hi >= static_cast<float>(params.width) ||
            box.y_hi >= static_cast<float>(params.height)) {
            continue;
        }
        bool clash = false;
        for (const auto& other : boxes) {
            if (box.x_lo <= other.x_hi && other.x_lo <= box.x_hi && box.y_lo <= other.y_hi &&
                other.y_lo <= box.y_hi) {
                clash = true;
                break;
            }
        }
        if (clash) continue;
        boxes.push_back(box);
        spec.pedestrians.push_back(p);
    }

    // Distractors placed last, also clear of the pedestrian boxes. Best
    // effort: attempts are capped, not the resulting count.
    const int n_distractors = static_cast<int>(rng.uniform_int(params.distractors_min, params.distractors_max));
    for (long long attempt = 0; attempt < 60LL * n_distractors; ++attempt) {
        if (static_cast<int>(spec.distractors.size()) >= n_distractors) break;
        Distractor d;
        d.x = static_cast<float>(rng.uniform(0.0, params.width));
        d.y = static_cast<float>(rng.uniform(0.0, params.height));
        d.scale = static_cast<float>(rng.uniform(params.scale_min, params.scale_max));
        d.kind = static_cast<DistractorKind>(rng.bounded(3));
        const float m = perspective_scale(spec, d.y);
        const float r = 5.0f * d.scale * m + margin;
        bool clash = false;
        for (const auto& box : boxes) {
            if (d.x - r <= box.x_hi && box.x_lo <= d.x + r && d.y - r <= box.y_hi && box.y_lo <= d.y + r) {
                clash = true;
                break;
            }
        }
        if (!clash) spec.distractors.push_back(d);
    }
    return spec;
}

}  // namespace crowdcount::synth
