#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace crowdcount {

// Interleaved RGB, row-major, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // height * width * 3
    std::string source_id;

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool same_shape(const Image& other) const { return height == other.height && width == other.width; }
};

Image make_image(int height, int width, std::string source_id = "");

// Bilinear, half-pixel-center convention. Identity (bit-exact copy) when the
// target shape matches the input.
Image resize_bilinear(const Image& img, int out_height, int out_width);

void flip_horizontal_inplace(Image& img);

// Multiplies all channels by `factor` and clamps to [0, 1].
void scale_brightness_inplace(Image& img, float factor);

// Runs fn(i) for i in [0, n) on a small worker pool. Each index is
// processed exactly once and writes only its own outputs, so results are
// identical to the sequential order.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace crowdcount
