#pragma once

#include <string>

#include "crowdcount/image.hpp"

namespace crowdcount {

// 8-bit RGB PNG. Values are quantized with round(v * 255) on write and
// mapped back as v / 255 on read, so write -> read is stable.
void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

}  // namespace crowdcount
