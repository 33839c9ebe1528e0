#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace crowdcount {

// FNV-1a content digest. Not cryptographic; used for tamper-evident
// checkpoint payloads and frozen-encoder pairing checks.
class Fnv1a64 {
  public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ull;
        }
    }

    // Floats are hashed as little-endian IEEE-754 bytes regardless of host order.
    void update_float(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        unsigned char b[4] = {
            static_cast<unsigned char>(bits & 0xff),
            static_cast<unsigned char>((bits >> 8) & 0xff),
            static_cast<unsigned char>((bits >> 16) & 0xff),
            static_cast<unsigned char>((bits >> 24) & 0xff),
        };
        update(b, 4);
    }

    void update_floats(const float* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) update_float(p[i]);
    }

    void update_string(const std::string& s) { update(s.data(), s.size()); }

    std::uint64_t value() const { return h_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out = "fnv1a64:";
        for (int shift = 60; shift >= 0; shift -= 4) out.push_back(digits[(h_ >> shift) & 0xf]);
        return out;
    }

  private:
    std::uint64_t h_ = 0xcbf29ce484222325ull;
};

}  // namespace crowdcount
