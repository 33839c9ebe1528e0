#pragma once

#include <atomic>
#include <cstdint>

namespace crowdcount {

// True counts ride along with every generated example for evaluation, but
// no training operation may read them. Every read goes through reveal(),
// which bumps a process-wide counter; tests snapshot the counter around a
// training call to prove the call performed zero reveals.
class BlindedCount {
  public:
    BlindedCount() = default;
    explicit BlindedCount(long long value) : value_(value) {}

    long long reveal() const {
        counter().fetch_add(1, std::memory_order_relaxed);
        return value_;
    }

    static std::uint64_t reveals() { return counter().load(std::memory_order_relaxed); }

  private:
    static std::atomic<std::uint64_t>& counter() {
        static std::atomic<std::uint64_t> c{0};
        return c;
    }

    long long value_ = 0;
};

}  // namespace crowdcount
