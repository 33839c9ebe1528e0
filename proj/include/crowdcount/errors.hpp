#pragma once

#include <stdexcept>
#include <string>

namespace crowdcount {

// Exit code convention shared with the CLI:
//   0 success, 1 usage, 2 data validation, 3 training divergence, 4 digest mismatch.

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
    static constexpr int exit_code = 1;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
    static constexpr int exit_code = 2;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
    static constexpr int exit_code = 3;
};

struct DigestError : std::runtime_error {
    using std::runtime_error::runtime_error;
    static constexpr int exit_code = 4;
};

}  // namespace crowdcount
