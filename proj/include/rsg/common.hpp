#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsg {

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError -> 1, NumericalError/ContractError -> 2, IoError/FormatError -> 3.
struct DimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Row-major strides; size-1 and leading axes handled by the caller.
inline Shape strides_of(const Shape& s) {
    Shape st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Global switch for per-op output finiteness assertions. Cheap linear pass;
// kept on by default, turned off on benchmark paths.
inline bool& finite_checks_enabled() {
    static bool on = true;
    return on;
}

}  // namespace rsg
