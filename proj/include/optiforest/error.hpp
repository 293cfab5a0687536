#pragma once

#include <stdexcept>
#include <string>

namespace optiforest {

/// Bad input data: unreadable files, malformed CSV cells, dimension mismatches,
/// corrupted model files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters supplied by the caller (out-of-range sizes, thresholds, grids).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace optiforest
