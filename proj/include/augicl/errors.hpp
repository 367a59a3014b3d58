#pragma once

#include <stdexcept>
#include <string>

namespace augicl {

// Error taxonomy: parameter/layout/config errors are caller bugs, numerical
// errors are data-dependent, io errors come from the filesystem.
struct parameter_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct layout_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace augicl
