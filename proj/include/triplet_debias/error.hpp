#pragma once

#include <stdexcept>
#include <string>

namespace triplet_debias {

// Malformed or inconsistent input data. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unreadable or unwritable files. The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace triplet_debias
