#ifndef LDREG_ERRORS_HPP
#define LDREG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ldreg {

// Precondition or invariant violation on user-supplied values.
class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string &what) : std::runtime_error(what) {}
};

// Unreadable, malformed, or unsupported input file. Messages name the
// offending field or path.
class FormatError : public std::runtime_error {
  public:
    explicit FormatError(const std::string &what) : std::runtime_error(what) {}
};

// Missing or inconsistent dataset contents.
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string &what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
  public:
    explicit DivergenceError(const std::string &what) : std::runtime_error(what) {}
};

} // namespace ldreg

#endif
