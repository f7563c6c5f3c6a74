#ifndef MUFFIN_ERRORS_HPP
#define MUFFIN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace muffin {

// Input files or arguments violate a documented contract. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A requested configuration cannot be realized (e.g. a complementarity rate
// outside the feasible range of the accuracy targets). CLI exit code 2.
class InfeasibleError : public std::runtime_error {
public:
    explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

// A safety guard refused the request (e.g. enumeration space too large).
// CLI exit code 3.
class GuardError : public std::runtime_error {
public:
    explicit GuardError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace muffin

#endif
