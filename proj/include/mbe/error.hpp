#pragma once

#include <stdexcept>
#include <string>

namespace mbe {

// Argument or shape violations of an operation's preconditions.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Optimization produced a non-finite loss. The message carries the epoch and
// the last finite loss so callers can decide to retry with another seed.
class FitFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFitted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A model site has no calibration record or no approximator to back it.
class ConversionError : public std::runtime_error {
public:
    ConversionError(const std::string& site, const std::string& what)
        : std::runtime_error(what + ": " + site), site_(site) {}
    const std::string& site() const noexcept { return site_; }

private:
    std::string site_;
};

class VersionMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mbe
