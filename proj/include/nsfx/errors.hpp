#pragma once

#include <stdexcept>
#include <string>

namespace nsfx {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class DegenerateVector : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class ConsistencyError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

/// Training produced a non-finite loss or gradient.
class DivergedError : public Error {
public:
    DivergedError(std::size_t iteration, const std::string& what)
        : Error("diverged at iteration " + std::to_string(iteration) + ": " + what),
          iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

}  // namespace nsfx
