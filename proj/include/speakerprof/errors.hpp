#pragma once

#include <stdexcept>
#include <string>

namespace spkr {

// Base for every error raised by the toolkit. The CLI maps the concrete
// subclasses onto exit codes (2 usage/config, 3 data/shape, 4 numeric).
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

class DecodeError : public Error {
   public:
    using Error::Error;
};

class ParseError : public Error {
   public:
    ParseError(const std::string &what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

class ValidationError : public Error {
   public:
    using Error::Error;
};

class ShapeError : public Error {
   public:
    using Error::Error;
};

class NumericError : public Error {
   public:
    using Error::Error;
};

}  // namespace spkr
