#pragma once

#include <stdexcept>
#include <string>

namespace ssah {

// Shapes or lengths that do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A configuration that cannot be satisfied (bad keys, impossible split, ...).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An argument outside its documented domain (e.g. an unknown pair label).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::string dump_path)
        : std::runtime_error(what), dump_path_(std::move(dump_path)) {}
    [[nodiscard]] const std::string& dump_path() const { return dump_path_; }

private:
    std::string dump_path_;
};

}  // namespace ssah
