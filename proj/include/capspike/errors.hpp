#pragma once

#include <stdexcept>
#include <string>

namespace capspike {

// Shape disagreements between tensors/layers.
struct dim_error : std::runtime_error {
    explicit dim_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated preconditions (bad arguments, out-of-range indices, empty inputs).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (NaN loss, overflow).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File-format errors. Loaders throw the specific subtype so callers can
// distinguish a wrong file from a damaged one.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct bad_magic_error : io_error {
    explicit bad_magic_error(const std::string& msg) : io_error(msg) {}
};

struct version_error : io_error {
    explicit version_error(const std::string& msg) : io_error(msg) {}
};

struct checksum_error : io_error {
    explicit checksum_error(const std::string& msg) : io_error(msg) {}
};

// Model compilation failures (unsupported layers, degenerate scales).
struct compile_error : std::runtime_error {
    explicit compile_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace capspike
