#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace combolab {

// Base for everything the library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/operator dimension mismatches. Message names the offending shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Mathematically invalid input (log of non-positive value, NaN score, ...).
struct DomainError : Error {
    using Error::Error;
};

// API precondition violated by the caller (non-scalar loss, class index out
// of range, k=1 cross validation, ...).
struct ContractError : Error {
    using Error::Error;
};

// Text input could not be parsed. `line` is 1-based.
struct ParseError : Error {
    std::size_t line;
    ParseError(const std::string& msg, std::size_t line_no)
        : Error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

// Binary input violated the format. `offset` is the byte position.
struct FormatError : Error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
};

// A class received zero samples, so its weight is undefined.
struct ImbalanceError : Error {
    std::size_t class_index;
    explicit ImbalanceError(std::size_t cls)
        : Error("class " + std::to_string(cls) +
                " has zero samples; class weights are undefined "
                "(merge bins or resplit)"),
          class_index(cls) {}
};

// NaN/Inf encountered where training must abort rather than continue.
struct NumericError : Error {
    using Error::Error;
};

// Run-config file problems (missing keys, bad types, unknown keys).
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace combolab
