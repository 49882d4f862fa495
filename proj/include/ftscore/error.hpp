#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace ftscore {

/// Broad failure classes. The CLI maps them onto exit codes 1, 2 and 3.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Raised by text parsers; `token()` is the offending token.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string token)
        : Error(ErrorKind::data, what), token_(std::move(token)) {}
    [[nodiscard]] const std::string& token() const noexcept { return token_; }

private:
    std::string token_;
};

/// Structural problems in an architecture graph. `node_id()` may be empty.
class GraphError : public Error {
public:
    GraphError(const std::string& what, std::string node_id)
        : Error(ErrorKind::data, what), node_id_(std::move(node_id)) {}
    [[nodiscard]] const std::string& node_id() const noexcept { return node_id_; }

private:
    std::string node_id_;
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// A division by a (near) zero scale, a zero-variance batch, or a NaN.
class DegenerateError : public Error {
public:
    explicit DegenerateError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Failure of one element of a batch; keeps the element's error class.
class BatchError : public Error {
public:
    BatchError(std::size_t index, const Error& cause)
        : Error(cause.kind(), "item " + std::to_string(index) + ": " + cause.what()), index_(index) {}
    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

} // namespace ftscore
