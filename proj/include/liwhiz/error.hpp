#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace liwhiz {

/// Broad failure classes. The CLI maps each one to its own exit code.
enum class ErrorKind {
    config,    ///< invalid hyperparameters or model dimensions
    io,        ///< missing file, unwritable destination
    format,    ///< malformed FMAP/checkpoint/manifest bytes
    data,      ///< labels out of range, shape mismatch, missing label
    numeric,   ///< NaN/Inf in features, gradients or loss
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), m_kind(kind) {}

    ErrorKind kind() const noexcept { return m_kind; }

private:
    ErrorKind m_kind;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

} // namespace liwhiz
