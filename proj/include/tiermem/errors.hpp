#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tiermem {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error { using Error::Error; };
struct StorageError : Error { using Error::Error; };
struct NotFoundError : Error { using Error::Error; };
// Empty or dangling provenance links.
struct ProvenanceError : Error { using Error::Error; };
struct TemplateError : Error { using Error::Error; };
struct BackendError : Error { using Error::Error; };
struct ContractViolation : Error { using Error::Error; };

// A persisted record that cannot be decoded; carries the 1-based line number.
struct CorruptRecordError : Error {
    CorruptRecordError(const std::string& what, std::size_t line_no)
        : Error(what + " at line " + std::to_string(line_no)), line(line_no) {}
    std::size_t line;
};

// A batch that stopped part-way; `applied` ops were committed before the failure.
struct BatchApplyError : Error {
    BatchApplyError(const std::string& what, std::size_t applied_ops)
        : Error(what + " (applied " + std::to_string(applied_ops) + " ops)"),
          applied(applied_ops) {}
    std::size_t applied;
};

} // namespace tiermem
