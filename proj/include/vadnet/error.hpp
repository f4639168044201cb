#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vadnet {

enum class ErrorKind {
    InvalidShape,
    InvalidGeometry,
    EmptyInput,
    TooLarge,
    TrainingDiverged,
    IncompleteReport,
    Parse,
    Validation,
    Duplicate,
    MissingImage,
    Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidShape: return "invalid-shape";
        case ErrorKind::InvalidGeometry: return "invalid-geometry";
        case ErrorKind::EmptyInput: return "empty-input";
        case ErrorKind::TooLarge: return "too-large";
        case ErrorKind::TrainingDiverged: return "training-diverged";
        case ErrorKind::IncompleteReport: return "incomplete-report";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Duplicate: return "duplicate";
        case ErrorKind::MissingImage: return "missing-image";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace vadnet
