#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace refeednet {

enum class ErrorKind {
  InputShape,
  GradientShape,
  EmptyBatch,
  EmptyDataset,
  InvalidConfig,
  Format,
  CorpusLayout,
  DegenerateSplit,
  Range,
  UndefinedGain,
  Protocol,
  NotFound,
  Conflict,
  Validation,
  Io,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InputShape: return "input-shape";
    case ErrorKind::GradientShape: return "gradient-shape";
    case ErrorKind::EmptyBatch: return "empty-batch";
    case ErrorKind::EmptyDataset: return "empty-dataset";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::Format: return "format";
    case ErrorKind::CorpusLayout: return "corpus-layout";
    case ErrorKind::DegenerateSplit: return "degenerate-split";
    case ErrorKind::Range: return "range";
    case ErrorKind::UndefinedGain: return "undefined-gain";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised while decoding a checkpoint or pixmap; carries the byte offset at
// which decoding failed.
class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& what)
      : Error(ErrorKind::Format, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Process exit codes used by the command-line tool.
inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io:
    case ErrorKind::Format:
    case ErrorKind::CorpusLayout:
      return 2;
    case ErrorKind::Protocol:
    case ErrorKind::Conflict:
    case ErrorKind::NotFound:
      return 3;
    default:
      return 4;
  }
}

}  // namespace refeednet
