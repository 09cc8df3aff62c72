#include "scoreid/error.hpp"

namespace scoreid {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::Fit: return "fit";
    case ErrorKind::Layout: return "layout";
    case ErrorKind::Score: return "score";
    case ErrorKind::Training: return "training";
    case ErrorKind::Identification: return "identification";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace scoreid
