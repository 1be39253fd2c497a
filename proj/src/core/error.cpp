#include "error.hpp"

namespace adasmtl {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::contract: return "contract violation";
        case ErrorKind::config: return "config error";
        case ErrorKind::io: return "I/O error";
        case ErrorKind::schema: return "schema error";
        case ErrorKind::parse: return "parse error";
        case ErrorKind::validation: return "validation error";
        case ErrorKind::eligibility: return "eligibility error";
        case ErrorKind::registration: return "registration failure";
        case ErrorKind::numeric: return "numeric fault";
        case ErrorKind::undefined: return "undefined result";
        case ErrorKind::busy: return "resource busy";
        case ErrorKind::unsupported: return "unsupported input";
    }
    return "unknown error";
}

}  // namespace adasmtl
