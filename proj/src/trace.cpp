#include "qhd/trace.hpp"

#include "qhd/error.hpp"

#include <cmath>

namespace qhd {

std::string_view to_string(TraceKind kind) {
    switch (kind) {
    case TraceKind::signal: return "signal";
    case TraceKind::vacuum: return "vacuum";
    case TraceKind::dark: return "dark";
    }
    return "unknown";
}

void RawTrace::validate() const {
    if (samples.empty()) {
        throw DomainError("trace has no samples");
    }
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
        throw DomainError("trace sample rate must be positive");
    }
}

} // namespace qhd
