#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace qhd {

enum class TraceKind : std::uint8_t { signal = 0, vacuum = 1, dark = 2 };

std::string_view to_string(TraceKind kind);

/// A sampled homodyne difference signal in detector output units.
struct RawTrace {
    std::vector<float> samples;
    double sample_rate_hz = 0.0;
    TraceKind kind = TraceKind::signal;
    /// Free-form origin tag, e.g. simulator config hash and seed. Not
    /// persisted in the trace file.
    std::string provenance;

    void validate() const;
};

} // namespace qhd
