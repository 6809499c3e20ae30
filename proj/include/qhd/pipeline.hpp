#pragma once

// File formats, configuration parsing, the end-to-end analysis and the
// command implementations behind the `qhd` tool.

#include "qhd/clocksync.hpp"
#include "qhd/core.hpp"
#include "qhd/estimation.hpp"
#include "qhd/linkbudget.hpp"
#include "qhd/simulator.hpp"
#include "qhd/trace.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qhd::pipe {

inline constexpr std::string_view tool_version = "1.0.0";

// Stable process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_internal = 1,
    exit_usage = 2,        // bad arguments, configuration or domain errors
    exit_io = 3,           // unreadable/unwritable or malformed files
    exit_calibration = 4,  // vacuum does not clear dark
    exit_clock = 5,        // clock recovery failed
    exit_fit = 6,          // fits failed or too little data
};

int exit_code_for(const std::exception& e);

/// Runs `body`, reporting any exception on `err` and mapping it to an exit code.
int run_command(const std::function<void()>& body, std::ostream& err);

// ---- trace files ---------------------------------------------------------
//
// "QHTR" | u32 version | u8 kind | f64 sample rate | u64 n | n x f32, all
// little-endian, no padding.

inline constexpr std::uint32_t trace_format_version = 1;
inline constexpr std::size_t trace_header_size = 25;

std::vector<unsigned char> encode_trace(const RawTrace& trace);
RawTrace decode_trace(std::span<const unsigned char> bytes);
void write_trace(const std::filesystem::path& path, const RawTrace& trace);
RawTrace read_trace(const std::filesystem::path& path);

/// FNV-1a over the little-endian payload.
std::uint64_t trace_hash(const RawTrace& trace);

// ---- key/value configuration ---------------------------------------------

using KeyValues = std::map<std::string, std::string, std::less<>>;

/// `key = value` per line, `#` starts a comment. Duplicate keys and lines
/// without `=` are configuration errors.
KeyValues parse_key_values(std::string_view text);
KeyValues load_key_values(const std::filesystem::path& path);

/// Unknown keys are rejected; absent keys keep their defaults.
sim::SimulationConfig simulation_config_from(const KeyValues& kv);

struct AnalysisOptions {
    double symbol_rate_hz = 2.8125e9;  // nominal; the ratio is recovered
    std::int64_t am_period_symbols = 1600;
    int n_bins = 50;
    double saturation_alpha = 2.0;
    QuadratureConvention convention{};
    /// Only bins on the rising side of the folded envelope are usable.
    bool rising_side_only = true;
    /// Soft-clip knee of the detector in units of alpha; 0 = linear detector.
    /// When set, samples are passed through the inverse clip for clock
    /// timing and before binning.
    double detector_clip_alpha = 0.0;
    clock::ClockSearch clock_search{};
    /// Skip recovery and use this clock.
    std::optional<clock::ClockEstimate> fixed_clock;
    /// Envelope zero position; estimated when absent.
    std::optional<std::int64_t> envelope_origin;
    /// Losses for the virtual-aperture bound of the aggregate.
    std::optional<DecibelLoss> technical_loss;
    std::optional<DecibelLoss> atmospheric_loss;

    std::string canonical_text() const;
};

AnalysisOptions analysis_options_from(const KeyValues& kv);

struct CalibrationSummary {
    est::GaussianFitResult vacuum;
    est::GaussianFitResult dark;
    double clearance_db = 0.0;
    double detector_pole = 0.0;
};

struct AnalysisReport {
    clock::ClockEstimate clock;
    std::size_t symbol_count = 0;
    std::int64_t envelope_origin = 0;
    CalibrationSummary calibration;
    std::vector<est::BinResult> bins;
    std::vector<int> failed_bins;
    bool binning_fallback = false;
    std::optional<ExcessNoise> aggregate;
    std::size_t usable_bins = 0;
    std::optional<link::VirtualApertureBound> bound;
    nlohmann::json provenance;
};

AnalysisReport analyze(const RawTrace& signal, const RawTrace& vacuum, const RawTrace& dark,
                       const AnalysisOptions& options = {});

/// Inverse-variance weighted mean of the usable bins' excess noise; the
/// error is 1/sqrt(sum of weights). Empty when no bin is usable.
std::optional<ExcessNoise> aggregate_excess_noise(std::span<const est::BinResult> bins);

nlohmann::json to_json(const AnalysisReport& report);
nlohmann::json to_json(const sim::SimulationTruth& truth, const sim::SimulationConfig& config);
nlohmann::json to_json(const est::LinearityReport& report);

// ---- link scenarios and sweeps -------------------------------------------

struct ScenarioFile {
    link::LinkScenario scenario;
    std::optional<DecibelLoss> measured_link_loss;  // basis for projections
    std::optional<double> projected_aperture_radius_m;
    std::optional<double> projected_range_m;
    /// Aperture paired with the range projection; defaults to the one above.
    std::optional<double> projected_range_aperture_radius_m;
    std::optional<ExcessNoise> measured_excess_noise;
    DecibelLoss bound_technical_loss;
    DecibelLoss bound_atmospheric_loss;
    std::optional<AmplifierSpec> amplifier;
};

/// Missing required keys are listed together in one ConfigError.
ScenarioFile scenario_from(const KeyValues& kv);
nlohmann::json link_budget_report(const ScenarioFile& file);

/// CSV rows `lo_power_mw, noise_variance, dark_variance`; an optional
/// non-numeric header row and `#` comments are skipped.
std::vector<est::SweepPoint> parse_sweep(std::string_view text);

// ---- commands ------------------------------------------------------------

struct SimulateArgs {
    std::optional<std::filesystem::path> config;
    std::filesystem::path out_prefix = "qhd";
    std::optional<std::uint64_t> seed;
    bool json = false;
};

struct AnalyzeArgs {
    std::filesystem::path signal;
    std::filesystem::path vacuum;
    std::filesystem::path dark;
    std::optional<std::filesystem::path> config;
    std::optional<std::filesystem::path> out;
    std::optional<int> bins;
    std::optional<double> saturation_alpha;
    std::optional<double> kappa;
    bool json = false;
};

void cmd_simulate(const SimulateArgs& args, std::ostream& out);
void cmd_analyze(const AnalyzeArgs& args, std::ostream& out);
void cmd_linkbudget(const std::filesystem::path& scenario, std::ostream& out, bool json);
void cmd_lincheck(const std::filesystem::path& sweep, std::ostream& out, bool json);

} // namespace qhd::pipe
