#include "qhd/pipeline.hpp"

#include "qhd/error.hpp"
#include "qhd/hash.hpp"
#include "qhd/log.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace qhd::pipe {

namespace {

using nlohmann::json;

template <class U>
void put_le(std::vector<unsigned char>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
}

template <class U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(p[i]) << (8 * i);
    }
    return v;
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double parse_double(std::string_view key, std::string_view text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("key '" + std::string(key) + "': not a number: '" + std::string(text) + "'");
    }
    return v;
}

std::int64_t parse_int(std::string_view key, std::string_view text) {
    std::int64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("key '" + std::string(key) + "': not an integer: '" + std::string(text) + "'");
    }
    return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("key '" + std::string(key) + "': not an unsigned integer: '" + std::string(text) + "'");
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("key '" + std::string(key) + "': expected true or false, got '" + std::string(text) + "'");
}

void reject_unknown(const KeyValues& kv, const std::set<std::string_view>& known, std::string_view what) {
    std::string unknown;
    for (const auto& [k, v] : kv) {
        if (!known.contains(k)) {
            unknown += unknown.empty() ? k : ", " + k;
        }
    }
    if (!unknown.empty()) {
        throw ConfigError("unknown " + std::string(what) + " key(s): " + unknown);
    }
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text) || !out.flush()) {
        throw IoError("cannot write " + path.string());
    }
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

std::string hex64(std::uint64_t h) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

json fit_json(const est::GaussianFitResult& f) {
    json j = {{"a1", f.a1}, {"b1", f.b1}, {"c", f.c},         {"ci_a1", f.ci_a1},
              {"ci_b1", f.ci_b1}, {"ci_c", f.ci_c}, {"variance", f.variance()},
              {"variance_ci", {f.variance_lo(), f.variance_hi()}}, {"r_squared", f.r_squared}};
    if (f.two_component) {
        j["a2"] = f.a2;
        j["b2"] = f.b2;
        j["ci_a2"] = f.ci_a2;
        j["ci_b2"] = f.ci_b2;
        j["collapsed"] = f.collapsed;
    }
    return j;
}

json excess_json(const ExcessNoise& e) {
    return {{"value", e.value()}, {"error", e.error()}};
}

} // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) return exit_usage;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return exit_io;
    if (dynamic_cast<const CalibrationError*>(&e)) return exit_calibration;
    if (dynamic_cast<const ClockRecoveryError*>(&e)) return exit_clock;
    if (dynamic_cast<const FitError*>(&e) || dynamic_cast<const InsufficientDataError*>(&e)) return exit_fit;
    return exit_internal;
}

int run_command(const std::function<void()>& body, std::ostream& err) {
    try {
        body();
        return exit_ok;
    } catch (const std::exception& e) {
        err << "qhd: error: " << e.what() << '\n';
        return exit_code_for(e);
    }
}

std::vector<unsigned char> encode_trace(const RawTrace& trace) {
    trace.validate();
    std::vector<unsigned char> out;
    out.reserve(trace_header_size + 4 * trace.samples.size());
    for (char m : {'Q', 'H', 'T', 'R'}) out.push_back(static_cast<unsigned char>(m));
    put_le(out, trace_format_version);
    out.push_back(static_cast<unsigned char>(trace.kind));
    put_le(out, std::bit_cast<std::uint64_t>(trace.sample_rate_hz));
    put_le(out, static_cast<std::uint64_t>(trace.samples.size()));
    for (float v : trace.samples) {
        put_le(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

RawTrace decode_trace(std::span<const unsigned char> bytes) {
    if (bytes.size() < trace_header_size) {
        throw FormatError("trace shorter than its " + std::to_string(trace_header_size) + "-byte header");
    }
    if (!std::equal(bytes.begin(), bytes.begin() + 4, "QHTR")) {
        throw FormatError("bad magic; not a QHTR trace");
    }
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != trace_format_version) {
        throw FormatError("unsupported trace format version " + std::to_string(version));
    }
    const unsigned kind = bytes[8];
    if (kind > 2) {
        throw FormatError("invalid trace kind " + std::to_string(kind));
    }
    RawTrace t;
    t.kind = static_cast<TraceKind>(kind);
    t.sample_rate_hz = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + 9));
    const auto n = get_le<std::uint64_t>(bytes.data() + 17);
    const std::uint64_t payload = bytes.size() - trace_header_size;
    if (payload % 4 != 0 || payload / 4 != n) {
        throw FormatError("header declares " + std::to_string(n) + " samples but payload holds " +
                          std::to_string(payload) + " bytes");
    }
    t.samples.resize(n);
    const unsigned char* p = bytes.data() + trace_header_size;
    for (std::uint64_t i = 0; i < n; ++i, p += 4) {
        t.samples[i] = std::bit_cast<float>(get_le<std::uint32_t>(p));
    }
    try {
        t.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("invalid trace contents: ") + e.what());
    }
    return t;
}

void write_trace(const std::filesystem::path& path, const RawTrace& trace) {
    const auto bytes = encode_trace(trace);
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())) ||
        !out.flush()) {
        throw IoError("cannot write " + path.string());
    }
}

RawTrace read_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<unsigned char> bytes(size);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw IoError("read failed: " + path.string());
    }
    auto t = decode_trace(bytes);
    t.provenance = path.filename().string() + "#" + hex64(fnv1a64(std::span<const unsigned char>(bytes)));
    return t;
}

std::uint64_t trace_hash(const RawTrace& trace) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (float v : trace.samples) {
        const auto u = std::bit_cast<std::uint32_t>(v);
        const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                    static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
        h = fnv1a64(std::span<const unsigned char>(b, 4), h);
    }
    return h;
}

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
        }
        if (!kv.emplace(std::string(key), std::string(value)).second) {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
        }
    }
    return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) { return parse_key_values(read_text(path)); }

sim::SimulationConfig simulation_config_from(const KeyValues& kv) {
    static const std::set<std::string_view> known = {
        "symbol_rate",      "sample_rate",       "clock_offset",      "clock_ppm_error", "am_period_symbols",
        "am_origin_symbols", "peak_alpha",       "min_alpha",         "excess_noise_true", "dark_clearance",
        "analog_bandwidth", "transient_fraction", "saturation_alpha", "kappa",           "detector_gain",
        "duration",         "calibration_duration", "rng_seed"};
    reject_unknown(kv, known, "simulation");
    sim::SimulationConfig c;
    const auto num = [&](std::string_view key, double& field) {
        if (auto it = kv.find(key); it != kv.end()) field = parse_double(key, it->second);
    };
    num("symbol_rate", c.symbol_rate_hz);
    num("sample_rate", c.sample_rate_hz);
    num("clock_offset", c.clock_offset);
    num("clock_ppm_error", c.clock_ppm_error);
    num("am_origin_symbols", c.am_origin_symbols);
    num("peak_alpha", c.peak_alpha);
    num("min_alpha", c.min_alpha);
    num("excess_noise_true", c.excess_noise);
    num("dark_clearance", c.dark_clearance_db);
    num("analog_bandwidth", c.analog_bandwidth_hz);
    num("transient_fraction", c.transient_fraction);
    num("saturation_alpha", c.saturation_alpha);
    num("kappa", c.kappa);
    num("detector_gain", c.detector_gain);
    num("duration", c.duration_s);
    num("calibration_duration", c.calibration_duration_s);
    if (auto it = kv.find("am_period_symbols"); it != kv.end()) {
        c.am_period_symbols = parse_int(it->first, it->second);
    }
    if (auto it = kv.find("rng_seed"); it != kv.end()) {
        c.rng_seed = parse_uint(it->first, it->second);
    }
    c.validate();
    return c;
}

std::string AnalysisOptions::canonical_text() const {
    std::ostringstream ss;
    ss << std::setprecision(17);
    ss << "symbol_rate = " << symbol_rate_hz << '\n'
       << "am_period_symbols = " << am_period_symbols << '\n'
       << "bins = " << n_bins << '\n'
       << "saturation_alpha = " << saturation_alpha << '\n'
       << "kappa = " << convention.kappa << '\n'
       << "rising_side_only = " << (rising_side_only ? "true" : "false") << '\n'
       << "detector_clip_alpha = " << detector_clip_alpha << '\n'
       << "edge_refinement = " << (clock_search.edge_refinement ? "true" : "false") << '\n'
       << "ratio_half_width_ppm = " << clock_search.ratio_half_width_ppm << '\n';
    if (fixed_clock) {
        ss << "clock_offset = " << fixed_clock->offset << '\n'
           << "samples_per_symbol = " << fixed_clock->samples_per_symbol << '\n';
    }
    if (envelope_origin) ss << "envelope_origin = " << *envelope_origin << '\n';
    if (technical_loss) ss << "technical_loss_db = " << technical_loss->db() << '\n';
    if (atmospheric_loss) ss << "atmospheric_loss_db = " << atmospheric_loss->db() << '\n';
    return ss.str();
}

AnalysisOptions analysis_options_from(const KeyValues& kv) {
    static const std::set<std::string_view> known = {
        "symbol_rate",         "am_period_symbols", "bins",           "saturation_alpha",
        "kappa",               "rising_side_only",  "detector_clip_alpha", "edge_refinement",
        "ratio_half_width_ppm", "envelope_origin",  "technical_loss_db", "atmospheric_loss_db",
        "clock_offset",        "samples_per_symbol"};
    reject_unknown(kv, known, "analysis");
    AnalysisOptions o;
    const auto get = [&](std::string_view key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("symbol_rate")) o.symbol_rate_hz = parse_double("symbol_rate", *v);
    if (auto v = get("am_period_symbols")) o.am_period_symbols = parse_int("am_period_symbols", *v);
    if (auto v = get("bins")) o.n_bins = static_cast<int>(parse_int("bins", *v));
    if (auto v = get("saturation_alpha")) o.saturation_alpha = parse_double("saturation_alpha", *v);
    if (auto v = get("kappa")) o.convention.kappa = parse_double("kappa", *v);
    if (auto v = get("rising_side_only")) o.rising_side_only = parse_bool("rising_side_only", *v);
    if (auto v = get("detector_clip_alpha")) o.detector_clip_alpha = parse_double("detector_clip_alpha", *v);
    if (auto v = get("edge_refinement")) o.clock_search.edge_refinement = parse_bool("edge_refinement", *v);
    if (auto v = get("ratio_half_width_ppm")) {
        o.clock_search.ratio_half_width_ppm = parse_double("ratio_half_width_ppm", *v);
    }
    // A fixed clock needs both halves; recovery is skipped entirely.
    const auto* off = get("clock_offset");
    const auto* sps = get("samples_per_symbol");
    if ((off == nullptr) != (sps == nullptr)) {
        throw ConfigError("analysis: clock_offset and samples_per_symbol must be given together");
    }
    if (off) {
        clock::ClockEstimate c;
        c.offset = parse_double("clock_offset", *off);
        c.samples_per_symbol = parse_double("samples_per_symbol", *sps);
        if (!(c.samples_per_symbol > 1.0) || !std::isfinite(c.offset) || c.offset < 0.0) {
            throw ConfigError("analysis: fixed clock needs samples_per_symbol > 1 and clock_offset >= 0");
        }
        o.fixed_clock = c;
    }
    if (auto v = get("envelope_origin")) o.envelope_origin = parse_int("envelope_origin", *v);
    if (auto v = get("technical_loss_db")) o.technical_loss = DecibelLoss(parse_double("technical_loss_db", *v));
    if (auto v = get("atmospheric_loss_db")) {
        o.atmospheric_loss = DecibelLoss(parse_double("atmospheric_loss_db", *v));
    }
    return o;
}

std::optional<ExcessNoise> aggregate_excess_noise(std::span<const est::BinResult> bins) {
    double sw = 0.0, swe = 0.0;
    for (const auto& b : bins) {
        if (!b.usable) continue;
        const double err = b.excess_noise.error();
        if (!(err > 0.0) || !std::isfinite(err)) continue;
        const double w = 1.0 / (err * err);
        sw += w;
        swe += w * b.excess_noise.value();
    }
    if (!(sw > 0.0)) return std::nullopt;
    const double mean = swe / sw;
    return ExcessNoise(std::max(mean, -1.0), 1.0 / std::sqrt(sw));
}

AnalysisReport analyze(const RawTrace& signal, const RawTrace& vacuum, const RawTrace& dark,
                       const AnalysisOptions& options) {
    signal.validate();
    vacuum.validate();
    dark.validate();
    options.convention.validate();
    if (!(options.symbol_rate_hz > 0.0) || options.n_bins < 1) {
        throw ConfigError("analysis needs a positive symbol rate and bin count");
    }
    AnalysisReport rep;

    // Calibration over all samples of the unmodulated records.
    auto& cal = rep.calibration;
    cal.vacuum = est::fit_single_gaussian(vacuum.samples);
    cal.dark = est::fit_single_gaussian(dark.samples);
    const double vv = cal.vacuum.variance();
    const double vd = cal.dark.variance();
    if (!(vv > vd)) {
        throw CalibrationError("vacuum variance " + std::to_string(vv) + " does not exceed dark variance " +
                               std::to_string(vd));
    }
    cal.clearance_db = 10.0 * std::log10((vv - vd) / vd);
    cal.detector_pole = clock::lag1_autocorrelation(vacuum.samples);
    log::info("calibration: vacuum {:.6g}, dark {:.6g}, clearance {:.2f} dB, pole {:.4f}", vv, vd,
              cal.clearance_db, cal.detector_pole);

    if (options.fixed_clock) {
        rep.clock = *options.fixed_clock;
    } else {
        auto search = options.clock_search;
        search.detector_pole = std::clamp(cal.detector_pole, 0.0, 0.99);
        if (options.detector_clip_alpha > 0.0) {
            search.saturation_knee = options.convention.kappa * options.detector_clip_alpha * std::sqrt(vv - vd);
        }
        rep.clock = clock::recover_clock(signal, signal.sample_rate_hz / options.symbol_rate_hz, search);
    }
    auto symbols = clock::extract_pulse_centers(signal, rep.clock);
    rep.symbol_count = symbols.size();
    // Undo a known detector clip on the pulse centres before any statistics.
    if (options.detector_clip_alpha > 0.0) {
        const double knee = options.convention.kappa * options.detector_clip_alpha * std::sqrt(vv - vd);
        for (auto& v : symbols) v = static_cast<float>(soft_clip_inverse(v, knee));
    }

    rep.envelope_origin = options.envelope_origin
                              ? *options.envelope_origin
                              : est::estimate_envelope_origin(symbols, options.am_period_symbols);
    const auto bins = est::superimpose_and_bin(symbols, options.am_period_symbols, options.n_bins,
                                               static_cast<double>(rep.envelope_origin));

    const est::EstimateOptions eo{options.convention, options.saturation_alpha};
    std::vector<bool> fitted(bins.size(), false);
    rep.bins.resize(bins.size());
    for (const auto& bin : bins) {
        auto& out = rep.bins[static_cast<std::size_t>(bin.index)];
        out.index = bin.index;
        out.count = bin.count();
        try {
            const auto fit = est::fit_double_gaussian(bin.samples);
            out = est::estimate_bin(fit, cal.vacuum, cal.dark, eo);
            out.index = bin.index;
            out.count = bin.count();
            fitted[static_cast<std::size_t>(bin.index)] = true;
        } catch (const FitError& e) {
            log::warn("bin {}: {}", bin.index, e.what());
            rep.failed_bins.push_back(bin.index);
        } catch (const InsufficientDataError& e) {
            log::warn("bin {}: {}", bin.index, e.what());
            rep.failed_bins.push_back(bin.index);
        }
    }
    if (rep.failed_bins.size() == bins.size()) {
        throw FitError("no amplitude bin could be fitted");
    }

    std::vector<double> alphas(bins.size(), 0.0);
    std::vector<bool> usable(bins.size(), false);
    for (std::size_t b = 0; b < bins.size(); ++b) {
        auto& r = rep.bins[b];
        alphas[b] = r.alpha;
        const bool rising = !options.rising_side_only || 2 * static_cast<int>(b) < options.n_bins;
        r.usable = fitted[b] && !r.collapsed && r.alpha < options.saturation_alpha && rising;
        usable[b] = r.usable;
    }
    const auto berr = est::binning_error(alphas, usable);
    rep.binning_fallback = berr.fallback;
    for (std::size_t b = 0; b < bins.size(); ++b) {
        auto& r = rep.bins[b];
        r.alpha_binning_error = berr.half_width[b];
        r.alpha_error = std::hypot(r.alpha_fit_error, r.alpha_binning_error);
        rep.usable_bins += r.usable ? 1 : 0;
    }

    rep.aggregate = aggregate_excess_noise(rep.bins);
    if (rep.aggregate && options.technical_loss && options.atmospheric_loss) {
        rep.bound = link::virtual_aperture_bound(*rep.aggregate, *options.technical_loss, *options.atmospheric_loss);
    }

    rep.provenance = {{"signal", {{"tag", signal.provenance}, {"payload_fnv1a", hex64(trace_hash(signal))}}},
                      {"vacuum", {{"tag", vacuum.provenance}, {"payload_fnv1a", hex64(trace_hash(vacuum))}}},
                      {"dark", {{"tag", dark.provenance}, {"payload_fnv1a", hex64(trace_hash(dark))}}},
                      {"options", options.canonical_text()},
                      {"tool_version", std::string(tool_version)}};
    return rep;
}

json to_json(const AnalysisReport& r) {
    json bins = json::array();
    for (const auto& b : r.bins) {
        bins.push_back({{"index", b.index},
                        {"count", b.count},
                        {"alpha", b.alpha},
                        {"alpha_error", b.alpha_error},
                        {"alpha_fit_error", b.alpha_fit_error},
                        {"alpha_binning_error", b.alpha_binning_error},
                        {"excess_noise", excess_json(b.excess_noise)},
                        {"r_squared", b.r_squared},
                        {"collapsed", b.collapsed},
                        {"usable", b.usable},
                        {"excluded_corners", b.excluded_corners},
                        {"fit", fit_json(b.fit)}});
    }
    const auto& c = r.clock;
    json out = {
        {"tool", {{"name", "qhd"}, {"version", std::string(tool_version)}}},
        {"generated_utc", utc_now()},
        {"clock",
         {{"offset", c.offset},
          {"samples_per_symbol", c.samples_per_symbol},
          {"offset_uncertainty", c.offset_uncertainty},
          {"ratio_uncertainty", c.ratio_uncertainty},
          {"objective", c.objective},
          {"objective_offset", c.objective_offset},
          {"objective_ratio", c.objective_ratio},
          {"edge_refined", c.edge_refined},
          {"edges_used", c.edges_used}}},
        {"symbols", r.symbol_count},
        {"envelope_origin", r.envelope_origin},
        {"calibration",
         {{"vacuum", fit_json(r.calibration.vacuum)},
          {"dark", fit_json(r.calibration.dark)},
          {"clearance_db", r.calibration.clearance_db},
          {"detector_pole", r.calibration.detector_pole}}},
        {"bins", bins},
        {"failed_bins", r.failed_bins},
        {"binning_error_fallback", r.binning_fallback},
        {"usable_bins", r.usable_bins},
        {"aggregate", r.aggregate ? excess_json(*r.aggregate) : json(nullptr)},
        {"provenance", r.provenance},
    };
    if (r.bound) {
        out["virtual_aperture_bound"] = {{"at_ground_aperture", excess_json(r.bound->at_ground_aperture)},
                                         {"above_atmosphere", excess_json(r.bound->above_atmosphere)}};
    } else {
        out["virtual_aperture_bound"] = nullptr;
    }
    return out;
}

json to_json(const sim::SimulationTruth& t, const sim::SimulationConfig& config) {
    json bins = json::array();
    for (std::size_t b = 0; b < t.bins.size(); ++b) {
        const auto& x = t.bins[b];
        bins.push_back({{"index", b},
                        {"alpha_center", x.alpha_center},
                        {"alpha_mean", x.alpha_mean},
                        {"alpha_min", x.alpha_min},
                        {"alpha_max", x.alpha_max}});
    }
    return {{"clock_offset", t.clock_offset},
            {"samples_per_symbol", t.ratio},
            {"symbol_count", t.symbol_count},
            {"filter_pole", t.filter_pole},
            {"dark_variance_snu", t.dark_variance},
            {"excess_noise", t.excess_noise},
            {"kappa", t.kappa},
            {"detector_gain", t.detector_gain},
            {"am_period_symbols", t.am_period_symbols},
            {"am_origin_symbols", t.am_origin_symbols},
            {"bins", bins},
            {"config", config.canonical_text()},
            {"config_fnv1a", hex64(config.hash())},
            {"tool_version", std::string(tool_version)}};
}

json to_json(const est::LinearityReport& r) {
    return {{"slope", r.slope},
            {"slope_ci", r.slope_ci},
            {"intercept", r.intercept},
            {"intercept_ci", r.intercept_ci},
            {"intercept_consistent_with_zero", r.intercept_consistent_with_zero},
            {"residuals", r.residuals},
            {"relative_residuals", r.relative_residuals},
            {"max_relative_residual", r.max_relative_residual},
            {"clearance_db", r.clearance_db},
            {"linear", r.linear}};
}

ScenarioFile scenario_from(const KeyValues& kv) {
    static const std::set<std::string_view> known = {
        "range_m",          "waist_m",          "wavelength_m",          "rayleigh_range_m",
        "rx_aperture_radius_m", "atmospheric_loss_db", "technical_loss_db", "measured_link_loss_db",
        "projected_aperture_radius_m", "projected_range_m", "projected_range_aperture_radius_m", "excess_noise_measured", "excess_noise_error",
        "bound_technical_loss_db", "bound_atmospheric_loss_db", "amplifier_gain_db", "amplifier_noise_figure_db"};
    reject_unknown(kv, known, "scenario");

    std::vector<std::string> missing;
    const auto required = [&](std::string_view key) -> double {
        auto it = kv.find(key);
        if (it == kv.end()) {
            missing.emplace_back(key);
            return 0.0;
        }
        return parse_double(key, it->second);
    };
    const auto optional = [&](std::string_view key) -> std::optional<double> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        return parse_double(key, it->second);
    };
    const double range = required("range_m");
    const double waist = required("waist_m");
    const double r0 = required("rx_aperture_radius_m");
    const double atm = required("atmospheric_loss_db");
    const double tech = required("technical_loss_db");
    const auto wavelength = optional("wavelength_m");
    const auto rayleigh = optional("rayleigh_range_m");
    if (!wavelength && !rayleigh) missing.emplace_back("wavelength_m | rayleigh_range_m");
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += list.empty() ? m : ", " + m;
        throw ConfigError("scenario is missing: " + list);
    }
    if (wavelength && rayleigh) {
        throw ConfigError("give either wavelength_m or rayleigh_range_m, not both");
    }

    ScenarioFile f;
    f.scenario.range_m = range;
    f.scenario.beam = rayleigh ? link::GaussianBeam::from_rayleigh_range(waist, *rayleigh)
                               : link::GaussianBeam(waist, *wavelength);
    f.scenario.rx_aperture_radius_m = r0;
    f.scenario.atmospheric_loss = DecibelLoss(atm);
    f.scenario.technical_loss = DecibelLoss(tech);
    f.scenario.validate();
    if (auto v = optional("measured_link_loss_db")) f.measured_link_loss = DecibelLoss(*v);
    f.projected_aperture_radius_m = optional("projected_aperture_radius_m");
    f.projected_range_m = optional("projected_range_m");
    f.projected_range_aperture_radius_m = optional("projected_range_aperture_radius_m");
    if (!f.projected_range_aperture_radius_m) f.projected_range_aperture_radius_m = f.projected_aperture_radius_m;
    if (auto e = optional("excess_noise_measured")) {
        f.measured_excess_noise = ExcessNoise(*e, optional("excess_noise_error").value_or(0.0));
    }
    f.bound_technical_loss = DecibelLoss(optional("bound_technical_loss_db").value_or(tech));
    f.bound_atmospheric_loss = DecibelLoss(optional("bound_atmospheric_loss_db").value_or(atm));
    const auto gain = optional("amplifier_gain_db");
    const auto nf = optional("amplifier_noise_figure_db");
    if (gain.has_value() != nf.has_value()) {
        throw ConfigError("amplifier_gain_db and amplifier_noise_figure_db go together");
    }
    if (gain) {
        f.amplifier = AmplifierSpec{*gain, *nf};
        f.amplifier->validate();
    }
    return f;
}

json link_budget_report(const ScenarioFile& f) {
    const auto& s = f.scenario;
    const auto coupling = link::aperture_coupling(s.beam, s.range_m, s.rx_aperture_radius_m);
    const auto total = link::total_link_loss(s);
    json items = json::array();
    for (const auto& item : total.items) {
        items.push_back({{"name", item.name}, {"db", item.loss.db()}});
    }
    json out = {{"spot_radius_m", link::spot_radius(s.beam, s.range_m)},
                {"rayleigh_range_m", s.beam.rayleigh_range()},
                {"coupling_fraction", coupling.fraction},
                {"diffraction_loss_db", coupling.loss.db()},
                {"items", items},
                {"total_to_detector_db", total.total.db()},
                {"to_receiver_aperture_db", (total.total.db() - s.technical_loss.db())}};

    const DecibelLoss basis =
        f.measured_link_loss ? *f.measured_link_loss : DecibelLoss(coupling.loss.db() + s.atmospheric_loss.db());
    const double d_old = 2.0 * s.rx_aperture_radius_m;
    json proj = {{"basis_db", basis.db()}};
    if (f.projected_aperture_radius_m) {
        const auto l = link::rescale_aperture(basis, d_old, 2.0 * *f.projected_aperture_radius_m);
        proj["aperture"] = {{"aperture_radius_m", *f.projected_aperture_radius_m}, {"loss_db", l.db()}};
    }
    if (f.projected_range_m) {
        const auto l = link::rescale_range(basis, s.range_m, *f.projected_range_m);
        proj["range"] = {{"range_m", *f.projected_range_m}, {"loss_db", l.db()}};
        if (f.projected_range_aperture_radius_m) {
            const double r = *f.projected_range_aperture_radius_m;
            const auto both = link::rescale_aperture(l, d_old, 2.0 * r);
            proj["range_and_aperture"] = {
                {"aperture_radius_m", r}, {"loss_db", both.db()}, {"aperture_gain_db", l.db() - both.db()}};
        }
    }
    out["projections"] = proj;

    if (f.measured_excess_noise) {
        const auto b = link::virtual_aperture_bound(*f.measured_excess_noise, f.bound_technical_loss,
                                                    f.bound_atmospheric_loss);
        out["bound"] = {{"measured", excess_json(*f.measured_excess_noise)},
                        {"technical_loss_db", f.bound_technical_loss.db()},
                        {"atmospheric_loss_db", f.bound_atmospheric_loss.db()},
                        {"at_ground_aperture", excess_json(b.at_ground_aperture)},
                        {"above_atmosphere", excess_json(b.above_atmosphere)}};
    }
    if (f.amplifier) {
        const auto thermal = amplifier_thermal_excess(*f.amplifier);
        const auto at_virtual = scale_excess_noise_down(thermal, coupling.loss);
        out["amplifier"] = {{"thermal_excess", thermal.value()},
                            {"thermal_excess_db_above_vacuum", 10.0 * std::log10(thermal.value())},
                            {"at_virtual_aperture", at_virtual.value()},
                            {"at_virtual_aperture_db_above_vacuum", 10.0 * std::log10(at_virtual.value())}};
    }
    return out;
}

std::vector<est::SweepPoint> parse_sweep(std::string_view text) {
    std::vector<est::SweepPoint> pts;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::vector<std::string_view> cols;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            cols.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (cols.size() != 3) {
            throw ConfigError("sweep line " + std::to_string(line_no) + ": expected 3 columns");
        }
        const bool numeric = !cols[0].empty() && (std::isdigit(static_cast<unsigned char>(cols[0][0])) ||
                                                  cols[0][0] == '.' || cols[0][0] == '-' || cols[0][0] == '+');
        if (!numeric) {
            if (pts.empty()) continue;  // header row
            throw ConfigError("sweep line " + std::to_string(line_no) + ": non-numeric value");
        }
        pts.push_back({parse_double("lo_power_mw", cols[0]), parse_double("noise_variance", cols[1]),
                       parse_double("dark_variance", cols[2])});
    }
    return pts;
}

void cmd_simulate(const SimulateArgs& args, std::ostream& out) {
    auto config = args.config ? simulation_config_from(load_key_values(*args.config)) : sim::SimulationConfig{};
    if (args.seed) config.rng_seed = *args.seed;
    config.validate();
    const std::string prefix = args.out_prefix.string();
    const auto truth = sim::simulation_truth(config);
    const std::filesystem::path paths[3] = {prefix + "_signal.qhtr", prefix + "_vacuum.qhtr", prefix + "_dark.qhtr"};
    write_trace(paths[0], sim::synthesize_signal_trace(config));
    write_trace(paths[1], sim::synthesize_vacuum_trace(config));
    write_trace(paths[2], sim::synthesize_dark_trace(config));
    const std::filesystem::path sidecar = prefix + "_truth.json";
    write_text(sidecar, to_json(truth, config).dump(2) + "\n");
    if (args.json) {
        json j = {{"signal", paths[0].string()},
                  {"vacuum", paths[1].string()},
                  {"dark", paths[2].string()},
                  {"truth", sidecar.string()},
                  {"samples", config.sample_count()},
                  {"symbols", truth.symbol_count}};
        out << j.dump(2) << '\n';
    } else {
        out << "wrote " << paths[0].string() << ", " << paths[1].string() << ", " << paths[2].string() << ", "
            << sidecar.string() << " (" << config.sample_count() << " samples, " << truth.symbol_count
            << " symbols)\n";
    }
}

void cmd_analyze(const AnalyzeArgs& args, std::ostream& out) {
    auto options = args.config ? analysis_options_from(load_key_values(*args.config)) : AnalysisOptions{};
    if (args.bins) options.n_bins = *args.bins;
    if (args.saturation_alpha) options.saturation_alpha = *args.saturation_alpha;
    if (args.kappa) options.convention.kappa = *args.kappa;
    const auto signal = read_trace(args.signal);
    const auto vacuum = read_trace(args.vacuum);
    const auto dark = read_trace(args.dark);
    const auto report = analyze(signal, vacuum, dark, options);
    const auto j = to_json(report);
    if (args.out) write_text(*args.out, j.dump(2) + "\n");
    if (args.json) {
        out << j.dump(2) << '\n';
        return;
    }
    std::ostringstream s;
    s << std::fixed;
    s << "clock: offset " << std::setprecision(5) << report.clock.offset << " samples, ratio "
      << std::setprecision(10) << report.clock.samples_per_symbol << " samples/symbol\n";
    s << "calibration: clearance " << std::setprecision(2) << report.calibration.clearance_db << " dB\n";
    s << "bin  count     alpha            E                R^2       usable\n";
    for (const auto& b : report.bins) {
        s << std::setw(3) << b.index << ' ' << std::setw(7) << b.count << "  " << std::setprecision(3)
          << std::setw(6) << b.alpha << " +- " << std::setw(5) << b.alpha_error << "  " << std::showpos
          << std::setw(7) << b.excess_noise.value() << std::noshowpos << " +- " << std::setw(5)
          << b.excess_noise.error() << "  " << std::setprecision(6) << b.r_squared << "  "
          << (b.usable ? "yes" : "no") << '\n';
    }
    if (report.aggregate) {
        s << "aggregate E over " << report.usable_bins << " usable bins: " << std::setprecision(4)
          << report.aggregate->value() << " +- " << report.aggregate->error() << '\n';
    } else {
        s << "no usable bins; no aggregate\n";
    }
    out << s.str();
}

void cmd_linkbudget(const std::filesystem::path& scenario, std::ostream& out, bool json_out) {
    const auto file = scenario_from(load_key_values(scenario));
    const auto j = link_budget_report(file);
    if (json_out) {
        out << j.dump(2) << '\n';
        return;
    }
    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    s << "spot radius " << j["spot_radius_m"].get<double>() << " m\n";
    for (const auto& item : j["items"]) {
        s << "  " << std::left << std::setw(12) << item["name"].get<std::string>() << std::right << std::setw(8)
          << item["db"].get<double>() << " dB\n";
    }
    s << "  total       " << std::setw(8) << j["total_to_detector_db"].get<double>() << " dB\n";
    const auto& p = j["projections"];
    if (p.contains("aperture")) s << "aperture projection: " << p["aperture"]["loss_db"].get<double>() << " dB\n";
    if (p.contains("range")) s << "range projection: " << p["range"]["loss_db"].get<double>() << " dB\n";
    if (p.contains("range_and_aperture")) {
        s << "range + aperture projection: " << p["range_and_aperture"]["loss_db"].get<double>() << " dB\n";
    }
    if (j.contains("bound")) {
        const auto& b = j["bound"];
        s << "bound: ground aperture " << b["at_ground_aperture"]["value"].get<double>() << " +- "
          << b["at_ground_aperture"]["error"].get<double>() << ", above atmosphere "
          << b["above_atmosphere"]["value"].get<double>() << " +- " << b["above_atmosphere"]["error"].get<double>()
          << '\n';
    }
    if (j.contains("amplifier")) {
        s << "amplifier thermal excess " << j["amplifier"]["thermal_excess_db_above_vacuum"].get<double>()
          << " dB, at virtual aperture " << j["amplifier"]["at_virtual_aperture_db_above_vacuum"].get<double>()
          << " dB\n";
    }
    out << s.str();
}

void cmd_lincheck(const std::filesystem::path& sweep, std::ostream& out, bool json_out) {
    const auto pts = parse_sweep(read_text(sweep));
    const auto r = est::detector_linearity(pts);
    if (json_out) {
        out << to_json(r).dump(2) << '\n';
        return;
    }
    std::ostringstream s;
    s << std::setprecision(6);
    s << "slope " << r.slope << " +- " << r.slope_ci << ", intercept " << r.intercept << " +- " << r.intercept_ci
      << '\n';
    s << "max relative residual " << r.max_relative_residual << ", clearance " << std::fixed << std::setprecision(2)
      << r.clearance_db << " dB\n";
    s << (r.linear ? "linear" : "NOT linear") << '\n';
    out << s.str();
}

} // namespace qhd::pipe
