#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "qhd/error.hpp"
#include "qhd/pipeline.hpp"
#include "support.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

using namespace qhd;
using namespace qhd::pipe;
using qhd_test::Gen;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const auto d = fs::temp_directory_path() / ("qhd_test_pipeline_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
}

RawTrace random_trace(Gen& g, std::size_t n) {
    RawTrace t;
    t.samples = g.normals(n, 0.0, g.log_uniform(1e-3, 1e3));
    t.sample_rate_hz = g.log_uniform(1e6, 1e11);
    t.kind = static_cast<TraceKind>(g.integer(0, 2));
    return t;
}

bool same_bits(const RawTrace& a, const RawTrace& b) {
    return a.samples.size() == b.samples.size() &&
           std::memcmp(a.samples.data(), b.samples.data(), 4 * a.samples.size()) == 0 &&
           std::memcmp(&a.sample_rate_hz, &b.sample_rate_hz, sizeof(double)) == 0 && a.kind == b.kind;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("trace encoding layout") {
    RawTrace t;
    t.samples = {1.0f, -2.5f};
    t.sample_rate_hz = 40e9;
    t.kind = TraceKind::vacuum;
    const auto bytes = encode_trace(t);
    REQUIRE(bytes.size() == trace_header_size + 8);
    CHECK(std::memcmp(bytes.data(), "QHTR", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 1);
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | bytes[17 + static_cast<std::size_t>(i)];
    CHECK(n == 2u);
    // 1.0f is 0x3f800000, little-endian
    CHECK(bytes[25] == 0x00);
    CHECK(bytes[28] == 0x3f);
}

TEST_CASE("trace round trip is bit exact") {
    Gen g(81);
    for (int i = 0; i < 50; ++i) {
        auto t = random_trace(g, static_cast<std::size_t>(g.integer(1, 5000)));
        // awkward values survive as well
        t.samples[0] = std::numeric_limits<float>::denorm_min();
        if (t.samples.size() > 1) t.samples[1] = -0.0f;
        CHECK(same_bits(decode_trace(encode_trace(t)), t));
    }
    const auto dir = scratch_dir();
    auto t = random_trace(g, 10000);
    write_trace(dir / "rt.qhtr", t);
    CHECK(same_bits(read_trace(dir / "rt.qhtr"), t));
    fs::remove_all(dir);
}

TEST_CASE("malformed traces") {
    Gen g(82);
    const auto good = encode_trace(random_trace(g, 100));
    auto bytes = good;
    bytes.resize(trace_header_size - 1);
    CHECK_THROWS_AS(decode_trace(bytes), FormatError);

    bytes = good;
    bytes.pop_back();
    CHECK_THROWS_AS(decode_trace(bytes), FormatError);

    bytes = good;
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_trace(bytes), FormatError);

    bytes = good;
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_trace(bytes), FormatError);

    bytes = good;
    bytes[4] = 2;
    CHECK_THROWS_AS(decode_trace(bytes), FormatError);

    bytes = good;
    bytes[8] = 7;
    CHECK_THROWS_AS(decode_trace(bytes), FormatError);

    CHECK_THROWS_AS(read_trace("/nonexistent/qhd/trace.qhtr"), IoError);
}

TEST_CASE("truncated file exits with the I/O code") {
    Gen g(83);
    const auto dir = scratch_dir();
    auto t = random_trace(g, 5000);
    t.kind = TraceKind::signal;
    write_trace(dir / "s.qhtr", t);
    fs::resize_file(dir / "s.qhtr", fs::file_size(dir / "s.qhtr") - 10);
    t.kind = TraceKind::vacuum;
    write_trace(dir / "v.qhtr", t);
    t.kind = TraceKind::dark;
    write_trace(dir / "d.qhtr", t);
    AnalyzeArgs a;
    a.signal = dir / "s.qhtr";
    a.vacuum = dir / "v.qhtr";
    a.dark = dir / "d.qhtr";
    std::ostringstream out, err;
    CHECK(run_command([&] { cmd_analyze(a, out); }, err) == exit_io);
    CHECK(err.str().find("qhd: error:") == 0);
    fs::remove_all(dir);
}

TEST_CASE("key value parsing") {
    const auto kv = parse_key_values("# comment\n a = 1 \n\nb=two words # trailing\n");
    CHECK(kv.size() == 2);
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two words");
    CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_key_values("a = 1\njunk\n"), ConfigError);
}

TEST_CASE("simulation config keys") {
    const auto c = simulation_config_from(parse_key_values("duration = 1e-5\nrng_seed = 9\nexcess_noise_true = 0.1\n"));
    CHECK(c.duration_s == 1e-5);
    CHECK(c.rng_seed == 9u);
    CHECK(c.excess_noise == 0.1);
    CHECK_THROWS_AS(simulation_config_from(parse_key_values("durationn = 1\n")), ConfigError);
    CHECK_THROWS_AS(simulation_config_from(parse_key_values("duration = abc\n")), ConfigError);
    CHECK_THROWS_AS(simulation_config_from(parse_key_values("am_period_symbols = 1601\n")), ConfigError);
}

TEST_CASE("analysis config keys") {
    const auto o = analysis_options_from(parse_key_values("bins = 40\nkappa = 1\nclock_offset = 5\nsamples_per_symbol = 14.2\n"));
    CHECK(o.n_bins == 40);
    CHECK(o.convention.kappa == 1.0);
    REQUIRE(o.fixed_clock.has_value());
    CHECK(o.fixed_clock->samples_per_symbol == 14.2);
    CHECK_THROWS_AS(analysis_options_from(parse_key_values("clock_offset = 5\n")), ConfigError);
    CHECK_THROWS_AS(analysis_options_from(parse_key_values("colour = red\n")), ConfigError);
}

TEST_CASE("scenario keys") {
    const std::string geo =
        "range_m = 3.86e7\nwaist_m = 0.06\nrayleigh_range_m = 10600\nrx_aperture_radius_m = 0.135\n"
        "atmospheric_loss_db = 3\ntechnical_loss_db = 16\n";
    const auto s = scenario_from(parse_key_values(geo));
    CHECK(s.scenario.range_m == 3.86e7);
    try {
        scenario_from(parse_key_values("range_m = 1\n"));
        FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("waist_m") != std::string::npos);
        CHECK(msg.find("rx_aperture_radius_m") != std::string::npos);
        CHECK(msg.find("technical_loss_db") != std::string::npos);
    }
    const auto j = link_budget_report(s);
    CHECK(j.dump().find("diffraction") != std::string::npos);
}

TEST_CASE("sweep parsing") {
    const auto pts = parse_sweep("lo_power_mw,noise_variance,dark_variance\n# c\n1,2,0.5\n2, 3.5, 0.5\n");
    REQUIRE(pts.size() == 2);
    CHECK(pts[1].noise_variance == 3.5);
    CHECK_THROWS(parse_sweep("1,2\n"));
}

TEST_CASE("exit code contract") {
    const std::vector<std::pair<int, std::function<void()>>> cases = {
        {exit_usage, [] { throw ConfigError("x"); }},
        {exit_usage, [] { throw DomainError("x"); }},
        {exit_io, [] { throw IoError("x"); }},
        {exit_io, [] { throw FormatError("x"); }},
        {exit_calibration, [] { throw CalibrationError("x"); }},
        {exit_clock, [] { throw ClockRecoveryError("x"); }},
        {exit_clock, [] { throw ClockBoundaryError("x"); }},
        {exit_fit, [] { throw FitError("x"); }},
        {exit_fit, [] { throw InsufficientDataError("x"); }},
        {exit_internal, [] { throw std::logic_error("x"); }},
        {exit_ok, [] {}},
    };
    for (const auto& [code, body] : cases) {
        std::ostringstream err;
        CHECK(run_command(body, err) == code);
    }
    const std::set<int> distinct{exit_usage, exit_io, exit_calibration, exit_clock, exit_fit, exit_internal};
    CHECK(distinct.size() == 6);
    CHECK(distinct.count(0) == 0);
}

TEST_CASE("aggregate uses usable bins only") {
    std::vector<est::BinResult> bins(3);
    bins[0].usable = true;
    bins[0].excess_noise = ExcessNoise(0.02, 0.01);
    bins[1].usable = true;
    bins[1].excess_noise = ExcessNoise(-0.02, 0.02);
    bins[2].usable = false;
    bins[2].excess_noise = ExcessNoise(5.0, 0.001);
    const auto a = aggregate_excess_noise(bins);
    REQUIRE(a.has_value());
    // weights 1e4 and 2.5e3
    CHECK(a->value() == doctest::Approx((0.02 * 1e4 - 0.02 * 2.5e3) / 1.25e4));
    CHECK(a->error() == doctest::Approx(1.0 / std::sqrt(1.25e4)));
    bins[0].usable = bins[1].usable = false;
    CHECK_FALSE(aggregate_excess_noise(bins).has_value());
}

TEST_CASE("simulate then analyze") {
    const auto dir = scratch_dir();
    {
        std::ofstream cfg(dir / "sim.cfg");
        cfg << "duration = 1.25e-4\ncalibration_duration = 1.25e-4\nrng_seed = 5\n";
    }
    SimulateArgs s;
    s.config = dir / "sim.cfg";
    s.out_prefix = dir / "run";
    std::ostringstream out, err;
    REQUIRE(run_command([&] { cmd_simulate(s, out); }, err) == exit_ok);
    CHECK(read_trace(dir / "run_signal.qhtr").samples.size() == 5'000'000u);

    // same seed twice gives byte-identical files
    s.out_prefix = dir / "again";
    REQUIRE(run_command([&] { cmd_simulate(s, out); }, err) == exit_ok);
    for (const char* k : {"_signal.qhtr", "_vacuum.qhtr", "_dark.qhtr"}) {
        CHECK(slurp(dir / (std::string("run") + k)) == slurp(dir / (std::string("again") + k)));
    }

    const auto sig = read_trace(dir / "run_signal.qhtr");
    const auto vac = read_trace(dir / "run_vacuum.qhtr");
    const auto dark = read_trace(dir / "run_dark.qhtr");
    AnalysisOptions o;
    o.detector_clip_alpha = 2.0;
    const auto r1 = analyze(sig, vac, dark, o);
    const auto r2 = analyze(sig, vac, dark, o);
    auto j1 = to_json(r1);
    auto j2 = to_json(r2);
    j1.erase("generated_utc");
    j2.erase("generated_utc");
    CHECK(j1 == j2);
    CHECK(r1.bins.size() == 50);
    CHECK(r1.usable_bins <= 50);
    std::size_t usable = 0;
    for (const auto& b : r1.bins) {
        usable += b.usable;
        CHECK(b.alpha_error >= 0.0);
        CHECK(b.excess_noise.error() >= 0.0);
    }
    CHECK(usable == r1.usable_bins);
    CHECK(r1.calibration.clearance_db == doctest::Approx(6.0).epsilon(0.02));

    // vacuum as the signal, with the clock pinned
    AnalysisOptions v = o;
    v.fixed_clock = r1.clock;
    const auto rv = analyze(vac, vac, dark, v);
    for (const auto& b : rv.bins) {
        if (std::find(rv.failed_bins.begin(), rv.failed_bins.end(), b.index) != rv.failed_bins.end()) continue;
        CHECK(b.fit.collapsed);
        CHECK(b.alpha == 0.0);
    }
    // and without a pinned clock there is nothing to lock on to
    CHECK_THROWS_AS(analyze(vac, vac, dark, o), ClockRecoveryError);

    // dark standing in for vacuum leaves no clearance
    CHECK_THROWS_AS(analyze(sig, dark, dark, o), CalibrationError);
    fs::remove_all(dir);
}
