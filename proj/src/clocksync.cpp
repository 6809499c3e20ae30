#include "qhd/clocksync.hpp"

#include "qhd/core.hpp"
#include "qhd/error.hpp"
#include "qhd/log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace qhd::clock {

namespace {

constexpr double golden = 0.6180339887498949;

struct Maximum {
    double x;
    double value;
};

// Golden-section search for a maximum of f on [lo, hi].
template <class F>
Maximum golden_max(F&& f, double lo, double hi, double x_tol) {
    double a = lo;
    double b = hi;
    double c = b - golden * (b - a);
    double d = a + golden * (b - a);
    double fc = f(c);
    double fd = f(d);
    while (b - a > x_tol) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = f(d);
        }
    }
    return fc >= fd ? Maximum{c, fc} : Maximum{d, fd};
}

// The trace with the detector's soft clip undone and its single-pole
// response removed; independent of the clock, so computed once.
class Deconvolved {
public:
    Deconvolved(std::span<const float> x, double pole, double knee) : u_(x.size(), 0.0f) {
        const auto level = [&](std::size_t k) {
            const double v = x[k];
            return knee > 0.0 && std::abs(v) > knee ? soft_clip_inverse(v, knee) : v;
        };
        const double gain = 1.0 / (1.0 - pole);
        double prev = x.empty() ? 0.0 : level(0);
        for (std::size_t k = 1; k < x.size(); ++k) {
            const double cur = level(k);
            u_[k] = static_cast<float>((cur - pole * prev) * gain);
            prev = cur;
        }
    }

    // Valid for 1 <= k < size().
    double operator()(std::size_t k) const { return u_[k]; }
    std::size_t size() const { return u_.size(); }

private:
    std::vector<float> u_;
};

// Inclusive sample-index range [lo, hi] covering positions centre +- half,
// clipped to [1, n-1]. Empty when lo > hi.
struct IndexRange {
    std::int64_t lo;
    std::int64_t hi;
};

IndexRange window(double centre, double half, std::size_t n) {
    const auto lo = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(centre - half)));
    const auto hi = std::min<std::int64_t>(static_cast<std::int64_t>(n) - 1,
                                           static_cast<std::int64_t>(std::floor(centre + half)));
    return {lo, hi};
}

// Average phase-transition shape, tabulated on a fine grid of positions
// relative to the predicted symbol boundary and normalized so the plateaus
// sit near -1 and +1.
class EdgeTemplate {
public:
    EdgeTemplate(double half_width, double step)
        : half_(half_width), step_(step),
          num_(static_cast<std::size_t>(std::ceil(2 * half_width / step)), 0.0), den_(num_.size(), 0.0) {}

    void add(double tau, double amplitude, double centred_value) {
        const auto g = static_cast<std::int64_t>(std::floor((tau + half_) / step_));
        if (g < 0 || g >= static_cast<std::int64_t>(num_.size())) {
            return;
        }
        num_[static_cast<std::size_t>(g)] += amplitude * centred_value;
        den_[static_cast<std::size_t>(g)] += amplitude * amplitude;
    }

    void finish() {
        value_.assign(num_.size(), 0.0);
        for (std::size_t g = 0; g < num_.size(); ++g) {
            value_[g] = den_[g] > 0.0 ? num_[g] / den_[g] : std::numeric_limits<double>::quiet_NaN();
        }
        // Fill empty cells by nearest neighbour so interpolation stays finite.
        for (std::size_t g = 1; g < value_.size(); ++g) {
            if (std::isnan(value_[g])) value_[g] = value_[g - 1];
        }
        for (std::size_t g = value_.size() - 1; g-- > 0;) {
            if (std::isnan(value_[g])) value_[g] = value_[g + 1];
        }
        slope_.assign(value_.size(), 0.0);
        for (std::size_t g = 1; g + 1 < value_.size(); ++g) {
            slope_[g] = (value_[g + 1] - value_[g - 1]) / (2 * step_);
        }
    }

    bool usable() const {
        return std::any_of(den_.begin(), den_.end(), [](double d) { return d > 0.0; }) &&
               std::none_of(value_.begin(), value_.end(), [](double v) { return std::isnan(v); });
    }

    double value(double tau) const { return interpolate(value_, tau); }
    double slope(double tau) const { return interpolate(slope_, tau); }
    double half_width() const { return half_; }

    // Centre of odd symmetry: the shift c minimising
    // sum_j [T(c + tau_j) + T(c - tau_j)]^2 over |tau_j| <= reach.
    double symmetry_centre(double reach) const {
        const auto asymmetry = [&](double c) {
            double q = 0.0;
            for (double t = step_; t <= reach; t += step_) {
                const double s = value(c + t) + value(c - t);
                q += s * s;
            }
            return -q;
        };
        const double limit = half_ - reach - step_;
        double best = 0.0;
        double best_q = -std::numeric_limits<double>::infinity();
        for (double c = -limit; c <= limit; c += step_) {
            const double q = asymmetry(c);
            if (q > best_q) {
                best_q = q;
                best = c;
            }
        }
        return golden_max(asymmetry, best - step_, best + step_, 1e-7).x;
    }

private:
    double interpolate(const std::vector<double>& table, double tau) const {
        const double pos = (tau + half_) / step_ - 0.5;
        if (pos <= 0.0) return table.front();
        const auto last = static_cast<double>(table.size() - 1);
        if (pos >= last) return table.back();
        const auto i = static_cast<std::size_t>(pos);
        const double f = pos - static_cast<double>(i);
        return table[i] * (1.0 - f) + table[i + 1] * f;
    }

    double half_;
    double step_;
    std::vector<double> num_;
    std::vector<double> den_;
    std::vector<double> value_;
    std::vector<double> slope_;
};

struct EdgeStep {
    double d_offset = 0.0;  // correction at n = 0
    double d_ratio = 0.0;
    double var_offset = 0.0;
    double var_ratio = 0.0;
    std::size_t edges = 0;
};

struct Edge {
    std::int64_t n;  // boundary between symbols n and n+1
    double mid;
    double amplitude;
};

// One Gauss-Newton update of (offset, ratio) from phase-transition timing
// over symbols [0, n_symbols].
EdgeStep edge_step(const Deconvolved& u, double offset, double ratio, std::int64_t n_symbols) {
    const double plateau_half = ratio / 4;
    const double edge_half = ratio / 2;

    std::vector<double> plateau(static_cast<std::size_t>(n_symbols + 1), 0.0);
    std::vector<bool> valid(plateau.size(), false);
    for (std::int64_t n = 0; n <= n_symbols; ++n) {
        const auto w = window(offset + static_cast<double>(n) * ratio, plateau_half, u.size());
        if (w.lo > w.hi) continue;
        double sum = 0.0;
        for (auto k = w.lo; k <= w.hi; ++k) sum += u(static_cast<std::size_t>(k));
        plateau[static_cast<std::size_t>(n)] = sum / static_cast<double>(w.hi - w.lo + 1);
        valid[static_cast<std::size_t>(n)] = true;
    }

    std::vector<Edge> edges;
    for (std::int64_t n = 0; n < n_symbols; ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (!valid[i] || !valid[i + 1]) continue;
        const double left = plateau[i];
        const double right = plateau[i + 1];
        if ((left > 0.0) == (right > 0.0)) continue;
        edges.push_back({n, 0.5 * (left + right), 0.5 * (right - left)});
    }
    EdgeStep out;
    out.edges = edges.size();
    if (edges.size() < 16) {
        return out;
    }

    EdgeTemplate shape(edge_half, 1.0 / 16.0);
    for (const auto& e : edges) {
        const double boundary = offset + (static_cast<double>(e.n) + 0.5) * ratio;
        const auto w = window(boundary, edge_half, u.size());
        for (auto k = w.lo; k <= w.hi; ++k) {
            shape.add(static_cast<double>(k) - boundary, e.amplitude, u(static_cast<std::size_t>(k)) - e.mid);
        }
    }
    shape.finish();
    if (!shape.usable()) {
        return out;
    }
    const double centre = shape.symmetry_centre(ratio / 4);

    // Normal equations for the shift s = d0 + m * dr, m centred on the
    // mean boundary index to keep the 2x2 system well conditioned.
    const double m_ref = 0.5 * static_cast<double>(n_symbols);
    double s11 = 0.0, s12 = 0.0, s22 = 0.0, r1 = 0.0, r2 = 0.0, sse = 0.0;
    std::size_t used = 0;
    for (const auto& e : edges) {
        const double m = static_cast<double>(e.n) + 0.5;
        const double mc = m - m_ref;
        const double boundary = offset + m * ratio;
        const auto w = window(boundary, edge_half, u.size());
        for (auto k = w.lo; k <= w.hi; ++k) {
            const double tau = static_cast<double>(k) - boundary + centre;
            const double resid = u(static_cast<std::size_t>(k)) - e.mid - e.amplitude * shape.value(tau);
            const double g = e.amplitude * shape.slope(tau);
            s11 += g * g;
            s12 += g * g * mc;
            s22 += g * g * mc * mc;
            r1 += g * resid;
            r2 += g * resid * mc;
            sse += resid * resid;
            ++used;
        }
    }
    const double det = s11 * s22 - s12 * s12;
    if (!(det > 0.0) || used < 3) {
        return out;
    }
    // resid ~ -g * s  =>  s = -(J^T J)^-1 J^T resid
    const double d0c = -(s22 * r1 - s12 * r2) / det;
    const double dr = -(s11 * r2 - s12 * r1) / det;
    const double sigma2 = sse / static_cast<double>(used - 2);
    const double v0c = sigma2 * s22 / det;
    const double vr = sigma2 * s11 / det;
    const double cov = -sigma2 * s12 / det;

    out.d_ratio = dr;
    out.d_offset = d0c - m_ref * dr;
    out.var_ratio = vr;
    out.var_offset = v0c + m_ref * m_ref * vr - 2 * m_ref * cov;
    return out;
}

double wrap_offset(double offset, double ratio) {
    double o = std::fmod(offset, ratio);
    if (o < 0.0) o += ratio;
    if (o >= ratio) o -= ratio;
    return o;
}

} // namespace

void ClockEstimate::validate() const {
    if (!(samples_per_symbol > 2.0) || !std::isfinite(samples_per_symbol)) {
        throw DomainError("clock estimate needs more than two samples per symbol");
    }
    if (!(offset >= 0.0 && offset < samples_per_symbol)) {
        throw DomainError("clock offset must lie in [0, samples_per_symbol)");
    }
}

std::int64_t round_half_away(double x) { return static_cast<std::int64_t>(std::llround(x)); }

std::size_t pulse_center_count(std::size_t n_samples, double offset, double ratio) {
    if (n_samples == 0 || !(ratio > 0.0)) return 0;
    const double limit = static_cast<double>(n_samples) - 0.5;
    if (round_half_away(offset) < 0 || !(offset < limit)) {
        return 0;
    }
    auto n = static_cast<std::int64_t>(std::floor((limit - offset) / ratio));
    while (n > 0 && round_half_away(offset + static_cast<double>(n) * ratio) > static_cast<std::int64_t>(n_samples) - 1) {
        --n;
    }
    while (round_half_away(offset + static_cast<double>(n + 1) * ratio) <= static_cast<std::int64_t>(n_samples) - 1) {
        ++n;
    }
    return static_cast<std::size_t>(n + 1);
}

double clock_objective(std::span<const float> samples, double offset, double ratio, std::size_t first,
                       std::size_t count, std::size_t stride) {
    const auto n_samples = static_cast<std::int64_t>(samples.size());
    const std::size_t last = count == SIZE_MAX ? SIZE_MAX : first + count;
    double sum = 0.0;
    for (std::size_t n = first; n < last; n += stride) {
        const auto idx = round_half_away(offset + static_cast<double>(n) * ratio);
        if (idx < 0) continue;
        if (idx >= n_samples) break;
        sum += std::abs(samples[static_cast<std::size_t>(idx)]);
    }
    return sum;
}

ClockEstimate recover_clock(const RawTrace& trace, double nominal_ratio, const ClockSearch& search) {
    trace.validate();
    if (!(nominal_ratio > 2.0)) {
        throw DomainError("nominal samples-per-symbol must exceed 2");
    }
    const std::span<const float> x(trace.samples);
    const std::size_t total = pulse_center_count(x.size(), 0.0, nominal_ratio);
    if (total < search.min_symbols) {
        throw ClockRecoveryError("trace holds " + std::to_string(total) + " symbols; need at least " +
                                 std::to_string(search.min_symbols));
    }

    // Coarse grid over a prefix short enough that one ratio step drifts by
    // at most a quarter sample.
    const double step_ratio = nominal_ratio * search.ratio_step_ppm * 1e-6;
    const auto coarse_window = std::clamp<std::size_t>(
        static_cast<std::size_t>(0.25 / step_ratio), search.min_symbols, total);
    const auto half_steps = static_cast<int>(std::lround(search.ratio_half_width_ppm / search.ratio_step_ppm));
    const auto n_offsets = static_cast<std::size_t>(std::ceil(nominal_ratio / search.offset_step));

    int best_j = 0;
    double best_o = 0.0;
    double best_f = -1.0;
    std::vector<double> best_row;
    std::vector<double> row(n_offsets);
    for (int j = -half_steps; j <= half_steps; ++j) {
        const double r = nominal_ratio + j * step_ratio;
        double row_best = -1.0;
        double row_best_o = 0.0;
        for (std::size_t i = 0; i < n_offsets; ++i) {
            const double o = static_cast<double>(i) * search.offset_step;
            row[i] = clock_objective(x, o, r, 0, coarse_window, search.coarse_decimation);
            if (row[i] > row_best) {
                row_best = row[i];
                row_best_o = o;
            }
        }
        if (row_best > best_f) {
            best_f = row_best;
            best_o = row_best_o;
            best_j = j;
            best_row = row;
        }
    }

    // Contrast of the best row against the noise of a sum of |x|.
    {
        const auto span_samples = std::min<std::size_t>(
            x.size(), static_cast<std::size_t>(static_cast<double>(coarse_window) * nominal_ratio));
        double s = 0.0, s2 = 0.0;
        for (std::size_t k = 0; k < span_samples; ++k) {
            const double v = std::abs(x[k]);
            s += v;
            s2 += v * v;
        }
        const double mean = s / static_cast<double>(span_samples);
        const double sd = std::sqrt(std::max(0.0, s2 / static_cast<double>(span_samples) - mean * mean));
        const double evaluated = std::ceil(static_cast<double>(coarse_window) /
                                           static_cast<double>(search.coarse_decimation));
        const double noise = sd * std::sqrt(evaluated);
        const auto [lo, hi] = std::minmax_element(best_row.begin(), best_row.end());
        const double contrast = noise > 0.0 ? (*hi - *lo) / noise : 0.0;
        log::debug("clock: coarse contrast {:.1f} sigma", contrast);
        if (!(contrast >= search.min_contrast_sigma)) {
            throw ClockRecoveryError("clock objective is flat; no symbol modulation found");
        }
    }
    if (std::abs(best_j) == half_steps) {
        throw ClockBoundaryError("clock ratio optimum lies on the edge of the +-" +
                                 std::to_string(search.ratio_half_width_ppm) + " ppm search range");
    }

    // Golden-section coordinate refinement of the same objective on growing
    // windows; the offset is parametrised at the window centre so the two
    // coordinates decouple.
    double offset = best_o;
    double ratio = nominal_ratio + best_j * step_ratio;
    double ratio_half = step_ratio;
    std::size_t span_symbols = coarse_window;
    double objective = 0.0;
    for (;;) {
        const double centre_n = 0.5 * static_cast<double>(span_symbols);
        double centre = offset + centre_n * ratio;
        double previous = -1.0;
        for (int it = 0; it < 30; ++it) {
            const auto by_ratio = golden_max(
                [&](double r) { return clock_objective(x, centre - centre_n * r, r, 0, span_symbols); },
                ratio - ratio_half, ratio + ratio_half, ratio_half * 1e-4);
            ratio = by_ratio.x;
            const auto by_offset = golden_max(
                [&](double c) { return clock_objective(x, c - centre_n * ratio, ratio, 0, span_symbols); },
                centre - 1.0, centre + 1.0, 1e-4);
            centre = by_offset.x;
            objective = by_offset.value;
            if (previous >= 0.0 && std::abs(objective - previous) <= search.tolerance * objective) {
                break;
            }
            previous = objective;
        }
        offset = centre - centre_n * ratio;
        // Edge timing takes over once the objective has localised the
        // clock to within a sample over a moderate window.
        if (span_symbols >= total || (search.edge_refinement && span_symbols >= 4 * coarse_window)) {
            break;
        }
        ratio_half = 2.0 / static_cast<double>(span_symbols);
        span_symbols = std::min(total, span_symbols * 4);
    }

    ClockEstimate est;
    est.objective_offset = wrap_offset(offset, ratio);
    est.objective_ratio = ratio;

    if (search.edge_refinement) {
        const Deconvolved u(x, search.detector_pole, search.saturation_knee);
        auto n_symbols = std::min<std::int64_t>(16384, static_cast<std::int64_t>(total) - 1);
        EdgeStep last;
        bool converged_any = false;
        for (;;) {
            for (int it = 0; it < 8; ++it) {
                last = edge_step(u, offset, ratio, n_symbols);
                if (last.edges < 16) break;
                offset += last.d_offset;
                ratio += last.d_ratio;
                converged_any = true;
                if (std::abs(last.d_offset) < 1e-7 &&
                    std::abs(last.d_ratio) * static_cast<double>(n_symbols) < 1e-7) {
                    break;
                }
            }
            const auto available = static_cast<std::int64_t>(pulse_center_count(x.size(), offset, ratio)) - 1;
            if (n_symbols >= available || last.edges < 16) break;
            n_symbols = std::min(available, n_symbols * 4);
        }
        if (converged_any && last.edges >= 16) {
            est.edge_refined = true;
            est.edges_used = last.edges;
            est.offset_uncertainty = std::sqrt(last.var_offset);
            est.ratio_uncertainty = std::sqrt(last.var_ratio);
        } else {
            log::warn("clock: edge refinement found too few phase transitions; keeping objective optimum");
            offset = est.objective_offset;
            ratio = est.objective_ratio;
        }
    }

    // Refinement may walk off a grid point next to the edge; an optimum
    // beyond the stated range is still a boundary hit.
    if (std::abs(ratio / nominal_ratio - 1.0) > search.ratio_half_width_ppm * 1e-6) {
        throw ClockBoundaryError("clock ratio optimum lies outside the +-" +
                                 std::to_string(search.ratio_half_width_ppm) + " ppm search range");
    }

    est.samples_per_symbol = ratio;
    est.offset = wrap_offset(offset, ratio);
    est.objective = clock_objective(x, est.offset, ratio);
    log::info("clock: offset {:.6f} samples, ratio {:.12f} samples/symbol", est.offset, ratio);
    return est;
}

std::vector<float> extract_pulse_centers(std::span<const float> samples, double offset, double ratio) {
    const std::size_t count = pulse_center_count(samples.size(), offset, ratio);
    std::vector<float> out;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const auto idx = round_half_away(offset + static_cast<double>(n) * ratio);
        out.push_back(samples[static_cast<std::size_t>(idx)]);
    }
    return out;
}

std::vector<float> extract_pulse_centers(const RawTrace& trace, const ClockEstimate& clock) {
    clock.validate();
    return extract_pulse_centers(trace.samples, clock.offset, clock.samples_per_symbol);
}

double lag1_autocorrelation(std::span<const float> samples) {
    if (samples.size() < 3) {
        throw DomainError("autocorrelation needs at least three samples");
    }
    const double mean =
        std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    double num = 0.0, den = 0.0;
    double prev = samples[0] - mean;
    den += prev * prev;
    for (std::size_t k = 1; k < samples.size(); ++k) {
        const double cur = samples[k] - mean;
        num += cur * prev;
        den += cur * cur;
        prev = cur;
    }
    if (!(den > 0.0)) {
        throw DomainError("autocorrelation of a constant record is undefined");
    }
    return num / den;
}

} // namespace qhd::clock
