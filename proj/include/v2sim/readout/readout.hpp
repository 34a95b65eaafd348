#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "v2sim/core/errors.hpp"
#include "v2sim/fit/least_squares.hpp"
#include "v2sim/trap/markov.hpp"

namespace v2sim::readout {

enum class DiffusionMode { Frozen, OuPlusJumps };

struct TrapJumps {
    trap::TrapMarkovModel model;
    trap::Condition condition = trap::Condition::Dark;
};

/// Spectral diffusion: Ornstein-Uhlenbeck wander plus optional charge-trap jumps.
struct DiffusionModel {
    DiffusionMode mode = DiffusionMode::Frozen;
    double ou_sigma_MHz = 0.0;
    double ou_tau_ms = 10.0;
    std::optional<TrapJumps> jumps;
};

inline void validate(const DiffusionModel& d) {
    if (!(d.ou_sigma_MHz >= 0.0)) throw ValidationError("diffusion.ou_sigma_MHz", "must be >= 0");
    if (!(d.ou_tau_ms > 0.0)) throw ValidationError("diffusion.ou_tau_ms", "must be positive");
    if (d.mode == DiffusionMode::Frozen && (d.ou_sigma_MHz != 0.0 || d.jumps))
        throw ValidationError("diffusion.mode", "frozen mode requires ou_sigma_MHz = 0 and no jumps");
}

/// Exact OU path sampled every `dt_ms`, started from the stationary law N(0, sigma^2).
inline std::vector<double> ou_path(double sigma, double tau_ms, double dt_ms, std::size_t n, std::mt19937_64& rng) {
    std::vector<double> x(n, 0.0);
    if (n == 0 || sigma == 0.0) return x;
    std::normal_distribution<double> g(0.0, 1.0);
    const double a = std::exp(-dt_ms / tau_ms);
    const double b = sigma * std::sqrt(1.0 - a * a);
    x[0] = sigma * g(rng);
    for (std::size_t k = 1; k < n; ++k) x[k] = a * x[k - 1] + b * g(rng);
    return x;
}

struct PhotonCountRecord {
    std::size_t event_index;
    double window_ms;
    long long counts;
    double true_detuning_MHz;
};

struct CrcSettings {
    double laser_offset_MHz = 0.0;
    double peak_kcps = 24.0;
    double background_kcps = 0.1;
    double window_ms = 1.0;
    double event_period_ms = 1.0;
    std::size_t n_events = 10000;
    double linewidth_MHz = 0.0;   // 0: composite zero-power linewidth of the optical model
};

/// Peak-normalized Lorentzian response.
inline double lorentz_unit(double detuning, double fwhm) {
    const double h = 0.5 * fwhm;
    return h * h / (detuning * detuning + h * h);
}

/// Charge-resonance-check events: detuning = OU + trap shift (relative to the line), counts
/// ~ Poisson(window (background + peak L(detuning - laser offset))). Deterministic per seed.
inline std::vector<PhotonCountRecord> simulate_crc(const optics::DefectOpticalModel& om, const DiffusionModel& d,
                                                   const CrcSettings& s, std::uint64_t seed) {
    validate(d);
    if (s.n_events < 1) throw DomainError("simulate_crc: n_events must be >= 1");
    if (!(s.window_ms > 0.0 && s.event_period_ms > 0.0)) throw DomainError("simulate_crc: window and period > 0");
    const double fwhm = s.linewidth_MHz > 0.0 ? s.linewidth_MHz : optics::effective_two_laser_linewidth(om, 0.0);
    std::mt19937_64 rng(seed);
    const auto ou = d.mode == DiffusionMode::Frozen ? std::vector<double>(s.n_events, 0.0)
                                                    : ou_path(d.ou_sigma_MHz, d.ou_tau_ms, s.event_period_ms, s.n_events, rng);
    std::optional<trap::TrapTrajectory> tr;
    if (d.mode == DiffusionMode::OuPlusJumps && d.jumps) {
        const double total = s.event_period_ms * static_cast<double>(s.n_events);
        tr = trap::simulate_trajectory(d.jumps->model, {{d.jumps->condition, total}}, total, rng());
    }
    std::vector<PhotonCountRecord> out;
    out.reserve(s.n_events);
    for (std::size_t k = 0; k < s.n_events; ++k) {
        double det = ou[k];
        if (tr) det += d.jumps->model.line_shift_MHz[static_cast<std::size_t>(tr->state_at(k * s.event_period_ms))];
        const double mu = s.window_ms * (s.background_kcps + s.peak_kcps * lorentz_unit(det - s.laser_offset_MHz, fwhm));
        std::poisson_distribution<long long> pd(mu);
        out.push_back({k, s.window_ms, pd(rng), det});
    }
    return out;
}

struct CountMoments {
    double mean, variance;
};

inline CountMoments moments(const std::vector<PhotonCountRecord>& r) {
    if (r.empty()) throw DomainError("moments: empty record list");
    double m = 0.0;
    for (const auto& e : r) m += static_cast<double>(e.counts);
    m /= static_cast<double>(r.size());
    double v = 0.0;
    for (const auto& e : r) v += (e.counts - m) * (e.counts - m);
    v /= r.size() > 1 ? static_cast<double>(r.size() - 1) : 1.0;
    return {m, v};
}

/// Smallest integer threshold >= mu + 3 sigma of the detuned-line count distribution.
inline long long threshold_for_confidence(const std::vector<PhotonCountRecord>& detuned, double n_sigma = 3.0) {
    if (detuned.empty()) throw DomainError("threshold_for_confidence: empty distribution");
    const auto mo = moments(detuned);
    return static_cast<long long>(std::ceil(mo.mean + n_sigma * std::sqrt(mo.variance) - 1e-9));
}

inline long long threshold_for_confidence(double mean, double sigma, double n_sigma = 3.0) {
    return static_cast<long long>(std::ceil(mean + n_sigma * sigma - 1e-9));
}

struct CrcOutcome {
    double success = 0.0;        // fraction of all events with counts >= threshold
    double false_accept = 0.0;   // fraction of all events accepted with |detuning| > acceptance window
};

inline CrcOutcome crc_success_rate(const std::vector<PhotonCountRecord>& r, long long threshold,
                                   double acceptance_halfwidth_MHz) {
    if (r.empty()) return {};
    std::size_t acc = 0, bad = 0;
    for (const auto& e : r) {
        if (e.counts < threshold) continue;
        ++acc;
        if (std::abs(e.true_detuning_MHz) > acceptance_halfwidth_MHz) ++bad;
    }
    const double n = static_cast<double>(r.size());
    return {acc / n, bad / n};
}

/// Counts histogram 0..max.
inline std::vector<std::size_t> histogram(const std::vector<long long>& counts) {
    long long mx = 0;
    for (auto c : counts) mx = std::max(mx, c);
    std::vector<std::size_t> h(static_cast<std::size_t>(mx) + 1, 0);
    for (auto c : counts) ++h[static_cast<std::size_t>(c)];
    return h;
}

inline std::vector<long long> counts_of(const std::vector<PhotonCountRecord>& r) {
    std::vector<long long> c;
    c.reserve(r.size());
    for (const auto& e : r) c.push_back(e.counts);
    return c;
}

struct SsrSettings {
    double bright_kcps = 20.0;
    double dark_kcps = 2.0;
    double flip_probability = 0.0;   // per repetition
    int repetitions = 1;
    double window_ms = 1.0;          // per repetition
    std::size_t shots = 20000;       // per prepared state
    /// Shot-to-shot static line detuning (Gaussian, MHz) reducing the bright rate; 0 = stable line.
    double detuning_sigma_MHz = 0.0;
    double linewidth_MHz = 17.0;
};

struct PoissonMixture {
    double weight_bright = 0.5;
    double mean_bright = 0.0;
    double mean_dark = 0.0;
    bool converged = false;
};

/// EM fit of a two-component Poisson mixture.
inline PoissonMixture fit_poisson_mixture(const std::vector<long long>& counts, int max_iter = 2000) {
    PoissonMixture m;
    if (counts.empty()) return m;
    std::vector<long long> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    const auto h = histogram(counts);
    m.mean_dark = std::max(1e-3, static_cast<double>(sorted[sorted.size() / 4]));
    m.mean_bright = std::max(m.mean_dark + 1e-3, static_cast<double>(sorted[3 * sorted.size() / 4]));
    double w = 0.5;
    const double n = static_cast<double>(counts.size());
    for (int it = 0; it < max_iter; ++it) {
        double sb = 0.0, sbk = 0.0, sd = 0.0, sdk = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) {
            if (h[k] == 0) continue;
            const double kk = static_cast<double>(k);
            const double lb = std::log(w) + kk * std::log(m.mean_bright) - m.mean_bright;
            const double ld = std::log1p(-w) + kk * std::log(m.mean_dark) - m.mean_dark;
            const double mxl = std::max(lb, ld);
            const double rb = std::exp(lb - mxl) / (std::exp(lb - mxl) + std::exp(ld - mxl));
            sb += h[k] * rb;
            sbk += h[k] * rb * kk;
            sd += h[k] * (1.0 - rb);
            sdk += h[k] * (1.0 - rb) * kk;
        }
        const double nb = sbk / std::max(sb, 1e-300), nd = sdk / std::max(sd, 1e-300);
        const double nw = std::clamp(sb / n, 1e-9, 1.0 - 1e-9);
        const double delta = std::abs(nb - m.mean_bright) + std::abs(nd - m.mean_dark) + std::abs(nw - w);
        m.mean_bright = std::max(nb, 1e-9);
        m.mean_dark = std::max(nd, 1e-9);
        w = nw;
        if (delta < 1e-10) {
            m.converged = true;
            break;
        }
    }
    if (m.mean_dark > m.mean_bright) {
        std::swap(m.mean_dark, m.mean_bright);
        w = 1.0 - w;
    }
    m.weight_bright = w;
    return m;
}

/// max over cuts c of (P_b(N >= c) + P_d(N < c)) / 2 for two Poisson laws.
inline double poisson_fidelity(double mean_bright, double mean_dark, long long* best_cut = nullptr) {
    const double hi = std::max(mean_bright, mean_dark);
    const long long cmax = static_cast<long long>(hi + 10.0 * std::sqrt(hi + 1.0) + 10.0);
    double best = 0.5;
    long long bc = 0;
    double cdf_b = 0.0, cdf_d = 0.0; // P(N < c)
    double pb = std::exp(-mean_bright), pd = std::exp(-mean_dark);
    for (long long c = 0; c <= cmax; ++c) {
        const double f = 0.5 * ((1.0 - cdf_b) + cdf_d);
        if (f > best) {
            best = f;
            bc = c;
        }
        cdf_b += pb;
        cdf_d += pd;
        pb *= mean_bright / double(c + 1);
        pd *= mean_dark / double(c + 1);
    }
    if (best_cut) *best_cut = bc;
    return best;
}

struct SsrResult {
    std::vector<long long> bright_counts;
    std::vector<long long> dark_counts;
    PoissonMixture mixture;
    double fidelity = 0.5;
    long long cut = 0;
    bool fidelity_valid = false;
    double overlap_mass = 0.0;   // sum over k of min(h_b(k), h_d(k)) / shots
};

/// Repetitive single-shot readout of a bright/dark emitter with per-repetition Bernoulli state flips.
inline SsrResult simulate_ssr(const SsrSettings& s, std::uint64_t seed) {
    if (s.repetitions < 1) throw DomainError("simulate_ssr: repetitions must be >= 1");
    if (s.shots < 1 || !(s.window_ms > 0.0)) throw DomainError("simulate_ssr: shots and window must be positive");
    if (!(s.flip_probability >= 0.0 && s.flip_probability <= 1.0))
        throw DomainError("simulate_ssr: flip probability must lie in [0, 1]");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution flip(s.flip_probability);
    std::normal_distribution<double> g(0.0, 1.0);
    auto shot = [&](bool bright) {
        const double scale = s.detuning_sigma_MHz > 0.0 ? lorentz_unit(s.detuning_sigma_MHz * g(rng), s.linewidth_MHz) : 1.0;
        long long total = 0;
        for (int r = 0; r < s.repetitions; ++r) {
            const double mu = s.window_ms * (bright ? s.bright_kcps * scale : s.dark_kcps);
            std::poisson_distribution<long long> pd(mu);
            total += pd(rng);
            if (flip(rng)) bright = !bright;
        }
        return total;
    };
    SsrResult res;
    for (std::size_t i = 0; i < s.shots; ++i) res.bright_counts.push_back(shot(true));
    for (std::size_t i = 0; i < s.shots; ++i) res.dark_counts.push_back(shot(false));

    std::vector<long long> pooled = res.bright_counts;
    pooled.insert(pooled.end(), res.dark_counts.begin(), res.dark_counts.end());
    res.mixture = fit_poisson_mixture(pooled);
    res.fidelity_valid = res.mixture.converged;
    res.fidelity = poisson_fidelity(res.mixture.mean_bright, res.mixture.mean_dark, &res.cut);

    const auto hb = histogram(res.bright_counts), hd = histogram(res.dark_counts);
    double ov = 0.0;
    for (std::size_t k = 0; k < std::min(hb.size(), hd.size()); ++k) ov += static_cast<double>(std::min(hb[k], hd[k]));
    res.overlap_mass = ov / static_cast<double>(s.shots);
    return res;
}

/// C(t) = exp(-(t / T2)^beta), optional additive Gaussian noise.
inline std::vector<double> coherence_decay(double T2_ms, double beta, const std::vector<double>& times_ms,
                                           double noise_sigma = 0.0, std::uint64_t seed = 0) {
    if (!(T2_ms > 0.0 && beta > 0.0)) throw DomainError("coherence_decay: T2 and beta must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> y;
    y.reserve(times_ms.size());
    for (double t : times_ms) {
        double v = std::exp(-std::pow(std::max(t, 0.0) / T2_ms, beta));
        if (noise_sigma > 0.0) v += noise_sigma * g(rng);
        y.push_back(v);
    }
    return y;
}

struct StretchedFit {
    double T2_ms, beta;
    Eigen::MatrixXd covariance;
};

/// Nonlinear least squares for exp(-(t/T2)^beta), seeded by the log-log linearization
/// ln(-ln C) = beta ln t - beta ln T2.
inline StretchedFit fit_stretched_exponential(const std::vector<double>& t, const std::vector<double>& y) {
    if (t.size() != y.size() || t.size() < 5) throw DomainError("fit_stretched_exponential: need >= 5 points");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] > 0.0 && y[i] > 0.02 && y[i] < 0.98) {
            lx.push_back(std::log(t[i]));
            ly.push_back(std::log(-std::log(y[i])));
        }
    const double first = y.front(), last = y.back();
    if (!(last < first - 0.1) || lx.size() < 2)
        throw NumericalError("fit_stretched_exponential: data is not decaying", 0.0);
    double beta0 = 1.0, T20 = t[t.size() / 2];
    try {
        const auto lf = fit::linear_regression(lx, ly);
        beta0 = std::clamp(lf.slope, 0.2, 3.0);
        T20 = std::exp(-lf.intercept / lf.slope);
    } catch (const DomainError&) {
    }
    if (!std::isfinite(T20) || T20 <= 0.0) T20 = t[t.size() / 2];
    auto model = [](const Eigen::VectorXd& p, double tt) {
        return std::exp(-std::pow(std::max(tt, 0.0) / std::abs(p[0]), p[1]));
    };
    Eigen::VectorXd p0(2);
    p0 << T20, beta0;
    const auto f = fit::least_squares(model, t, y, p0);
    if (!(f.params[1] > 0.0 && f.params[1] <= 3.0 && std::isfinite(f.params[0])))
        throw NumericalError("fit_stretched_exponential: stretch exponent out of (0, 3]", f.rss);
    return {std::abs(f.params[0]), f.params[1], f.covariance};
}

struct ScalingFit {
    double exponent, exponent_stderr;
    double T2_1_ms;
};

/// T2(N) = T2(1) N^p by log-log regression.
inline ScalingFit dd_scaling_fit(const std::vector<double>& N, const std::vector<double>& T2_ms) {
    if (N.size() != T2_ms.size()) throw DomainError("dd_scaling_fit: length mismatch");
    std::vector<double> distinct = N;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 3) throw DomainError("dd_scaling_fit: need >= 3 distinct N");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < N.size(); ++i) {
        if (!(N[i] >= 1.0 && T2_ms[i] > 0.0)) throw DomainError("dd_scaling_fit: N >= 1 and T2 > 0 required");
        lx.push_back(std::log(N[i]));
        ly.push_back(std::log(T2_ms[i]));
    }
    const auto f = fit::linear_regression(lx, ly);
    return {f.slope, f.slope_stderr, std::exp(f.intercept)};
}

} // namespace v2sim::readout
