#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "v2sim/core/errors.hpp"
#include "v2sim/fit/least_squares.hpp"
#include "v2sim/optics/ple.hpp"

namespace v2sim::trap {

enum class Condition { Dark, Repump, Resonant, Depleted };

inline constexpr std::array kConditions{Condition::Dark, Condition::Repump, Condition::Resonant, Condition::Depleted};

inline std::string_view to_string(Condition c) {
    switch (c) {
    case Condition::Dark: return "dark";
    case Condition::Repump: return "repump";
    case Condition::Resonant: return "resonant";
    case Condition::Depleted: return "depleted";
    }
    return "?";
}

inline std::optional<Condition> condition_from_string(std::string_view s) {
    for (auto c : kConditions)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

/// Generator matrix Q (s^-1): Q(i, j) is the rate i -> j for i != j, rows sum to zero.
using Generator = Eigen::MatrixXd;

inline Generator generator_from_rates(int n, const std::vector<std::array<double, 3>>& rates) {
    Generator q = Generator::Zero(n, n);
    for (const auto& r : rates) q(static_cast<Eigen::Index>(r[0]), static_cast<Eigen::Index>(r[1])) = r[2];
    for (Eigen::Index i = 0; i < n; ++i) q(i, i) = -(q.row(i).sum() - q(i, i));
    return q;
}

inline void validate(const Generator& q, const std::string& path = "trap.generator") {
    if (q.rows() != q.cols() || q.rows() < 1) throw ValidationError(path, "must be a non-empty square matrix");
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        for (Eigen::Index j = 0; j < q.cols(); ++j)
            if (i != j && !(q(i, j) >= 0.0 && std::isfinite(q(i, j))))
                throw ValidationError(path, "off-diagonal rates must be finite and >= 0");
        if (std::abs(q.row(i).sum()) > 1e-9 * (1.0 + q.row(i).cwiseAbs().sum()))
            throw ValidationError(path, "rows must sum to zero");
    }
}

/// Three-state charge trap (labels 2-, -, 0 as opaque indices 0, 1, 2) with equally spaced line shifts.
struct TrapMarkovModel {
    int n_states = 3;
    std::vector<double> line_shift_MHz{-400.0, 0.0, 400.0};
    std::map<Condition, Generator> generators;

    const Generator& generator(Condition c) const {
        auto it = generators.find(c);
        if (it == generators.end())
            throw ValidationError("trap.rates." + std::string(to_string(c)), "no generator for condition");
        return it->second;
    }
};

inline std::vector<double> equally_spaced_shifts(int n, double spacing_MHz) {
    std::vector<double> s(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = (i - 0.5 * (n - 1)) * spacing_MHz;
    return s;
}

/// Default rates (s^-1): dark dwell in the bright state ~5 ms, resonant depopulation ~1 ms,
/// repump mixing ~0.5 ms, depleted frozen.
inline TrapMarkovModel default_trap_model(double spacing_MHz = 400.0) {
    TrapMarkovModel m;
    m.line_shift_MHz = equally_spaced_shifts(3, spacing_MHz);
    m.generators[Condition::Dark] = generator_from_rates(3, {{0, 1, 500.0}, {1, 2, 200.0}, {2, 1, 800.0}});
    m.generators[Condition::Repump] = generator_from_rates(3, {{0, 1, 2000.0}, {1, 0, 2000.0}, {2, 1, 2000.0}});
    m.generators[Condition::Resonant] = generator_from_rates(3, {{0, 1, 500.0}, {1, 2, 1000.0}, {2, 1, 100.0}});
    m.generators[Condition::Depleted] = Generator::Zero(3, 3);
    return m;
}

inline void validate(const TrapMarkovModel& m) {
    if (m.n_states < 1) throw ValidationError("trap.n_states", "must be >= 1");
    if (static_cast<int>(m.line_shift_MHz.size()) != m.n_states)
        throw ValidationError("trap.line_shift_MHz", "one shift per state required");
    for (const auto& [c, q] : m.generators) {
        const std::string path = "trap.rates." + std::string(to_string(c));
        validate(q, path);
        if (q.rows() != m.n_states) throw ValidationError(path, "size differs from n_states");
        if (c == Condition::Depleted && q.cwiseAbs().maxCoeff() > 1e-12)
            throw ValidationError(path, "depleted generator must be zero (frozen trap)");
    }
}

struct StationaryResult {
    std::vector<double> distribution;              // equal-weight mixture over closed classes
    std::vector<std::vector<double>> per_class;    // one distribution per closed class
    bool reducible = false;                        // more than one communicating class
};

namespace detail {

/// Communicating classes (strongly connected components of the positive-rate graph).
inline std::vector<int> communicating_classes(const Generator& q, int& n_classes) {
    const auto n = static_cast<int>(q.rows());
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> reach(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) reach(i, j) = i == j || q(i, j) > 0.0;
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            if (reach(i, k))
                for (int j = 0; j < n; ++j) reach(i, j) = reach(i, j) || reach(k, j);
    std::vector<int> cls(static_cast<std::size_t>(n), -1);
    n_classes = 0;
    for (int i = 0; i < n; ++i) {
        if (cls[static_cast<std::size_t>(i)] >= 0) continue;
        for (int j = 0; j < n; ++j)
            if (reach(i, j) && reach(j, i)) cls[static_cast<std::size_t>(j)] = n_classes;
        ++n_classes;
    }
    return cls;
}

} // namespace detail

/// Left null vector of Q normalized to 1. Reducible chains are solved per closed class.
inline StationaryResult stationary_distribution(const Generator& q) {
    validate(q);
    const auto n = static_cast<int>(q.rows());
    int nc = 0;
    const auto cls = detail::communicating_classes(q, nc);
    StationaryResult res;
    res.reducible = nc > 1;
    res.distribution.assign(static_cast<std::size_t>(n), 0.0);
    for (int c = 0; c < nc; ++c) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i)
            if (cls[static_cast<std::size_t>(i)] == c) members.push_back(i);
        bool closed = true;
        for (int i : members)
            for (int j = 0; j < n; ++j)
                if (cls[static_cast<std::size_t>(j)] != c && q(i, j) > 0.0) closed = false;
        if (!closed) continue;
        const auto m = static_cast<Eigen::Index>(members.size());
        Eigen::MatrixXd A(m, m);
        for (Eigen::Index a = 0; a < m; ++a)
            for (Eigen::Index b = 0; b < m; ++b) A(a, b) = q(members[static_cast<std::size_t>(b)], members[static_cast<std::size_t>(a)]);
        A.row(m - 1).setOnes();
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
        rhs[m - 1] = 1.0;
        const Eigen::VectorXd pi = A.fullPivLu().solve(rhs);
        std::vector<double> full(static_cast<std::size_t>(n), 0.0);
        for (Eigen::Index a = 0; a < m; ++a) full[static_cast<std::size_t>(members[static_cast<std::size_t>(a)])] = std::max(0.0, pi[a]);
        res.per_class.push_back(std::move(full));
    }
    for (const auto& p : res.per_class)
        for (int i = 0; i < n; ++i)
            res.distribution[static_cast<std::size_t>(i)] += p[static_cast<std::size_t>(i)] / double(res.per_class.size());
    return res;
}

/// Occupation probabilities after time t_ms under a fixed generator: p(t) = p0 exp(Q t).
inline std::vector<double> propagate(const Generator& q, const std::vector<double>& p0, double t_ms) {
    const Eigen::MatrixXd P = (q * (t_ms * 1e-3)).exp();
    Eigen::RowVectorXd p = Eigen::Map<const Eigen::RowVectorXd>(p0.data(), static_cast<Eigen::Index>(p0.size())) * P;
    return {p.data(), p.data() + p.size()};
}

struct ScheduleSegment {
    Condition condition = Condition::Dark;
    double duration_ms = 0.0;
};

struct TrapTrajectory {
    std::vector<double> times_ms;   // entry time of each state visit; first is 0
    std::vector<int> states;
    std::vector<ScheduleSegment> schedule;
    double duration_ms = 0.0;

    int state_at(double t) const {
        auto it = std::upper_bound(times_ms.begin(), times_ms.end(), t);
        return states[static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - times_ms.begin()) - 1))];
    }
};

inline int sample_state(const std::vector<double>& p, std::mt19937_64& rng) {
    std::discrete_distribution<int> d(p.begin(), p.end());
    return d(rng);
}

/// Exact (Gillespie) simulation across a piecewise-constant condition schedule. The last
/// segment's condition persists when the schedule is shorter than `duration_ms`.
inline TrapTrajectory simulate_trajectory(const TrapMarkovModel& m, const std::vector<ScheduleSegment>& schedule,
                                          double duration_ms, std::uint64_t seed,
                                          std::optional<int> initial_state = std::nullopt) {
    if (!(duration_ms > 0.0)) throw DomainError("simulate_trajectory: duration must be positive");
    if (schedule.empty()) throw DomainError("simulate_trajectory: empty condition schedule");
    std::mt19937_64 rng(seed);
    TrapTrajectory tr;
    tr.schedule = schedule;
    tr.duration_ms = duration_ms;
    int s = initial_state ? *initial_state
                          : sample_state(stationary_distribution(m.generator(schedule.front().condition)).distribution, rng);
    if (s < 0 || s >= m.n_states) throw DomainError("simulate_trajectory: initial state out of range");
    tr.times_ms.push_back(0.0);
    tr.states.push_back(s);

    double t = 0.0;
    std::size_t seg = 0;
    double seg_end = schedule.front().duration_ms;
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    while (t < duration_ms) {
        while (seg + 1 < schedule.size() && t >= seg_end) seg_end += schedule[++seg].duration_ms;
        const double limit = seg + 1 < schedule.size() ? std::min(seg_end, duration_ms) : duration_ms;
        const Generator& q = m.generator(schedule[seg].condition);
        const double out_rate = -q(s, s) * 1e-3; // ms^-1
        if (!(out_rate > 0.0)) {
            t = limit;
            continue;
        }
        const double dt = expo(rng) / out_rate;
        if (t + dt >= limit) {
            t = limit; // memoryless: redraw under the next condition
            continue;
        }
        t += dt;
        double u = uni(rng) * out_rate * 1e3, acc = 0.0;
        int next = s;
        for (int j = 0; j < m.n_states; ++j) {
            if (j == s) continue;
            acc += q(s, j);
            next = j;
            if (u < acc) break;
        }
        s = next;
        tr.times_ms.push_back(t);
        tr.states.push_back(s);
    }
    return tr;
}

/// Fraction of [0, duration] spent in each state.
inline std::vector<double> occupancy(const TrapTrajectory& tr, int n_states) {
    std::vector<double> occ(static_cast<std::size_t>(n_states), 0.0);
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
        const double end = k + 1 < tr.times_ms.size() ? tr.times_ms[k + 1] : tr.duration_ms;
        occ[static_cast<std::size_t>(tr.states[k])] += end - tr.times_ms[k];
    }
    for (auto& o : occ) o /= tr.duration_ms;
    return occ;
}

/// Completed dwell durations in `state` (the first and last, censored, visits are dropped).
inline std::vector<double> dwell_times(const TrapTrajectory& tr, int state) {
    std::vector<double> d;
    for (std::size_t k = 1; k + 1 < tr.states.size(); ++k)
        if (tr.states[k] == state) d.push_back(tr.times_ms[k + 1] - tr.times_ms[k]);
    return d;
}

/// Time-averaged state fractions over [t0, t1].
inline std::vector<double> fractions_between(const TrapTrajectory& tr, int n_states, double t0, double t1) {
    std::vector<double> f(static_cast<std::size_t>(n_states), 0.0);
    auto it = std::upper_bound(tr.times_ms.begin(), tr.times_ms.end(), t0);
    std::size_t k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - tr.times_ms.begin()) - 1));
    for (; k < tr.states.size() && tr.times_ms[k] < t1; ++k) {
        const double a = std::max(t0, tr.times_ms[k]);
        const double b = std::min(t1, k + 1 < tr.times_ms.size() ? tr.times_ms[k + 1] : tr.duration_ms);
        if (b > a) f[static_cast<std::size_t>(tr.states[k])] += b - a;
    }
    const double span = t1 - t0;
    for (auto& x : f) x /= span;
    return f;
}

struct TransientProtocol {
    Condition initial = Condition::Resonant;   // chain prepared in this condition's steady state
    Condition pump = Condition::Dark;          // condition applied for the swept duration
    std::vector<double> durations_ms;
    int probe_state = 1;
    int ensemble = 2000;
};

struct TransientResult {
    std::vector<double> durations_ms;
    std::vector<double> occupancy;   // ensemble fraction in the probed state
    double fitted_rate_per_ms = 0.0;
    double rate_stderr_per_ms = 0.0;
    double amplitude = 0.0;
    double plateau = 0.0;
    bool fit_ok = false;
};

/// Ensemble transient of the probed-state occupancy vs pump duration with a
/// mono-exponential fit plateau + amplitude * exp(-rate * t).
inline TransientResult transient_recovery(const TrapMarkovModel& m, const TransientProtocol& p, std::uint64_t seed) {
    if (p.durations_ms.empty()) throw DomainError("transient_recovery: no durations");
    for (double d : p.durations_ms)
        if (d < 0.0) throw DomainError("transient_recovery: durations must be >= 0");
    if (p.probe_state < 0 || p.probe_state >= m.n_states) throw DomainError("transient_recovery: probe state out of range");
    const auto p0 = stationary_distribution(m.generator(p.initial)).distribution;
    const double t_max = *std::max_element(p.durations_ms.begin(), p.durations_ms.end());

    TransientResult out;
    out.durations_ms = p.durations_ms;
    out.occupancy.assign(p.durations_ms.size(), 0.0);
    std::mt19937_64 seeder(seed);
    for (int e = 0; e < p.ensemble; ++e) {
        const std::uint64_t s = seeder();
        std::mt19937_64 rng(s);
        const int s0 = sample_state(p0, rng);
        const auto tr = simulate_trajectory(m, {{p.pump, t_max + 1.0}}, t_max + 1.0, rng(), s0);
        for (std::size_t k = 0; k < p.durations_ms.size(); ++k)
            if (tr.state_at(p.durations_ms[k]) == p.probe_state) out.occupancy[k] += 1.0;
    }
    for (auto& o : out.occupancy) o /= p.ensemble;

    if (p.durations_ms.size() < 4) return out;
    const double y0 = out.occupancy.front(), y1 = out.occupancy.back();
    const double tspan = t_max - *std::min_element(p.durations_ms.begin(), p.durations_ms.end());
    auto model = [](const Eigen::VectorXd& q, double t) { return q[0] + q[1] * std::exp(-q[2] * t); };
    Eigen::VectorXd g(3);
    g << y1, y0 - y1, 3.0 / std::max(tspan, 1e-9);
    try {
        const auto f = fit::least_squares(model, p.durations_ms, out.occupancy, g);
        out.plateau = f.params[0];
        out.amplitude = f.params[1];
        out.fitted_rate_per_ms = f.params[2];
        out.rate_stderr_per_ms = f.stderr_of(2);
        out.fit_ok = std::isfinite(f.params[2]) && f.params[2] > 0.0 && std::abs(f.params[1]) > 0.0 &&
                     out.rate_stderr_per_ms < f.params[2];
    } catch (const NumericalError&) {
        out.fit_ok = false;
    }
    return out;
}

/// Relaxation rates (ms^-1): magnitudes of the nonzero eigenvalues of Q, ascending.
inline std::vector<double> relaxation_rates_per_ms(const Generator& q) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(q);
    std::vector<double> r;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double v = -es.eigenvalues()[i].real() * 1e-3;
        if (v > 1e-12 * (1.0 + q.cwiseAbs().maxCoeff() * 1e-3)) r.push_back(v);
    }
    std::sort(r.begin(), r.end());
    return r;
}

/// Relaxation rate (ms^-1) of the eigenmode carrying the largest share of the probed-state
/// transient p_probe(t) - p_probe(inf) when starting from p0. Zero if nothing relaxes.
inline double dominant_relaxation_rate_per_ms(const Generator& q, const std::vector<double>& p0, int probe) {
    // p(t)^T = exp(Q^T t) p0^T = sum_k c_k v_k exp(lambda_k t)
    Eigen::EigenSolver<Eigen::MatrixXd> es(q.transpose());
    const Eigen::MatrixXcd V = es.eigenvectors();
    const Eigen::VectorXcd c =
        V.fullPivLu().solve(Eigen::Map<const Eigen::VectorXd>(p0.data(), static_cast<Eigen::Index>(p0.size())).cast<std::complex<double>>());
    const double scale = 1e-9 * (1.0 + q.cwiseAbs().maxCoeff());
    double best = 0.0, rate = 0.0;
    for (Eigen::Index k = 0; k < c.size(); ++k) {
        const double lam = -es.eigenvalues()[k].real();
        if (lam <= scale) continue;
        const double a = std::abs(c[k] * V(probe, k));
        if (a > best) {
            best = a;
            rate = lam * 1e-3;
        }
    }
    return rate;
}

struct TrapScanSettings {
    optics::ScanSettings scan{};
    int n_scans = 20;
    double dwell_per_bin_ms = 0.1;
    double static_detuning_MHz = 0.0;
    double n_local_cm3 = 0.0;
};

struct TrapScan {
    optics::PleSpectrum spectrum;
    std::vector<double> state_fraction;   // time share of each trap state during the scan
};

/// Successive PLE scans against a live trap trajectory. Each bin sees the line at the
/// trap's time-averaged shift over the bin dwell, so slow switching gives discrete lines
/// and fast switching a single line at the occupancy-weighted mean.
inline std::vector<TrapScan> ple_with_trap(const optics::DefectOpticalModel& om, const TrapMarkovModel& tm,
                                           Condition condition, const TrapScanSettings& s, std::uint64_t seed,
                                           std::optional<int> initial_state = std::nullopt) {
    optics::validate(om);
    optics::validate(s.scan.grid);
    if (s.n_scans < 1 || !(s.dwell_per_bin_ms > 0.0)) throw DomainError("ple_with_trap: bad scan timing");
    const auto grid = s.scan.grid.values();
    const double scan_ms = s.dwell_per_bin_ms * static_cast<double>(grid.size());
    const double total = scan_ms * s.n_scans;
    std::mt19937_64 rng(seed);
    const auto tr = simulate_trajectory(tm, {{condition, total}}, total, rng(), initial_state);
    const double g = optics::excess_broadening(s.n_local_cm3, om);

    std::vector<TrapScan> out;
    for (int k = 0; k < s.n_scans; ++k) {
        const double t0 = k * scan_ms;
        std::vector<double> centers(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double a = t0 + static_cast<double>(i) * s.dwell_per_bin_ms;
            const auto f = fractions_between(tr, tm.n_states, a, a + s.dwell_per_bin_ms);
            double c = s.static_detuning_MHz;
            for (int j = 0; j < tm.n_states; ++j) c += f[static_cast<std::size_t>(j)] * tm.line_shift_MHz[static_cast<std::size_t>(j)];
            centers[i] = c;
        }
        TrapScan ts;
        ts.spectrum.detuning_MHz = grid;
        ts.spectrum.counts =
            optics::draw_counts(optics::expected_counts(om, s.scan, g, centers), s.scan.poisson_noise, rng);
        ts.spectrum.fit = optics::fit_ple(grid, ts.spectrum.counts);
        ts.state_fraction = fractions_between(tr, tm.n_states, t0, t0 + scan_ms);
        out.push_back(std::move(ts));
    }
    return out;
}

} // namespace v2sim::trap
