#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <optional>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "v2sim/core/constants.hpp"
#include "v2sim/core/errors.hpp"
#include "v2sim/core/material.hpp"
#include "v2sim/core/units.hpp"
#include "v2sim/junction/mesh.hpp"

namespace v2sim::junction {

struct ConvergenceReport {
    int iterations = 0;
    double residual = 0.0;          // max-norm, relative to the local space-charge scale
    bool converged = false;
    double gauss_law_error = 0.0;   // |boundary flux - enclosed charge| / charge scale
    bool coarse_edge_warning = false;
};

/// Nodal solution of the electrostatic problem. `phi_V` is the electrostatic potential
/// referenced so that E_c - E_F = -phi (electron quasi-Fermi level at 0 eV).
struct FieldSolution {
    Mesh2D mesh;
    std::vector<double> phi_V;
    std::vector<double> n_cm3;
    std::vector<double> donors_cm3;
    std::vector<double> ionized_donors_cm3;
    std::vector<double> Ex_MVm;
    std::vector<double> Ez_MVm;
    Volts bias{0.0};
    Kelvin temperature{300.0};
    ConvergenceReport report{};
};

struct SolverOptions {
    DonorModel ionization = DonorModel::Complete;
    double tolerance = 1e-8;
    int max_iterations = 300;
    double exponent_clamp = 200.0;
    /// Density below which a node counts as depleted (edge-resolution check only).
    double edge_threshold_cm3 = 1e12;
    /// Optional warm start on the same mesh (potential in volts is reused).
    const FieldSolution* initial_guess = nullptr;
};

namespace detail {

/// exp(x) clamped in the log domain: constant below -c, linear continuation above +c.
/// Returns value, derivative and an antiderivative that stay consistent, so the
/// Newton energy remains convex.
struct ClampedExp {
    double value, derivative, integral;
};

inline ClampedExp clamped_exp(double x, double c) {
    if (x < -c) {
        const double e = std::exp(-c);
        return {e, 0.0, e * (x + c) + e};
    }
    if (x > c) {
        const double e = std::exp(c);
        const double d = x - c;
        return {e * (1.0 + d), e, e * (1.0 + d + 0.5 * d * d)};
    }
    const double e = std::exp(x);
    return {e, e, e};
}

inline double logistic(double y) {
    return y >= 0.0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y));
}

/// Scaled local charge model at one node: donors and electrons in units of N_scale,
/// potential in units of kT/q.
struct NodeCharge {
    double donors;      // N_D / N_scale
    double ln_nc;       // ln(Nc / N_scale)
    double donor_shift; // E_D/kT + ln g  (incomplete ionization only)
    bool complete;
    double clamp;

    struct Eval {
        double n, dn, n_int;     // electrons
        double p, dp, p_int;     // ionized donors
    };

    Eval operator()(double u) const {
        Eval e{};
        const auto ce = clamped_exp(u + ln_nc, clamp);
        e.n = ce.value;
        e.dn = ce.derivative;
        e.n_int = ce.integral;
        if (complete || donors == 0.0) {
            e.p = donors;
            e.dp = 0.0;
            e.p_int = donors * u;
        } else {
            const double y = u + donor_shift;
            const double occ = logistic(-y);  // 1 / (1 + g exp((E_F - E_D)/kT))
            e.p = donors * occ;
            e.dp = -donors * occ * (1.0 - occ);
            e.p_int = donors * (u - v2sim::detail::softplus(y));
        }
        return e;
    }
};

struct Edge {
    std::size_t a, b;
    double w;
};

} // namespace detail

/// Reduced potential of a neutral bulk node for the given donor model.
inline double neutral_reduced_potential(double doping_m3, const MaterialStack& s, Kelvin T, DonorModel model,
                                        double clamp) {
    if (!(doping_m3 > 0.0)) return -clamp;
    MaterialStack tmp = s;
    tmp.doping_epi_cm3 = doping_m3 * 1e-6;
    const auto eq = equilibrium_bulk_density(tmp, Layer::Epi, T, model);
    return eq.fermi_level.value / thermal_voltage(T).value;
}

namespace detail {

inline FieldSolution solve_poisson_newton(const MaterialStack& stack, const Mesh2D& mesh, Volts bias, Kelvin T,
                                          const SolverOptions& opt) {
    if (!(std::abs(bias.value) <= 500.0)) throw DomainError("solve_poisson: |bias| must be <= 500 V");
    const double Vt = thermal_voltage(T).value;
    const std::size_t N = mesh.size();
    const std::size_t nx = mesh.nx(), nz = mesh.nz();

    constexpr double N_scale = 1e20; // m^-3
    const double eps_r = stack.static_relative_permittivity;
    // lengths in um: lambda = q N_scale (1 um)^2 / (eps0 Vt)
    const double lambda = si::q * N_scale * 1e-12 / (si::eps0 * Vt);
    const double Nc = conduction_dos_m3(stack, T);
    const bool complete = opt.ionization == DonorModel::Complete;

    // Per-node volume and volume-averaged doping.
    std::vector<double> vol(N), donors(N);
    const double d_epi = stack.epi_thickness_um;
    for (std::size_t j = 0; j < nz; ++j) {
        const double top = j == 0 ? mesh.z_um[0] : 0.5 * (mesh.z_um[j] + mesh.z_um[j - 1]);
        const double bot = j + 1 == nz ? mesh.z_um[j] : 0.5 * (mesh.z_um[j] + mesh.z_um[j + 1]);
        const double in_epi = std::clamp(d_epi - top, 0.0, bot - top);
        const double frac_epi = bot > top ? in_epi / (bot - top) : (mesh.z_um[j] <= d_epi ? 1.0 : 0.0);
        const double nd = (frac_epi * stack.doping_epi_cm3 + (1.0 - frac_epi) * stack.doping_substrate_cm3) * 1e6;
        for (std::size_t i = 0; i < nx; ++i) {
            const std::size_t k = mesh.index(i, j);
            vol[k] = mesh.dual_dx(i) * (bot - top);
            donors[k] = nd;
        }
    }

    std::vector<detail::NodeCharge> charge(N);
    const double donor_shift = stack.donor_ionization_energy_eV / Vt + std::log(stack.donor_degeneracy);
    for (std::size_t k = 0; k < N; ++k)
        charge[k] = {donors[k] / N_scale, std::log(Nc / N_scale), donor_shift, complete, opt.exponent_clamp};

    // Edges with weight eps_r * face / length.
    std::vector<detail::Edge> edges;
    edges.reserve(2 * N);
    for (std::size_t j = 0; j < nz; ++j)
        for (std::size_t i = 0; i + 1 < nx; ++i)
            edges.push_back({mesh.index(i, j), mesh.index(i + 1, j),
                             eps_r * mesh.dual_dz(j) / (mesh.x_um[i + 1] - mesh.x_um[i])});
    for (std::size_t j = 0; j + 1 < nz; ++j)
        for (std::size_t i = 0; i < nx; ++i)
            edges.push_back({mesh.index(i, j), mesh.index(i, j + 1),
                             eps_r * mesh.dual_dx(i) / (mesh.z_um[j + 1] - mesh.z_um[j])});

    // Boundary values and initial guess (reduced units).
    std::vector<double> u(N);
    std::vector<long> free_index(N, -1);
    const double barrier = stack.schottky_barrier().value;
    std::size_t n_free = 0;
    double u_cache_nd = -1.0, u_cache = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
        if (donors[k] != u_cache_nd) {
            u_cache_nd = donors[k];
            u_cache = neutral_reduced_potential(donors[k], stack, T, opt.ionization, opt.exponent_clamp);
        }
        switch (mesh.kind[k]) {
        case NodeKind::Schottky: u[k] = (bias.value - barrier) / Vt; break;
        case NodeKind::Ohmic: u[k] = u_cache; break;
        case NodeKind::Interior:
            u[k] = u_cache;
            free_index[k] = static_cast<long>(n_free++);
            break;
        }
    }
    if (opt.initial_guess && opt.initial_guess->phi_V.size() == N) {
        for (std::size_t k = 0; k < N; ++k)
            if (free_index[k] >= 0) u[k] = opt.initial_guess->phi_V[k] / Vt;
    }

    // Space-charge scale used to normalize the residual.
    double charge_scale = 0.0;
    for (std::size_t k = 0; k < N; ++k)
        if (free_index[k] >= 0) charge_scale = std::max(charge_scale, lambda * vol[k] * charge[k].donors);
    if (charge_scale == 0.0) charge_scale = lambda * 1e-6;

    auto energy = [&](const std::vector<double>& uu) {
        double e = 0.0;
        for (const auto& ed : edges) {
            if (free_index[ed.a] < 0 && free_index[ed.b] < 0) continue;
            const double d = uu[ed.a] - uu[ed.b];
            e += 0.5 * ed.w * d * d;
        }
        for (std::size_t k = 0; k < N; ++k) {
            if (free_index[k] < 0) continue;
            const auto c = charge[k](uu[k]);
            e += lambda * vol[k] * (c.n_int - c.p_int);
        }
        return e;
    };

    auto residual = [&](const std::vector<double>& uu, Eigen::VectorXd& F, double& rel) {
        F.setZero(static_cast<Eigen::Index>(n_free));
        double flux_scale = 0.0;
        for (const auto& ed : edges) {
            const double flux = ed.w * (uu[ed.a] - uu[ed.b]);
            if (free_index[ed.a] >= 0) F[free_index[ed.a]] += flux;
            if (free_index[ed.b] >= 0) F[free_index[ed.b]] -= flux;
            flux_scale = std::max(flux_scale, std::abs(flux));
        }
        double mx = 0.0;
        for (std::size_t k = 0; k < N; ++k) {
            if (free_index[k] < 0) continue;
            const auto c = charge[k](uu[k]);
            F[free_index[k]] += lambda * vol[k] * (c.n - c.p);
            mx = std::max(mx, std::abs(F[free_index[k]]));
        }
        // Charge-free limit: measure against the field, not the vanishing space charge.
        rel = mx / std::max(charge_scale, 1e-4 * flux_scale);
    };

    // Sparsity pattern is fixed: analyze once.
    using SpMat = Eigen::SparseMatrix<double>;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * n_free);
    auto assemble = [&](const std::vector<double>& uu, SpMat& H) {
        trip.clear();
        for (const auto& ed : edges) {
            const long ia = free_index[ed.a], ib = free_index[ed.b];
            if (ia >= 0) trip.emplace_back(ia, ia, ed.w);
            if (ib >= 0) trip.emplace_back(ib, ib, ed.w);
            if (ia >= 0 && ib >= 0) {
                trip.emplace_back(ia, ib, -ed.w);
                trip.emplace_back(ib, ia, -ed.w);
            }
        }
        for (std::size_t k = 0; k < N; ++k) {
            if (free_index[k] < 0) continue;
            const auto c = charge[k](uu[k]);
            trip.emplace_back(free_index[k], free_index[k], lambda * vol[k] * (c.dn - c.dp));
        }
        H.setFromTriplets(trip.begin(), trip.end());
    };

    SpMat H(static_cast<Eigen::Index>(n_free), static_cast<Eigen::Index>(n_free));
    Eigen::SimplicialLDLT<SpMat> ldlt;
    Eigen::VectorXd F, d;
    std::vector<double> trial(N);

    ConvergenceReport report;
    double rel = 0.0;
    residual(u, F, rel);
    bool pattern_ready = false;
    int it = 0;
    for (; it < opt.max_iterations && !(rel < opt.tolerance); ++it) {
        assemble(u, H);
        if (!pattern_ready) {
            ldlt.analyzePattern(H);
            pattern_ready = true;
        }
        ldlt.factorize(H);
        if (ldlt.info() != Eigen::Success)
            throw NumericalError("solve_poisson: Newton matrix factorization failed", rel);
        d = ldlt.solve(-F);

        const double e0 = energy(u);
        const double slope = F.dot(d); // < 0 for a descent direction
        double alpha = 1.0;
        const bool tiny_decrement = -slope <= 1e-13 * (std::abs(e0) + 1.0);
        for (int ls = 0;; ++ls) {
            trial = u;
            for (std::size_t k = 0; k < N; ++k)
                if (free_index[k] >= 0) trial[k] += alpha * d[free_index[k]];
            if (tiny_decrement) break;
            const double e1 = energy(trial);
            if (e1 <= e0 + 1e-4 * alpha * slope) break;
            alpha *= 0.5;
            if (ls > 60) throw NumericalError("solve_poisson: line search stalled", rel);
        }
        u.swap(trial);
        residual(u, F, rel);
    }
    report.iterations = it;
    report.residual = rel;
    report.converged = rel < opt.tolerance;
    if (!report.converged)
        throw NumericalError("solve_poisson: Newton did not converge after " + std::to_string(it) +
                                 " iterations, relative residual " + std::to_string(rel),
                             rel);

    // Discrete Gauss law: flux through the Dirichlet boundary vs enclosed space charge.
    double flux = 0.0, flux_abs = 0.0, enclosed = 0.0;
    for (const auto& ed : edges) {
        const bool fa = free_index[ed.a] >= 0, fb = free_index[ed.b] >= 0;
        if (fa == fb) continue;
        const double f = fa ? ed.w * (u[ed.a] - u[ed.b]) : ed.w * (u[ed.b] - u[ed.a]);
        flux += f;
        flux_abs += std::abs(f);
    }
    for (std::size_t k = 0; k < N; ++k) {
        if (free_index[k] < 0) continue;
        const auto c = charge[k](u[k]);
        enclosed += lambda * vol[k] * (c.p - c.n);
    }
    report.gauss_law_error = std::abs(flux - enclosed) / std::max({std::abs(enclosed), flux_abs, 1e-300});

    FieldSolution sol;
    sol.mesh = mesh;
    sol.bias = bias;
    sol.temperature = T;
    sol.phi_V.resize(N);
    sol.n_cm3.resize(N);
    sol.donors_cm3.resize(N);
    sol.ionized_donors_cm3.resize(N);
    for (std::size_t k = 0; k < N; ++k) {
        const auto c = charge[k](u[k]);
        sol.phi_V[k] = u[k] * Vt;
        sol.n_cm3[k] = c.n * N_scale * 1e-6;
        sol.donors_cm3[k] = donors[k] * 1e-6;
        sol.ionized_donors_cm3[k] = std::clamp(c.p * N_scale * 1e-6, 0.0, sol.donors_cm3[k]);
    }

    // E = -grad(phi); V/um == MV/m. Three-point derivative on the non-uniform grid.
    auto deriv = [](const std::vector<double>& c, auto&& val, std::size_t i) {
        const std::size_t n = c.size();
        if (n == 1) return 0.0;
        if (i == 0) return (val(1) - val(0)) / (c[1] - c[0]);
        if (i + 1 == n) return (val(n - 1) - val(n - 2)) / (c[n - 1] - c[n - 2]);
        const double hm = c[i] - c[i - 1], hp = c[i + 1] - c[i];
        return (hm * hm * val(i + 1) - hp * hp * val(i - 1) + (hp * hp - hm * hm) * val(i)) / (hm * hp * (hm + hp));
    };
    sol.Ex_MVm.resize(N);
    sol.Ez_MVm.resize(N);
    for (std::size_t j = 0; j < nz; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
            sol.Ex_MVm[mesh.index(i, j)] =
                -deriv(mesh.x_um, [&](std::size_t ii) { return sol.phi_V[mesh.index(ii, j)]; }, i);
            sol.Ez_MVm[mesh.index(i, j)] =
                -deriv(mesh.z_um, [&](std::size_t jj) { return sol.phi_V[mesh.index(i, jj)]; }, j);
        }
    }

    // Depletion-edge resolution: along each column, nodes in the transition band
    // threshold <= n <= N_D/2 of the epi layer; fewer than 3 where an edge exists -> warn.
    for (std::size_t i = 0; i < nx && !report.coarse_edge_warning; ++i) {
        bool below = false, above = false;
        int band = 0;
        for (std::size_t j = 0; j < nz && mesh.z_um[j] <= d_epi; ++j) {
            const double n = sol.n_cm3[mesh.index(i, j)];
            const double nd = sol.donors_cm3[mesh.index(i, j)];
            if (n < opt.edge_threshold_cm3) below = true;
            else if (n > 0.5 * nd) above = true;
            else ++band;
        }
        if (below && above && band < 3) report.coarse_edge_warning = true;
    }
    sol.report = report;
    return sol;
}

} // namespace detail

/// Nonlinear Poisson  div(eps grad phi) = -q (N_D+(phi) - n(phi))  on the stripe cross-section,
/// electrons in Boltzmann statistics against a flat quasi-Fermi level pinned at the ohmic contact.
/// The discrete problem is the stationary point of a convex energy, so Newton steps are damped
/// by an Armijo backtracking line search on that energy. A cold start that fails at large bias
/// is retried by bias continuation in steps of at most 10 V.
inline FieldSolution solve_poisson(const MaterialStack& stack, const Mesh2D& mesh, Volts bias, Kelvin T,
                                   const SolverOptions& opt = {}) {
    validate(mesh);
    try {
        return detail::solve_poisson_newton(stack, mesh, bias, T, opt);
    } catch (const NumericalError&) {
        if (opt.initial_guess || std::abs(bias.value) <= 10.0) throw;
    }
    const int steps = static_cast<int>(std::ceil(std::abs(bias.value) / 10.0));
    SolverOptions o = opt;
    std::optional<FieldSolution> prev;
    for (int k = 0; k <= steps; ++k) {
        o.initial_guess = prev ? &*prev : nullptr;
        auto next = detail::solve_poisson_newton(stack, mesh, Volts{bias.value * k / steps}, T, o);
        prev = std::move(next);
    }
    return std::move(*prev);
}

/// Bilinear interpolation of a nodal quantity at (x, z); `value(k)` reads node k.
template <class NodeValue>
double interpolate_with(const Mesh2D& m, double x, double z, NodeValue&& value) {
    if (!m.contains(x, z)) throw DomainError("interpolate: point outside the mesh");
    const std::size_t j = locate_cell(m.z_um, z);
    const double tz = (z - m.z_um[j]) / (m.z_um[j + 1] - m.z_um[j]);
    if (m.nx() == 1) return (1 - tz) * value(m.index(0, j)) + tz * value(m.index(0, j + 1));
    const std::size_t i = locate_cell(m.x_um, x);
    const double tx = (x - m.x_um[i]) / (m.x_um[i + 1] - m.x_um[i]);
    return (1 - tx) * (1 - tz) * value(m.index(i, j)) + tx * (1 - tz) * value(m.index(i + 1, j)) +
           (1 - tx) * tz * value(m.index(i, j + 1)) + tx * tz * value(m.index(i + 1, j + 1));
}

inline double interpolate(const Mesh2D& m, const std::vector<double>& values, double x, double z) {
    return interpolate_with(m, x, z, [&](std::size_t k) { return values[k]; });
}

/// Electron density at (x, z), interpolated in log space so the depletion tail is sampled smoothly.
inline double density_at(const FieldSolution& s, double x, double z) {
    return std::exp(interpolate_with(s.mesh, x, z,
                                     [&](std::size_t k) { return std::log(std::max(s.n_cm3[k], 1e-300)); }));
}

} // namespace v2sim::junction
