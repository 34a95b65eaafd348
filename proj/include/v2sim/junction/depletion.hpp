#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "v2sim/core/errors.hpp"
#include "v2sim/junction/poisson.hpp"

namespace v2sim::junction {

/// Defect position: lateral distance outward from the contact edge and depth below the surface.
struct DefectSite {
    double lateral_distance_um = 11.2;
    double depth_um = 2.0;

    bool operator==(const DefectSite&) const = default;
};

inline void validate(const DefectSite& s, const Mesh2D& m) {
    if (!(s.depth_um > 0.0 && s.depth_um < m.epi_thickness_um))
        throw DomainError("defect site depth must lie inside the epi layer");
    if (!m.contains(m.contact_edge_um + s.lateral_distance_um, s.depth_um))
        throw DomainError("defect site outside the mesh");
}

struct ContourPoint {
    double x_um, z_um;
};

using Polyline = std::vector<ContourPoint>;

inline constexpr double kDepletionThresholdCm3 = 1e12;

namespace detail {

/// Crossing on a grid edge, keyed by (lower node index, direction) so neighbouring cells share it.
using EdgeKey = std::pair<std::size_t, int>;

} // namespace detail

/// Marching squares on log(n) - log(threshold). Segments are linked into polylines through
/// shared edge crossings; saddle cells are disambiguated by the cell-centre average.
inline std::vector<Polyline> depletion_boundary(const FieldSolution& s,
                                                double threshold_cm3 = kDepletionThresholdCm3) {
    const Mesh2D& m = s.mesh;
    std::vector<Polyline> out;
    if (m.nx() < 2 || m.nz() < 2) return out;
    const double lt = std::log(threshold_cm3);
    auto level = [&](std::size_t i, std::size_t j) {
        return std::log(std::max(s.n_cm3[m.index(i, j)], 1e-300)) - lt;
    };

    auto crossing = [&](std::size_t i0, std::size_t j0, std::size_t i1, std::size_t j1) {
        const double a = level(i0, j0), b = level(i1, j1);
        const double t = a / (a - b);
        return ContourPoint{m.x_um[i0] + t * (m.x_um[i1] - m.x_um[i0]), m.z_um[j0] + t * (m.z_um[j1] - m.z_um[j0])};
    };

    // Segments as pairs of edge keys; points stored per key.
    std::map<detail::EdgeKey, ContourPoint> points;
    std::vector<std::pair<detail::EdgeKey, detail::EdgeKey>> segments;

    for (std::size_t j = 0; j + 1 < m.nz(); ++j) {
        for (std::size_t i = 0; i + 1 < m.nx(); ++i) {
            // Corners counter-clockwise: 0 (i,j) 1 (i+1,j) 2 (i+1,j+1) 3 (i,j+1)
            const double v[4] = {level(i, j), level(i + 1, j), level(i + 1, j + 1), level(i, j + 1)};
            int code = 0;
            for (int c = 0; c < 4; ++c)
                if (v[c] < 0.0) code |= 1 << c;
            if (code == 0 || code == 15) continue;

            // Edges: 0 bottom (0-1, x-dir at row j), 1 right (1-2), 2 top (3-2, row j+1), 3 left (0-3)
            auto key = [&](int e) -> detail::EdgeKey {
                switch (e) {
                case 0: return {m.index(i, j), 0};
                case 1: return {m.index(i + 1, j), 1};
                case 2: return {m.index(i, j + 1), 0};
                default: return {m.index(i, j), 1};
                }
            };
            auto ensure = [&](int e) {
                auto k = key(e);
                if (!points.count(k)) {
                    switch (e) {
                    case 0: points[k] = crossing(i, j, i + 1, j); break;
                    case 1: points[k] = crossing(i + 1, j, i + 1, j + 1); break;
                    case 2: points[k] = crossing(i, j + 1, i + 1, j + 1); break;
                    default: points[k] = crossing(i, j, i, j + 1); break;
                    }
                }
                return k;
            };
            auto seg = [&](int e0, int e1) { segments.emplace_back(ensure(e0), ensure(e1)); };

            // An edge is crossed when its end corners differ in sign.
            auto cut = [&](int a, int b) { return ((code >> a) & 1) != ((code >> b) & 1); };
            std::vector<int> crossed;
            if (cut(0, 1)) crossed.push_back(0);
            if (cut(1, 2)) crossed.push_back(1);
            if (cut(3, 2)) crossed.push_back(2);
            if (cut(0, 3)) crossed.push_back(3);

            if (crossed.size() == 2) {
                seg(crossed[0], crossed[1]);
            } else if (crossed.size() == 4) {
                const double centre = 0.25 * (v[0] + v[1] + v[2] + v[3]);
                const bool centre_below = centre < 0.0;
                const bool c0_below = (code & 1) != 0;
                // Join edges around the corners that differ from the centre.
                if (centre_below == c0_below) {
                    seg(0, 1);
                    seg(2, 3);
                } else {
                    seg(0, 3);
                    seg(1, 2);
                }
            }
        }
    }

    // Link segments into polylines.
    std::multimap<detail::EdgeKey, std::size_t> incident;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        incident.emplace(segments[k].first, k);
        incident.emplace(segments[k].second, k);
    }
    std::vector<bool> used(segments.size(), false);
    auto next_segment = [&](const detail::EdgeKey& at) -> std::optional<std::size_t> {
        auto [lo, hi] = incident.equal_range(at);
        for (auto it = lo; it != hi; ++it)
            if (!used[it->second]) return it->second;
        return std::nullopt;
    };
    auto degree = [&](const detail::EdgeKey& k) { return incident.count(k); };

    // Start open chains at degree-1 keys (boundary ends), then sweep closed loops.
    std::vector<std::size_t> order(segments.size());
    for (std::size_t k = 0; k < segments.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const bool ea = degree(segments[a].first) == 1 || degree(segments[a].second) == 1;
        const bool eb = degree(segments[b].first) == 1 || degree(segments[b].second) == 1;
        return ea && !eb;
    });
    for (std::size_t start : order) {
        if (used[start]) continue;
        used[start] = true;
        auto [a, b] = segments[start];
        if (degree(b) == 1 && degree(a) != 1) std::swap(a, b);
        Polyline line{points[a], points[b]};
        detail::EdgeKey tip = b;
        while (auto nxt = next_segment(tip)) {
            used[*nxt] = true;
            const auto& sg = segments[*nxt];
            tip = sg.first == tip ? sg.second : sg.first;
            line.push_back(points[tip]);
        }
        out.push_back(std::move(line));
    }
    return out;
}

/// Area (um^2 of the cross-section) of the epi-layer region where n < threshold,
/// summed over dual cells.
inline double depleted_area(const FieldSolution& s, double threshold_cm3 = kDepletionThresholdCm3) {
    const Mesh2D& m = s.mesh;
    double area = 0.0;
    for (std::size_t j = 0; j < m.nz(); ++j) {
        if (m.z_um[j] > m.epi_thickness_um) break;
        for (std::size_t i = 0; i < m.nx(); ++i)
            if (s.n_cm3[m.index(i, j)] < threshold_cm3) area += m.dual_dx(i) * m.dual_dz(j);
    }
    return area;
}

struct SiteField {
    double parallel_MVm;       // along the c-axis (growth / depth direction)
    double perpendicular_MVm;  // in-plane
};

inline SiteField field_at(const FieldSolution& s, const DefectSite& site) {
    const double x = s.mesh.contact_edge_um + site.lateral_distance_um;
    if (!s.mesh.contains(x, site.depth_um)) throw DomainError("field_at: site outside the mesh");
    return {interpolate(s.mesh, s.Ez_MVm, x, site.depth_um), interpolate(s.mesh, s.Ex_MVm, x, site.depth_um)};
}

inline double density_at(const FieldSolution& s, const DefectSite& site) {
    return density_at(s, s.mesh.contact_edge_um + site.lateral_distance_um, site.depth_um);
}

enum class DepletionStatus { Depleted, AlreadyDepleted, NotDepletedInRange };

struct DepletionVoltageResult {
    DepletionStatus status = DepletionStatus::NotDepletedInRange;
    double voltage_V = 0.0;  // meaningful unless NotDepletedInRange
    int solves = 0;
};

struct DepletionSearch {
    double most_negative_V = -150.0;
    double tolerance_V = 0.05;
    double threshold_cm3 = kDepletionThresholdCm3;
};

/// Least-magnitude reverse bias at which the site's electron density drops below threshold,
/// by bisection over bias (each probe a full solve, warm-started from the closest probe).
/// Depletion is assumed monotone in |bias|; a probe contradicting that throws NumericalError.
inline DepletionVoltageResult depletion_voltage(const MaterialStack& stack, const Mesh2D& mesh,
                                                const DefectSite& site, Kelvin T, const DepletionSearch& search = {},
                                                SolverOptions opt = {}) {
    validate(site, mesh);
    if (!(search.most_negative_V < 0.0)) throw DomainError("depletion_voltage: search range must be negative");
    DepletionVoltageResult res;
    std::vector<std::pair<double, bool>> probes;  // (bias, depleted)
    std::optional<FieldSolution> warm;

    auto depleted = [&](double V) {
        if (warm) opt.initial_guess = &*warm;
        auto s = solve_poisson(stack, mesh, Volts{V}, T, opt);
        ++res.solves;
        const bool d = density_at(s, site) < search.threshold_cm3;
        for (const auto& [pv, pd] : probes) {
            if ((V < pv && pd && !d) || (V > pv && d && !pd))
                throw NumericalError("depletion_voltage: depletion not monotone in bias near " + std::to_string(V) + " V");
        }
        probes.emplace_back(V, d);
        warm = std::move(s);
        return d;
    };

    if (depleted(0.0)) {
        res.status = DepletionStatus::AlreadyDepleted;
        res.voltage_V = 0.0;
        return res;
    }
    double lo = search.most_negative_V, hi = 0.0; // depleted at lo, not at hi
    if (!depleted(lo)) {
        res.status = DepletionStatus::NotDepletedInRange;
        return res;
    }
    while (hi - lo > search.tolerance_V) {
        const double mid = 0.5 * (lo + hi);
        if (depleted(mid)) lo = mid;
        else hi = mid;
    }
    res.status = DepletionStatus::Depleted;
    res.voltage_V = 0.5 * (lo + hi);
    return res;
}

} // namespace v2sim::junction
