#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "v2sim/core/errors.hpp"
#include "v2sim/core/material.hpp"

namespace v2sim::junction {

enum class NodeKind : std::uint8_t {
    Interior,  // includes the zero-flux (Neumann) free surface and far side walls
    Schottky,  // Dirichlet: metal contact on the top surface
    Ohmic,     // Dirichlet: back contact at the bottom of the substrate
};

/// Tensor-product mesh over the half cross-section x in [0, x_max] (x = 0 is the stripe
/// centre), z in [0, z_max] (depth from the top surface). Node (i, j) lives at index j*nx + i.
struct Mesh2D {
    std::vector<double> x_um;
    std::vector<double> z_um;
    std::vector<NodeKind> kind;
    double contact_edge_um = 0.0;   // lateral position of the stripe edge
    double epi_thickness_um = 0.0;

    std::size_t nx() const { return x_um.size(); }
    std::size_t nz() const { return z_um.size(); }
    std::size_t size() const { return x_um.size() * z_um.size(); }
    std::size_t index(std::size_t i, std::size_t j) const { return j * nx() + i; }

    /// Dual-cell extent along x (unit width for a single-column mesh).
    double dual_dx(std::size_t i) const {
        if (nx() == 1) return 1.0;
        const double left = i == 0 ? x_um[0] : 0.5 * (x_um[i] + x_um[i - 1]);
        const double right = i + 1 == nx() ? x_um[i] : 0.5 * (x_um[i] + x_um[i + 1]);
        return right - left;
    }
    double dual_dz(std::size_t j) const {
        const double top = j == 0 ? z_um[0] : 0.5 * (z_um[j] + z_um[j - 1]);
        const double bottom = j + 1 == nz() ? z_um[j] : 0.5 * (z_um[j] + z_um[j + 1]);
        return bottom - top;
    }

    bool contains(double x, double z) const {
        return x >= x_um.front() && x <= x_um.back() && z >= z_um.front() && z <= z_um.back();
    }
};

/// Coordinates strictly increasing; contact nodes only on the top row within the stripe;
/// at least one ohmic node on the bottom row.
inline void validate(const Mesh2D& m) {
    auto increasing = [](const std::vector<double>& v) {
        return std::adjacent_find(v.begin(), v.end(), [](double a, double b) { return !(b > a); }) == v.end();
    };
    if (m.nx() < 1 || m.nz() < 3) throw ValidationError("mesh", "need at least 1 x 3 nodes");
    if (!increasing(m.x_um)) throw ValidationError("mesh.x_um", "coordinates must be strictly increasing");
    if (!increasing(m.z_um)) throw ValidationError("mesh.z_um", "coordinates must be strictly increasing");
    if (m.kind.size() != m.size()) throw ValidationError("mesh.kind", "size mismatch");
    bool any_ohmic = false;
    for (std::size_t j = 0; j < m.nz(); ++j) {
        for (std::size_t i = 0; i < m.nx(); ++i) {
            const NodeKind k = m.kind[m.index(i, j)];
            if (k == NodeKind::Schottky && (j != 0 || m.x_um[i] > m.contact_edge_um + 1e-9))
                throw ValidationError("mesh.kind", "Schottky node outside the top stripe");
            if (k == NodeKind::Ohmic) {
                if (j + 1 != m.nz()) throw ValidationError("mesh.kind", "ohmic node off the bottom boundary");
                any_ohmic = true;
            }
        }
    }
    if (!any_ohmic) throw ValidationError("mesh.kind", "no ohmic node on the bottom boundary");
}

struct MeshSpec {
    int nx = 200;
    int nz = 100;
    double lateral_extent_um = 60.0;   // free surface beyond the contact edge
    double edge_grading = 4.0;         // last/first spacing ratio away from the contact edge

    bool operator==(const MeshSpec&) const = default;
};

namespace detail {
/// `n` intervals from a to b, spacings growing geometrically by total factor `ratio`.
inline std::vector<double> graded(double a, double b, int n, double ratio) {
    std::vector<double> out(static_cast<std::size_t>(n) + 1);
    const double q = n > 1 ? std::pow(ratio, 1.0 / (n - 1)) : 1.0;
    double sum = 0.0, h = 1.0;
    for (int k = 0; k < n; ++k, h *= q) sum += h;
    out[0] = a;
    h = (b - a) / sum;
    for (int k = 1; k <= n; ++k, h *= q) out[k] = out[k - 1] + h;
    out.back() = b;
    return out;
}

inline void append_without_first(std::vector<double>& dst, const std::vector<double>& seg) {
    dst.insert(dst.end(), seg.begin() + 1, seg.end());
}
} // namespace detail

inline void classify_nodes(Mesh2D& m) {
    m.kind.assign(m.size(), NodeKind::Interior);
    for (std::size_t i = 0; i < m.nx(); ++i) {
        if (m.x_um[i] <= m.contact_edge_um + 1e-9) m.kind[m.index(i, 0)] = NodeKind::Schottky;
        m.kind[m.index(i, m.nz() - 1)] = NodeKind::Ohmic;
    }
}

/// Stripe-contact cross-section: x refined towards the contact edge from both sides,
/// z uniform through the epi layer plus a coarser substrate slab.
inline Mesh2D make_device_mesh(const MaterialStack& stack, const MeshSpec& spec) {
    if (spec.nx < 8 || spec.nz < 8) throw ValidationError("mesh", "nx and nz must be >= 8");
    if (!(spec.lateral_extent_um > 0.0)) throw ValidationError("mesh.lateral_extent_um", "must be positive");
    Mesh2D m;
    m.contact_edge_um = stack.contact.half_width_um();
    m.epi_thickness_um = stack.epi_thickness_um;

    const int nx_contact = std::max(4, spec.nx / 6);
    const int nx_out = spec.nx - 1 - nx_contact;
    const double xe = m.contact_edge_um;
    auto inner = detail::graded(0.0, xe, nx_contact, 1.0 / spec.edge_grading);
    auto outer = detail::graded(xe, xe + spec.lateral_extent_um, nx_out, spec.edge_grading);
    m.x_um = inner;
    detail::append_without_first(m.x_um, outer);

    const int nz_sub = std::max(3, spec.nz / 12);
    const int nz_epi = spec.nz - 1 - nz_sub;
    auto epi = detail::graded(0.0, stack.epi_thickness_um, nz_epi, 1.0);
    auto sub = detail::graded(stack.epi_thickness_um, stack.epi_thickness_um + stack.substrate_thickness_um,
                              nz_sub, 3.0);
    m.z_um = epi;
    detail::append_without_first(m.z_um, sub);

    classify_nodes(m);
    return m;
}

/// Single lateral column: the whole top node is contact, giving a 1-D Schottky diode.
inline Mesh2D make_column_mesh(const MaterialStack& stack, int nz) {
    if (nz < 8) throw ValidationError("mesh.nz", "must be >= 8");
    Mesh2D m;
    m.contact_edge_um = 0.0;
    m.epi_thickness_um = stack.epi_thickness_um;
    m.x_um = {0.0};
    const int nz_sub = std::max(3, nz / 20);
    m.z_um = detail::graded(0.0, stack.epi_thickness_um, nz - 1 - nz_sub, 1.0);
    detail::append_without_first(
        m.z_um, detail::graded(stack.epi_thickness_um, stack.epi_thickness_um + stack.substrate_thickness_um,
                               nz_sub, 1.0));
    classify_nodes(m);
    return m;
}

/// Index of the cell [k, k+1] containing v (clamped to the last cell).
inline std::size_t locate_cell(const std::vector<double>& coords, double v) {
    if (coords.size() < 2) return 0;
    auto it = std::upper_bound(coords.begin(), coords.end(), v);
    std::size_t k = it == coords.begin() ? 0 : static_cast<std::size_t>(it - coords.begin()) - 1;
    return std::min(k, coords.size() - 2);
}

} // namespace v2sim::junction
