#pragma once

// Volume-normalized norms on meshes and the spectral negative Sobolev
// seminorm. The H^{-s} realization uses the Neumann eigenbasis of the
// cell-graph Laplacian: on boxes this is the cell-centred cosine basis in
// each axis; other cell sets fall back to a dense eigendecomposition.

#include "fem.hpp"
#include "geometry.hpp"
#include "linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <vector>

namespace hcg {

// ---------------------------------------------------------------------------
// Integration over meshes

/// Gauss-Legendre nodes and weights on [0, 1].
inline void gauss01(int npts, std::vector<double>& x, std::vector<double>& w)
{
    switch (npts) {
    case 1:
        x = {0.5};
        w = {1.0};
        break;
    case 2:
        x = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
        w = {0.5, 0.5};
        break;
    case 3:
        x = {0.5 - 0.5 * std::sqrt(0.6), 0.5, 0.5 + 0.5 * std::sqrt(0.6)};
        w = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
        break;
    case 4: {
        const double a = std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
        const double b = std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
        const double wa = (18.0 + std::sqrt(30.0)) / 36.0;
        const double wb = (18.0 - std::sqrt(30.0)) / 36.0;
        x = {0.5 - 0.5 * b, 0.5 - 0.5 * a, 0.5 + 0.5 * a, 0.5 + 0.5 * b};
        w = {0.5 * wb, 0.5 * wa, 0.5 * wa, 0.5 * wb};
        break;
    }
    default:
        throw ValidationError("gauss01: supported orders are 1..4");
    }
}

/// Sum over active elements whose cell lies in `filter` (all when null) of
/// the tensor Gauss rule applied to fn(e, xi, eta, x, y). Returns the integral
/// and writes the covered volume.
template <class Fn>
double integrate_mesh(const Mesh& mesh, const CellDomain* filter, int npts, Fn&& fn, double* volume = nullptr)
{
    std::vector<double> gx, gw;
    gauss01(npts, gx, gw);
    const int d = mesh.dim();
    const double h = mesh.h();
    const double ev = mesh.elem_volume();
    double sum = 0.0;
    double vol = 0.0;
    for (std::size_t e = 0; e < mesh.elem_count(); ++e) {
        if (!mesh.active(e)) {
            continue;
        }
        if (filter && !filter->contains(mesh.elem_cell(e))) {
            continue;
        }
        vol += ev;
        const auto o = mesh.elem_origin(e);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (d == 1) {
                sum += ev * gw[i] * fn(e, gx[i], 0.0, o[0] + gx[i] * h, 0.0);
                continue;
            }
            for (std::size_t j = 0; j < gx.size(); ++j) {
                sum += ev * gw[i] * gw[j] * fn(e, gx[i], gx[j], o[0] + gx[i] * h, o[1] + gx[j] * h);
            }
        }
    }
    if (volume) {
        *volume = vol;
    }
    return sum;
}

using ScalarFn = std::function<double(double, double)>;

/// ||u - g||, volume-normalized over the elements whose cell is in `filter`.
/// g may be empty. Three Gauss points per axis integrate u^2 exactly and
/// polynomials g up to degree 5 exactly.
inline double l2_mean_norm(const DiscreteFunction& u, const CellDomain* filter = nullptr, const ScalarFn& g = {})
{
    double vol = 0.0;
    const double s = integrate_mesh(
        *u.mesh, filter, 3,
        [&](std::size_t e, double xi, double eta, double x, double y) {
            const double v = u.value(e, xi, eta) - (g ? g(x, y) : 0.0);
            return v * v;
        },
        &vol);
    if (vol <= 0.0) {
        throw ValidationError("l2_mean_norm: empty region");
    }
    return std::sqrt(s / vol);
}

/// ||g|| of a plain function over the mesh region.
inline double l2_mean_norm_fn(const Mesh& mesh, const CellDomain* filter, const ScalarFn& g, int npts = 4)
{
    double vol = 0.0;
    const double s = integrate_mesh(
        mesh, filter, npts, [&](std::size_t, double, double, double x, double y) { return g(x, y) * g(x, y); }, &vol);
    if (vol <= 0.0) {
        throw ValidationError("l2_mean_norm: empty region");
    }
    return std::sqrt(s / vol);
}

/// Volume-normalized l2 norm of cell data (midpoint rule, unit weights).
inline double l2_mean_norm_cells(const std::vector<double>& v)
{
    if (v.empty()) {
        throw ValidationError("l2_mean_norm: empty data");
    }
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s / static_cast<double>(v.size()));
}

/// ||s^{1/2} grad f||, volume-normalized, exact for cellwise-constant s.
inline double energy_seminorm(const DiscreteFunction& f, const CoefficientField& field,
                              const CellDomain* filter = nullptr)
{
    double vol = 0.0;
    const double e2 = integrate_mesh(
        *f.mesh, filter, 2,
        [&](std::size_t e, double xi, double eta, double, double) {
            const SmallVec g = f.gradient(e, xi, eta);
            return g.dot(field.s_at(f.mesh->elem_cell(e)) * g);
        },
        &vol);
    if (vol <= 0.0) {
        throw ValidationError("energy_seminorm: empty region");
    }
    return std::sqrt(std::max(e2, 0.0) / vol);
}

// ---------------------------------------------------------------------------
// Spectral H^{-s}

/// Cell data on a grid of n[0] x n[1] cells of side h; mask selects members.
struct SpectralGrid {
    int d = 2;
    std::array<std::int64_t, 2> n{1, 1};
    double h = 1.0;
    std::vector<std::uint8_t> mask;  // empty = full box

    std::size_t box_size() const { return static_cast<std::size_t>(n[0] * n[1]); }
    bool is_box() const { return mask.empty() || std::all_of(mask.begin(), mask.end(), [](auto m) { return m != 0; }); }
    std::size_t member_count() const
    {
        return mask.empty() ? box_size() : static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    }
    double volume() const { return static_cast<double>(member_count()) * std::pow(h, d); }
};

inline SpectralGrid spectral_grid(const CellDomain& dom, double h = 1.0)
{
    SpectralGrid g;
    g.d = dom.d;
    g.n = dom.n;
    g.h = h;
    if (!dom.is_box()) {
        g.mask = dom.mask;
    }
    return g;
}

struct NegSobolevResult {
    double value = 0.0;
    bool truncated = false;
    std::size_t modes_used = 0;
    std::size_t modes_total = 0;
};

namespace detail {

/// Orthonormal (volume-normalized) cell-centred cosine modes, column k.
inline const Eigen::MatrixXd& cosine_basis(std::int64_t n)
{
    static std::mutex mu;
    static std::map<std::int64_t, std::unique_ptr<Eigen::MatrixXd>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) {
        auto w = std::make_unique<Eigen::MatrixXd>(n, n);
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t k = 0; k < n; ++k) {
                const double c = k == 0 ? 1.0 : std::sqrt(2.0);
                (*w)(i, k) = c * std::cos(std::numbers::pi * static_cast<double>(k) *
                                          (static_cast<double>(i) + 0.5) / static_cast<double>(n));
            }
        }
        slot = std::move(w);
    }
    return *slot;
}

struct DenseModes {
    Eigen::VectorXd mu;      // eigenvalues (h = 1)
    Eigen::MatrixXd vecs;    // Euclidean-orthonormal eigenvectors over member cells
};

inline const DenseModes& dense_modes(const SpectralGrid& g)
{
    static std::mutex mu;
    static std::map<std::vector<std::int64_t>, std::unique_ptr<DenseModes>> cache;
    std::vector<std::int64_t> key{g.d, g.n[0], g.n[1]};
    key.insert(key.end(), g.mask.begin(), g.mask.end());
    std::lock_guard lock(mu);
    auto& slot = cache[key];
    if (!slot) {
        const std::size_t m = g.member_count();
        std::vector<std::int64_t> idx(g.box_size(), -1);
        std::int64_t c = 0;
        for (std::size_t i = 0; i < g.box_size(); ++i) {
            if (g.mask[i]) {
                idx[i] = c++;
            }
        }
        Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        auto link = [&](std::size_t a, std::size_t b) {
            if (idx[a] < 0 || idx[b] < 0) {
                return;
            }
            lap(idx[a], idx[a]) += 1.0;
            lap(idx[b], idx[b]) += 1.0;
            lap(idx[a], idx[b]) -= 1.0;
            lap(idx[b], idx[a]) -= 1.0;
        };
        for (std::int64_t i0 = 0; i0 < g.n[0]; ++i0) {
            for (std::int64_t i1 = 0; i1 < g.n[1]; ++i1) {
                const auto a = static_cast<std::size_t>(i0 * g.n[1] + i1);
                if (i0 + 1 < g.n[0]) {
                    link(a, static_cast<std::size_t>((i0 + 1) * g.n[1] + i1));
                }
                if (i1 + 1 < g.n[1]) {
                    link(a, static_cast<std::size_t>(i0 * g.n[1] + i1 + 1));
                }
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
        auto dm = std::make_unique<DenseModes>();
        dm->mu = es.eigenvalues().cwiseMax(0.0);
        dm->vecs = es.eigenvectors();
        slot = std::move(dm);
    }
    return *slot;
}

}  // namespace detail

/// Maximum member-cell count for the dense fallback on non-box regions.
inline constexpr std::size_t kDenseSpectralLimit = 2500;

/// Coefficients <f, w_k> (volume-normalized) and eigenvalues mu_k for cell
/// data f given in row-major order over the member cells.
inline void spectral_coefficients(const SpectralGrid& g, const std::vector<double>& f, std::vector<double>& coef,
                                  std::vector<double>& mu)
{
    if (f.size() != g.member_count()) {
        throw ValidationError("spectral transform: data size does not match grid");
    }
    const double h2 = g.h * g.h;
    coef.clear();
    mu.clear();
    if (g.is_box()) {
        const std::int64_t n0 = g.n[0];
        const std::int64_t n1 = g.d == 2 ? g.n[1] : 1;
        Eigen::MatrixXd fm(n0, n1);
        for (std::int64_t i = 0; i < n0; ++i) {
            for (std::int64_t j = 0; j < n1; ++j) {
                fm(i, j) = f[static_cast<std::size_t>(i * n1 + j)];
            }
        }
        const Eigen::MatrixXd& w0 = detail::cosine_basis(n0);
        Eigen::MatrixXd c;
        if (g.d == 2) {
            const Eigen::MatrixXd& w1 = detail::cosine_basis(n1);
            c = w0.transpose() * fm * w1 / static_cast<double>(n0 * n1);
        } else {
            c = w0.transpose() * fm / static_cast<double>(n0);
        }
        for (std::int64_t k0 = 0; k0 < n0; ++k0) {
            for (std::int64_t k1 = 0; k1 < n1; ++k1) {
                coef.push_back(c(k0, k1));
                double m = 2.0 - 2.0 * std::cos(std::numbers::pi * static_cast<double>(k0) / static_cast<double>(n0));
                if (g.d == 2) {
                    m += 2.0 - 2.0 * std::cos(std::numbers::pi * static_cast<double>(k1) / static_cast<double>(n1));
                }
                mu.push_back(m / h2);
            }
        }
        return;
    }
    if (g.member_count() > kDenseSpectralLimit) {
        throw ValidationError("negative Sobolev seminorm: non-box region with " + std::to_string(g.member_count()) +
                              " cells exceeds the dense eigensolver limit of " +
                              std::to_string(kDenseSpectralLimit));
    }
    const auto& dm = detail::dense_modes(g);
    const double sq = std::sqrt(static_cast<double>(f.size()));
    const Eigen::Map<const Eigen::VectorXd> fv(f.data(), static_cast<Eigen::Index>(f.size()));
    const Eigen::VectorXd c = dm.vecs.transpose() * fv / sq;
    for (Eigen::Index k = 0; k < c.size(); ++k) {
        coef.push_back(c(k));
        mu.push_back(dm.mu(k) / h2);
    }
}

/// Weight rho_k = (|U|^{-2s/d} + mu_k^s)^{-1}; the constant mode (mu = 0)
/// receives |U|^{2s/d}.
inline double spectral_weight(double mu, double volume, double s, int d)
{
    const double base = std::pow(volume, -2.0 * s / d);
    const double ms = mu > 1e-14 ? std::pow(mu, s) : 0.0;
    return 1.0 / (base + ms);
}

/// [f]_{H^{-s}} = (sum_k rho_k |<f, w_k>|^2)^{1/2} over the K_max smallest-mu
/// modes (all when k_max = 0).
inline NegSobolevResult neg_sobolev_seminorm(const SpectralGrid& g, const std::vector<double>& f, double s,
                                             std::size_t k_max = 0)
{
    if (!(s > 0.0 && s < 1.0)) {
        throw ValidationError("negative Sobolev seminorm: s must lie in (0, 1)");
    }
    std::vector<double> coef, mu;
    spectral_coefficients(g, f, coef, mu);
    std::vector<std::size_t> order(coef.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mu[a] < mu[b]; });
    NegSobolevResult r;
    r.modes_total = coef.size();
    r.modes_used = k_max == 0 ? coef.size() : std::min(k_max, coef.size());
    r.truncated = r.modes_used < r.modes_total;
    const double vol = g.volume();
    double sum = 0.0;
    for (std::size_t i = 0; i < r.modes_used; ++i) {
        const std::size_t k = order[i];
        sum += spectral_weight(mu[k], vol, s, g.d) * coef[k] * coef[k];
    }
    r.value = std::sqrt(sum);
    return r;
}

/// ||v||_{H^s} in the same spectral realization.
inline double pos_sobolev_norm(const SpectralGrid& g, const std::vector<double>& v, double s)
{
    std::vector<double> coef, mu;
    spectral_coefficients(g, v, coef, mu);
    double sum = 0.0;
    for (std::size_t k = 0; k < coef.size(); ++k) {
        sum += coef[k] * coef[k] / spectral_weight(mu[k], g.volume(), s, g.d);
    }
    return std::sqrt(sum);
}

/// Vector-valued seminorm: the matrix weight W is applied per cell to the
/// stacked components, then the scalar seminorms are combined in l2.
inline NegSobolevResult neg_sobolev_seminorm_vec(const SpectralGrid& g, const std::vector<std::vector<double>>& comps,
                                                 const Eigen::MatrixXd& weight, double s, std::size_t k_max = 0)
{
    const auto nc = static_cast<Eigen::Index>(comps.size());
    if (weight.rows() != nc || weight.cols() != nc) {
        throw ValidationError("negative Sobolev seminorm: weight shape does not match components");
    }
    const std::size_t n = comps.empty() ? 0 : comps[0].size();
    std::vector<std::vector<double>> w(comps.size(), std::vector<double>(n, 0.0));
    Eigen::VectorXd v(nc);
    for (std::size_t i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < nc; ++c) {
            v(c) = comps[static_cast<std::size_t>(c)][i];
        }
        const Eigen::VectorXd wv = weight * v;
        for (Eigen::Index c = 0; c < nc; ++c) {
            w[static_cast<std::size_t>(c)][i] = wv(c);
        }
    }
    NegSobolevResult total;
    double sum = 0.0;
    for (const auto& c : w) {
        const auto r = neg_sobolev_seminorm(g, c, s, k_max);
        sum += r.value * r.value;
        total.truncated = total.truncated || r.truncated;
        total.modes_used = r.modes_used;
        total.modes_total = r.modes_total;
    }
    total.value = std::sqrt(sum);
    return total;
}

}  // namespace hcg
