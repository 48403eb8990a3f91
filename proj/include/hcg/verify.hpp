#pragma once

// Measurement harnesses: Caccioppoli ratios, harmonic approximation errors,
// two-sided Liouville comparisons with correctors, excess decay on adapted
// balls and the numeric dimension of corrector-based solution spaces.

#include "coarsegrain.hpp"
#include "fem.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "harmonics.hpp"
#include "linalg.hpp"
#include "rng.hpp"
#include "sobolev.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace hcg {

/// One row of a verification table: a sample at a scale with named values.
struct Measurement {
    std::string sample;
    int scale = 0;
    std::vector<std::pair<std::string, double>> values;

    double get(const std::string& key) const
    {
        for (const auto& [k, v] : values) {
            if (k == key) {
                return v;
            }
        }
        throw ValidationError("measurement has no value named '" + key + "'");
    }
};

struct VerificationRecord {
    std::string harness;
    std::vector<std::pair<std::string, std::string>> metadata;
    std::vector<Measurement> rows;
    std::vector<std::pair<std::string, double>> summary;
    bool pass = true;
    std::string message;
};

// ---------------------------------------------------------------------------
// Boundary data

struct BoundarySpec {
    enum class Kind { affine, polynomial, random_smooth };
    Kind kind = Kind::affine;
    SmallVec direction;        // affine: g(x) = direction . x
    Poly poly;                 // polynomial: g = poly
    std::uint64_t seed = 0;    // random_smooth
    double length = 1.0;       // random_smooth: wavelength scale in cells

    static BoundarySpec affine(const SmallVec& e)
    {
        BoundarySpec b;
        b.kind = Kind::affine;
        b.direction = e;
        return b;
    }

    static BoundarySpec polynomial(const Poly& p)
    {
        BoundarySpec b;
        b.kind = Kind::polynomial;
        b.poly = p;
        return b;
    }

    static BoundarySpec random_smooth(std::uint64_t seed, double length)
    {
        BoundarySpec b;
        b.kind = Kind::random_smooth;
        b.seed = seed;
        b.length = length;
        return b;
    }
};

/// The boundary function; random-smooth data is an affine part plus four
/// plane waves with wavelengths between length/2 and 2 length.
inline std::function<double(double, double)> boundary_function(const BoundarySpec& b, int d)
{
    switch (b.kind) {
    case BoundarySpec::Kind::affine: {
        if (b.direction.size() != d) {
            throw ValidationError("affine boundary data: direction has wrong dimension");
        }
        const double e0 = b.direction(0);
        const double e1 = d == 2 ? b.direction(1) : 0.0;
        return [e0, e1](double x, double y) { return e0 * x + e1 * y; };
    }
    case BoundarySpec::Kind::polynomial: {
        if (b.poly.d != d) {
            throw ValidationError("polynomial boundary data: dimension mismatch");
        }
        const Poly p = b.poly;
        return [p](double x, double y) { return evaluate(p, x, y); };
    }
    case BoundarySpec::Kind::random_smooth: {
        if (!(b.length > 0.0)) {
            throw ValidationError("random boundary data: length must be positive");
        }
        const CounterRng rng(b.seed, 7);
        std::uint64_t cu = 0, cn = 1u << 20;
        auto uni = [&] { return rng.uniform(cu++); };
        auto nrm = [&] { return rng.normal(cn++); };
        std::array<double, 2> lin{nrm(), d == 2 ? nrm() : 0.0};
        struct Wave {
            double kx, ky, phase, amp;
        };
        std::vector<Wave> waves;
        for (int i = 0; i < 4; ++i) {
            const double wl = b.length * std::pow(2.0, 2.0 * uni() - 1.0);
            const double ang = 2.0 * std::numbers::pi * uni();
            const double kk = 2.0 * std::numbers::pi / wl;
            Wave wv{kk * std::cos(ang), d == 2 ? kk * std::sin(ang) : 0.0, 2.0 * std::numbers::pi * uni(), 0.0};
            wv.amp = nrm() * b.length / (2.0 * std::numbers::pi);
            waves.push_back(wv);
        }
        return [lin, waves](double x, double y) {
            double v = lin[0] * x + lin[1] * y;
            for (const auto& w : waves) {
                v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
            }
            return v;
        };
    }
    }
    throw ValidationError("unknown boundary data kind");
}

// ---------------------------------------------------------------------------
// Caccioppoli

struct CaccioppoliResult {
    double ratio = 0.0;
    double energy_inner = 0.0;  // ||s^{1/2} grad u|| on the inner region
    double l2_outer = 0.0;      // ||u|| on the outer region
    SolveStats stats;
};

/// ||s^{1/2} grad u||_{adapted(m-1)} / (lambda_bar^{1/2} 3^{-m} ||u||_{adapted(m)})
/// for the discrete a-harmonic u with the given boundary data on adapted(m).
inline CaccioppoliResult caccioppoli_ratio(const CoefficientField& field, const AdaptedGeometry& geom, int m,
                                           const BoundarySpec& boundary, double lambda_bar,
                                           const SolveConfig& cfg = {}, int refine = 1)
{
    if (m < 1) {
        throw ValidationError("caccioppoli_ratio: level must be >= 1");
    }
    if (!(lambda_bar > 0.0)) {
        throw ValidationError("caccioppoli_ratio: lambda_bar must be positive");
    }
    const CellDomain outer = adapted_cube(geom, m);
    const CellDomain inner = adapted_cube(geom, m - 1);
    auto sol = solve_dirichlet(field, outer, boundary_function(boundary, field.dim()), cfg, refine);
    CaccioppoliResult r;
    r.stats = sol.stats;
    r.l2_outer = l2_mean_norm(sol.u);
    if (!(r.l2_outer > 0.0)) {
        throw ValidationError("caccioppoli_ratio: the solution vanishes (zero boundary data)");
    }
    r.energy_inner = energy_seminorm(sol.u, field, &inner);
    r.ratio = r.energy_inner / (std::sqrt(lambda_bar) * std::pow(3.0, -m) * r.l2_outer);
    return r;
}

struct CaccioppoliCurve {
    std::vector<double> r;
    std::vector<double> ratio;
    double kappa_hat = 0.0;  // slope of ln ratio against -ln(1 - r)
    double log_c_hat = 0.0;
    SolveStats stats;
};

inline void fit_kappa(CaccioppoliCurve& c)
{
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const auto n = static_cast<double>(c.r.size());
    for (std::size_t i = 0; i < c.r.size(); ++i) {
        const double x = -std::log(1.0 - c.r[i]);
        const double y = std::log(c.ratio[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double den = n * sxx - sx * sx;
    c.kappa_hat = std::abs(den) > 1e-300 ? (n * sxy - sx * sy) / den : 0.0;
    c.log_c_hat = (sy - c.kappa_hat * sx) / n;
}

/// Inner regions r adapted(m) for each r in `radii`; reports the (1 - r)^{-kappa} fit.
inline CaccioppoliCurve caccioppoli_r_curve(const CoefficientField& field, const AdaptedGeometry& geom, int m,
                                            const BoundarySpec& boundary, double lambda_bar,
                                            const std::vector<double>& radii, const SolveConfig& cfg = {})
{
    if (radii.size() < 2) {
        throw ValidationError("caccioppoli_r_curve: need at least two radii");
    }
    const CellDomain outer = adapted_cube(geom, m);
    auto sol = solve_dirichlet(field, outer, boundary_function(boundary, field.dim()), cfg);
    const double l2 = l2_mean_norm(sol.u);
    if (!(l2 > 0.0)) {
        throw ValidationError("caccioppoli_r_curve: the solution vanishes (zero boundary data)");
    }
    CaccioppoliCurve c;
    c.stats = sol.stats;
    for (double r : radii) {
        if (!(r > 0.0 && r < 1.0)) {
            throw ValidationError("caccioppoli_r_curve: radii must lie in (0, 1)");
        }
        const CellDomain inner = scaled_adapted_cube(geom, m, r);
        c.r.push_back(r);
        c.ratio.push_back(energy_seminorm(sol.u, field, &inner) / (std::sqrt(lambda_bar) * std::pow(3.0, -m) * l2));
    }
    fit_kappa(c);
    return c;
}

/// Adapted-ball form: ||s^{1/2} grad u||_{B_r} / (lambda_bar^{1/2} R^{-1} ||u||_{B_R})
/// for u a-harmonic in B_R; fit in (1 - r/R).
inline CaccioppoliCurve caccioppoli_ball_curve(const CoefficientField& field, const AdaptedGeometry& geom, double R,
                                               const BoundarySpec& boundary, double lambda_bar,
                                               const std::vector<double>& radii, const SolveConfig& cfg = {})
{
    if (radii.size() < 2) {
        throw ValidationError("caccioppoli_ball_curve: need at least two radii");
    }
    const CellDomain ball = adapted_ball(geom, R);
    auto sol = solve_dirichlet(field, ball, boundary_function(boundary, field.dim()), cfg);
    const double l2 = l2_mean_norm(sol.u);
    if (!(l2 > 0.0)) {
        throw ValidationError("caccioppoli_ball_curve: the solution vanishes (zero boundary data)");
    }
    CaccioppoliCurve c;
    c.stats = sol.stats;
    for (double r : radii) {
        if (!(r > 0.0 && r < R)) {
            throw ValidationError("caccioppoli_ball_curve: radii must lie in (0, R)");
        }
        const CellDomain inner = adapted_ball(geom, r);
        c.r.push_back(r / R);
        c.ratio.push_back(energy_seminorm(sol.u, field, &inner) / (std::sqrt(lambda_bar) / R * l2));
    }
    fit_kappa(c);
    return c;
}

// ---------------------------------------------------------------------------
// Harmonic approximation

struct ApproxTerms {
    double l2_term = 0.0;
    double hs_term = 0.0;
    double energy_ref = 0.0;  // ||s^{1/2} grad u||
    double total() const { return l2_term + hs_term; }
};

/// 3^{-n} lambda_bar^{1/2} ||u - ubar|| + 3^{-ns} [A_bar^{1/2} (grad u - grad ubar; a grad u - a_bar grad ubar)]
/// on the domain, with cell averages entering the spectral seminorm. u and
/// ubar must live on the same mesh, which covers `dom` exactly.
inline ApproxTerms approx_terms(const CoefficientField& field, const CellDomain& dom, const DiscreteFunction& u,
                                const DiscreteFunction& ubar, const HomogenizedRef& ref, double s_exponent,
                                double scale_exp)
{
    const Mesh& mesh = *u.mesh;
    const int d = field.dim();
    ApproxTerms t;
    DiscreteFunction diff = u;
    for (std::size_t i = 0; i < diff.values.size(); ++i) {
        diff.values[i] -= ubar.values[i];
    }
    t.l2_term = std::pow(3.0, -scale_exp) * std::sqrt(ref.lambda_bar()) * l2_mean_norm(diff, &dom);
    t.energy_ref = energy_seminorm(u, field, &dom);

    // Cell averages of the stacked 2d-vector, in row-major order over member cells.
    const SpectralGrid grid = spectral_grid(dom, 1.0);
    const auto cells = dom.cells();
    std::map<CellIndex, std::size_t> slot;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        slot[cells[i]] = i;
    }
    std::vector<std::vector<double>> comps(static_cast<std::size_t>(2 * d), std::vector<double>(cells.size(), 0.0));
    std::vector<double> count(cells.size(), 0.0);
    const SmallMat abar = ref.a_bar();
    for (std::size_t e = 0; e < mesh.elem_count(); ++e) {
        if (!mesh.active(e)) {
            continue;
        }
        const auto it = slot.find(mesh.elem_cell(e));
        if (it == slot.end()) {
            continue;
        }
        const SmallVec gu = u.center_gradient(e);
        const SmallVec gb = ubar.center_gradient(e);
        const SmallVec dg = gu - gb;
        const SmallVec df = field.a_at(mesh.elem_cell(e)) * gu - abar * gb;
        for (int i = 0; i < d; ++i) {
            comps[static_cast<std::size_t>(i)][it->second] += dg(i);
            comps[static_cast<std::size_t>(d + i)][it->second] += df(i);
        }
        count[it->second] += 1.0;
    }
    for (auto& c : comps) {
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (count[i] > 0.0) {
                c[i] /= count[i];
            }
        }
    }
    const BigMat w = linalg::sym_sqrt(BigMat(linalg::symmetrize(ref.A_bar())));
    t.hs_term = std::pow(3.0, -s_exponent * scale_exp) * neg_sobolev_seminorm_vec(grid, comps, w, s_exponent).value;
    return t;
}

enum class ApproxDirection { forward, reverse };

struct ApproxResult {
    ApproxTerms terms;
    SolveStats stats;
    SolveStats stats_bar;
};

/// Forward: ubar solves the constant a_bar problem with the same boundary
/// data. Reverse: the boundary data must be an a_bar-harmonic polynomial and
/// ubar is its nodal interpolant.
inline ApproxResult harmonic_approx_error(const CoefficientField& field, const AdaptedGeometry& geom, int m,
                                          const HomogenizedRef& ref, double s_exponent, const BoundarySpec& boundary,
                                          ApproxDirection dir = ApproxDirection::forward,
                                          const SolveConfig& cfg = {})
{
    if (!(s_exponent > 0.0 && s_exponent < 0.5)) {
        throw ValidationError("harmonic_approx_error: s_exponent must lie in (0, 1/2)");
    }
    const int d = field.dim();
    const CellDomain dom = adapted_cube(geom, m);
    const auto g = boundary_function(boundary, d);
    ApproxResult r;
    auto sol = solve_dirichlet(field, dom, g, cfg);
    r.stats = sol.stats;
    DiscreteFunction ubar;
    if (dir == ApproxDirection::forward) {
        const CoefficientField hom =
            constant_field(d, linalg::symmetrize(ref.s_bar), 0.5 * (ref.k_bar - ref.k_bar.transpose()), 1);
        auto bar = solve_dirichlet(hom, dom, g, cfg);
        r.stats_bar = bar.stats;
        ubar = std::move(bar.u);
    } else {
        if (boundary.kind != BoundarySpec::Kind::polynomial) {
            throw ValidationError("harmonic_approx_error: reverse direction needs polynomial boundary data");
        }
        const Poly lap = weighted_laplacian(boundary.poly, ref.s_bar);
        double lmax = 0.0, pmax = 0.0;
        for (double c : lap.c) {
            lmax = std::max(lmax, std::abs(c));
        }
        for (double c : boundary.poly.c) {
            pmax = std::max(pmax, std::abs(c));
        }
        if (lmax > 1e-8 * pmax * std::max(1.0, ref.Lambda_bar())) {
            throw ValidationError("harmonic_approx_error: boundary polynomial is not s_bar-harmonic");
        }
        ubar.mesh = sol.u.mesh;
        ubar.values.resize(sol.u.values.size());
        for (std::size_t n = 0; n < ubar.values.size(); ++n) {
            const auto x = ubar.mesh->node_coord(n);
            ubar.values[n] = g(x[0], x[1]);
        }
    }
    r.terms = approx_terms(field, dom, sol.u, ubar, ref, s_exponent, m);
    return r;
}

// ---------------------------------------------------------------------------
// Correctors on arbitrary domains

/// Nodal value of a torus function at a node coordinate of a mesh with the
/// same refinement, by periodic lookup.
inline double periodic_value(const DiscreteFunction& phi, double x, double y)
{
    const Mesh& m = *phi.mesh;
    const double h = m.h();
    const auto ne = m.elem_extent();
    const auto lo = m.cell_lo();
    const auto i = floor_mod(static_cast<std::int64_t>(std::llround((x - static_cast<double>(lo[0]) + 0.5) / h)), ne[0]);
    std::int64_t j = 0;
    if (m.dim() == 2) {
        j = floor_mod(static_cast<std::int64_t>(std::llround((y - static_cast<double>(lo[1]) + 0.5) / h)), ne[1]);
    }
    return phi.values[static_cast<std::size_t>(i * m.node_extent()[1] + j)];
}

/// Periods per torus side so that the torus has at least three cells per side.
inline int torus_periods(const CoefficientField& field)
{
    return static_cast<int>((3 + field.period() - 1) / field.period());
}

/// The d correctors phi_{e_i} of a periodic field.
inline std::vector<CorrectorResult> solve_correctors(const CoefficientField& field, const SolveConfig& cfg = {},
                                                     int periods = 0)
{
    if (periods == 0) {
        periods = torus_periods(field);
    }
    std::vector<CorrectorResult> out;
    for (int i = 0; i < field.dim(); ++i) {
        SmallVec e = SmallVec::Zero(field.dim());
        e(i) = 1.0;
        out.push_back(solve_periodic_corrector(field, e, cfg, periods));
    }
    return out;
}

/// u = p + sum_i (d_i p) phi_{e_i} at the nodes of `mesh`, for affine p.
inline DiscreteFunction corrected_affine(const std::shared_ptr<const Mesh>& mesh, const Poly& p,
                                         const std::vector<CorrectorResult>& correctors)
{
    const int d = mesh->dim();
    const SmallVec xi = evaluate_gradient(p, 0.0, 0.0);
    DiscreteFunction u;
    u.mesh = mesh;
    u.values.resize(mesh->node_count());
    for (std::size_t n = 0; n < mesh->node_count(); ++n) {
        const auto x = mesh->node_coord(n);
        double v = evaluate(p, x[0], x[1]);
        for (int i = 0; i < d; ++i) {
            if (xi(i) != 0.0) {
                v += xi(i) * periodic_value(correctors[static_cast<std::size_t>(i)].phi, x[0], x[1]);
            }
        }
        u.values[n] = v;
    }
    return u;
}

inline DiscreteFunction interpolate(const std::shared_ptr<const Mesh>& mesh, const Poly& p)
{
    DiscreteFunction u;
    u.mesh = mesh;
    u.values.resize(mesh->node_count());
    for (std::size_t n = 0; n < mesh->node_count(); ++n) {
        const auto x = mesh->node_coord(n);
        u.values[n] = evaluate(p, x[0], x[1]);
    }
    return u;
}

// ---------------------------------------------------------------------------
// Two-sided Liouville comparison

struct LiouvilleOptions {
    double s_exponent = 0.25;
    double X_hat = 1.0;
    double theta_hat = 1.0;
    double constant = 1.0;
};

/// For each basis element pbar of the degree <= k s_bar-harmonic space
/// (k <= 1), u = pbar + correctors, measured on the triadic cubes of the
/// given levels. Rows carry lhs, rhs surrogate, their ratio and the discrete
/// a-harmonic residual of u.
inline VerificationRecord liouville_two_sided(const CoefficientField& field, const HomogenizedRef& ref, int k,
                                              const std::vector<int>& levels, const LiouvilleOptions& opt = {},
                                              const SolveConfig& cfg = {})
{
    if (k < 0 || k > 1) {
        throw ValidationError("liouville_two_sided: exact members are only built for k in {0, 1}");
    }
    if (levels.empty()) {
        throw ValidationError("liouville_two_sided: need at least one level");
    }
    const int d = field.dim();
    const auto correctors = solve_correctors(field, cfg);
    const HarmonicBasis basis = abar_harmonic_basis(d, k, ref.s_bar);
    VerificationRecord rec;
    rec.harness = "liouville";
    rec.metadata.push_back({"k", std::to_string(k)});
    double max_resid = 0.0;
    double decay_sum = 0.0;
    int decay_count = 0;
    for (std::size_t b = 0; b < basis.size(); ++b) {
        const Poly& p = basis.polys[b];
        const SmallVec xi = evaluate_gradient(p, 0.0, 0.0);
        const double ebar = std::sqrt(xi.dot(ref.s_bar * xi));
        double prev = -1.0;
        for (int n : levels) {
            const CellDomain dom = triadic_cube(d, n);
            auto mesh = std::make_shared<const Mesh>(Mesh::on_domain(dom));
            const DiscreteFunction u = corrected_affine(mesh, p, correctors);
            const DiscreteFunction ubar = interpolate(mesh, p);
            const ApproxTerms t = approx_terms(field, dom, u, ubar, ref, opt.s_exponent, n);
            const double rhs = opt.constant * std::pow(opt.X_hat / std::pow(3.0, n), opt.theta_hat / 2.0) * ebar;
            const double resid = dirichlet_residual(field, u);
            max_resid = std::max(max_resid, resid);
            Measurement row;
            row.sample = "basis" + std::to_string(b);
            row.scale = n;
            row.values = {{"lhs", t.total()},
                          {"l2_term", t.l2_term},
                          {"hs_term", t.hs_term},
                          {"rhs", rhs},
                          {"ratio", rhs > 0.0 ? t.total() / rhs : 0.0},
                          {"residual", resid}};
            rec.rows.push_back(row);
            if (prev > 0.0) {
                decay_sum += t.total() / prev;
                ++decay_count;
            }
            prev = t.total();
        }
    }
    rec.summary.push_back({"max_residual", max_resid});
    rec.summary.push_back({"mean_decay_ratio", decay_count > 0 ? decay_sum / decay_count : 0.0});
    return rec;
}

// ---------------------------------------------------------------------------
// Excess decay

struct ExcessRow {
    double r = 0.0;
    double E = 0.0;          // r^{-k} inf_p ||u - p||_{B_r}
    double p_norm = 0.0;     // ||p_{k,r}||_{B_r}
    double residual = 0.0;   // inf_p ||u - p||
};

struct ExcessCurve {
    int k = 0;
    std::vector<ExcessRow> rows;   // decreasing radii
    std::vector<double> ratios;    // E(r_{i+1}) / E(r_i)
    double slope = 0.0;            // least-squares slope of ln E against ln r
};

/// Gauss points (3 per axis) and values of u over the elements whose cell lies in `region`.
inline void sample_function(const DiscreteFunction& u, const CellDomain& region, std::vector<std::array<double, 2>>& x,
                            std::vector<double>& w, std::vector<double>& f)
{
    x.clear();
    w.clear();
    f.clear();
    std::vector<double> gx, gw;
    gauss01(3, gx, gw);
    const Mesh& mesh = *u.mesh;
    const double h = mesh.h();
    for (std::size_t e = 0; e < mesh.elem_count(); ++e) {
        if (!mesh.active(e) || !region.contains(mesh.elem_cell(e))) {
            continue;
        }
        const auto o = mesh.elem_origin(e);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            for (std::size_t j = 0; j < (mesh.dim() == 2 ? gx.size() : 1); ++j) {
                const double eta = mesh.dim() == 2 ? gx[j] : 0.0;
                x.push_back({o[0] + gx[i] * h, mesh.dim() == 2 ? o[1] + eta * h : 0.0});
                w.push_back(mesh.elem_volume() * gw[i] * (mesh.dim() == 2 ? gw[j] : 1.0));
                f.push_back(u.value(e, gx[i], eta));
            }
        }
    }
}

/// E_k(r) on adapted balls about the origin for each radius; every ball
/// must lie inside the domain of u, and radii below 3 cells are rejected.
inline ExcessCurve excess_decay_curve(const DiscreteFunction& u, const AdaptedGeometry& geom, int k,
                                      const std::vector<double>& radii)
{
    if (radii.empty()) {
        throw ValidationError("excess_decay_curve: need at least one radius");
    }
    const Mesh& mesh = *u.mesh;
    const HarmonicBasis basis = abar_harmonic_basis(geom.d, k, geom.s_bar);
    ExcessCurve c;
    c.k = k;
    for (double r : radii) {
        if (!(r >= 3.0)) {
            throw ValidationError("excess_decay_curve: radius " + std::to_string(r) +
                                  " is below 3 cells; the projection is meaningless there");
        }
        const CellDomain ball = adapted_ball(geom, r);
        for (const auto& cell : ball.cells()) {
            const std::int64_t i0 = cell[0] - mesh.cell_lo()[0];
            const std::int64_t i1 = geom.d == 2 ? cell[1] - mesh.cell_lo()[1] : 0;
            if (i0 < 0 || i0 >= mesh.cell_extent()[0] || i1 < 0 || i1 >= mesh.cell_extent()[1]) {
                throw ValidationError("excess_decay_curve: ball of radius " + std::to_string(r) +
                                      " leaves the solution domain");
            }
        }
        std::vector<std::array<double, 2>> x;
        std::vector<double> w, f;
        sample_function(u, ball, x, w, f);
        const Projection p = project_onto_basis(x, w, f, basis);
        ExcessRow row;
        row.r = r;
        row.residual = p.residual;
        row.E = std::pow(r, -k) * p.residual;
        row.p_norm = p.best_norm;
        c.rows.push_back(row);
    }
    for (std::size_t i = 1; i < c.rows.size(); ++i) {
        c.ratios.push_back(c.rows[i - 1].E > 0.0 ? c.rows[i].E / c.rows[i - 1].E : 0.0);
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, n = 0.0;
    for (const auto& row : c.rows) {
        if (row.E > 0.0) {
            const double lx = std::log(row.r), ly = std::log(row.E);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            n += 1.0;
        }
    }
    if (n >= 2.0 && std::abs(n * sxx - sx * sx) > 1e-300) {
        c.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
    return c;
}

/// Geometric ladder r_max, r_max / 3, ... down to (and including) the last radius >= 3.
inline std::vector<double> radius_ladder(double r_max)
{
    std::vector<double> r;
    for (double v = r_max; v >= 3.0 - 1e-12; v /= 3.0) {
        r.push_back(v);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Numeric dimension of the corrector-based solution space

struct DimensionResult {
    int dimension = 0;
    int candidates = 0;
    std::vector<double> singular_values;  // of the normalized sample matrix, descending
    double gap = std::numeric_limits<double>::infinity();  // smallest retained / largest discarded
};

/// Candidates u_j = x . xi_j + phi_{xi_j} + c_j (xi_j = 0 when k = 0) from
/// independent corrector solves with random xi_j and c_j; the numeric rank
/// of their volume-normalized L2 Gram matrix on the level-`level` cube counts
/// singular values above 1e-8 of the largest.
inline DimensionResult corrector_space_dimension(const CoefficientField& field, int k, int level,
                                                 std::uint64_t seed = 1, const SolveConfig& cfg = {})
{
    if (k < 0 || k > 1) {
        throw ValidationError("corrector_space_dimension: only k in {0, 1} is supported");
    }
    const int d = field.dim();
    const int count = static_cast<int>(dim_formula(d, k)) + 3;
    const CellDomain dom = triadic_cube(d, level);
    auto mesh = std::make_shared<const Mesh>(Mesh::on_domain(dom));
    const CounterRng rng(seed, 11);
    std::uint64_t ctr = 0;
    std::vector<std::array<double, 2>> x;
    std::vector<double> w;
    std::vector<std::vector<double>> samples;
    for (int j = 0; j < count; ++j) {
        SmallVec xi = SmallVec::Zero(d);
        if (k == 1) {
            for (int i = 0; i < d; ++i) {
                xi(i) = rng.normal(ctr++);
            }
        }
        const double c = rng.normal(ctr++);
        Poly p(d, 1);
        p.at(0, 0) = c;
        p.at(1, 0) = xi(0);
        if (d == 2) {
            p.at(0, 1) = xi(1);
        }
        DiscreteFunction u = interpolate(mesh, p);
        if (k == 1) {
            const CorrectorResult cr = solve_periodic_corrector(field, xi, cfg, torus_periods(field));
            for (std::size_t n = 0; n < mesh->node_count(); ++n) {
                const auto y = mesh->node_coord(n);
                u.values[n] += periodic_value(cr.phi, y[0], y[1]);
            }
        }
        std::vector<double> f;
        sample_function(u, dom, x, w, f);
        samples.push_back(std::move(f));
    }
    double vol = 0.0;
    for (double wi : w) {
        vol += wi;
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(w.size()), count);
    for (int j = 0; j < count; ++j) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            a(static_cast<Eigen::Index>(i), j) = std::sqrt(w[i] / vol) * samples[static_cast<std::size_t>(j)][i];
        }
        const double nrm = a.col(j).norm();
        if (nrm > 0.0) {
            a.col(j) /= nrm;
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    DimensionResult r;
    r.candidates = count;
    const Eigen::VectorXd sv = svd.singularValues();
    r.singular_values.assign(sv.data(), sv.data() + sv.size());
    const double top = sv.size() > 0 ? sv(0) : 0.0;
    double smallest_kept = top, largest_dropped = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > 1e-8 * top) {
            ++r.dimension;
            smallest_kept = sv(i);
        } else {
            largest_dropped = std::max(largest_dropped, sv(i));
        }
    }
    r.gap = largest_dropped > 0.0 ? smallest_kept / largest_dropped : std::numeric_limits<double>::infinity();
    return r;
}

}  // namespace hcg
