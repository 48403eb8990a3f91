#pragma once

// Coarse-grained matrices A(U), their blocks, J / J*, homogenized estimates
// and the multiscale error quantities E_s, R(n) and E~_s.

#include "fem.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace hcg {

struct CoarseMatrix {
    BigMat M;                  // symmetrized A(U)
    double asymmetry = 0.0;    // max |M_raw - M_raw^T| before symmetrization
    double min_eig = 0.0;
    std::size_t cells = 0;
    int max_iterations = 0;    // largest Krylov count among the basis solves
};

/// A(U) from the 2d basis solves. With u_j the minimizer for P = E_j and b_j
/// the load, val(E_i + E_j) - val(E_i) - val(E_j) reduces to the cross term
/// (S_ij + b_i.u_j)/|U|, so the polarization needs no extra solves.
inline CoarseMatrix coarse_matrix(const CoefficientField& field, const CellDomain& dom, const SolveConfig& cfg = {},
                                  int refine = 1)
{
    const int nd = 2 * field.dim();
    AEnergyProblem prob(field, dom, refine);
    CoarseMatrix out;
    out.cells = dom.count();
    BigMat raw = BigMat::Zero(nd, nd);
    if (prob.has_unknowns()) {
        std::vector<Eigen::VectorXd> x(static_cast<std::size_t>(nd));
        for (int j = 0; j < nd; ++j) {
            BigVec e = BigVec::Zero(nd);
            e(j) = 1.0;
            SolveStats st;
            x[static_cast<std::size_t>(j)] = prob.solve(e, cfg, &st);
            out.max_iterations = std::max(out.max_iterations, st.iterations);
        }
        for (int i = 0; i < nd; ++i) {
            for (int j = 0; j < nd; ++j) {
                raw(i, j) += prob.loads()[static_cast<std::size_t>(i)].dot(x[static_cast<std::size_t>(j)]);
            }
        }
    }
    raw = prob.mean_pointwise_a() + raw / prob.volume();
    out.asymmetry = linalg::max_asymmetry(raw);
    out.M = linalg::symmetrize(raw);
    out.min_eig = linalg::min_eig(out.M);
    return out;
}

struct CoarseBlocks {
    SmallMat s;
    SmallMat s_star;
    SmallMat k;
};

inline CoarseBlocks extract_blocks(const BigMat& m)
{
    const Eigen::Index d = m.rows() / 2;
    if (m.rows() != m.cols() || (d != 1 && d != 2)) {
        throw ValidationError("extract_blocks: expected a 2d x 2d matrix");
    }
    const SmallMat br = linalg::symmetrize(SmallMat(m.bottomRightCorner(d, d)));
    if (!(linalg::min_eig(br) > 1e-12)) {
        throw ValidationError("extract_blocks: bottom-right block is singular (degenerate coarse matrix)");
    }
    CoarseBlocks b;
    b.s_star = linalg::symmetrize(SmallMat(br.inverse()));
    b.k = -b.s_star * SmallMat(m.bottomLeftCorner(d, d));
    b.s = linalg::symmetrize(SmallMat(SmallMat(m.topLeftCorner(d, d)) - b.k.transpose() * br * b.k));
    return b;
}

inline BigMat blocks_to_matrix(const CoarseBlocks& b)
{
    return big_a_from_blocks(b.s, b.s_star, b.k);
}

/// J = 1/2 p.s p + 1/2 (q + k p).s*^{-1}(q + k p) - p.q
inline double eval_J(const CoarseBlocks& b, const SmallVec& p, const SmallVec& q)
{
    const SmallVec w = q + b.k * p;
    return 0.5 * p.dot(b.s * p) + 0.5 * w.dot(b.s_star.inverse() * w) - p.dot(q);
}

/// J* = J with k replaced by -k.
inline double eval_Jstar(const CoarseBlocks& b, const SmallVec& p, const SmallVec& q)
{
    const SmallVec w = q - b.k * p;
    return 0.5 * p.dot(b.s * p) + 0.5 * w.dot(b.s_star.inverse() * w) - p.dot(q);
}

/// Homogenized reference (s_bar, k_bar) and the derived quantities.
struct HomogenizedRef {
    SmallMat s_bar;
    SmallMat k_bar;

    SmallMat a_bar() const { return s_bar + k_bar; }
    BigMat A_bar() const { return pointwise_big_a(s_bar, k_bar); }
    double lambda_bar() const { return linalg::min_eig(s_bar); }
    double Lambda_bar() const { return linalg::max_eig(s_bar); }
    double scalar() const { return s_bar.trace() / static_cast<double>(s_bar.rows()); }
};

/// Largest eigenvalue of the quadratic form e -> J(.,p,a^T p) + J*(.,p,a p),
/// p = s_bar^{-1/2} e, assembled by polarization over the basis.
///
/// J is linear in A: with X = (p, -q), J(U,p,q) = J_bar(p,q) + 1/2 X.(A(U) - A_bar)X,
/// and J_bar(p, a_bar^T p) = 0 for antisymmetric k_bar. J* is J for D A D,
/// D = diag(I, -I). Working with A(U) - A_bar keeps J at roundoff squared
/// when A(U) = A_bar instead of cancelling O(1) terms, which matters because
/// E_s takes a square root.
inline double j_sum_max(const BigMat& a, const HomogenizedRef& ref)
{
    const int d = static_cast<int>(ref.s_bar.rows());
    const SmallMat sih = linalg::sym_inv_sqrt(ref.s_bar);
    const SmallMat abar = ref.a_bar();
    const BigMat da = a - ref.A_bar();
    const bool k_antisym = (ref.k_bar + ref.k_bar.transpose()).cwiseAbs().maxCoeff() == 0.0;
    const CoarseBlocks bar_blocks{ref.s_bar, ref.s_bar, ref.k_bar};
    auto f = [&](const SmallVec& e) {
        const SmallVec p = sih * e;
        const SmallVec q = abar.transpose() * p;
        const SmallVec qs = abar * p;
        BigVec x(2 * d), y(2 * d);
        x << p, -q;
        y << p, qs;  // D (p, -qs)
        double v = 0.5 * x.dot(da * x) + 0.5 * y.dot(da * y);
        if (!k_antisym) {
            v += eval_J(bar_blocks, p, q) + eval_Jstar(bar_blocks, p, qs);
        }
        return v;
    };
    SmallMat g(d, d);
    for (int i = 0; i < d; ++i) {
        SmallVec ei = SmallVec::Zero(d);
        ei(i) = 1.0;
        g(i, i) = f(ei);
    }
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            SmallVec e = SmallVec::Zero(d);
            e(i) = 1.0;
            e(j) = 1.0;
            g(i, j) = g(j, i) = 0.5 * (f(e) - g(i, i) - g(j, j));
        }
    }
    return linalg::max_eig(g);
}

/// |(A_bar^{-1/2}(A - A_bar)A_bar^{-1/2})_+|
inline double positive_defect(const BigMat& a, const BigMat& a_bar)
{
    const BigMat aih = linalg::sym_inv_sqrt(a_bar);
    const BigMat rel = aih * (a - a_bar) * aih;
    return linalg::sym_spectral_norm(linalg::positive_part(BigMat(linalg::symmetrize(rel))));
}

// ---------------------------------------------------------------------------
// Multiscale table

/// A(z + adapted(n)) for every level n <= m and every z in 3^n L0 cap adapted(m).
struct MultiscaleTable {
    AdaptedGeometry geom;
    int m = 0;
    std::vector<std::vector<ScaledPoint>> centers;     // [n][i]
    std::vector<std::vector<CoarseMatrix>> matrices;   // [n][i]
    std::vector<std::vector<std::size_t>> cell_counts; // [n][i]
    std::vector<BigMat> cell_matrices;                 // pointwise A for each cell of adapted(m)
    std::vector<CellIndex> cells;
};

/// Number of subcube solves the table would need.
inline std::size_t multiscale_solve_count(int d, int m)
{
    std::size_t total = 0;
    for (int n = 0; n <= m; ++n) {
        total += static_cast<std::size_t>(ipow(3, (m - n) * d));
    }
    return total;
}

inline MultiscaleTable build_multiscale_table(const CoefficientField& field, const AdaptedGeometry& geom, int m,
                                              const SolveConfig& cfg, int threads = 1,
                                              std::size_t budget = 20000)
{
    if (geom.d != field.dim()) {
        throw ValidationError("multiscale table: geometry and field dimensions differ");
    }
    if (m < 0) {
        throw ValidationError("multiscale table: m must be non-negative");
    }
    const std::size_t need = multiscale_solve_count(field.dim(), m);
    if (need > budget) {
        throw ValidationError("refusing m=" + std::to_string(m) + ": " + std::to_string(need) +
                              " subcube solves exceed the budget of " + std::to_string(budget));
    }
    MultiscaleTable t;
    t.geom = geom;
    t.m = m;
    t.centers.resize(static_cast<std::size_t>(m + 1));
    t.matrices.resize(static_cast<std::size_t>(m + 1));
    t.cell_counts.resize(static_cast<std::size_t>(m + 1));
    struct Job {
        int n;
        std::size_t i;
    };
    std::vector<Job> jobs;
    for (int n = m; n >= 0; --n) {
        auto& c = t.centers[static_cast<std::size_t>(n)];
        c = enumerate_subcubes(geom, m, n);
        t.matrices[static_cast<std::size_t>(n)].resize(c.size());
        t.cell_counts[static_cast<std::size_t>(n)].resize(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) {
            jobs.push_back({n, i});
        }
    }
    parallel_for(jobs.size(), threads, [&](std::size_t j) {
        const auto [n, i] = jobs[j];
        const CellDomain dom = adapted_cube(geom, n, t.centers[static_cast<std::size_t>(n)][i]);
        t.matrices[static_cast<std::size_t>(n)][i] = coarse_matrix(field, dom, cfg);
        t.cell_counts[static_cast<std::size_t>(n)][i] = dom.count();
    });
    const CellDomain top = adapted_cube(geom, m);
    t.cells = top.cells();
    for (const auto& c : t.cells) {
        t.cell_matrices.push_back(field.big_a(field.flat_index(c)));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Error quantities

struct EsResult {
    double value = 0.0;               // E_s(adapted(m))
    std::vector<double> level_max;    // T_j for j = 0..m
    double cell_max = 0.0;            // T below the cell scale
};

/// E_s(adapted(m))^2 = (1 - c) sum_{j <= m} c^{m-j} T_j, c = 3^{-2s}; levels
/// j < 0 live inside single cells where the field is constant, so they all
/// share T_cell and sum to c^{m+1} T_cell.
inline EsResult homogenization_error_Es(const MultiscaleTable& t, double s_exponent, const HomogenizedRef& ref)
{
    if (!(s_exponent > 0.0 && s_exponent < 0.5)) {
        throw ValidationError("E_s: s_exponent must lie in (0, 1/2)");
    }
    EsResult r;
    const double c = std::pow(3.0, -2.0 * s_exponent);
    r.level_max.assign(static_cast<std::size_t>(t.m + 1), 0.0);
    for (int j = 0; j <= t.m; ++j) {
        double mx = 0.0;
        for (const auto& cm : t.matrices[static_cast<std::size_t>(j)]) {
            mx = std::max(mx, j_sum_max(cm.M, ref));
        }
        r.level_max[static_cast<std::size_t>(j)] = mx;
    }
    for (const auto& a : t.cell_matrices) {
        r.cell_max = std::max(r.cell_max, j_sum_max(a, ref));
    }
    double sum = 0.0;
    for (int j = 0; j <= t.m; ++j) {
        sum += (1.0 - c) * std::pow(c, t.m - j) * r.level_max[static_cast<std::size_t>(j)];
    }
    sum += std::pow(c, t.m + 1) * r.cell_max;
    r.value = std::sqrt(std::max(sum, 0.0));
    return r;
}

struct DefectFit {
    bool ok = false;
    double gamma_hat = 0.0;
    double theta_hat = 0.0;
    double log_X = 0.0;           // fitted ln X from the intercept
    double X_hat = std::numeric_limits<double>::infinity();
    std::size_t points = 0;
};

struct DefectResult {
    std::vector<double> R;        // R(n), n = 0..m, over adapted(m)
    double R_cell = 0.0;
    double E_tilde = 0.0;
    std::vector<std::vector<double>> R_window;  // [m'][n]: max over z in 3^n L0 cap adapted(m'), centred windows
    DefectFit fit;
};

/// Least squares of ln R = gamma ln3 (m'-n) - theta ln3 m' + c over every
/// positive R(m', n); X_hat is the smallest power of 3 for which the fitted
/// envelope dominates all data points.
inline DefectFit fit_defect(const std::vector<std::vector<double>>& rw)
{
    DefectFit f;
    const double l3 = std::log(3.0);
    std::vector<std::array<double, 4>> rows;
    for (std::size_t mp = 0; mp < rw.size(); ++mp) {
        for (std::size_t n = 0; n < rw[mp].size(); ++n) {
            const double r = rw[mp][n];
            if (r > 1e-14) {
                rows.push_back({l3 * static_cast<double>(mp - n), -l3 * static_cast<double>(mp), 1.0, std::log(r)});
            }
        }
    }
    f.points = rows.size();
    if (rows.size() < 3) {
        return f;
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), 3);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        a(static_cast<Eigen::Index>(i), 0) = rows[i][0];
        a(static_cast<Eigen::Index>(i), 1) = rows[i][1];
        a(static_cast<Eigen::Index>(i), 2) = rows[i][2];
        y(static_cast<Eigen::Index>(i)) = rows[i][3];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < 3) {
        return f;
    }
    const Eigen::VectorXd x = qr.solve(y);
    f.gamma_hat = x(0);
    f.theta_hat = x(1);
    f.ok = true;
    if (f.theta_hat > 0.0) {
        f.log_X = x(2) / f.theta_hat;
        double xs = 0.0;
        for (std::size_t mp = 0; mp < rw.size(); ++mp) {
            for (std::size_t n = 0; n < rw[mp].size(); ++n) {
                const double r = rw[mp][n];
                if (r > 1e-14) {
                    const double base = std::pow(3.0, f.gamma_hat * static_cast<double>(mp - n));
                    xs = std::max(xs, std::pow(3.0, static_cast<double>(mp)) * std::pow(r / base, 1.0 / f.theta_hat));
                }
            }
        }
        f.X_hat = xs > 0.0 ? std::pow(3.0, std::ceil(std::log(xs) / l3 - 1e-12)) : 1.0;
    }
    return f;
}

/// R(n) over adapted(m), the E~_s sum and the triangle-window fit.
inline DefectResult coarse_defect(const MultiscaleTable& t, double s_exponent, const HomogenizedRef& ref)
{
    if (!(s_exponent > 0.0 && s_exponent <= 1.0)) {
        throw ValidationError("coarse_defect: s_exponent must lie in (0, 1]");
    }
    const BigMat abar = ref.A_bar();
    DefectResult r;
    const int m = t.m;
    const int d = t.geom.d;
    // Per-subcube defects, reused for every window.
    std::vector<std::vector<double>> dz(static_cast<std::size_t>(m + 1));
    for (int n = 0; n <= m; ++n) {
        for (const auto& cm : t.matrices[static_cast<std::size_t>(n)]) {
            dz[static_cast<std::size_t>(n)].push_back(positive_defect(cm.M, abar));
        }
    }
    for (const auto& a : t.cell_matrices) {
        r.R_cell = std::max(r.R_cell, positive_defect(a, abar));
    }
    // Subcubes are enumerated row-major in w with |w_i| <= (3^{m-n}-1)/2, so
    // the ones inside the centred window adapted(m') are |w_i| <= (3^{m'-n}-1)/2.
    r.R_window.assign(static_cast<std::size_t>(m + 1), {});
    for (int mp = 0; mp <= m; ++mp) {
        for (int n = 0; n <= mp; ++n) {
            const std::int64_t side = ipow(3, m - n);
            const std::int64_t h = (side - 1) / 2;
            const std::int64_t hw = (ipow(3, mp - n) - 1) / 2;
            double mx = 0.0;
            const auto& v = dz[static_cast<std::size_t>(n)];
            for (std::size_t i = 0; i < v.size(); ++i) {
                const std::int64_t w0 = d == 2 ? static_cast<std::int64_t>(i) / side - h : static_cast<std::int64_t>(i) - h;
                const std::int64_t w1 = d == 2 ? static_cast<std::int64_t>(i) % side - h : 0;
                if (std::abs(w0) <= hw && std::abs(w1) <= hw) {
                    mx = std::max(mx, v[i]);
                }
            }
            r.R_window[static_cast<std::size_t>(mp)].push_back(mx);
        }
    }
    r.R = r.R_window[static_cast<std::size_t>(m)];
    for (int k = 0; k <= m; ++k) {
        r.E_tilde += std::pow(3.0, s_exponent * (k - m)) * std::sqrt(r.R[static_cast<std::size_t>(k)]);
    }
    const double q = std::pow(3.0, -s_exponent);
    r.E_tilde += std::sqrt(r.R_cell) * std::pow(3.0, -s_exponent * m) * q / (1.0 - q);
    r.fit = fit_defect(r.R_window);
    return r;
}

/// Minimum eigenvalue of s(U) - s*(U) over every cube of the table.
inline double min_loewner_gap(const MultiscaleTable& t)
{
    double mn = std::numeric_limits<double>::infinity();
    for (const auto& level : t.matrices) {
        for (const auto& cm : level) {
            const CoarseBlocks b = extract_blocks(cm.M);
            mn = std::min(mn, linalg::min_eig(SmallMat(b.s - b.s_star)));
        }
    }
    return mn;
}

/// min eig( sum_i |U_i|/|U| A(U_i) - A(U) ) for the level-`child_level`
/// subcubes of the level-`parent_level` cube at `center`. Parent cells not
/// covered by a child enter as single-cell children.
inline double subadditivity_check(const CoefficientField& field, const AdaptedGeometry& geom, int parent_level,
                                  int child_level, const SolveConfig& cfg = {}, ScaledPoint center = {0, 0},
                                  int threads = 1)
{
    if (child_level > parent_level || child_level < 0) {
        throw ValidationError("subadditivity_check: need 0 <= child level <= parent level");
    }
    const CellDomain parent = adapted_cube(geom, parent_level, center);
    const BigMat ap = coarse_matrix(field, parent, cfg).M;
    const auto zs = enumerate_subcubes(geom, parent_level, child_level, center);
    std::vector<CellDomain> kids(zs.size());
    std::vector<BigMat> ak(zs.size());
    parallel_for(zs.size(), threads, [&](std::size_t i) {
        kids[i] = adapted_cube(geom, child_level, zs[i]);
        ak[i] = coarse_matrix(field, kids[i], cfg).M;
    });
    const double vol = static_cast<double>(parent.count());
    BigMat mean = BigMat::Zero(ap.rows(), ap.cols());
    for (std::size_t i = 0; i < zs.size(); ++i) {
        mean += ak[i] * (static_cast<double>(kids[i].count()) / vol);
    }
    for (const auto& c : parent.cells()) {
        bool covered = false;
        for (const auto& k : kids) {
            if (k.contains(c)) {
                covered = true;
                break;
            }
        }
        if (!covered) {
            mean += field.big_a(field.flat_index(c)) / vol;
        }
    }
    return linalg::min_eig(BigMat(linalg::symmetrize(BigMat(mean - ap))));
}

// ---------------------------------------------------------------------------
// Homogenized estimate

struct HomogenizedEstimate {
    BigMat A_bar_hat;       // sample mean of A(box(m))
    CoarseBlocks mean_blocks;
    HomogenizedRef ref;     // s_bar = s # s_* of the mean blocks, k_bar = k
    CoarseBlocks alt_blocks;  // mean of per-sample blocks
    double alt_discrepancy = 0.0;  // max |s_bar - s # s_* of alt blocks|
    double lambda_bar = 0.0;
    double Lambda_bar = 0.0;
    double Pi_sbar = 0.0;
    int samples = 0;
    int scale = 0;
    std::vector<BigMat> per_sample;
};

/// Sample mean of A over the triadic cube of level m across N realizations.
/// s_bar is taken as the matrix geometric mean of the s and s_* blocks of
/// the mean: the two blocks bracket the limit from both sides and their mean
/// in this sense is invariant under the duality s <-> s_*^{-1}.
template <class Generate>
HomogenizedEstimate estimate_homogenized(Generate&& generate, int d, int m, const std::vector<std::uint64_t>& seeds,
                                         const SolveConfig& cfg = {}, int threads = 1)
{
    if (seeds.empty()) {
        throw ValidationError("estimate_homogenized: need at least one sample");
    }
    HomogenizedEstimate est;
    est.samples = static_cast<int>(seeds.size());
    est.scale = m;
    est.per_sample.resize(seeds.size());
    const CellDomain cube = triadic_cube(d, m);
    parallel_for(seeds.size(), threads, [&](std::size_t i) {
        const CoefficientField f = generate(seeds[i]);
        est.per_sample[i] = coarse_matrix(f, cube, cfg).M;
    });
    est.A_bar_hat = BigMat::Zero(2 * d, 2 * d);
    est.alt_blocks = {SmallMat::Zero(d, d), SmallMat::Zero(d, d), SmallMat::Zero(d, d)};
    for (const auto& a : est.per_sample) {
        est.A_bar_hat += a / static_cast<double>(seeds.size());
        const CoarseBlocks b = extract_blocks(a);
        est.alt_blocks.s += b.s / static_cast<double>(seeds.size());
        est.alt_blocks.s_star += b.s_star / static_cast<double>(seeds.size());
        est.alt_blocks.k += b.k / static_cast<double>(seeds.size());
    }
    est.mean_blocks = extract_blocks(est.A_bar_hat);
    est.ref.s_bar = linalg::symmetrize(linalg::geometric_mean(est.mean_blocks.s_star, est.mean_blocks.s));
    est.ref.k_bar = est.mean_blocks.k;
    const SmallMat alt = linalg::geometric_mean(est.alt_blocks.s_star, est.alt_blocks.s);
    est.alt_discrepancy = (alt - est.ref.s_bar).cwiseAbs().maxCoeff();
    est.lambda_bar = est.ref.lambda_bar();
    est.Lambda_bar = est.ref.Lambda_bar();
    est.Pi_sbar = est.Lambda_bar / est.lambda_bar;
    return est;
}

}  // namespace hcg
