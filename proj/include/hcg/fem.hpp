#pragma once

// Q1 finite elements on unions of unit cells (optionally refined r times per
// axis) and on the periodic torus, plus the Krylov solvers used everywhere.
//
// Element integrals use the 2-point Gauss rule per axis. For cellwise
// constant coefficients this integrates every bilinear form below exactly,
// which is what makes affine reproduction and the null-Lagrangian identity
// int grad(phi) . rot grad(psi) = 0 hold to round-off.

#include "field.hpp"
#include "geometry.hpp"
#include "linalg.hpp"

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcg {

struct SolveConfig {
    double tol_rel = 1e-10;
    int max_iter = 0;  // 0: 50 * (grid side in elements)
    // "auto" picks CG for symmetric systems and BiCGStab otherwise.
    std::string solver_kind = "auto";

    void validate() const
    {
        if (!(tol_rel > 0.0 && tol_rel < 1.0)) {
            throw ValidationError("solver tol_rel must lie in (0, 1)");
        }
        if (max_iter < 0) {
            throw ValidationError("solver max_iter must be >= 1 (or 0 for the default)");
        }
        if (solver_kind != "auto" && solver_kind != "cg" && solver_kind != "bicgstab") {
            throw ValidationError("solver_kind must be auto, cg or bicgstab");
        }
    }
};

/// Krylov iteration failed to reach tol_rel. Maps to CLI exit code 2.
struct SolverError : std::runtime_error {
    SolverError(const std::string& what, std::vector<double> history)
        : std::runtime_error(what), residual_history(std::move(history))
    {
    }
    std::vector<double> residual_history;
};

struct SolveStats {
    int iterations = 0;
    double rel_residual = 0.0;
    std::vector<double> residuals;  // relative residual per iteration
    std::vector<double> energies;   // CG only: 1/2 x.Kx - b.x per iteration
};

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

// ---------------------------------------------------------------------------
// Solvers

namespace detail {

inline Eigen::VectorXd inverse_diagonal(const SparseMat& k)
{
    Eigen::VectorXd dinv = k.diagonal();
    for (Eigen::Index i = 0; i < dinv.size(); ++i) {
        dinv[i] = dinv[i] != 0.0 ? 1.0 / dinv[i] : 1.0;
    }
    return dinv;
}

}  // namespace detail

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite K.
inline SolveStats pcg(const SparseMat& k, const Eigen::VectorXd& b, Eigen::VectorXd& x, const SolveConfig& cfg,
                      int max_iter)
{
    SolveStats st;
    const double bn = b.norm();
    if (x.size() != b.size()) {
        x = Eigen::VectorXd::Zero(b.size());
    }
    if (bn == 0.0) {
        x.setZero();
        return st;
    }
    const Eigen::VectorXd dinv = detail::inverse_diagonal(k);
    Eigen::VectorXd r = b - k * x;
    Eigen::VectorXd z = dinv.cwiseProduct(r);
    Eigen::VectorXd p = z;
    Eigen::VectorXd q(b.size());
    double rz = r.dot(z);
    for (int it = 1; it <= max_iter; ++it) {
        q.noalias() = k * p;
        const double pq = p.dot(q);
        if (!(pq > 0.0)) {
            throw SolverError("CG breakdown: matrix not positive definite along search direction", st.residuals);
        }
        const double alpha = rz / pq;
        x += alpha * p;
        r -= alpha * q;
        const double rel = r.norm() / bn;
        st.residuals.push_back(rel);
        st.energies.push_back(-0.5 * x.dot(b + r));
        st.iterations = it;
        st.rel_residual = rel;
        if (rel <= cfg.tol_rel) {
            return st;
        }
        z = dinv.cwiseProduct(r);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    throw SolverError("CG did not reach tol_rel=" + std::to_string(cfg.tol_rel) + " within " +
                          std::to_string(max_iter) + " iterations (last relative residual " +
                          std::to_string(st.rel_residual) + ")",
                      st.residuals);
}

/// Jacobi right-preconditioned BiCGStab for general nonsingular K.
inline SolveStats bicgstab(const SparseMat& k, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                           const SolveConfig& cfg, int max_iter)
{
    SolveStats st;
    const double bn = b.norm();
    if (x.size() != b.size()) {
        x = Eigen::VectorXd::Zero(b.size());
    }
    if (bn == 0.0) {
        x.setZero();
        return st;
    }
    const Eigen::VectorXd dinv = detail::inverse_diagonal(k);
    Eigen::VectorXd r = b - k * x;
    Eigen::VectorXd rhat = r;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd y(b.size()), s(b.size()), zz(b.size()), t(b.size());
    double rho = 1.0, alpha = 1.0, omega = 1.0;
    for (int it = 1; it <= max_iter; ++it) {
        double rho_new = rhat.dot(r);
        if (std::abs(rho_new) < 1e-300 || std::abs(omega) < 1e-300) {
            // Restart with the current residual as shadow vector.
            rhat = r;
            rho_new = rhat.dot(r);
            p.setZero();
            v.setZero();
            rho = alpha = omega = 1.0;
        }
        const double beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p = r + beta * (p - omega * v);
        y = dinv.cwiseProduct(p);
        v.noalias() = k * y;
        const double rv = rhat.dot(v);
        if (rv == 0.0) {
            throw SolverError("BiCGStab breakdown", st.residuals);
        }
        alpha = rho / rv;
        s = r - alpha * v;
        if (s.norm() / bn <= cfg.tol_rel) {
            x += alpha * y;
            r = s;
            st.iterations = it;
            st.rel_residual = r.norm() / bn;
            st.residuals.push_back(st.rel_residual);
            return st;
        }
        zz = dinv.cwiseProduct(s);
        t.noalias() = k * zz;
        const double tt = t.dot(t);
        omega = tt > 0.0 ? t.dot(s) / tt : 0.0;
        x += alpha * y + omega * zz;
        r = s - omega * t;
        const double rel = r.norm() / bn;
        st.residuals.push_back(rel);
        st.iterations = it;
        st.rel_residual = rel;
        if (rel <= cfg.tol_rel) {
            // Confirm with the true residual; recursive residuals can drift.
            const double true_rel = (b - k * x).norm() / bn;
            if (true_rel <= cfg.tol_rel) {
                st.rel_residual = true_rel;
                return st;
            }
            r = b - k * x;
        }
    }
    throw SolverError("BiCGStab did not reach tol_rel=" + std::to_string(cfg.tol_rel) + " within " +
                          std::to_string(max_iter) + " iterations (last relative residual " +
                          std::to_string(st.rel_residual) + ")",
                      st.residuals);
}

// ---------------------------------------------------------------------------
// Mesh

/// Reference-element integrals on the unit element, for d = 1 or 2.
/// Local node a has axis offsets (a & 1, a >> 1).
struct RefElement {
    int d = 2;
    int npe = 4;
    // grad_int[i][j](a, b) = int dN_a/dx_i dN_b/dx_j on the unit element
    std::array<std::array<Eigen::Matrix4d, 2>, 2> grad_int{};
    // dint[i](a) = int dN_a/dx_i on the unit element
    std::array<Eigen::Vector4d, 2> dint{};
    Eigen::Matrix4d mass = Eigen::Matrix4d::Zero();  // int N_a N_b

    static double shape1(int a, double t) { return a ? t : 1.0 - t; }
    static double dshape1(int a) { return a ? 1.0 : -1.0; }

    double shape(int a, double xi, double eta) const
    {
        return d == 1 ? shape1(a, xi) : shape1(a & 1, xi) * shape1(a >> 1, eta);
    }

    /// Reference gradient component i of N_a at (xi, eta).
    double dshape(int a, int i, double xi, double eta) const
    {
        if (d == 1) {
            return dshape1(a);
        }
        return i == 0 ? dshape1(a & 1) * shape1(a >> 1, eta) : shape1(a & 1, xi) * dshape1(a >> 1);
    }

    explicit RefElement(int dim = 2) : d(dim), npe(dim == 1 ? 2 : 4)
    {
        const double g[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
        for (auto& row : grad_int) {
            for (auto& m : row) {
                m.setZero();
            }
        }
        for (auto& v : dint) {
            v.setZero();
        }
        const int ng1 = d == 2 ? 2 : 1;
        for (int gx = 0; gx < 2; ++gx) {
            for (int gy = 0; gy < ng1; ++gy) {
                const double xi = g[gx];
                const double eta = d == 2 ? g[gy] : 0.0;
                const double w = d == 2 ? 0.25 : 0.5;
                for (int a = 0; a < npe; ++a) {
                    for (int b = 0; b < npe; ++b) {
                        mass(a, b) += w * shape(a, xi, eta) * shape(b, xi, eta);
                        for (int i = 0; i < d; ++i) {
                            for (int j = 0; j < d; ++j) {
                                grad_int[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)](a, b) +=
                                    w * dshape(a, i, xi, eta) * dshape(b, j, xi, eta);
                            }
                        }
                    }
                    for (int i = 0; i < d; ++i) {
                        dint[static_cast<std::size_t>(i)](a) += w * dshape(a, i, xi, eta);
                    }
                }
            }
        }
    }
};

inline const RefElement& ref_element(int d)
{
    static const RefElement e1(1);
    static const RefElement e2(2);
    return d == 1 ? e1 : e2;
}

/// Structured Q1 mesh with element size h = 1/refine. Nodes are numbered
/// row-major (axis 0 slowest). On a domain mesh a node is free when every
/// element around it is active; all other nodes touched by active elements
/// carry Dirichlet values. On a torus every node is free.
class Mesh {
public:
    static Mesh on_domain(const CellDomain& dom, int refine = 1)
    {
        if (refine < 1) {
            throw ValidationError("mesh refinement factor must be >= 1");
        }
        Mesh m;
        m.d_ = dom.d;
        m.r_ = refine;
        m.h_ = 1.0 / refine;
        m.periodic_ = false;
        m.cell_lo_ = dom.lo;
        m.ncell_ = dom.n;
        m.ne_ = {dom.n[0] * refine, dom.d == 2 ? dom.n[1] * refine : 1};
        m.nn_ = {m.ne_[0] + 1, dom.d == 2 ? m.ne_[1] + 1 : 1};
        m.active_.assign(static_cast<std::size_t>(m.ne_[0] * m.ne_[1]), 0);
        for (std::int64_t e0 = 0; e0 < m.ne_[0]; ++e0) {
            for (std::int64_t e1 = 0; e1 < m.ne_[1]; ++e1) {
                m.active_[static_cast<std::size_t>(e0 * m.ne_[1] + e1)] =
                    dom.mask[dom.local_index(e0 / refine, dom.d == 2 ? e1 / refine : 0)];
            }
        }
        m.finish();
        return m;
    }

    /// Periodic mesh over cells lo .. lo + side - 1 per axis.
    static Mesh torus(int d, std::int64_t side, int refine = 1, CellIndex lo = {0, 0})
    {
        if (refine < 1 || side < 1) {
            throw ValidationError("torus mesh: side and refinement must be positive");
        }
        Mesh m;
        m.d_ = d;
        m.r_ = refine;
        m.h_ = 1.0 / refine;
        m.periodic_ = true;
        m.cell_lo_ = {lo[0], d == 2 ? lo[1] : 0};
        m.ncell_ = {side, d == 2 ? side : 1};
        m.ne_ = {side * refine, d == 2 ? side * refine : 1};
        m.nn_ = {m.ne_[0], d == 2 ? m.ne_[1] : 1};
        m.active_.assign(static_cast<std::size_t>(m.ne_[0] * m.ne_[1]), 1);
        m.finish();
        return m;
    }

    int dim() const { return d_; }
    int refine() const { return r_; }
    double h() const { return h_; }
    bool periodic() const { return periodic_; }
    int npe() const { return d_ == 1 ? 2 : 4; }
    std::size_t node_count() const { return static_cast<std::size_t>(nn_[0] * nn_[1]); }
    std::size_t elem_count() const { return static_cast<std::size_t>(ne_[0] * ne_[1]); }
    std::int64_t elems_per_side() const { return std::max(ne_[0], d_ == 2 ? ne_[1] : 0); }
    const std::array<std::int64_t, 2>& elem_extent() const { return ne_; }
    const std::array<std::int64_t, 2>& node_extent() const { return nn_; }
    const std::array<std::int64_t, 2>& cell_lo() const { return cell_lo_; }
    const std::array<std::int64_t, 2>& cell_extent() const { return ncell_; }
    bool active(std::size_t e) const { return active_[e] != 0; }
    std::size_t active_count() const { return n_active_; }
    double elem_volume() const { return d_ == 1 ? h_ : h_ * h_; }
    double volume() const { return static_cast<double>(n_active_) * elem_volume(); }

    int dof(std::size_t node) const { return dof_[node]; }
    int dof_count() const { return ndof_; }
    bool used(std::size_t node) const { return used_[node] != 0; }

    std::array<std::size_t, 4> elem_nodes(std::size_t e) const
    {
        const std::int64_t e0 = static_cast<std::int64_t>(e) / ne_[1];
        const std::int64_t e1 = static_cast<std::int64_t>(e) % ne_[1];
        if (d_ == 1) {
            const std::int64_t b = periodic_ ? (e0 + 1) % nn_[0] : e0 + 1;
            return {static_cast<std::size_t>(e0), static_cast<std::size_t>(b), 0, 0};
        }
        const std::int64_t i1 = periodic_ ? (e0 + 1) % nn_[0] : e0 + 1;
        const std::int64_t j1 = periodic_ ? (e1 + 1) % nn_[1] : e1 + 1;
        auto id = [&](std::int64_t i, std::int64_t j) { return static_cast<std::size_t>(i * nn_[1] + j); };
        return {id(e0, e1), id(i1, e1), id(e0, j1), id(i1, j1)};
    }

    /// Cell index carrying element e.
    CellIndex elem_cell(std::size_t e) const
    {
        const std::int64_t e0 = static_cast<std::int64_t>(e) / ne_[1];
        const std::int64_t e1 = static_cast<std::int64_t>(e) % ne_[1];
        return {cell_lo_[0] + e0 / r_, d_ == 2 ? cell_lo_[1] + e1 / r_ : 0};
    }

    /// Lower-left corner of element e in cell coordinates.
    std::array<double, 2> elem_origin(std::size_t e) const
    {
        const std::int64_t e0 = static_cast<std::int64_t>(e) / ne_[1];
        const std::int64_t e1 = static_cast<std::int64_t>(e) % ne_[1];
        return {static_cast<double>(cell_lo_[0]) - 0.5 + static_cast<double>(e0) * h_,
                d_ == 2 ? static_cast<double>(cell_lo_[1]) - 0.5 + static_cast<double>(e1) * h_ : 0.0};
    }

    std::array<double, 2> node_coord(std::size_t n) const
    {
        const std::int64_t i = static_cast<std::int64_t>(n) / nn_[1];
        const std::int64_t j = static_cast<std::int64_t>(n) % nn_[1];
        return {static_cast<double>(cell_lo_[0]) - 0.5 + static_cast<double>(i) * h_,
                d_ == 2 ? static_cast<double>(cell_lo_[1]) - 0.5 + static_cast<double>(j) * h_ : 0.0};
    }

    /// Removes node `n` from the unknowns (used to pin the torus constant).
    void pin(std::size_t n)
    {
        dof_[n] = -1;
        renumber();
    }

private:
    void finish()
    {
        n_active_ = 0;
        for (auto a : active_) {
            n_active_ += a ? 1u : 0u;
        }
        used_.assign(node_count(), 0);
        std::vector<int> touching(node_count(), 0);
        for (std::size_t e = 0; e < elem_count(); ++e) {
            if (!active_[e]) {
                continue;
            }
            const auto nodes = elem_nodes(e);
            for (int a = 0; a < npe(); ++a) {
                used_[nodes[static_cast<std::size_t>(a)]] = 1;
                ++touching[nodes[static_cast<std::size_t>(a)]];
            }
        }
        dof_.assign(node_count(), -1);
        const int full = d_ == 1 ? 2 : 4;
        for (std::size_t n = 0; n < node_count(); ++n) {
            if (!used_[n]) {
                continue;
            }
            if (periodic_) {
                dof_[n] = 0;
                continue;
            }
            // An interior node of the box with all surrounding elements active.
            const std::int64_t i = static_cast<std::int64_t>(n) / nn_[1];
            const std::int64_t j = static_cast<std::int64_t>(n) % nn_[1];
            const bool inner = i > 0 && i < nn_[0] - 1 && (d_ == 1 || (j > 0 && j < nn_[1] - 1));
            if (inner && touching[n] == full) {
                dof_[n] = 0;
            }
        }
        renumber();
    }

    void renumber()
    {
        ndof_ = 0;
        for (auto& v : dof_) {
            if (v >= 0) {
                v = ndof_++;
            }
        }
    }

    int d_ = 2;
    int r_ = 1;
    double h_ = 1.0;
    bool periodic_ = false;
    std::array<std::int64_t, 2> cell_lo_{0, 0};
    std::array<std::int64_t, 2> ncell_{1, 1};
    std::array<std::int64_t, 2> ne_{1, 1};
    std::array<std::int64_t, 2> nn_{1, 1};
    std::vector<std::uint8_t> active_;
    std::vector<std::uint8_t> used_;
    std::vector<int> dof_;
    int ndof_ = 0;
    std::size_t n_active_ = 0;
};

/// Nodal values of a Q1 function on a mesh.
struct DiscreteFunction {
    std::shared_ptr<const Mesh> mesh;
    std::vector<double> values;  // one per mesh node

    /// Value at reference coordinates (xi, eta) of element e.
    double value(std::size_t e, double xi, double eta) const
    {
        const RefElement& ref = ref_element(mesh->dim());
        const auto nodes = mesh->elem_nodes(e);
        double v = 0.0;
        for (int a = 0; a < mesh->npe(); ++a) {
            v += values[nodes[static_cast<std::size_t>(a)]] * ref.shape(a, xi, eta);
        }
        return v;
    }

    /// Physical gradient at reference coordinates of element e.
    SmallVec gradient(std::size_t e, double xi, double eta) const
    {
        const int d = mesh->dim();
        const RefElement& ref = ref_element(d);
        const auto nodes = mesh->elem_nodes(e);
        SmallVec g = SmallVec::Zero(d);
        for (int a = 0; a < mesh->npe(); ++a) {
            for (int i = 0; i < d; ++i) {
                g(i) += values[nodes[static_cast<std::size_t>(a)]] * ref.dshape(a, i, xi, eta);
            }
        }
        return g / mesh->h();
    }

    /// Gradient at the element centre.
    SmallVec center_gradient(std::size_t e) const { return gradient(e, 0.5, 0.5); }
};

// ---------------------------------------------------------------------------
// Assembly

/// Fixed (Dirichlet) nodal values per component; empty when all are zero.
struct LinearSystem {
    SparseMat k;
    Eigen::VectorXd rhs;
    int ncomp = 1;
};

/// Assembles sum_e Ke over free unknowns. `elem(e, Ke, fe)` fills the
/// (ncomp*npe)^2 element matrix and element load (local index c*npe + a).
/// Couplings to fixed nodes are moved to the right-hand side using `fixed`
/// (ncomp * node_count values, component-major) when provided.
template <class ElemFn>
LinearSystem assemble(const Mesh& mesh, int ncomp, ElemFn&& elem, const std::vector<double>* fixed = nullptr)
{
    const int npe = mesh.npe();
    const int nloc = ncomp * npe;
    const int ndof = mesh.dof_count();
    const std::size_t nn = mesh.node_count();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(mesh.active_count() * static_cast<std::size_t>(nloc * nloc));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ncomp) * ndof);
    Eigen::MatrixXd ke(nloc, nloc);
    Eigen::VectorXd fe(nloc);
    std::vector<int> gi(static_cast<std::size_t>(nloc));
    std::vector<std::size_t> gn(static_cast<std::size_t>(nloc));
    for (std::size_t e = 0; e < mesh.elem_count(); ++e) {
        if (!mesh.active(e)) {
            continue;
        }
        ke.setZero();
        fe.setZero();
        elem(e, ke, fe);
        const auto nodes = mesh.elem_nodes(e);
        for (int c = 0; c < ncomp; ++c) {
            for (int a = 0; a < npe; ++a) {
                const std::size_t node = nodes[static_cast<std::size_t>(a)];
                const int dof = mesh.dof(node);
                gi[static_cast<std::size_t>(c * npe + a)] = dof < 0 ? -1 : c * ndof + dof;
                gn[static_cast<std::size_t>(c * npe + a)] = static_cast<std::size_t>(c) * nn + node;
            }
        }
        for (int p = 0; p < nloc; ++p) {
            const int row = gi[static_cast<std::size_t>(p)];
            if (row < 0) {
                continue;
            }
            rhs[row] += fe[p];
            for (int q = 0; q < nloc; ++q) {
                const double v = ke(p, q);
                if (v == 0.0) {
                    continue;
                }
                const int col = gi[static_cast<std::size_t>(q)];
                if (col >= 0) {
                    trip.emplace_back(row, col, v);
                } else if (fixed != nullptr) {
                    rhs[row] -= v * (*fixed)[gn[static_cast<std::size_t>(q)]];
                }
            }
        }
    }
    LinearSystem sys;
    sys.ncomp = ncomp;
    sys.k.resize(ncomp * ndof, ncomp * ndof);
    sys.k.setFromTriplets(trip.begin(), trip.end());
    sys.k.makeCompressed();
    sys.rhs = std::move(rhs);
    return sys;
}

/// Element stiffness sum_ij M_ij int dN_a/dx_i dN_b/dx_j for a constant d x d matrix.
inline void scalar_element_matrix(const RefElement& ref, double h, const SmallMat& m, Eigen::MatrixXd& ke,
                                  int row_off = 0, int col_off = 0, double scale = 1.0)
{
    const int d = ref.d;
    const double f = scale * std::pow(h, d - 2);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const double mij = m(i, j);
            if (mij == 0.0) {
                continue;
            }
            const auto& g = ref.grad_int[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            for (int a = 0; a < ref.npe; ++a) {
                for (int b = 0; b < ref.npe; ++b) {
                    ke(row_off + a, col_off + b) += f * mij * g(a, b);
                }
            }
        }
    }
}

inline int resolve_max_iter(const SolveConfig& cfg, const Mesh& mesh)
{
    return cfg.max_iter > 0 ? cfg.max_iter : static_cast<int>(50 * std::max<std::int64_t>(mesh.elems_per_side(), 1));
}

inline SolveStats solve_system(const LinearSystem& sys, Eigen::VectorXd& x, const SolveConfig& cfg,
                               const Mesh& mesh, bool symmetric)
{
    cfg.validate();
    const int it = resolve_max_iter(cfg, mesh);
    const bool use_cg = cfg.solver_kind == "cg" || (cfg.solver_kind == "auto" && symmetric);
    return use_cg ? pcg(sys.k, sys.rhs, x, cfg, it) : bicgstab(sys.k, sys.rhs, x, cfg, it);
}

/// True if any cell touched by the mesh has a nonzero antisymmetric part.
inline bool mesh_has_k(const CoefficientField& f, const Mesh& mesh)
{
    if (!f.has_antisymmetric_part()) {
        return false;
    }
    for (std::size_t e = 0; e < mesh.elem_count(); ++e) {
        if (mesh.active(e) && f.k_at(mesh.elem_cell(e)).cwiseAbs().maxCoeff() != 0.0) {
            return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// Dirichlet problem

struct DirichletResult {
    DiscreteFunction u;
    SolveStats stats;
};

/// Discrete a-harmonic extension of boundary data g into the domain.
/// Free nodes receive the solve; all other used nodes carry g.
inline DirichletResult solve_dirichlet(const CoefficientField& field, const CellDomain& dom,
                                       const std::function<double(double, double)>& g,
                                       const SolveConfig& cfg = {}, int refine = 1)
{
    if (dom.d != field.dim()) {
        throw ValidationError("solve_dirichlet: domain and field dimensions differ");
    }
    auto mesh = std::make_shared<const Mesh>(Mesh::on_domain(dom, refine));
    const std::size_t nn = mesh->node_count();
    std::vector<double> fixed(nn, 0.0);
    for (std::size_t n = 0; n < nn; ++n) {
        if (mesh->used(n) && mesh->dof(n) < 0) {
            const auto x = mesh->node_coord(n);
            fixed[n] = g(x[0], x[1]);
        }
    }
    const RefElement& ref = ref_element(field.dim());
    const double h = mesh->h();
    auto sys = assemble(
        *mesh, 1,
        [&](std::size_t e, Eigen::MatrixXd& ke, Eigen::VectorXd&) {
            scalar_element_matrix(ref, h, field.a_at(mesh->elem_cell(e)), ke);
        },
        &fixed);
    DirichletResult res;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.rhs.size());
    if (mesh->dof_count() > 0) {
        res.stats = solve_system(sys, x, cfg, *mesh, !mesh_has_k(field, *mesh));
    }
    res.u.mesh = mesh;
    res.u.values = fixed;
    for (std::size_t n = 0; n < nn; ++n) {
        if (mesh->dof(n) >= 0) {
            res.u.values[n] = x[mesh->dof(n)];
        }
    }
    return res;
}

/// Max over free nodes of |int grad N_w . a grad u| relative to the same sum
/// of absolute contributions; a scale-free measure of discrete a-harmonicity.
inline double dirichlet_residual(const CoefficientField& field, const DiscreteFunction& u)
{
    const Mesh& mesh = *u.mesh;
    const RefElement& ref = ref_element(mesh.dim());
    std::vector<double> res(mesh.node_count(), 0.0), scale(mesh.node_count(), 0.0);
    Eigen::MatrixXd ke(mesh.npe(), mesh.npe());
    for (std::size_t e = 0; e < mesh.elem_count(); ++e) {
        if (!mesh.active(e)) {
            continue;
        }
        ke.setZero();
        scalar_element_matrix(ref, mesh.h(), field.a_at(mesh.elem_cell(e)), ke);
        const auto nodes = mesh.elem_nodes(e);
        for (int a = 0; a < mesh.npe(); ++a) {
            for (int b = 0; b < mesh.npe(); ++b) {
                const double t = ke(a, b) * u.values[nodes[static_cast<std::size_t>(b)]];
                res[nodes[static_cast<std::size_t>(a)]] += t;
                scale[nodes[static_cast<std::size_t>(a)]] += std::abs(t);
            }
        }
    }
    double num = 0.0, den = 0.0;
    for (std::size_t n = 0; n < mesh.node_count(); ++n) {
        if (mesh.dof(n) >= 0) {
            num += res[n] * res[n];
            den += scale[n] * scale[n];
        }
    }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

// ---------------------------------------------------------------------------
// Periodic corrector

struct CorrectorResult {
    DiscreteFunction phi;  // periodic, mean zero
    SmallVec flux;         // average of a (e + grad phi)
    SolveStats stats;
};

/// Periodic corrector phi_e on the torus of `periods` field periods per side:
/// int grad w . a (e + grad phi) = 0 for all periodic w, mean(phi) = 0.
inline CorrectorResult solve_periodic_corrector(const CoefficientField& field, const SmallVec& e_dir,
                                                const SolveConfig& cfg = {}, int periods = 1, int refine = 1)
{
    const int d = field.dim();
    if (e_dir.size() != d) {
        throw ValidationError("solve_periodic_corrector: direction has wrong dimension");
    }
    if (periods < 1) {
        throw ValidationError("solve_periodic_corrector: periods must be >= 1");
    }
    Mesh m = Mesh::torus(d, field.period() * periods, refine);
    m.pin(0);
    auto mesh = std::make_shared<const Mesh>(std::move(m));
    const RefElement& ref = ref_element(d);
    const double h = mesh->h();
    const double hd1 = std::pow(h, d - 1);
    auto sys = assemble(*mesh, 1, [&](std::size_t e, Eigen::MatrixXd& ke, Eigen::VectorXd& fe) {
        const SmallMat a = field.a_at(mesh->elem_cell(e));
        scalar_element_matrix(ref, h, a, ke);
        const SmallVec ae = a * e_dir;
        for (int a_ = 0; a_ < ref.npe; ++a_) {
            for (int i = 0; i < d; ++i) {
                fe(a_) -= ae(i) * ref.dint[static_cast<std::size_t>(i)](a_) * hd1;
            }
        }
    });
    CorrectorResult res;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.rhs.size());
    res.stats = solve_system(sys, x, cfg, *mesh, !mesh_has_k(field, *mesh));
    res.phi.mesh = mesh;
    res.phi.values.assign(mesh->node_count(), 0.0);
    double mean = 0.0;
    for (std::size_t n = 0; n < mesh->node_count(); ++n) {
        if (mesh->dof(n) >= 0) {
            res.phi.values[n] = x[mesh->dof(n)];
        }
        mean += res.phi.values[n];
    }
    // On a uniform torus every node carries the same integration weight.
    mean /= static_cast<double>(mesh->node_count());
    for (auto& v : res.phi.values) {
        v -= mean;
    }
    res.flux = SmallVec::Zero(d);
    for (std::size_t e = 0; e < mesh->elem_count(); ++e) {
        // grad phi is affine in each variable, so the centre value is the element mean.
        res.flux += field.a_at(mesh->elem_cell(e)) * (e_dir + res.phi.center_gradient(e)) * mesh->elem_volume();
    }
    res.flux /= mesh->volume();
    return res;
}

/// Homogenized matrix a-bar from the d corrector fluxes: column i = flux(e_i).
inline SmallMat homogenized_from_correctors(const CoefficientField& field, const SolveConfig& cfg = {},
                                            int periods = 1)
{
    const int d = field.dim();
    SmallMat abar(d, d);
    for (int i = 0; i < d; ++i) {
        SmallVec e = SmallVec::Zero(d);
        e(i) = 1.0;
        abar.col(i) = solve_periodic_corrector(field, e, cfg, periods).flux;
    }
    return abar;
}

// ---------------------------------------------------------------------------
// Variational coarse-grained energy

/// Map from X = (grad phi, rot grad psi) components to (potential, derivative, sign):
/// X_0 = d1 phi, X_1 = d2 phi, X_2 = -d2 psi, X_3 = d1 psi.
struct XComponent {
    int comp;
    int deriv;
    double sign;
};

inline const std::array<XComponent, 4>& x_components()
{
    static const std::array<XComponent, 4> t{{{0, 0, 1.0}, {0, 1, 1.0}, {1, 1, -1.0}, {1, 0, 1.0}}};
    return t;
}

/// The variational problem for A(U) on a cell domain: unknown potentials
/// (phi, psi) with zero trace, energy avg 1/2 (X + P).A(x)(X + P).
class AEnergyProblem {
public:
    AEnergyProblem(const CoefficientField& field, const CellDomain& dom, int refine = 1)
        : field_(field), d_(field.dim()), mesh_(std::make_shared<const Mesh>(Mesh::on_domain(dom, refine)))
    {
        if (dom.d != field.dim()) {
            throw ValidationError("A-energy: domain and field dimensions differ");
        }
        const int nd = 2 * d_;
        ncomp_ = d_ == 2 ? 2 : 1;
        const RefElement& ref = ref_element(d_);
        const double h = mesh_->h();
        const double hd = std::pow(h, d_);
        const double hd1 = std::pow(h, d_ - 1);
        const double hd2 = std::pow(h, d_ - 2);
        const int npe = mesh_->npe();
        s_total_ = BigMat::Zero(nd, nd);
        // Linear terms per basis vector E_beta, assembled alongside K.
        loads_.assign(static_cast<std::size_t>(nd),
                      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ncomp_) * mesh_->dof_count()));
        const auto& xc = x_components();
        const int nx = d_ == 2 ? 4 : 1;
        sys_ = assemble(*mesh_, ncomp_, [&](std::size_t e, Eigen::MatrixXd& ke, Eigen::VectorXd&) {
            const BigMat a = field_.big_a(field_.flat_index(mesh_->elem_cell(e)));
            s_total_ += a * hd;
            if (a_first_.size() == 0) {
                a_first_ = a;
                a_dev_ = BigMat::Zero(nd, nd);
            }
            a_dev_ += (a - a_first_) * hd;
            for (int al = 0; al < nx; ++al) {
                for (int be = 0; be < nx; ++be) {
                    const double v = a(al, be) * xc[static_cast<std::size_t>(al)].sign *
                                     xc[static_cast<std::size_t>(be)].sign * hd2;
                    if (v == 0.0) {
                        continue;
                    }
                    const auto& g = ref.grad_int[static_cast<std::size_t>(xc[static_cast<std::size_t>(al)].deriv)]
                                                [static_cast<std::size_t>(xc[static_cast<std::size_t>(be)].deriv)];
                    const int ro = xc[static_cast<std::size_t>(al)].comp * npe;
                    const int co = xc[static_cast<std::size_t>(be)].comp * npe;
                    for (int p = 0; p < npe; ++p) {
                        for (int q = 0; q < npe; ++q) {
                            ke(ro + p, co + q) += v * g(p, q);
                        }
                    }
                }
            }
            // Loads b_beta[(comp alpha, node a)] = sign_alpha A_{alpha beta} int d_alpha N_a.
            const auto nodes = mesh_->elem_nodes(e);
            for (int al = 0; al < nx; ++al) {
                const auto& c = xc[static_cast<std::size_t>(al)];
                for (int p = 0; p < npe; ++p) {
                    const int dof = mesh_->dof(nodes[static_cast<std::size_t>(p)]);
                    if (dof < 0) {
                        continue;
                    }
                    const double dn = c.sign * ref.dint[static_cast<std::size_t>(c.deriv)](p) * hd1;
                    for (int be = 0; be < nd; ++be) {
                        loads_[static_cast<std::size_t>(be)][c.comp * mesh_->dof_count() + dof] += a(al, be) * dn;
                    }
                }
            }
        });
        symmetric_ = true;
    }

    const Mesh& mesh() const { return *mesh_; }
    std::shared_ptr<const Mesh> mesh_ptr() const { return mesh_; }
    double volume() const { return mesh_->volume(); }
    const BigMat& integrated_pointwise_a() const { return s_total_; }
    /// Mean of the pointwise A, shifted by the first cell so that a constant
    /// field gets its matrix back without summation roundoff.
    BigMat mean_pointwise_a() const { return a_first_ + a_dev_ / volume(); }
    bool has_unknowns() const { return mesh_->dof_count() > 0; }

    /// b(P) = sum_beta P_beta b_beta.
    Eigen::VectorXd load(const BigVec& p) const
    {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(sys_.rhs.size());
        for (int i = 0; i < p.size(); ++i) {
            if (p(i) != 0.0) {
                b += p(i) * loads_[static_cast<std::size_t>(i)];
            }
        }
        return b;
    }

    /// Minimizer coefficients x with K x = -b(P).
    Eigen::VectorXd solve(const BigVec& p, const SolveConfig& cfg, SolveStats* stats = nullptr) const
    {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(sys_.rhs.size());
        if (!has_unknowns()) {
            return x;
        }
        LinearSystem s{sys_.k, -load(p), sys_.ncomp};
        SolveStats st = solve_system(s, x, cfg, *mesh_, symmetric_);
        if (stats) {
            *stats = std::move(st);
        }
        return x;
    }

    /// Volume-normalized energy at coefficients x: avg 1/2 (X+P).A(X+P).
    double energy(const BigVec& p, const Eigen::VectorXd& x) const
    {
        const Eigen::VectorXd b = load(p);
        double e = 0.5 * p.dot(s_total_ * p) + b.dot(x);
        if (has_unknowns()) {
            e += 0.5 * x.dot(sys_.k * x);
        }
        return e / volume();
    }

    /// Splits solver coefficients into nodal potentials (phi, psi).
    std::vector<DiscreteFunction> potentials(const Eigen::VectorXd& x) const
    {
        std::vector<DiscreteFunction> out(static_cast<std::size_t>(ncomp_));
        for (int c = 0; c < ncomp_; ++c) {
            auto& f = out[static_cast<std::size_t>(c)];
            f.mesh = mesh_;
            f.values.assign(mesh_->node_count(), 0.0);
            for (std::size_t n = 0; n < mesh_->node_count(); ++n) {
                if (mesh_->dof(n) >= 0) {
                    f.values[n] = x[c * mesh_->dof_count() + mesh_->dof(n)];
                }
            }
        }
        return out;
    }

    const LinearSystem& system() const { return sys_; }
    const std::vector<Eigen::VectorXd>& loads() const { return loads_; }

private:
    const CoefficientField& field_;
    int d_;
    int ncomp_ = 1;
    std::shared_ptr<const Mesh> mesh_;
    LinearSystem sys_;
    std::vector<Eigen::VectorXd> loads_;
    BigMat s_total_;
    BigMat a_first_;
    BigMat a_dev_;
    bool symmetric_ = true;
};

struct MinimizeResult {
    double value = 0.0;
    std::vector<DiscreteFunction> potentials;  // phi (and psi when d = 2)
    SolveStats stats;
    double optimality_residual = 0.0;  // |K x + b| / |b|
};

inline void check_min_extent(const CellDomain& dom)
{
    if (dom.n[0] < 2 || (dom.d == 2 && dom.n[1] < 2)) {
        throw ValidationError("minimize_A_energy: domain needs at least 2 cells per side");
    }
}

/// 1/2 P.A(U)P as the minimum of the discrete variational problem.
inline MinimizeResult minimize_A_energy(const CoefficientField& field, const CellDomain& dom, const BigVec& p,
                                        const SolveConfig& cfg = {}, int refine = 1)
{
    check_min_extent(dom);
    if (p.size() != 2 * field.dim()) {
        throw ValidationError("minimize_A_energy: P must have 2d entries");
    }
    AEnergyProblem prob(field, dom, refine);
    MinimizeResult r;
    const Eigen::VectorXd x = prob.solve(p, cfg, &r.stats);
    r.value = prob.energy(p, x);
    r.potentials = prob.potentials(x);
    const Eigen::VectorXd b = prob.load(p);
    if (prob.has_unknowns() && b.norm() > 0.0) {
        r.optimality_residual = (prob.system().k * x + b).norm() / b.norm();
    }
    return r;
}

}  // namespace hcg
