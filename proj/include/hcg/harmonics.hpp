#pragma once

// Polynomials in d <= 2 variables, harmonic bases for constant symmetric
// coefficients, homogeneous parts, least-squares projections and the ball /
// circle quadratures used to test the spherical-harmonic identities.

#include "linalg.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace hcg {

/// Dense polynomial sum c(i, j) x^i y^j over i + j <= degree (j = 0 when d = 1).
template <class T>
struct PolyT {
    int d = 2;
    int degree = 0;
    std::vector<T> c;

    PolyT() : c(1, T(0)) {}
    PolyT(int dim, int deg) : d(dim), degree(deg), c(static_cast<std::size_t>((deg + 1) * (deg + 1)), T(0))
    {
        if (dim != 1 && dim != 2) {
            throw ValidationError("polynomial: dimension must be 1 or 2");
        }
        if (deg < 0) {
            throw ValidationError("polynomial: negative degree");
        }
    }

    T& at(int i, int j) { return c[static_cast<std::size_t>(i * (degree + 1) + j)]; }
    const T& at(int i, int j) const { return c[static_cast<std::size_t>(i * (degree + 1) + j)]; }

    /// Coefficient with out-of-range exponents read as zero.
    T get(int i, int j) const
    {
        if (i < 0 || j < 0 || i + j > degree || (d == 1 && j > 0)) {
            return T(0);
        }
        return at(i, j);
    }

    static PolyT monomial(int dim, int i, int j, T coef = T(1))
    {
        PolyT p(dim, i + j);
        p.at(i, j) = coef;
        return p;
    }

    /// Largest total degree with a nonzero coefficient (0 for the zero polynomial).
    int actual_degree() const
    {
        int deg = 0;
        for (int i = 0; i <= degree; ++i) {
            for (int j = 0; i + j <= degree; ++j) {
                if (at(i, j) != T(0)) {
                    deg = std::max(deg, i + j);
                }
            }
        }
        return deg;
    }

    PolyT resized(int deg) const
    {
        PolyT p(d, deg);
        for (int i = 0; i <= std::min(degree, deg); ++i) {
            for (int j = 0; i + j <= std::min(degree, deg); ++j) {
                p.at(i, j) = at(i, j);
            }
        }
        return p;
    }

    PolyT operator+(const PolyT& o) const
    {
        PolyT p(d, std::max(degree, o.degree));
        for (int i = 0; i <= p.degree; ++i) {
            for (int j = 0; i + j <= p.degree; ++j) {
                p.at(i, j) = get(i, j) + o.get(i, j);
            }
        }
        return p;
    }

    PolyT operator-(const PolyT& o) const { return *this + o * T(-1); }

    PolyT operator*(T s) const
    {
        PolyT p = *this;
        for (auto& v : p.c) {
            v *= s;
        }
        return p;
    }

    PolyT operator*(const PolyT& o) const
    {
        PolyT p(d, degree + o.degree);
        for (int i = 0; i <= degree; ++i) {
            for (int j = 0; i + j <= degree; ++j) {
                if (at(i, j) == T(0)) {
                    continue;
                }
                for (int k = 0; k <= o.degree; ++k) {
                    for (int l = 0; k + l <= o.degree; ++l) {
                        p.at(i + k, j + l) += at(i, j) * o.at(k, l);
                    }
                }
            }
        }
        return p;
    }

    /// Partial derivative along axis (0 or 1).
    PolyT derivative(int axis) const
    {
        PolyT p(d, std::max(degree - 1, 0));
        for (int i = 0; i <= degree; ++i) {
            for (int j = 0; i + j <= degree; ++j) {
                if (axis == 0 && i > 0) {
                    p.at(i - 1, j) += at(i, j) * T(i);
                } else if (axis == 1 && j > 0) {
                    p.at(i, j - 1) += at(i, j) * T(j);
                }
            }
        }
        return p;
    }

    PolyT laplacian() const
    {
        PolyT l = derivative(0).derivative(0);
        if (d == 2) {
            l = l + derivative(1).derivative(1);
        }
        return l;
    }

    bool is_zero() const
    {
        for (const auto& v : c) {
            if (v != T(0)) {
                return false;
            }
        }
        return true;
    }
};

using Poly = PolyT<double>;
using IntPoly = PolyT<std::int64_t>;

inline Poly to_real(const IntPoly& p)
{
    Poly q(p.d, p.degree);
    for (std::size_t i = 0; i < p.c.size(); ++i) {
        q.c[i] = static_cast<double>(p.c[i]);
    }
    return q;
}

inline double evaluate(const Poly& p, double x, double y = 0.0)
{
    // Horner in x with inner Horner in y.
    double acc = 0.0;
    for (int i = p.degree; i >= 0; --i) {
        double inner = 0.0;
        for (int j = p.degree - i; j >= 0; --j) {
            inner = inner * y + p.at(i, j);
        }
        acc = acc * x + inner;
    }
    return acc;
}

inline SmallVec evaluate_gradient(const Poly& p, double x, double y = 0.0)
{
    SmallVec g(p.d);
    g(0) = evaluate(p.derivative(0), x, y);
    if (p.d == 2) {
        g(1) = evaluate(p.derivative(1), x, y);
    }
    return g;
}

/// pi_l p: the part of total degree exactly l.
template <class T>
PolyT<T> homogeneous_part(const PolyT<T>& p, int l)
{
    if (l < 0) {
        throw ValidationError("homogeneous_part: degree must be non-negative");
    }
    PolyT<T> q(p.d, std::max(l, 0));
    if (l > p.degree) {
        return q;
    }
    for (int i = 0; i <= l; ++i) {
        const int j = l - i;
        if (p.d == 1 && j > 0) {
            continue;
        }
        q.at(i, j) = p.at(i, j);
    }
    return q;
}

/// p(M x) for a d x d matrix M.
inline Poly compose_linear(const Poly& p, const SmallMat& m)
{
    const int d = p.d;
    Poly lx(d, 1), ly(d, 1);
    lx.at(1, 0) = m(0, 0);
    if (d == 2) {
        lx.at(0, 1) = m(0, 1);
        ly.at(1, 0) = m(1, 0);
        ly.at(0, 1) = m(1, 1);
    }
    Poly out(d, p.degree);
    std::vector<Poly> xp{Poly::monomial(d, 0, 0)}, yp{Poly::monomial(d, 0, 0)};
    for (int k = 1; k <= p.degree; ++k) {
        xp.push_back(xp.back() * lx);
        if (d == 2) {
            yp.push_back(yp.back() * ly);
        }
    }
    for (int i = 0; i <= p.degree; ++i) {
        for (int j = 0; i + j <= p.degree; ++j) {
            if (p.at(i, j) == 0.0) {
                continue;
            }
            const Poly term = d == 2 ? xp[static_cast<std::size_t>(i)] * yp[static_cast<std::size_t>(j)]
                                     : xp[static_cast<std::size_t>(i)];
            out = out + term.resized(p.degree) * p.at(i, j);
        }
    }
    return out.resized(p.degree);
}

/// div(S grad p) for constant symmetric S.
inline Poly weighted_laplacian(const Poly& p, const SmallMat& s)
{
    Poly out(p.d, std::max(p.degree - 2, 0));
    for (int i = 0; i < p.d; ++i) {
        for (int j = 0; j < p.d; ++j) {
            if (s(i, j) != 0.0) {
                out = out + p.derivative(i).derivative(j) * s(i, j);
            }
        }
    }
    return out;
}

inline std::int64_t binomial(std::int64_t n, std::int64_t k)
{
    if (k < 0 || n < 0 || k > n) {
        return 0;
    }
    std::int64_t r = 1;
    for (std::int64_t i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
    }
    return r;
}

/// C(d+k-1, k) + C(d+k-2, k-1), with C(., -1) = 0.
inline std::int64_t dim_formula(int d, int k)
{
    if (d < 1 || k < 0) {
        throw ValidationError("dim_formula: need d >= 1 and k >= 0");
    }
    return binomial(d + k - 1, k) + (k >= 1 ? binomial(d + k - 2, k - 1) : 0);
}

/// Euclidean harmonic polynomials of degree exactly j with integer
/// coefficients: Re and Im of (x + i y)^j in d = 2; {1}, {x} in d = 1.
inline std::vector<IntPoly> euclidean_harmonics_of_degree(int d, int j)
{
    std::vector<IntPoly> out;
    if (d == 1) {
        if (j <= 1) {
            out.push_back(IntPoly::monomial(1, j, 0));
        }
        return out;
    }
    if (j == 0) {
        out.push_back(IntPoly::monomial(2, 0, 0));
        return out;
    }
    IntPoly re(2, j), im(2, j);
    // (x + i y)^j = sum_l C(j, l) x^{j-l} (i y)^l, i^l cycles 1, i, -1, -i.
    for (int l = 0; l <= j; ++l) {
        const std::int64_t b = binomial(j, l);
        switch (l % 4) {
        case 0:
            re.at(j - l, l) += b;
            break;
        case 1:
            im.at(j - l, l) += b;
            break;
        case 2:
            re.at(j - l, l) -= b;
            break;
        default:
            im.at(j - l, l) -= b;
            break;
        }
    }
    out.push_back(re);
    out.push_back(im);
    return out;
}

struct HarmonicBasis {
    int d = 2;
    int k = 0;
    SmallMat s_bar;
    SmallMat map;                   // M = lambda_bar^{-1/2} s_bar^{1/2}
    std::vector<IntPoly> euclidean;  // v_i, Laplace-harmonic, integer coefficients
    std::vector<Poly> polys;         // p_i(x) = v_i(M^{-1} x)
    std::vector<int> degrees;

    std::size_t size() const { return polys.size(); }
};

/// Basis of s_bar-harmonic polynomials of degree <= k, built from integer
/// Euclidean harmonics by the change of variables x -> M^{-1} x.
inline HarmonicBasis abar_harmonic_basis(int d, int k, const SmallMat& s_bar)
{
    if (d != 1 && d != 2) {
        throw ValidationError("harmonic basis: dimension must be 1 or 2");
    }
    if (k < 0 || k > 6) {
        throw ValidationError("harmonic basis: degree must lie in 0..6");
    }
    if (s_bar.rows() != d || s_bar.cols() != d) {
        throw ValidationError("harmonic basis: s_bar shape does not match dimension");
    }
    if (linalg::max_asymmetry(s_bar) > 1e-12 * s_bar.cwiseAbs().maxCoeff() || !(linalg::min_eig(s_bar) > 0.0)) {
        throw ValidationError("harmonic basis: s_bar must be symmetric positive definite");
    }
    HarmonicBasis b;
    b.d = d;
    b.k = k;
    b.s_bar = linalg::symmetrize(s_bar);
    b.map = linalg::sym_sqrt(b.s_bar) / std::sqrt(linalg::min_eig(b.s_bar));
    const SmallMat minv = b.map.inverse();
    for (int j = 0; j <= k; ++j) {
        for (auto& v : euclidean_harmonics_of_degree(d, j)) {
            b.euclidean.push_back(v);
            b.polys.push_back(compose_linear(to_real(v), minv));
            b.degrees.push_back(j);
        }
    }
    return b;
}

/// Exact check that every Euclidean generator has identically zero Laplacian.
inline bool euclidean_generators_harmonic(const HarmonicBasis& b)
{
    for (const auto& v : b.euclidean) {
        if (!v.laplacian().is_zero()) {
            return false;
        }
    }
    return true;
}

/// Largest |coefficient| of div(s_bar grad p) relative to the largest |coefficient| of p.
inline double max_weighted_laplacian_defect(const HarmonicBasis& b)
{
    double worst = 0.0;
    for (const auto& p : b.polys) {
        double scale = 0.0;
        for (double c : p.c) {
            scale = std::max(scale, std::abs(c));
        }
        const Poly l = weighted_laplacian(p, b.s_bar);
        for (double c : l.c) {
            worst = std::max(worst, std::abs(c) / std::max(scale, 1e-300));
        }
    }
    return worst * std::max(1.0, b.s_bar.cwiseAbs().maxCoeff());
}

// ---------------------------------------------------------------------------
// Quadrature and projection

struct Quadrature {
    int d = 2;
    std::vector<std::array<double, 2>> x;
    std::vector<double> w;

    double volume() const
    {
        double v = 0.0;
        for (double wi : w) {
            v += wi;
        }
        return v;
    }
};

/// Euclidean ball of radius r: Gauss-Legendre in the radius (weight r dr)
/// times the trapezoid rule in the angle. Exact for polynomials of degree
/// below min(2 n_r - 1, n_theta).
inline Quadrature ball_quadrature(int d, double r, int n_r = 8, int n_theta = 48)
{
    Quadrature q;
    q.d = d;
    if (d == 1) {
        // Interval (-r, r): Gauss-Legendre on both halves.
        std::vector<double> gx, gw;
        const double a = std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
        const double b = std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
        const double wa = (18.0 + std::sqrt(30.0)) / 36.0;
        const double wb = (18.0 - std::sqrt(30.0)) / 36.0;
        gx = {-b, -a, a, b};
        gw = {wb, wa, wa, wb};
        for (int s = -1; s <= 1; s += 2) {
            for (std::size_t i = 0; i < 4; ++i) {
                q.x.push_back({s * 0.5 * r * (1.0 + gx[i]), 0.0});
                q.w.push_back(0.5 * r * gw[i]);
            }
        }
        return q;
    }
    // Gauss-Legendre nodes on [-1, 1] by Newton iteration on P_n.
    std::vector<double> gx(static_cast<std::size_t>(n_r)), gw(static_cast<std::size_t>(n_r));
    for (int i = 0; i < n_r; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n_r + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n_r; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n_r * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) {
                break;
            }
        }
        gx[static_cast<std::size_t>(i)] = z;
        gw[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    for (int i = 0; i < n_r; ++i) {
        const double rho = 0.5 * r * (1.0 + gx[static_cast<std::size_t>(i)]);
        const double wr = 0.5 * r * gw[static_cast<std::size_t>(i)] * rho;
        for (int t = 0; t < n_theta; ++t) {
            const double th = 2.0 * std::numbers::pi * t / n_theta;
            q.x.push_back({rho * std::cos(th), rho * std::sin(th)});
            q.w.push_back(wr * 2.0 * std::numbers::pi / n_theta);
        }
    }
    return q;
}

/// Unit circle (d = 2) with the trapezoid rule; weights sum to 2 pi.
inline Quadrature circle_quadrature(int n_theta = 64)
{
    Quadrature q;
    q.d = 2;
    for (int t = 0; t < n_theta; ++t) {
        const double th = 2.0 * std::numbers::pi * t / n_theta;
        q.x.push_back({std::cos(th), std::sin(th)});
        q.w.push_back(2.0 * std::numbers::pi / n_theta);
    }
    return q;
}

/// Volume-normalized inner product of two polynomials under a quadrature.
inline double quad_inner(const Quadrature& q, const Poly& a, const Poly& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < q.x.size(); ++i) {
        s += q.w[i] * evaluate(a, q.x[i][0], q.x[i][1]) * evaluate(b, q.x[i][0], q.x[i][1]);
    }
    return s / q.volume();
}

struct Projection {
    std::vector<double> coef;  // along basis.polys
    Poly best;
    double residual = 0.0;     // volume-normalized ||f - best||
    double best_norm = 0.0;    // ||best||
    int rank = 0;
};

/// Least-squares projection of sampled values f(x_i) onto span(basis) with
/// weights w_i, via column-pivoted QR of the weighted design matrix.
inline Projection project_onto_basis(const std::vector<std::array<double, 2>>& x, const std::vector<double>& w,
                                     const std::vector<double>& f, const HarmonicBasis& basis)
{
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto nb = static_cast<Eigen::Index>(basis.size());
    if (n == 0 || static_cast<std::size_t>(n) != w.size() || static_cast<std::size_t>(n) != f.size()) {
        throw ValidationError("projection: sample arrays are empty or inconsistent");
    }
    double vol = 0.0;
    for (double wi : w) {
        vol += wi;
    }
    // Scale columns by their norm so the QR sees a well-balanced design.
    Eigen::MatrixXd a(n, nb);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sw = std::sqrt(w[static_cast<std::size_t>(i)] / vol);
        for (Eigen::Index j = 0; j < nb; ++j) {
            a(i, j) = sw * evaluate(basis.polys[static_cast<std::size_t>(j)], x[static_cast<std::size_t>(i)][0],
                                    x[static_cast<std::size_t>(i)][1]);
        }
        b(i) = sw * f[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd colscale(nb);
    for (Eigen::Index j = 0; j < nb; ++j) {
        colscale(j) = a.col(j).norm();
        if (colscale(j) > 0.0) {
            a.col(j) /= colscale(j);
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-12);
    Projection p;
    p.rank = static_cast<int>(qr.rank());
    if (p.rank < nb) {
        throw ValidationError("projection: basis Gram matrix is numerically singular on this region (rank " +
                              std::to_string(p.rank) + " of " + std::to_string(nb) + ")");
    }
    Eigen::VectorXd c = qr.solve(b);
    for (Eigen::Index j = 0; j < nb; ++j) {
        c(j) = colscale(j) > 0.0 ? c(j) / colscale(j) : 0.0;
    }
    p.coef.assign(c.data(), c.data() + c.size());
    int maxdeg = 0;
    for (const auto& q : basis.polys) {
        maxdeg = std::max(maxdeg, q.degree);
    }
    p.best = Poly(basis.d, maxdeg);
    for (Eigen::Index j = 0; j < nb; ++j) {
        p.best = p.best + basis.polys[static_cast<std::size_t>(j)].resized(maxdeg) * c(j);
    }
    double r2 = 0.0, n2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double bv = evaluate(p.best, x[static_cast<std::size_t>(i)][0], x[static_cast<std::size_t>(i)][1]);
        const double r = f[static_cast<std::size_t>(i)] - bv;
        r2 += w[static_cast<std::size_t>(i)] * r * r;
        n2 += w[static_cast<std::size_t>(i)] * bv * bv;
    }
    p.residual = std::sqrt(r2 / vol);
    p.best_norm = std::sqrt(n2 / vol);
    return p;
}

}  // namespace hcg
