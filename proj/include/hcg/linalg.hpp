#pragma once

// Small dense matrix helpers shared by every module. Dimensions never exceed
// d = 2 for cell matrices and 2d = 4 for the stacked coarse-grained matrices,
// so the aliases below use fixed maximum sizes and never touch the heap.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hcg {

using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 2, 2>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 2, 1>;
using BigMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 4, 4>;
using BigVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 4, 1>;

/// Raised for invalid parameters or preconditions. Maps to CLI exit code 1.
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

namespace linalg {

template <class M>
double max_asymmetry(const M& a)
{
    return (a - a.transpose()).cwiseAbs().maxCoeff();
}

template <class M>
double max_antisymmetry_defect(const M& a)
{
    return (a + a.transpose()).cwiseAbs().maxCoeff();
}

template <class M>
M symmetrize(const M& a)
{
    return 0.5 * (a + a.transpose());
}

/// Eigenvalues of the symmetric part, ascending.
template <class M>
Eigen::VectorXd sym_eigenvalues(const M& a)
{
    Eigen::MatrixXd s = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

template <class M>
double min_eig(const M& a)
{
    return sym_eigenvalues(a).minCoeff();
}

template <class M>
double max_eig(const M& a)
{
    return sym_eigenvalues(a).maxCoeff();
}

/// Applies f to the eigenvalues of a symmetric matrix.
template <class M, class F>
M sym_apply(const M& a, F f)
{
    Eigen::MatrixXd s = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    Eigen::VectorXd lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        lam[i] = f(lam[i]);
    }
    Eigen::MatrixXd r = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    return M(r);
}

template <class M>
M sym_sqrt(const M& a)
{
    return sym_apply(a, [](double x) {
        if (x < 0.0) {
            throw ValidationError("sym_sqrt: matrix is not positive semidefinite");
        }
        return std::sqrt(x);
    });
}

template <class M>
M sym_inv_sqrt(const M& a)
{
    return sym_apply(a, [](double x) {
        if (!(x > 0.0)) {
            throw ValidationError("sym_inv_sqrt: matrix is not positive definite");
        }
        return 1.0 / std::sqrt(x);
    });
}

/// (A)_+ : eigenvalues clamped at zero from below.
template <class M>
M positive_part(const M& a)
{
    return sym_apply(a, [](double x) { return std::max(x, 0.0); });
}

/// Spectral norm of a symmetric matrix.
template <class M>
double sym_spectral_norm(const M& a)
{
    auto ev = sym_eigenvalues(a);
    return std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
}

/// Matrix geometric mean a # b = a^{1/2} (a^{-1/2} b a^{-1/2})^{1/2} a^{1/2}.
template <class M>
M geometric_mean(const M& a, const M& b)
{
    M ah = sym_sqrt(a);
    M aih = sym_inv_sqrt(a);
    M inner = aih * b * aih;
    return M(ah * sym_sqrt(M(symmetrize(inner))) * ah);
}

}  // namespace linalg

/// Pointwise 2d x 2d matrix assembled from the symmetric part s and the
/// antisymmetric part k of a cell coefficient:
///   [ s + k^T s^{-1} k   -k^T s^{-1} ]
///   [   -s^{-1} k          s^{-1}    ]
inline BigMat pointwise_big_a(const SmallMat& s, const SmallMat& k)
{
    const Eigen::Index d = s.rows();
    SmallMat sinv = s.inverse();
    BigMat a(2 * d, 2 * d);
    a.topLeftCorner(d, d) = s + k.transpose() * sinv * k;
    a.topRightCorner(d, d) = -k.transpose() * sinv;
    a.bottomLeftCorner(d, d) = -sinv * k;
    a.bottomRightCorner(d, d) = sinv;
    return a;
}

/// Same block layout with a distinct lower-right block s_*^{-1}.
inline BigMat big_a_from_blocks(const SmallMat& s, const SmallMat& s_star, const SmallMat& k)
{
    const Eigen::Index d = s.rows();
    SmallMat ssinv = s_star.inverse();
    BigMat a(2 * d, 2 * d);
    a.topLeftCorner(d, d) = s + k.transpose() * ssinv * k;
    a.topRightCorner(d, d) = -k.transpose() * ssinv;
    a.bottomLeftCorner(d, d) = -ssinv * k;
    a.bottomRightCorner(d, d) = ssinv;
    return a;
}

inline SmallMat rotation_2d()
{
    SmallMat r(2, 2);
    r << 0.0, 1.0, -1.0, 0.0;
    return r;
}

}  // namespace hcg
