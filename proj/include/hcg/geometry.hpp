#pragma once

// Triadic and adapted cubes realized as sets of whole unit cells.
//
// The adapted matrix q0 has entries in 3^{-k0} Z, so we keep Q = 3^{k0} q0 as
// an integer matrix and express adapted-cube centres in units of 3^{-k0}.
// Cube membership of a cell centre is then decided in exact integer
// arithmetic, which makes partitions and volume counts reproducible.

#include "field.hpp"
#include "linalg.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace hcg {

/// A finite set of cells stored as a bounding box plus membership mask.
struct CellDomain {
    int d = 2;
    std::array<std::int64_t, 2> lo{0, 0};  // first cell index per axis
    std::array<std::int64_t, 2> n{1, 1};   // box extent in cells (n[1] = 1 when d = 1)
    std::vector<std::uint8_t> mask;        // row-major over the box, axis 0 slowest

    std::size_t box_size() const { return static_cast<std::size_t>(n[0] * n[1]); }

    std::size_t local_index(std::int64_t i0, std::int64_t i1) const
    {
        return static_cast<std::size_t>(i0 * n[1] + i1);
    }

    bool contains(const CellIndex& c) const
    {
        const std::int64_t i0 = c[0] - lo[0];
        const std::int64_t i1 = d == 2 ? c[1] - lo[1] : 0;
        if (i0 < 0 || i0 >= n[0] || i1 < 0 || i1 >= n[1]) {
            return false;
        }
        return mask[local_index(i0, i1)] != 0;
    }

    std::size_t count() const
    {
        std::size_t c = 0;
        for (auto m : mask) {
            c += m ? 1u : 0u;
        }
        return c;
    }

    bool is_box() const
    {
        for (auto m : mask) {
            if (!m) {
                return false;
            }
        }
        return true;
    }

    /// Member cells in row-major box order.
    std::vector<CellIndex> cells() const
    {
        std::vector<CellIndex> out;
        for (std::int64_t i0 = 0; i0 < n[0]; ++i0) {
            for (std::int64_t i1 = 0; i1 < n[1]; ++i1) {
                if (mask[local_index(i0, i1)]) {
                    out.push_back({lo[0] + i0, d == 2 ? lo[1] + i1 : 0});
                }
            }
        }
        return out;
    }

    /// Shrinks the bounding box to the member cells.
    void trim()
    {
        std::int64_t a0 = n[0], b0 = -1, a1 = n[1], b1 = -1;
        for (std::int64_t i0 = 0; i0 < n[0]; ++i0) {
            for (std::int64_t i1 = 0; i1 < n[1]; ++i1) {
                if (mask[local_index(i0, i1)]) {
                    a0 = std::min(a0, i0);
                    b0 = std::max(b0, i0);
                    a1 = std::min(a1, i1);
                    b1 = std::max(b1, i1);
                }
            }
        }
        if (b0 < 0) {
            throw ValidationError("cell domain is empty");
        }
        CellDomain t;
        t.d = d;
        t.lo = {lo[0] + a0, d == 2 ? lo[1] + a1 : 0};
        t.n = {b0 - a0 + 1, b1 - a1 + 1};
        t.mask.assign(t.box_size(), 0);
        for (std::int64_t i0 = a0; i0 <= b0; ++i0) {
            for (std::int64_t i1 = a1; i1 <= b1; ++i1) {
                t.mask[t.local_index(i0 - a0, i1 - a1)] = mask[local_index(i0, i1)];
            }
        }
        *this = std::move(t);
    }
};

/// Full box of cells lo .. lo + n - 1.
inline CellDomain box_domain(int d, std::array<std::int64_t, 2> lo, std::array<std::int64_t, 2> n)
{
    CellDomain dom;
    dom.d = d;
    dom.lo = {lo[0], d == 2 ? lo[1] : 0};
    dom.n = {n[0], d == 2 ? n[1] : 1};
    if (dom.n[0] < 1 || dom.n[1] < 1) {
        throw ValidationError("box_domain: extent must be positive");
    }
    dom.mask.assign(dom.box_size(), 1);
    return dom;
}

/// Triadic cube of level n centred at cell `center` (which should lie in 3^n Z^d).
inline CellDomain triadic_cube(int d, int level, CellIndex center = {0, 0})
{
    if (level < 0) {
        throw ValidationError("triadic_cube: level must be non-negative");
    }
    const std::int64_t side = ipow(3, level);
    const std::int64_t h = (side - 1) / 2;
    return box_domain(d, {center[0] - h, center[1] - h}, {side, side});
}

struct AdaptedGeometry {
    int d = 2;
    int k0 = 4;
    Eigen::Matrix<std::int64_t, 2, 2> Q = Eigen::Matrix<std::int64_t, 2, 2>::Identity();  // 3^{k0} q0
    SmallMat q0;
    SmallMat s_bar;
    double lambda_bar = 1.0;
    double Lambda_bar = 1.0;
    double Pi_sbar = 1.0;

    std::int64_t scale() const { return ipow(3, k0); }

    bool is_identity() const
    {
        const std::int64_t s = scale();
        if (d == 1) {
            return Q(0, 0) == s;
        }
        return Q(0, 0) == s && Q(1, 1) == s && Q(0, 1) == 0 && Q(1, 0) == 0;
    }

    /// det Q (positive by construction).
    __int128 det_q() const
    {
        if (d == 1) {
            return Q(0, 0);
        }
        return static_cast<__int128>(Q(0, 0)) * Q(1, 1) - static_cast<__int128>(Q(0, 1)) * Q(1, 0);
    }
};

/// Identity geometry: adapted cubes coincide with triadic cubes.
inline AdaptedGeometry identity_geometry(int d)
{
    AdaptedGeometry g;
    g.d = d;
    g.k0 = 0;
    g.Q.setIdentity();
    g.q0 = SmallMat::Identity(d, d);
    g.s_bar = SmallMat::Identity(d, d);
    return g;
}

/// q0 = 3^{-k0} ceil(3^{k0} |s_bar^{-1}|^{1/2} s_bar^{1/2}) entrywise. Throws
/// if the rounded matrix is not positive definite at this k0.
inline AdaptedGeometry make_adapted_geometry(const SmallMat& s_bar, int k0 = 4)
{
    const int d = static_cast<int>(s_bar.rows());
    if (d != 1 && d != 2) {
        throw ValidationError("make_adapted_geometry: dimension must be 1 or 2");
    }
    if (k0 < 0 || k0 > 18) {
        throw ValidationError("make_adapted_geometry: k0 out of range");
    }
    if (linalg::max_asymmetry(s_bar) > 1e-12 * s_bar.cwiseAbs().maxCoeff()) {
        throw ValidationError("make_adapted_geometry: s_bar must be symmetric");
    }
    const SmallMat sb = linalg::symmetrize(s_bar);
    const double lam = linalg::min_eig(sb);
    if (!(lam > 0.0)) {
        throw ValidationError("make_adapted_geometry: s_bar must be positive definite");
    }
    AdaptedGeometry g;
    g.d = d;
    g.k0 = k0;
    g.s_bar = sb;
    g.lambda_bar = lam;
    g.Lambda_bar = linalg::max_eig(sb);
    g.Pi_sbar = g.Lambda_bar / g.lambda_bar;
    const SmallMat root = linalg::sym_sqrt(sb) / std::sqrt(lam);
    const double s3 = static_cast<double>(ipow(3, k0));
    g.Q.setZero();
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) {
            // The small slack keeps exact entries (e.g. 1.0 computed as
            // 1.0000000000000002) from rounding up a whole 3^{-k0} step.
            const double v = std::ceil(s3 * root(i, j) - 1e-9);
            g.Q(i, j) = static_cast<std::int64_t>(v);
            g.Q(j, i) = g.Q(i, j);
        }
    }
    if (d == 1) {
        g.Q(1, 1) = 1;
    }
    g.q0 = SmallMat(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            g.q0(i, j) = static_cast<double>(g.Q(i, j)) / s3;
        }
    }
    if (g.Q(0, 0) <= 0 || g.det_q() <= 0) {
        throw ValidationError("make_adapted_geometry: rounding at k0=" + std::to_string(k0) +
                              " destroys positive definiteness; increase k0");
    }
    return g;
}

/// Starts at k0 and increments until the rounded q0 is positive definite.
inline AdaptedGeometry make_adapted_geometry_auto(const SmallMat& s_bar, int k0 = 4)
{
    for (int k = k0; k <= 18; ++k) {
        try {
            return make_adapted_geometry(s_bar, k);
        } catch (const ValidationError&) {
            if (k == 18) {
                throw;
            }
        }
    }
    throw ValidationError("make_adapted_geometry_auto: unreachable");
}

/// Adapted-cube centre in units of 3^{-k0}.
using ScaledPoint = std::array<std::int64_t, 2>;

/// Cells of the adapted cube centre + q0([-3^n/2, 3^n/2)^d), decided exactly.
inline CellDomain adapted_cube(const AdaptedGeometry& g, int level, ScaledPoint center = {0, 0})
{
    if (level < 0) {
        throw ValidationError("adapted_cube: level must be non-negative");
    }
    const int d = g.d;
    const std::int64_t s3 = g.scale();
    const __int128 det = g.det_q();
    const __int128 side = ipow(3, level);
    // Faces are half-open so that subcubes tile their parent cell for cell.
    const auto half_open = [](__int128 w, __int128 width) { return -width <= 2 * w && 2 * w < width; };
    // Bounding box from the parallelepiped corners.
    std::array<double, 2> lo{1e300, 1e300}, hi{-1e300, -1e300};
    const double half = static_cast<double>(side) / 2.0;
    for (int c0 = -1; c0 <= 1; c0 += 2) {
        for (int c1 = -1; c1 <= 1; c1 += 2) {
            for (int i = 0; i < d; ++i) {
                double x = static_cast<double>(center[static_cast<std::size_t>(i)]) / static_cast<double>(s3);
                x += g.q0(i, 0) * c0 * half;
                if (d == 2) {
                    x += g.q0(i, 1) * c1 * half;
                }
                lo[static_cast<std::size_t>(i)] = std::min(lo[static_cast<std::size_t>(i)], x);
                hi[static_cast<std::size_t>(i)] = std::max(hi[static_cast<std::size_t>(i)], x);
            }
        }
    }
    CellDomain dom;
    dom.d = d;
    dom.lo = {static_cast<std::int64_t>(std::floor(lo[0])) - 1,
              d == 2 ? static_cast<std::int64_t>(std::floor(lo[1])) - 1 : 0};
    dom.n = {static_cast<std::int64_t>(std::ceil(hi[0])) + 1 - dom.lo[0] + 1,
             d == 2 ? static_cast<std::int64_t>(std::ceil(hi[1])) + 1 - dom.lo[1] + 1 : 1};
    dom.mask.assign(dom.box_size(), 0);
    for (std::int64_t i0 = 0; i0 < dom.n[0]; ++i0) {
        for (std::int64_t i1 = 0; i1 < dom.n[1]; ++i1) {
            const __int128 y0 = static_cast<__int128>(dom.lo[0] + i0) * s3 - center[0];
            if (d == 1) {
                // q0^{-1} y = y / Q00 (scaled); inside iff -3^n Q00 <= 2y < 3^n Q00.
                dom.mask[dom.local_index(i0, i1)] = half_open(y0, side * det) ? 1 : 0;
                continue;
            }
            const __int128 y1 = static_cast<__int128>(dom.lo[1] + i1) * s3 - center[1];
            // adj(Q) y
            const __int128 w0 = static_cast<__int128>(g.Q(1, 1)) * y0 - static_cast<__int128>(g.Q(0, 1)) * y1;
            const __int128 w1 = -static_cast<__int128>(g.Q(1, 0)) * y0 + static_cast<__int128>(g.Q(0, 0)) * y1;
            dom.mask[dom.local_index(i0, i1)] = (half_open(w0, side * det) && half_open(w1, side * det)) ? 1 : 0;
        }
    }
    dom.trim();
    return dom;
}

/// Cells whose centres satisfy |q0^{-1}(x - center)| < r (centre in cell units).
inline CellDomain adapted_ball(const AdaptedGeometry& g, double r, std::array<double, 2> center = {0.0, 0.0})
{
    if (!(r > 0.0)) {
        throw ValidationError("adapted_ball: radius must be positive");
    }
    const int d = g.d;
    const SmallMat qi = g.q0.inverse();
    const double reach = r * g.q0.norm() + 2.0;
    CellDomain dom;
    dom.d = d;
    dom.lo = {static_cast<std::int64_t>(std::floor(center[0] - reach)),
              d == 2 ? static_cast<std::int64_t>(std::floor(center[1] - reach)) : 0};
    const auto ext = static_cast<std::int64_t>(std::ceil(2.0 * reach)) + 2;
    dom.n = {ext, d == 2 ? ext : 1};
    dom.mask.assign(dom.box_size(), 0);
    for (std::int64_t i0 = 0; i0 < dom.n[0]; ++i0) {
        for (std::int64_t i1 = 0; i1 < dom.n[1]; ++i1) {
            SmallVec y(d);
            y(0) = static_cast<double>(dom.lo[0] + i0) - center[0];
            if (d == 2) {
                y(1) = static_cast<double>(dom.lo[1] + i1) - center[1];
            }
            const SmallVec w = qi * y;
            dom.mask[dom.local_index(i0, i1)] = w.squaredNorm() < r * r ? 1 : 0;
        }
    }
    dom.trim();
    return dom;
}

/// Cells of r * (adapted cube of level n) about the origin, 0 < r <= 1.
inline CellDomain scaled_adapted_cube(const AdaptedGeometry& g, int level, double r)
{
    if (!(r > 0.0 && r <= 1.0)) {
        throw ValidationError("scaled_adapted_cube: r must lie in (0, 1]");
    }
    const int d = g.d;
    const SmallMat qi = g.q0.inverse();
    const double half = r * static_cast<double>(ipow(3, level)) / 2.0;
    CellDomain full = adapted_cube(g, level);
    for (std::int64_t i0 = 0; i0 < full.n[0]; ++i0) {
        for (std::int64_t i1 = 0; i1 < full.n[1]; ++i1) {
            SmallVec y(d);
            y(0) = static_cast<double>(full.lo[0] + i0);
            if (d == 2) {
                y(1) = static_cast<double>(full.lo[1] + i1);
            }
            const SmallVec w = qi * y;
            if (w.maxCoeff() >= half || w.minCoeff() < -half) {
                full.mask[full.local_index(i0, i1)] = 0;
            }
        }
    }
    full.trim();
    return full;
}

/// Centres z in 3^n q0 Z^d with z + adapted(n) inside centre + adapted(m):
/// z = centre + 3^n q0 w with |w_i| <= (3^{m-n} - 1)/2, row-major in w.
inline std::vector<ScaledPoint> enumerate_subcubes(const AdaptedGeometry& g, int m, int n,
                                                   ScaledPoint center = {0, 0})
{
    if (n > m || n < 0) {
        throw ValidationError("enumerate_subcubes: need 0 <= n <= m");
    }
    const std::int64_t h = (ipow(3, m - n) - 1) / 2;
    const std::int64_t step = ipow(3, n);
    std::vector<ScaledPoint> out;
    const std::int64_t lo1 = g.d == 2 ? -h : 0;
    const std::int64_t hi1 = g.d == 2 ? h : 0;
    for (std::int64_t w0 = -h; w0 <= h; ++w0) {
        for (std::int64_t w1 = lo1; w1 <= hi1; ++w1) {
            ScaledPoint z = center;
            z[0] += step * (g.Q(0, 0) * w0 + (g.d == 2 ? g.Q(0, 1) * w1 : 0));
            if (g.d == 2) {
                z[1] += step * (g.Q(1, 0) * w0 + g.Q(1, 1) * w1);
            }
            out.push_back(z);
        }
    }
    return out;
}

struct PartitionCube {
    int level = 0;
    CellIndex center{0, 0};
    std::int64_t cells = 1;
};

struct Partition {
    std::vector<PartitionCube> cubes;
    std::vector<std::int64_t> level_volume;  // index j - j_min, in cells
    int j_min = 0;
    int n = 0;
    std::int64_t total_cells = 0;      // rasterized |adapted(n)|
    std::int64_t remainder_cells = 0;  // cells not covered at levels >= j_min
    double continuum_volume = 0.0;     // det(q0) 3^{nd}
    double measured_C = 0.0;           // max_j |V_j| / (Pi^{1/2} 3^{j-n} |adapted(n)|)
};

/// Greedy cover of the rasterized adapted cube by triadic cubes y + box(j),
/// y in 3^j Z^d, largest levels first.
inline Partition partition_adapted_cube(const AdaptedGeometry& g, int n, int j_min = 0)
{
    if (j_min > n || j_min < 0) {
        throw ValidationError("partition_adapted_cube: need 0 <= j_min <= n");
    }
    const int d = g.d;
    CellDomain rem = adapted_cube(g, n);
    Partition part;
    part.n = n;
    part.j_min = j_min;
    part.total_cells = static_cast<std::int64_t>(rem.count());
    part.level_volume.assign(static_cast<std::size_t>(n - j_min + 1), 0);
    for (int j = n; j >= j_min; --j) {
        const std::int64_t side = ipow(3, j);
        const std::int64_t h = (side - 1) / 2;
        auto first_multiple = [&](std::int64_t a) {
            // smallest multiple of side with y - h >= a
            const std::int64_t t = a + h;
            const std::int64_t q = t >= 0 ? (t + side - 1) / side : -((-t) / side);
            return q * side;
        };
        const std::int64_t y0a = first_multiple(rem.lo[0]);
        const std::int64_t y1a = d == 2 ? first_multiple(rem.lo[1]) : 0;
        for (std::int64_t y0 = y0a; y0 + h <= rem.lo[0] + rem.n[0] - 1; y0 += side) {
            for (std::int64_t y1 = y1a; d == 1 ? y1 == 0 : y1 + h <= rem.lo[1] + rem.n[1] - 1;
                 y1 += (d == 2 ? side : 1)) {
                bool all = true;
                for (std::int64_t a = -h; a <= h && all; ++a) {
                    for (std::int64_t b = (d == 2 ? -h : 0); b <= (d == 2 ? h : 0) && all; ++b) {
                        all = rem.contains({y0 + a, y1 + b});
                    }
                }
                if (!all) {
                    continue;
                }
                for (std::int64_t a = -h; a <= h; ++a) {
                    for (std::int64_t b = (d == 2 ? -h : 0); b <= (d == 2 ? h : 0); ++b) {
                        rem.mask[rem.local_index(y0 + a - rem.lo[0], d == 2 ? y1 + b - rem.lo[1] : 0)] = 0;
                    }
                }
                const std::int64_t vol = d == 2 ? side * side : side;
                part.cubes.push_back({j, {y0, y1}, vol});
                part.level_volume[static_cast<std::size_t>(j - j_min)] += vol;
                if (d == 1) {
                    break;
                }
            }
        }
    }
    part.remainder_cells = static_cast<std::int64_t>(rem.count());
    const double detq = g.q0.determinant();
    part.continuum_volume = detq * std::pow(3.0, static_cast<double>(n * d));
    double c = 0.0;
    for (int j = j_min; j <= n; ++j) {
        const double bound = std::sqrt(g.Pi_sbar) * std::pow(3.0, static_cast<double>(j - n)) *
                             static_cast<double>(part.total_cells);
        c = std::max(c, static_cast<double>(part.level_volume[static_cast<std::size_t>(j - j_min)]) / bound);
    }
    part.measured_C = c;
    return part;
}

/// CSV rows (level, center_0, center_1, cells) for debugging partitions.
inline void write_partition_csv(const Partition& p, std::ostream& os)
{
    os << "level,center_0,center_1,cells\n";
    for (const auto& c : p.cubes) {
        os << c.level << ',' << c.center[0] << ',' << c.center[1] << ',' << c.cells << '\n';
    }
}

/// Continuum membership test x in centre + q0((-3^n/2, 3^n/2)^d).
inline bool in_adapted_cube(const AdaptedGeometry& g, int level, const SmallVec& x,
                            const SmallVec& center)
{
    const SmallVec w = g.q0.inverse() * (x - center);
    const double half = static_cast<double>(ipow(3, level)) / 2.0;
    return w.maxCoeff() < half && w.minCoeff() >= -half;
}

}  // namespace hcg
