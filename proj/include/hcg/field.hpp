#pragma once

// Periodic, cellwise-constant coefficient fields a = s + k on Z^d (d = 1, 2)
// together with their random generators and the CGF1 binary snapshot format.
//
// Cell z occupies z + (-1/2, 1/2)^d, so the triadic cube of level n centred at
// the origin is exactly the union of cells with |z_i| <= (3^n - 1) / 2. Cell
// lookup is periodic: index z resolves to z mod L componentwise.

#include "linalg.hpp"
#include "parallel.hpp"
#include "rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace hcg {

using CellIndex = std::array<std::int64_t, 2>;

inline std::int64_t floor_mod(std::int64_t a, std::int64_t m)
{
    const std::int64_t r = a % m;
    return r < 0 ? r + m : r;
}

inline std::int64_t ipow(std::int64_t base, int e)
{
    std::int64_t r = 1;
    for (int i = 0; i < e; ++i) {
        r *= base;
    }
    return r;
}

inline bool is_power_of_three(std::int64_t n)
{
    if (n < 1) {
        return false;
    }
    while (n % 3 == 0) {
        n /= 3;
    }
    return n == 1;
}

/// Integer log base 3 of a power of three.
inline int log3_exact(std::int64_t n)
{
    int e = 0;
    while (n > 1) {
        n /= 3;
        ++e;
    }
    return e;
}

class CoefficientField {
public:
    CoefficientField() = default;

    /// s_data / k_data hold period^d cells, each a row-major d x d block.
    CoefficientField(int d, std::int64_t period, std::uint64_t seed, std::string tag,
                     std::vector<double> s_data, std::vector<double> k_data)
        : d_(d), period_(period), seed_(seed), tag_(std::move(tag)), s_(std::move(s_data)),
          k_(std::move(k_data))
    {
        if (d_ != 1 && d_ != 2) {
            throw ValidationError("CoefficientField: dimension must be 1 or 2");
        }
        if (period_ < 1) {
            throw ValidationError("CoefficientField: period must be positive");
        }
        const std::size_t expect = cell_count() * static_cast<std::size_t>(d_ * d_);
        if (s_.size() != expect || k_.size() != expect) {
            throw ValidationError("CoefficientField: data size does not match period^d cells");
        }
    }

    int dim() const { return d_; }
    std::int64_t period() const { return period_; }
    std::uint64_t seed() const { return seed_; }
    const std::string& tag() const { return tag_; }
    const std::vector<double>& s_data() const { return s_; }
    const std::vector<double>& k_data() const { return k_; }

    std::size_t cell_count() const
    {
        return static_cast<std::size_t>(d_ == 1 ? period_ : period_ * period_);
    }

    /// Flat storage index of (periodically wrapped) cell z.
    std::size_t flat_index(const CellIndex& z) const
    {
        const std::int64_t i0 = floor_mod(z[0], period_);
        if (d_ == 1) {
            return static_cast<std::size_t>(i0);
        }
        const std::int64_t i1 = floor_mod(z[1], period_);
        return static_cast<std::size_t>(i0 * period_ + i1);
    }

    /// Cell coordinates of a flat index inside [0, L)^d.
    CellIndex cell_of(std::size_t idx) const
    {
        if (d_ == 1) {
            return {static_cast<std::int64_t>(idx), 0};
        }
        return {static_cast<std::int64_t>(idx) / period_, static_cast<std::int64_t>(idx) % period_};
    }

    SmallMat s(std::size_t idx) const { return block(s_, idx); }
    SmallMat k(std::size_t idx) const { return block(k_, idx); }
    SmallMat a(std::size_t idx) const { return s(idx) + k(idx); }
    SmallMat s_at(const CellIndex& z) const { return s(flat_index(z)); }
    SmallMat k_at(const CellIndex& z) const { return k(flat_index(z)); }
    SmallMat a_at(const CellIndex& z) const { return a(flat_index(z)); }

    BigMat big_a(std::size_t idx) const { return pointwise_big_a(s(idx), k(idx)); }

    /// Checks the cell invariants: s symmetric positive definite, k exactly
    /// antisymmetric. Throws ValidationError on the first offending cell.
    void validate() const
    {
        for (std::size_t i = 0; i < cell_count(); ++i) {
            SmallMat si = s(i);
            SmallMat ki = k(i);
            if (linalg::max_asymmetry(si) != 0.0) {
                throw ValidationError("field cell " + std::to_string(i) + ": s is not symmetric");
            }
            if (linalg::max_antisymmetry_defect(ki) != 0.0) {
                throw ValidationError("field cell " + std::to_string(i) + ": k is not antisymmetric");
            }
            if (!(linalg::min_eig(si) > 0.0)) {
                throw ValidationError("field cell " + std::to_string(i) + ": s is not positive definite");
            }
        }
    }

    bool is_constant() const
    {
        const std::size_t b = static_cast<std::size_t>(d_ * d_);
        for (std::size_t i = 1; i < cell_count(); ++i) {
            for (std::size_t j = 0; j < b; ++j) {
                if (s_[i * b + j] != s_[j] || k_[i * b + j] != k_[j]) {
                    return false;
                }
            }
        }
        return true;
    }

    bool has_antisymmetric_part() const
    {
        for (double v : k_) {
            if (v != 0.0) {
                return true;
            }
        }
        return false;
    }

    friend bool operator==(const CoefficientField& x, const CoefficientField& y)
    {
        return x.d_ == y.d_ && x.period_ == y.period_ && x.seed_ == y.seed_ && x.tag_ == y.tag_ &&
               x.s_ == y.s_ && x.k_ == y.k_;
    }

private:
    SmallMat block(const std::vector<double>& v, std::size_t idx) const
    {
        SmallMat m(d_, d_);
        const std::size_t base = idx * static_cast<std::size_t>(d_ * d_);
        for (int r = 0; r < d_; ++r) {
            for (int c = 0; c < d_; ++c) {
                m(r, c) = v[base + static_cast<std::size_t>(r * d_ + c)];
            }
        }
        return m;
    }

    int d_ = 1;
    std::int64_t period_ = 1;
    std::uint64_t seed_ = 0;
    std::string tag_;
    std::vector<double> s_;
    std::vector<double> k_;
};

namespace detail {

inline std::string fmt_num(double x)
{
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

inline void put_block(std::vector<double>& v, std::size_t idx, const SmallMat& m)
{
    const auto d = static_cast<std::size_t>(m.rows());
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            v[idx * d * d + r * d + c] = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
    }
}

inline void check_dim(int d)
{
    if (d != 1 && d != 2) {
        throw ValidationError("dimension must be 1 or 2");
    }
}

inline void check_random_period(std::int64_t L)
{
    if (!is_power_of_three(L)) {
        throw ValidationError("period L_cells must be a power of 3, got " + std::to_string(L));
    }
}

inline SmallMat scalar_mat(int d, double v)
{
    return SmallMat(SmallMat::Identity(d, d) * v);
}

inline SmallMat zero_mat(int d)
{
    return SmallMat(SmallMat::Zero(d, d));
}

}  // namespace detail

/// Every cell carries (s_matrix, k_matrix).
inline CoefficientField constant_field(int d, const SmallMat& s_matrix, const SmallMat& k_matrix,
                                       std::int64_t L)
{
    detail::check_dim(d);
    if (s_matrix.rows() != d || s_matrix.cols() != d || k_matrix.rows() != d || k_matrix.cols() != d) {
        throw ValidationError("constant_field: matrix shape does not match dimension");
    }
    if (linalg::max_asymmetry(s_matrix) != 0.0) {
        throw ValidationError("constant_field: s is not symmetric");
    }
    if (linalg::max_antisymmetry_defect(k_matrix) != 0.0) {
        throw ValidationError("constant_field: k is not antisymmetric");
    }
    if (!(linalg::min_eig(s_matrix) > 0.0)) {
        throw ValidationError("constant_field: s must have strictly positive eigenvalues");
    }
    if (L < 1) {
        throw ValidationError("constant_field: L must be positive");
    }
    const std::size_t n = static_cast<std::size_t>(d == 1 ? L : L * L);
    std::vector<double> s(n * static_cast<std::size_t>(d * d));
    std::vector<double> k(s.size());
    for (std::size_t i = 0; i < n; ++i) {
        detail::put_block(s, i, s_matrix);
        detail::put_block(k, i, k_matrix);
    }
    std::ostringstream tag;
    tag << "constant(d=" << d << ",s=[";
    for (int i = 0; i < d * d; ++i) {
        tag << (i ? "," : "") << detail::fmt_num(s_matrix(i / d, i % d));
    }
    tag << "],k=[";
    for (int i = 0; i < d * d; ++i) {
        tag << (i ? "," : "") << detail::fmt_num(k_matrix(i / d, i % d));
    }
    tag << "],L=" << L << ")";
    return CoefficientField(d, L, 0, tag.str(), std::move(s), std::move(k));
}

/// Independent two-phase cells: sigma1*I with probability p, else sigma2*I.
inline CoefficientField checkerboard(int d, std::int64_t L, double sigma1, double sigma2, double p,
                                     std::uint64_t seed, int threads = 1)
{
    detail::check_dim(d);
    detail::check_random_period(L);
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) {
        throw ValidationError("checkerboard: sigmas must be positive");
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError("checkerboard: p must lie in [0, 1]");
    }
    const std::size_t n = static_cast<std::size_t>(d == 1 ? L : L * L);
    const auto b = static_cast<std::size_t>(d * d);
    std::vector<double> s(n * b, 0.0);
    std::vector<double> k(n * b, 0.0);
    const CounterRng rng(seed, 1);
    parallel_for(n, threads, [&](std::size_t i) {
        const double v = rng.uniform(i) < p ? sigma1 : sigma2;
        for (int r = 0; r < d; ++r) {
            s[i * b + static_cast<std::size_t>(r * d + r)] = v;
        }
    });
    std::ostringstream tag;
    tag << "checkerboard(d=" << d << ",L=" << L << ",sigma1=" << detail::fmt_num(sigma1)
        << ",sigma2=" << detail::fmt_num(sigma2) << ",p=" << detail::fmt_num(p) << ",rng=" << kRngName
        << ")";
    return CoefficientField(d, L, seed, tag.str(), std::move(s), std::move(k));
}

/// Layers of sigma1*I / sigma2*I alternating cell by cell along `axis`. The
/// field has period 2; `phase` (0 or 1) selects which phase sits on even cells.
inline CoefficientField laminate(int d, int axis, double sigma1, double sigma2, int phase = 0)
{
    detail::check_dim(d);
    if (axis < 0 || axis >= d) {
        throw ValidationError("laminate: axis must satisfy 0 <= axis < d");
    }
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) {
        throw ValidationError("laminate: sigmas must be positive");
    }
    const std::int64_t L = 2;
    const std::size_t n = static_cast<std::size_t>(d == 1 ? L : L * L);
    const auto b = static_cast<std::size_t>(d * d);
    std::vector<double> s(n * b, 0.0);
    std::vector<double> k(n * b, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::int64_t zi = d == 1 ? static_cast<std::int64_t>(i)
                                       : (axis == 0 ? static_cast<std::int64_t>(i) / L
                                                    : static_cast<std::int64_t>(i) % L);
        const double v = floor_mod(zi + phase, 2) == 0 ? sigma1 : sigma2;
        for (int r = 0; r < d; ++r) {
            s[i * b + static_cast<std::size_t>(r * d + r)] = v;
        }
    }
    std::ostringstream tag;
    tag << "laminate(d=" << d << ",axis=" << axis << ",sigma1=" << detail::fmt_num(sigma1)
        << ",sigma2=" << detail::fmt_num(sigma2) << ",phase=" << phase << ")";
    return CoefficientField(d, L, static_cast<std::uint64_t>(phase), tag.str(), std::move(s), std::move(k));
}

/// Boolean model on the torus: each cell receives Poisson(intensity) centres
/// placed uniformly inside it; cells whose centre lies within `radius_cells`
/// (periodic Euclidean distance) of some centre carry sigma_inc*I.
inline CoefficientField poisson_inclusions(int d, std::int64_t L, double intensity, double radius_cells,
                                           double sigma_bg, double sigma_inc, std::uint64_t seed,
                                           int threads = 1)
{
    detail::check_dim(d);
    detail::check_random_period(L);
    if (!(intensity >= 0.0)) {
        throw ValidationError("poisson_inclusions: intensity must be non-negative");
    }
    if (!(radius_cells >= 1.0)) {
        throw ValidationError("poisson_inclusions: radius must be at least one cell");
    }
    if (radius_cells >= static_cast<double>(L) / 2.0) {
        throw ValidationError("poisson_inclusions: radius >= L/2 would wrap an inclusion onto itself");
    }
    if (!(sigma_bg > 0.0) || !(sigma_inc > 0.0)) {
        throw ValidationError("poisson_inclusions: sigmas must be positive");
    }
    const std::size_t n = static_cast<std::size_t>(d == 1 ? L : L * L);
    const auto b = static_cast<std::size_t>(d * d);

    // Centres, generated per cell.
    std::vector<std::vector<std::array<double, 2>>> centres(n);
    const CounterRng count_rng(seed, 2);
    parallel_for(n, threads, [&](std::size_t i) {
        const auto cnt = count_rng.poisson(intensity, i);
        const CounterRng pos_rng(seed, 0x100000000ULL + i);
        std::int64_t z0 = d == 1 ? static_cast<std::int64_t>(i) : static_cast<std::int64_t>(i) / L;
        std::int64_t z1 = d == 1 ? 0 : static_cast<std::int64_t>(i) % L;
        for (std::uint64_t j = 0; j < cnt; ++j) {
            std::array<double, 2> c{static_cast<double>(z0) + pos_rng.uniform(2 * j) - 0.5,
                                    d == 2 ? static_cast<double>(z1) + pos_rng.uniform(2 * j + 1) - 0.5 : 0.0};
            centres[i].push_back(c);
        }
    });

    // A cell is covered iff some centre lies within the radius; evaluated per
    // cell by scanning the neighbourhood, so the result is order independent.
    const auto reach = static_cast<std::int64_t>(std::ceil(radius_cells)) + 1;
    const double r2 = radius_cells * radius_cells;
    std::vector<std::uint8_t> covered(n, 0);
    parallel_for(n, threads, [&](std::size_t i) {
        const std::int64_t z0 = d == 1 ? static_cast<std::int64_t>(i) : static_cast<std::int64_t>(i) / L;
        const std::int64_t z1 = d == 1 ? 0 : static_cast<std::int64_t>(i) % L;
        const std::int64_t lo1 = d == 2 ? -reach : 0;
        const std::int64_t hi1 = d == 2 ? reach : 0;
        for (std::int64_t o0 = -reach; o0 <= reach && !covered[i]; ++o0) {
            for (std::int64_t o1 = lo1; o1 <= hi1 && !covered[i]; ++o1) {
                const std::int64_t w0 = floor_mod(z0 + o0, L);
                const std::int64_t w1 = d == 2 ? floor_mod(z1 + o1, L) : 0;
                const std::size_t j = static_cast<std::size_t>(d == 1 ? w0 : w0 * L + w1);
                for (const auto& c : centres[j]) {
                    // Unwrap the centre next to z using the chosen offset.
                    const double c0 = c[0] - static_cast<double>(w0) + static_cast<double>(z0 + o0);
                    const double c1 = d == 2 ? c[1] - static_cast<double>(w1) + static_cast<double>(z1 + o1) : 0.0;
                    const double dx = c0 - static_cast<double>(z0);
                    const double dy = d == 2 ? c1 - static_cast<double>(z1) : 0.0;
                    if (dx * dx + dy * dy < r2) {
                        covered[i] = 1;
                        break;
                    }
                }
            }
        }
    });

    std::vector<double> s(n * b, 0.0);
    std::vector<double> k(n * b, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = covered[i] ? sigma_inc : sigma_bg;
        for (int r = 0; r < d; ++r) {
            s[i * b + static_cast<std::size_t>(r * d + r)] = v;
        }
    }
    std::ostringstream tag;
    tag << "poisson_inclusions(d=" << d << ",L=" << L << ",intensity=" << detail::fmt_num(intensity)
        << ",radius=" << detail::fmt_num(radius_cells) << ",sigma_bg=" << detail::fmt_num(sigma_bg)
        << ",sigma_inc=" << detail::fmt_num(sigma_inc) << ",rng=" << kRngName << ")";
    return CoefficientField(d, L, seed, tag.str(), std::move(s), std::move(k));
}

/// Number of cells in the moving-average window {w : |w| <= correlation}.
inline std::size_t smoothing_window_size(int d, double correlation_cells)
{
    const auto reach = static_cast<std::int64_t>(std::floor(correlation_cells));
    std::size_t cnt = 0;
    for (std::int64_t o0 = -reach; o0 <= reach; ++o0) {
        for (std::int64_t o1 = (d == 2 ? -reach : 0); o1 <= (d == 2 ? reach : 0); ++o1) {
            if (static_cast<double>(o0 * o0 + o1 * o1) <= correlation_cells * correlation_cells) {
                ++cnt;
            }
        }
    }
    return cnt;
}

/// Mean-zero, unit-variance stationary Gaussian field on the torus: the sum
/// of i.i.d. cell normals over the disk |w| <= correlation, divided by the
/// square root of the window size.
inline std::vector<double> smoothed_gaussian(int d, std::int64_t L, double correlation_cells,
                                             std::uint64_t seed, int threads = 1)
{
    detail::check_dim(d);
    detail::check_random_period(L);
    if (!(correlation_cells >= 1.0)) {
        throw ValidationError("smoothed_gaussian: correlation must be at least one cell");
    }
    const std::size_t n = static_cast<std::size_t>(d == 1 ? L : L * L);
    const CounterRng rng(seed, 4);
    std::vector<double> g(n);
    parallel_for(n, threads, [&](std::size_t i) { g[i] = rng.normal(i); });

    const auto reach = static_cast<std::int64_t>(std::floor(correlation_cells));
    std::vector<std::array<std::int64_t, 2>> window;
    for (std::int64_t o0 = -reach; o0 <= reach; ++o0) {
        for (std::int64_t o1 = (d == 2 ? -reach : 0); o1 <= (d == 2 ? reach : 0); ++o1) {
            if (static_cast<double>(o0 * o0 + o1 * o1) <= correlation_cells * correlation_cells) {
                window.push_back({o0, o1});
            }
        }
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(window.size()));
    std::vector<double> b(n);
    parallel_for(n, threads, [&](std::size_t i) {
        const std::int64_t z0 = d == 1 ? static_cast<std::int64_t>(i) : static_cast<std::int64_t>(i) / L;
        const std::int64_t z1 = d == 1 ? 0 : static_cast<std::int64_t>(i) % L;
        double acc = 0.0;
        for (const auto& w : window) {
            const std::int64_t y0 = floor_mod(z0 + w[0], L);
            const std::int64_t y1 = d == 2 ? floor_mod(z1 + w[1], L) : 0;
            acc += g[static_cast<std::size_t>(d == 1 ? y0 : y0 * L + y1)];
        }
        b[i] = acc * norm;
    });
    return b;
}

/// d = 2 only: s = I and k = b(x) [[0, 1], [-1, 0]] with b the smoothed
/// Gaussian scaled to standard deviation `amplitude`.
inline CoefficientField stream_matrix_field(std::int64_t L, double correlation_cells, double amplitude,
                                            std::uint64_t seed, int threads = 1)
{
    if (!(amplitude >= 0.0)) {
        throw ValidationError("stream_matrix_field: amplitude must be non-negative");
    }
    const auto b = smoothed_gaussian(2, L, correlation_cells, seed, threads);
    const std::size_t n = b.size();
    std::vector<double> s(n * 4, 0.0);
    std::vector<double> k(n * 4, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        s[i * 4 + 0] = 1.0;
        s[i * 4 + 3] = 1.0;
        const double v = amplitude * b[i];
        k[i * 4 + 1] = v;
        k[i * 4 + 2] = -v;
    }
    std::ostringstream tag;
    tag << "stream(d=2,L=" << L << ",correlation=" << detail::fmt_num(correlation_cells)
        << ",amplitude=" << detail::fmt_num(amplitude) << ",rng=" << kRngName << ")";
    return CoefficientField(2, L, seed, tag.str(), std::move(s), std::move(k));
}

/// s = exp(amplitude * b(x)) I, k = 0, reusing the smoothed Gaussian stage.
inline CoefficientField lognormal_field(int d, std::int64_t L, double correlation_cells, double amplitude,
                                        std::uint64_t seed, int threads = 1)
{
    if (!(amplitude >= 0.0)) {
        throw ValidationError("lognormal_field: amplitude must be non-negative");
    }
    const auto b = smoothed_gaussian(d, L, correlation_cells, seed, threads);
    const auto bs = static_cast<std::size_t>(d * d);
    std::vector<double> s(b.size() * bs, 0.0);
    std::vector<double> k(b.size() * bs, 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double v = std::exp(amplitude * b[i]);
        for (int r = 0; r < d; ++r) {
            s[i * bs + static_cast<std::size_t>(r * d + r)] = v;
        }
    }
    std::ostringstream tag;
    tag << "lognormal(d=" << d << ",L=" << L << ",correlation=" << detail::fmt_num(correlation_cells)
        << ",amplitude=" << detail::fmt_num(amplitude) << ",rng=" << kRngName << ")";
    return CoefficientField(d, L, seed, tag.str(), std::move(s), std::move(k));
}

// ---------------------------------------------------------------------------
// CGF1 snapshots

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

inline void put_f64(std::string& out, double x)
{
    std::uint64_t v;
    std::memcpy(&v, &x, sizeof v);
    put_u64(out, v);
}

class ByteReader {
public:
    explicit ByteReader(const std::string& buf) : buf_(buf) {}

    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64()
    {
        const std::uint64_t v = u64();
        double x;
        std::memcpy(&x, &v, sizeof x);
        return x;
    }

    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > buf_.size()) {
            throw ValidationError("snapshot: truncated data");
        }
    }

    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes a field as CGF1: magic, u32 d, u32 L, u64 seed, u32 tag length,
/// tag bytes, then per cell the d*d entries of s and the d*d entries of k
/// (row-major float64), cells in row-major order. All integers little-endian.
inline std::string encode_snapshot(const CoefficientField& f, const std::string& magic = "CGF1")
{
    std::string out = magic;
    detail::put_u32(out, static_cast<std::uint32_t>(f.dim()));
    detail::put_u32(out, static_cast<std::uint32_t>(f.period()));
    detail::put_u64(out, f.seed());
    detail::put_u32(out, static_cast<std::uint32_t>(f.tag().size()));
    out += f.tag();
    const auto b = static_cast<std::size_t>(f.dim() * f.dim());
    for (std::size_t i = 0; i < f.cell_count(); ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            detail::put_f64(out, f.s_data()[i * b + j]);
        }
        for (std::size_t j = 0; j < b; ++j) {
            detail::put_f64(out, f.k_data()[i * b + j]);
        }
    }
    return out;
}

inline CoefficientField decode_snapshot(const std::string& buf)
{
    if (buf.size() < 4 || buf.compare(0, 4, "CGF1") != 0) {
        throw ValidationError("snapshot: bad magic, expected CGF1");
    }
    detail::ByteReader rd(buf);
    rd.bytes(4);
    const auto d = static_cast<int>(rd.u32());
    const auto L = static_cast<std::int64_t>(rd.u32());
    const std::uint64_t seed = rd.u64();
    const std::uint32_t tlen = rd.u32();
    std::string tag = rd.bytes(tlen);
    detail::check_dim(d);
    const std::size_t n = static_cast<std::size_t>(d == 1 ? L : L * L);
    const auto b = static_cast<std::size_t>(d * d);
    std::vector<double> s(n * b), k(n * b);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            s[i * b + j] = rd.f64();
        }
        for (std::size_t j = 0; j < b; ++j) {
            k[i * b + j] = rd.f64();
        }
    }
    if (!rd.done()) {
        throw ValidationError("snapshot: trailing bytes after cell data");
    }
    return CoefficientField(d, L, seed, std::move(tag), std::move(s), std::move(k));
}

inline void write_snapshot(const CoefficientField& f, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw ValidationError("cannot open " + path + " for writing");
    }
    const std::string buf = encode_snapshot(f);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) {
        throw ValidationError("failed writing " + path);
    }
}

inline std::string read_file_bytes(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw ValidationError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline CoefficientField read_snapshot(const std::string& path)
{
    return decode_snapshot(read_file_bytes(path));
}

/// FNV-1a 64-bit hash rendered as 16 hex digits; used for provenance.
inline std::string content_hash(const std::string& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

/// Volume fraction per distinct cell matrix s (keyed by its row-major
/// entries). Continuous ensembles produce one entry per cell; callers cap.
inline std::map<std::vector<double>, double> phase_fractions(const CoefficientField& f)
{
    std::map<std::vector<double>, std::size_t> count;
    const auto b = static_cast<std::size_t>(f.dim() * f.dim());
    for (std::size_t i = 0; i < f.cell_count(); ++i) {
        std::vector<double> key(f.s_data().begin() + static_cast<std::ptrdiff_t>(i * b),
                                f.s_data().begin() + static_cast<std::ptrdiff_t>((i + 1) * b));
        ++count[key];
    }
    std::map<std::vector<double>, double> frac;
    for (const auto& [key, c] : count) {
        frac[key] = static_cast<double>(c) / static_cast<double>(f.cell_count());
    }
    return frac;
}

// ---------------------------------------------------------------------------
// Ensemble description

/// Generator name plus parameters; `generate(seed)` draws one realization.
struct EnsembleSpec {
    std::string generator = "checkerboard";
    int d = 2;
    std::int64_t L = 27;
    double sigma1 = 1.0;
    double sigma2 = 9.0;
    double p = 0.5;
    int axis = 0;
    double intensity = 0.02;
    double radius = 3.0;
    double sigma_bg = 1.0;
    double sigma_inc = 1.0e4;
    double correlation = 2.0;
    double amplitude = 1.0;
    std::vector<double> s_const;
    std::vector<double> k_const;

    CoefficientField generate(std::uint64_t seed, int threads = 1) const
    {
        if (generator == "checkerboard") {
            return checkerboard(d, L, sigma1, sigma2, p, seed, threads);
        }
        if (generator == "laminate") {
            // The phase offset is drawn from the seed, which makes the
            // laminate ensemble stationary under integer shifts.
            return laminate(d, axis, sigma1, sigma2, static_cast<int>(seed & 1u));
        }
        if (generator == "poisson") {
            return poisson_inclusions(d, L, intensity, radius, sigma_bg, sigma_inc, seed, threads);
        }
        if (generator == "stream") {
            if (d != 2) {
                throw ValidationError("stream ensemble requires d = 2");
            }
            return stream_matrix_field(L, correlation, amplitude, seed, threads);
        }
        if (generator == "lognormal") {
            return lognormal_field(d, L, correlation, amplitude, seed, threads);
        }
        if (generator == "constant") {
            return constant_field(d, matrix(s_const, "s"), matrix(k_const, "k"), L);
        }
        throw ValidationError("unknown generator '" + generator + "'");
    }

    /// Exact homogenized symmetric part when the ensemble admits one.
    bool closed_form_sbar(SmallMat& out) const
    {
        if (generator == "constant") {
            out = matrix(s_const, "s");
            return true;
        }
        if (generator == "laminate") {
            out = SmallMat::Identity(d, d) * 0.5 * (sigma1 + sigma2);
            out(axis, axis) = 2.0 * sigma1 * sigma2 / (sigma1 + sigma2);
            return true;
        }
        if (generator == "checkerboard" && d == 2 && p == 0.5) {
            out = SmallMat::Identity(2, 2) * std::sqrt(sigma1 * sigma2);
            return true;
        }
        if (generator == "checkerboard" && sigma1 == sigma2) {
            out = SmallMat::Identity(d, d) * sigma1;
            return true;
        }
        return false;
    }

    bool closed_form_kbar(SmallMat& out) const
    {
        if (generator == "constant") {
            out = matrix(k_const, "k");
            return true;
        }
        if (generator == "laminate" || generator == "checkerboard") {
            out = SmallMat::Zero(d, d);
            return true;
        }
        return false;
    }

    SmallMat matrix(const std::vector<double>& v, const char* name) const
    {
        if (v.empty() && std::string(name) == "k") {
            return SmallMat::Zero(d, d);
        }
        if (v.size() != static_cast<std::size_t>(d * d)) {
            throw ValidationError(std::string("constant ensemble: ") + name + " needs d*d entries");
        }
        SmallMat m(d, d);
        for (int i = 0; i < d * d; ++i) {
            m(i / d, i % d) = v[static_cast<std::size_t>(i)];
        }
        return m;
    }
};

}  // namespace hcg
