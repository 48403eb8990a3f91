#include <hcg/field.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

using namespace hcg;

namespace {

SmallMat mat2(double a, double b, double c, double d)
{
    SmallMat m(2, 2);
    m << a, b, c, d;
    return m;
}

void check_cells(const CoefficientField& f)
{
    for (std::size_t i = 0; i < f.cell_count(); ++i) {
        const SmallMat s = f.s(i);
        const SmallMat k = f.k(i);
        REQUIRE((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((k + k.transpose()).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(linalg::min_eig(s) > 0.0);
    }
}

}  // namespace

TEST_CASE("constant field carries the given matrices", "[field]")
{
    const auto f = constant_field(2, SmallMat::Identity(2, 2), SmallMat::Zero(2, 2), 27);
    REQUIRE(f.cell_count() == 27u * 27u);
    REQUIRE(f.is_constant());
    REQUIRE(f.a_at({5, -40}) == SmallMat::Identity(2, 2));

    const auto g = constant_field(2, mat2(4, 0, 0, 1), SmallMat::Zero(2, 2), 9);
    REQUIRE(g.s(17) == mat2(4, 0, 0, 1));
}

TEST_CASE("constant field with stream part has the hand-evaluated big A", "[field]")
{
    const auto f = constant_field(2, SmallMat::Identity(2, 2), mat2(0, 0.5, -0.5, 0), 9);
    const BigMat A = f.big_a(0);
    REQUIRE((A.topLeftCorner(2, 2) - 1.25 * SmallMat::Identity(2, 2)).norm() < 1e-14);
    REQUIRE(f.has_antisymmetric_part());
}

TEST_CASE("constant field rejects bad matrices", "[field]")
{
    REQUIRE_THROWS_AS(constant_field(2, mat2(1, 0.1, 0, 1), SmallMat::Zero(2, 2), 3), ValidationError);
    REQUIRE_THROWS_AS(constant_field(2, SmallMat::Identity(2, 2), mat2(0, 1, 1, 0), 3), ValidationError);
    REQUIRE_THROWS_AS(constant_field(2, mat2(1, 0, 0, -1), SmallMat::Zero(2, 2), 3), ValidationError);
    REQUIRE_THROWS_AS(constant_field(3, SmallMat::Identity(2, 2), SmallMat::Zero(2, 2), 3), ValidationError);
}

TEST_CASE("checkerboard degenerate cases", "[field]")
{
    const auto eq = checkerboard(2, 27, 1.0, 1.0, 0.3, 5);
    REQUIRE(eq.is_constant());
    REQUIRE(eq.s(0) == SmallMat::Identity(2, 2));
    const auto p0 = checkerboard(2, 27, 1.0, 9.0, 0.0, 5);
    REQUIRE(p0.is_constant());
    REQUIRE(p0.s(3)(0, 0) == 9.0);
    REQUIRE_THROWS_AS(checkerboard(2, 27, 0.0, 9.0, 0.5, 1), ValidationError);
    REQUIRE_THROWS_AS(checkerboard(2, 27, 1.0, -9.0, 0.5, 1), ValidationError);
    REQUIRE_THROWS_AS(checkerboard(2, 27, 1.0, 9.0, 1.5, 1), ValidationError);
}

TEST_CASE("checkerboard phase fraction concentrates at p", "[field][property]")
{
    const auto f = checkerboard(2, 243, 1.0, 9.0, 0.5, 11);
    check_cells(f);
    const auto frac = phase_fractions(f);
    REQUIRE(frac.size() == 2);
    const double low = frac.begin()->second;
    // 59049 Bernoulli(1/2) cells: sd = 0.002
    REQUIRE(std::abs(low - 0.5) < 0.01);
}

TEST_CASE("generators are deterministic and thread-count independent", "[field][property]")
{
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        REQUIRE(checkerboard(2, 81, 1, 100, 0.4, seed, 1) == checkerboard(2, 81, 1, 100, 0.4, seed, 4));
        REQUIRE(poisson_inclusions(2, 81, 0.02, 3, 1, 1e4, seed, 1) ==
                poisson_inclusions(2, 81, 0.02, 3, 1, 1e4, seed, 3));
        REQUIRE(stream_matrix_field(27, 2.0, 1.0, seed, 1) == stream_matrix_field(27, 2.0, 1.0, seed, 8));
        REQUIRE(lognormal_field(2, 27, 2.0, 0.5, seed, 1) == lognormal_field(2, 27, 2.0, 0.5, seed, 2));
    }
    REQUIRE_FALSE(checkerboard(2, 27, 1, 9, 0.5, 1) == checkerboard(2, 27, 1, 9, 0.5, 2));
}

TEST_CASE("fields are periodic in every axis", "[field][property]")
{
    const auto f = checkerboard(2, 27, 1, 9, 0.5, 3);
    for (std::int64_t i = -30; i < 30; i += 7) {
        for (std::int64_t j = -30; j < 30; j += 5) {
            REQUIRE(f.s_at({i, j}) == f.s_at({i + 27, j}));
            REQUIRE(f.s_at({i, j}) == f.s_at({i, j - 27}));
        }
    }
}

TEST_CASE("laminate layers and closed forms", "[field]")
{
    const auto f = laminate(2, 0, 1.0, 4.0);
    for (std::int64_t i = 0; i < 6; ++i) {
        for (std::int64_t j = 0; j < 6; ++j) {
            REQUIRE(f.s_at({i, j})(0, 0) == (i % 2 == 0 ? 1.0 : 4.0));
        }
    }
    REQUIRE(laminate(2, 1, 3.0, 3.0).is_constant());
    REQUIRE_THROWS_AS(laminate(2, 2, 1.0, 4.0), ValidationError);

    EnsembleSpec e;
    e.generator = "laminate";
    e.sigma1 = 1.0;
    e.sigma2 = 4.0;
    SmallMat sb;
    REQUIRE(e.closed_form_sbar(sb));
    REQUIRE(std::abs(sb(0, 0) - 1.6) < 1e-15);
    REQUIRE(std::abs(sb(1, 1) - 2.5) < 1e-15);
    e.d = 1;
    e.sigma2 = 100.0;
    REQUIRE(e.closed_form_sbar(sb));
    REQUIRE(std::abs(sb(0, 0) - 200.0 / 101.0) < 1e-14);
}

TEST_CASE("poisson inclusions", "[field]")
{
    REQUIRE(poisson_inclusions(2, 27, 0.0, 3.0, 1.0, 1e4, 1).is_constant());
    REQUIRE_THROWS_AS(poisson_inclusions(2, 27, 0.02, 14.0, 1.0, 1e4, 1), ValidationError);

    // Boolean-model coverage 1 - exp(-intensity * pi r^2), averaged over seeds
    double cover = 0.0;
    const int n = 8;
    for (int s = 1; s <= n; ++s) {
        const auto f = poisson_inclusions(2, 81, 0.02, 3.0, 1.0, 1e4, static_cast<std::uint64_t>(s));
        check_cells(f);
        const auto frac = phase_fractions(f);
        cover += frac.count({1e4, 0.0, 0.0, 1e4}) ? frac.at({1e4, 0.0, 0.0, 1e4}) : 0.0;
    }
    cover /= n;
    const double expect = 1.0 - std::exp(-0.02 * M_PI * 9.0);
    REQUIRE(std::abs(cover - expect) < 0.05);
}

TEST_CASE("stream matrix field", "[field]")
{
    const auto zero = stream_matrix_field(27, 2.0, 0.0, 4);
    REQUIRE(zero.is_constant());
    REQUIRE_FALSE(zero.has_antisymmetric_part());

    const auto f = stream_matrix_field(81, 2.0, 1.5, 4);
    check_cells(f);
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < f.cell_count(); ++i) {
        REQUIRE(f.s(i) == SmallMat::Identity(2, 2));
        const double b = f.k(i)(0, 1);
        REQUIRE(f.k(i)(1, 0) == -b);
        mean += b;
        sq += b * b;
    }
    mean /= static_cast<double>(f.cell_count());
    // The 13-cell window inflates the variance of the mean by its size.
    REQUIRE(std::abs(mean) <= 3.0 * 1.5 * std::sqrt(13.0) / 81.0);
    REQUIRE(std::abs(std::sqrt(sq / static_cast<double>(f.cell_count())) - 1.5) < 0.3);
}

TEST_CASE("lognormal field is a positive scalar multiple of the identity", "[field]")
{
    const auto f = lognormal_field(2, 27, 2.0, 1.0, 8);
    check_cells(f);
    std::set<double> values;
    for (std::size_t i = 0; i < f.cell_count(); ++i) {
        REQUIRE(f.s(i)(0, 1) == 0.0);
        REQUIRE(f.s(i)(0, 0) == f.s(i)(1, 1));
        values.insert(f.s(i)(0, 0));
    }
    REQUIRE(values.size() > 100);
}

TEST_CASE("pointwise big A properties", "[field][property]")
{
    const auto f = stream_matrix_field(27, 2.0, 3.0, 9);
    for (std::size_t i = 0; i < f.cell_count(); i += 13) {
        const BigMat A = f.big_a(i);
        const SmallMat br = A.bottomRightCorner(2, 2);
        REQUIRE((br * f.s(i) - SmallMat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((A - A.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(linalg::min_eig(A) >= -1e-10);
    }
}

TEST_CASE("snapshot round trip", "[field]")
{
    const auto f = poisson_inclusions(2, 27, 0.05, 2.0, 1.0, 50.0, 3);
    const std::string bytes = encode_snapshot(f);
    const auto g = decode_snapshot(bytes);
    REQUIRE(f == g);
    REQUIRE(encode_snapshot(g) == bytes);
    REQUIRE_THROWS_AS(decode_snapshot(bytes.substr(0, bytes.size() - 3)), ValidationError);
    std::string bad = bytes;
    bad[0] = 'X';
    REQUIRE_THROWS_AS(decode_snapshot(bad), ValidationError);
}

TEST_CASE("random generators require a power-of-three period", "[field]")
{
    REQUIRE_THROWS_AS(checkerboard(2, 10, 1, 9, 0.5, 1), ValidationError);
    REQUIRE_NOTHROW(checkerboard(1, 81, 1, 9, 0.5, 1));
}
