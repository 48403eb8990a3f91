#include <hcg/geometry.hpp>
#include <hcg/rng.hpp>

#include <catch_amalgamated.hpp>

#include <set>

using namespace hcg;

namespace {

SmallMat mat2(double a, double b, double c, double d)
{
    SmallMat m(2, 2);
    m << a, b, c, d;
    return m;
}

}  // namespace

TEST_CASE("triadic cube extents and children tile the parent", "[geometry]")
{
    const auto c = triadic_cube(2, 2);
    REQUIRE(c.n[0] == 9);
    REQUIRE(c.lo[0] == -4);
    REQUIRE(c.count() == 81);
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    for (std::int64_t a = -1; a <= 1; ++a) {
        for (std::int64_t b = -1; b <= 1; ++b) {
            for (const auto& z : triadic_cube(2, 1, {3 * a, 3 * b}).cells()) {
                REQUIRE(c.contains(z));
                REQUIRE(seen.insert({z[0], z[1]}).second);
            }
        }
    }
    REQUIRE(seen.size() == 81);
    REQUIRE(triadic_cube(1, 3).count() == 27);
}

TEST_CASE("adapted geometry spot values", "[geometry]")
{
    const auto id = make_adapted_geometry(SmallMat::Identity(2, 2), 4);
    REQUIRE((id.q0 - SmallMat::Identity(2, 2)).norm() == 0.0);
    REQUIRE(id.is_identity());

    const auto an = make_adapted_geometry(mat2(4, 0, 0, 1), 4);
    REQUIRE((an.q0 - mat2(2, 0, 0, 1)).norm() == 0.0);

    const SmallMat sb = mat2(2, 1, 1, 2);
    const auto g = make_adapted_geometry(sb, 4);
    // |s_bar^{-1}| = 1 (smallest eigenvalue of s_bar is 1); sqrt(s_bar) by hand:
    // eigenvalues 3 and 1 on (1,1)/sqrt2 and (1,-1)/sqrt2.
    const double r3 = std::sqrt(3.0);
    const SmallMat root = mat2((r3 + 1) / 2, (r3 - 1) / 2, (r3 - 1) / 2, (r3 + 1) / 2);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            REQUIRE(g.q0(i, j) == std::ceil(81.0 * root(i, j)) / 81.0);
            REQUIRE(g.Q(i, j) == static_cast<std::int64_t>(std::ceil(81.0 * root(i, j))));
        }
    }
    REQUIRE(g.q0(0, 1) == g.q0(1, 0));
    REQUIRE(linalg::min_eig(g.q0) > 0.0);

    REQUIRE_THROWS_AS(make_adapted_geometry(mat2(1, 0.5, 0.4, 1), 4), ValidationError);
    REQUIRE_THROWS_AS(make_adapted_geometry(mat2(1, 0, 0, -1), 4), ValidationError);
}

TEST_CASE("adapted cube agrees with the continuum image of the triadic cube", "[geometry][property]")
{
    const auto g = make_adapted_geometry(mat2(2, 1, 1, 2), 4);
    const int n = 2;
    const auto dom = adapted_cube(g, n);
    const CounterRng rng(5, 0);
    // Every cell centre in the bounding box (plus a margin) agrees with the
    // continuum test; random continuum points of q0(box) pass the test.
    for (std::int64_t i0 = dom.lo[0] - 2; i0 < dom.lo[0] + dom.n[0] + 2; ++i0) {
        for (std::int64_t i1 = dom.lo[1] - 2; i1 < dom.lo[1] + dom.n[1] + 2; ++i1) {
            SmallVec x(2);
            x << static_cast<double>(i0), static_cast<double>(i1);
            REQUIRE(dom.contains({i0, i1}) == in_adapted_cube(g, n, x, SmallVec::Zero(2)));
        }
    }
    for (std::uint64_t t = 0; t < 10000; ++t) {
        SmallVec u(2);
        u << (rng.uniform(2 * t) - 0.5) * 9.0, (rng.uniform(2 * t + 1) - 0.5) * 9.0;
        REQUIRE(in_adapted_cube(g, n, g.q0 * u, SmallVec::Zero(2)));
        REQUIRE_FALSE(in_adapted_cube(g, n, g.q0 * (u * 1.0001 + u.cwiseSign() * 4.6), SmallVec::Zero(2)));
    }
}

TEST_CASE("lattice of the adapted geometry is integral", "[geometry][property]")
{
    for (const SmallMat& sb : {mat2(2, 1, 1, 2), mat2(5, -1, -1, 1.5), mat2(100, 3, 3, 1)}) {
        const auto g = make_adapted_geometry_auto(sb, 4);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                const double v = std::pow(3.0, g.k0) * g.q0(i, j);
                // q0 is stored as Q / 3^k0 in floating point
                REQUIRE(std::abs(v - std::round(v)) <= 1e-9 * std::max(1.0, std::abs(v)));
            }
        }
        REQUIRE(linalg::min_eig(g.q0) > 0.0);
    }
}

TEST_CASE("enumerate subcubes", "[geometry]")
{
    const auto id = identity_geometry(2);
    REQUIRE(enumerate_subcubes(id, 2, 2).size() == 1);
    REQUIRE(enumerate_subcubes(id, 2, 2)[0] == ScaledPoint{0, 0});
    REQUIRE(enumerate_subcubes(id, 2, 1).size() == 9);
    REQUIRE(enumerate_subcubes(id, 3, 1).size() == 81);
    REQUIRE(enumerate_subcubes(identity_geometry(1), 3, 1).size() == 9);
    REQUIRE_THROWS_AS(enumerate_subcubes(id, 1, 2), ValidationError);

    const auto g = make_adapted_geometry(mat2(4, 0, 0, 1), 1);
    const auto parent = adapted_cube(g, 2);
    const auto subs = enumerate_subcubes(g, 2, 1);
    REQUIRE(subs.size() == 9);
    std::size_t total = 0;
    for (const auto& z : subs) {
        const auto child = adapted_cube(g, 1, z);
        for (const auto& c : child.cells()) {
            REQUIRE(parent.contains(c));
        }
        total += child.count();
    }
    REQUIRE(total == parent.count());
}

TEST_CASE("partition of adapted cubes", "[geometry]")
{
    const auto id = identity_geometry(2);
    const auto p = partition_adapted_cube(id, 2, 0);
    REQUIRE(p.cubes.size() == 1);
    REQUIRE(p.cubes[0].level == 2);
    REQUIRE(p.remainder_cells == 0);

    const auto g = make_adapted_geometry(mat2(4, 0, 0, 1), 4);
    const auto q = partition_adapted_cube(g, 1, 0);
    REQUIRE(q.level_volume.size() == 2);
    REQUIRE(q.level_volume[1] > 0);
    REQUIRE(q.level_volume[0] > 0);
    REQUIRE(q.remainder_cells == 0);
    const double bound = q.measured_C * std::sqrt(g.Pi_sbar) / 3.0 * static_cast<double>(q.total_cells);
    REQUIRE(static_cast<double>(q.level_volume[0]) <= bound * (1 + 1e-12));
}

TEST_CASE("partition is disjoint with exact volume accounting", "[geometry][property]")
{
    for (const SmallMat& sb : {mat2(2, 1, 1, 2), mat2(4, 0, 0, 1), mat2(3, -1, -1, 1)}) {
        const auto g = make_adapted_geometry_auto(sb, 2);
        for (int j_min : {0, 1}) {
            const auto p = partition_adapted_cube(g, 2, j_min);
            const auto whole = adapted_cube(g, 2);
            std::set<std::pair<std::int64_t, std::int64_t>> seen;
            std::int64_t sum = 0;
            for (const auto& c : p.cubes) {
                for (const auto& z : triadic_cube(2, c.level, c.center).cells()) {
                    REQUIRE(whole.contains(z));
                    REQUIRE(seen.insert({z[0], z[1]}).second);
                }
                sum += c.cells;
            }
            std::int64_t by_level = 0;
            for (auto v : p.level_volume) {
                by_level += v;
            }
            REQUIRE(sum == by_level);
            REQUIRE(sum + p.remainder_cells == p.total_cells);
            REQUIRE(p.total_cells == static_cast<std::int64_t>(whole.count()));
            if (j_min == 0) {
                REQUIRE(p.remainder_cells == 0);
            }
        }
    }
}

TEST_CASE("adapted balls", "[geometry]")
{
    const auto id = identity_geometry(2);
    const auto b = adapted_ball(id, 3.0);
    // cells with i^2 + j^2 < 9
    std::size_t expect = 0;
    for (int i = -3; i <= 3; ++i) {
        for (int j = -3; j <= 3; ++j) {
            expect += i * i + j * j < 9 ? 1 : 0;
        }
    }
    REQUIRE(b.count() == expect);
    REQUIRE_THROWS_AS(adapted_ball(id, 0.0), ValidationError);
}
