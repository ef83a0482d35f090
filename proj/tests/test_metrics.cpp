#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "lsseg/metrics.hpp"
#include "oracles.hpp"

using namespace lsseg;
using lsseg::testing::brute_surface;
using lsseg::testing::brute_surface_distances;

namespace {

Volume mask(Dims3 d) { return Volume(d, Spacing3{}, VolumeKind::Labels, ScalarType::U8); }

std::vector<std::uint8_t> bytes(const Volume& v) {
    std::vector<std::uint8_t> b(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) b[i] = v[i] != 0;
    return b;
}

// Random blobby mask: a few random boxes plus salt noise.
Volume random_mask(Dims3 d, std::mt19937_64& rng) {
    Volume m = mask(d);
    std::uniform_int_distribution<int> nbox(1, 3);
    const int boxes = nbox(rng);
    for (int b = 0; b < boxes; ++b) {
        auto span = [&](int n) {
            std::uniform_int_distribution<int> a(0, n - 1);
            int lo = a(rng), hi = a(rng);
            if (lo > hi) std::swap(lo, hi);
            return std::pair{lo, hi};
        };
        auto [x0, x1] = span(d.x);
        auto [y0, y1] = span(d.y);
        auto [z0, z1] = span(d.z);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) m.at(x, y, z) = 1;
    }
    std::bernoulli_distribution salt(0.03);
    for (auto& v : m.data())
        if (salt(rng)) v = 1 - v;
    return m;
}

}  // namespace

TEST_CASE("dice, voe, rvd by hand") {
    Volume p = mask({4, 1, 1}), r = mask({4, 1, 1});
    p[0] = p[1] = 1;
    r[1] = r[2] = 1;
    CHECK(dice(p, r) == doctest::Approx(0.5));
    CHECK(voe(p, r) == doctest::Approx(2.0 / 3.0));
    CHECK(dice(p, p) == 1.0);
    CHECK(voe(p, p) == 0.0);
    CHECK(rvd(p, p) == 0.0);
    Volume q = mask({4, 1, 1});
    q[3] = 1;
    CHECK(dice(p, q) == 0.0);
    q[2] = 1;
    q[0] = 1;
    CHECK(rvd(q, r) == doctest::Approx(0.5));
    CHECK(dice(mask({4, 1, 1}), mask({4, 1, 1})) == 1.0);
    CHECK_THROWS_AS(rvd(p, mask({4, 1, 1})), DataError);
    CHECK_THROWS_AS(dice(p, mask({2, 2, 1})), UsageError);
}

TEST_CASE("surface voxels") {
    Volume one = mask({5, 5, 5});
    one.at(2, 2, 2) = 1;
    CHECK(surface_voxels(one) == one);

    Volume cube = mask({5, 5, 5});
    for (int z = 1; z < 4; ++z)
        for (int y = 1; y < 4; ++y)
            for (int x = 1; x < 4; ++x) cube.at(x, y, z) = 1;
    Volume s = surface_voxels(cube);
    int n = 0;
    for (float v : s.data()) n += v != 0;
    CHECK(n == 26);
    CHECK(s.at(2, 2, 2) == 0.0f);

    Volume full = mask({3, 3, 3});
    for (auto& v : full.data()) v = 1;
    CHECK(surface_voxels(full).at(1, 1, 1) == 0.0f);
    CHECK(surface_voxels(full).at(0, 1, 1) == 1.0f);  // grid border counts as background

    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        Volume m = random_mask({9, 8, 7}, rng);
        Volume s1 = surface_voxels(m);
        CHECK(surface_voxels(s1) == s1);
        const auto brute = brute_surface(bytes(m), 9, 8, 7);
        std::size_t count = 0;
        for (float v : s1.data()) count += v != 0;
        CHECK(count == brute.size());
        for (const auto& p : brute) CHECK(s1.at(p.x, p.y, p.z) == 1.0f);
    }
}

TEST_CASE("surface distances: simple cases and errors") {
    Volume a = mask({10, 3, 3}), b = mask({10, 3, 3});
    a.at(2, 1, 1) = 1;
    b.at(5, 1, 1) = 1;
    const auto sd = surface_distances(a, b, {1, 1, 2.5});
    CHECK(sd.assd_mm == doctest::Approx(3.0));
    CHECK(sd.mssd_mm == doctest::Approx(3.0));
    CHECK(assd(a, a, {1, 1, 1}) == 0.0);
    CHECK(mssd(a, a, {1, 1, 1}) == 0.0);
    CHECK_THROWS_WITH_AS(surface_distances(a, mask({10, 3, 3}), {1, 1, 1}), doctest::Contains("undefined surface"),
                         DataError);
}

TEST_CASE("50 random mask pairs match the all-pairs oracle") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> dim(3, 20);
    std::uniform_real_distribution<double> sp(0.5, 3.0);
    for (int t = 0; t < 50; ++t) {
        const Dims3 d{dim(rng), dim(rng), dim(rng)};
        const Spacing3 s{sp(rng), sp(rng), sp(rng)};
        Volume a = random_mask(d, rng);
        Volume b = random_mask(d, rng);
        a.at(0, 0, 0) = 1;
        b.at(d.x - 1, d.y - 1, d.z - 1) = 1;
        const auto sa = brute_surface(bytes(a), d.x, d.y, d.z);
        const auto sb = brute_surface(bytes(b), d.x, d.y, d.z);
        const auto [oa, om] = brute_surface_distances(sa, sb, s.x, s.y, s.z);
        const auto got = surface_distances(a, b, s);
        CHECK(std::abs(got.assd_mm - oa) <= 1e-9);
        CHECK(std::abs(got.mssd_mm - om) <= 1e-9);
        const auto swapped = surface_distances(b, a, s);
        CHECK(std::abs(swapped.assd_mm - got.assd_mm) <= 1e-9);
        CHECK(got.assd_mm <= got.mssd_mm + 1e-12);
    }
}

TEST_CASE("voe = 1 - dice / (2 - dice) on 1000 random pairs") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 1000; ++t) {
        Volume a = random_mask({6, 5, 4}, rng);
        Volume b = random_mask({6, 5, 4}, rng);
        const double d = dice(a, b);
        CHECK(std::abs(voe(a, b) - (1.0 - d / (2.0 - d))) <= 1e-9);
    }
}

TEST_CASE("translation invariance") {
    std::mt19937_64 rng(4);
    Volume a = mask({16, 16, 16}), b = mask({16, 16, 16});
    for (int z = 2; z < 8; ++z)
        for (int y = 3; y < 9; ++y)
            for (int x = 2; x < 7; ++x) a.at(x, y, z) = 1;
    for (int z = 3; z < 9; ++z)
        for (int y = 2; y < 8; ++y)
            for (int x = 3; x < 9; ++x) b.at(x, y, z) = 1;
    auto shift = [](const Volume& v) {
        Volume o = mask(v.dims());
        for (int z = 0; z + 4 < 16; ++z)
            for (int y = 0; y + 3 < 16; ++y)
                for (int x = 0; x + 5 < 16; ++x) o.at(x + 5, y + 3, z + 4) = v.at(x, y, z);
        return o;
    };
    const Spacing3 s{0.8, 0.8, 2.0};
    const auto r1 = evaluate_case(a, b, s);
    const auto r2 = evaluate_case(shift(a), shift(b), s);
    CHECK(r1.dice == doctest::Approx(r2.dice));
    CHECK(r1.voe == doctest::Approx(r2.voe));
    CHECK(r1.rvd == doctest::Approx(r2.rvd));
    CHECK(r1.assd_mm == doctest::Approx(r2.assd_mm));
    CHECK(r1.mssd_mm == doctest::Approx(r2.mssd_mm));
}

TEST_CASE("case report, aggregate and CSV") {
    Volume a = mask({8, 8, 8});
    for (int x = 2; x < 6; ++x) a.at(x, 3, 3) = 1;
    CHECK(evaluate_case(a, a, {1, 1, 1}) == CaseReport{1, 0, 0, 0, 0});
    CHECK_THROWS_AS(evaluate_case(mask({8, 8, 8}), a, {1, 1, 1}), DataError);
    const auto nanrep = evaluate_case(mask({8, 8, 8}), a, {1, 1, 1}, true);
    CHECK(nanrep.dice == 0.0);
    CHECK(std::isnan(nanrep.assd_mm));

    const CaseReport row{0.670, 0.450, 0.040, 6.660, 57.930};
    CHECK(aggregate({row, row, row}) == row);
    CHECK_THROWS_AS(aggregate({}), UsageError);
    const auto agg = aggregate({CaseReport{1, 0, 0, 0, 0}, nanrep});
    CHECK(agg.assd_mm == 0.0);
    CHECK(agg.dice == doctest::Approx(0.5));

    const std::string csv = format_report_csv({{"case_0001", row}});
    CHECK(csv == "case,dice,voe,rvd,assd_mm,mssd_mm\ncase_0001,0.67,0.45,0.04,6.66,57.93\nmean,0.67,0.45,0.04,6.66,57.93\n");
    const auto rows = parse_report_csv(csv);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].name == "case_0001");
    CHECK(rows[0].report == row);
    CHECK(rows[1].name == "mean");
    CHECK(rows[1].report == row);
    CHECK_THROWS_AS(parse_report_csv("case,x\n"), FormatError);
    CHECK_THROWS_AS(parse_report_csv("case,dice,voe,rvd,assd_mm,mssd_mm\na,1,2\n"), FormatError);
}

TEST_CASE("identical masks have exactly zero surface distance on anisotropic grids") {
    std::mt19937_64 rng(31);
    std::bernoulli_distribution fg(0.4);
    for (int t = 0; t < 50; ++t) {
        Volume m({12, 10, 8}, {0.8, 0.8, 2.5}, VolumeKind::Labels, ScalarType::U8);
        for (auto& v : m.data()) v = fg(rng);
        if (std::none_of(m.data().begin(), m.data().end(), [](float v) { return v != 0.0f; })) continue;
        const auto r = surface_distances(m, m, m.spacing());
        CHECK(r.assd_mm == 0.0);
        CHECK(r.mssd_mm == 0.0);
    }
}
