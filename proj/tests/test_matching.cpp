#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "namelink/error.hpp"
#include "namelink/matching.hpp"
#include "namelink/rng.hpp"
#include "test_util.hpp"

using namespace namelink;
using testutil::brute_force_matching;

namespace {

Mat mat(int rows, int cols, std::vector<double> v) { return Mat(rows, cols, std::move(v)); }

}  // namespace

TEST_CASE("zero-diagonal 3x3 picks the diagonal") {
    Mat c = mat(3, 3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
    const auto pairs = min_weight_matching(c);
    CHECK(pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
    CHECK(assignment_min_total(c) == doctest::Approx(0.0));
}

TEST_CASE("2x2 fixture [[4,1],[2,3]] crosses over") {
    Mat c = mat(2, 2, {4, 1, 2, 3});
    CHECK(min_weight_matching(c) == std::vector<std::pair<int, int>>{{0, 1}, {1, 0}});
    CHECK(assignment_min_total(c) == doctest::Approx(3.0));
}

TEST_CASE("2x3 fixture matches both rows") {
    Mat c = mat(2, 3, {5, 1, 9, 1, 5, 9});
    CHECK(min_weight_matching(c) == std::vector<std::pair<int, int>>{{0, 1}, {1, 0}});
    CHECK(assignment_min_total(c) == doctest::Approx(2.0));
}

TEST_CASE("empty matrix gives an empty matching") {
    CHECK(min_weight_matching(Mat(0, 3)).empty());
    CHECK(min_weight_matching(Mat(3, 0)).empty());
    CHECK(assignment_min_total(Mat(0, 0)) == 0.0);
}

TEST_CASE("non-finite entries are rejected") {
    Mat c = mat(1, 2, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(min_weight_matching(c), NumericError);
}

TEST_CASE("exact ties resolve to the lexicographically smallest pair list") {
    CHECK(min_weight_matching(Mat(2, 3)) == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    CHECK(min_weight_matching(Mat(3, 2)) == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    // Three optimal assignments with total 9; (0,0) leads the smallest one.
    Mat c = mat(3, 3, {0, 0, 9, 0, 9, 9, 9, 0, 9});
    CHECK(min_weight_matching(c) == std::vector<std::pair<int, int>>{{0, 0}, {1, 2}, {2, 1}});
    CHECK(brute_force_matching(c).pairs == min_weight_matching(c));
}

TEST_CASE("tall matrices may skip early rows when forced") {
    // Row 0 is expensive everywhere; optimum uses rows 1 and 2.
    Mat c = mat(3, 2, {9, 9, 0, 8, 8, 0});
    const auto pairs = min_weight_matching(c);
    CHECK(pairs == std::vector<std::pair<int, int>>{{1, 0}, {2, 1}});
}

TEST_CASE("matching equals the brute-force oracle on random matrices") {
    Rng rng(20240805);
    for (int trial = 0; trial < 200; ++trial) {
        const int rows = 1 + rng.below_int(6);
        const int cols = 1 + rng.below_int(8);
        Mat c(rows, cols);
        const bool negatives = rng.uniform01() < 0.3;
        const bool quantized = rng.uniform01() < 0.3;  // forces exact ties
        for (double& v : c.a) {
            v = negatives ? rng.uniform(-1, 1) : rng.uniform01();
            if (quantized) v = std::floor(v * 4.0) / 4.0;
        }
        const auto oracle = brute_force_matching(c);
        const auto got = min_weight_matching(c);
        double total = 0.0;
        for (const auto& [r, cc] : got) total += c(r, cc);
        REQUIRE(got.size() == oracle.pairs.size());
        CHECK(total == doctest::Approx(oracle.total).epsilon(1e-9));
        CHECK(got == oracle.pairs);
    }
}
