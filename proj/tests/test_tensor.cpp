#include <doctest.h>

#include <cmath>
#include <set>

#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

using namespace fvae;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape and element count stay consistent") {
    Tensor t = Tensor::zeros({3, 4});
    CHECK(t.numel() == 12);
    CHECK(t.rows() == 3);
    CHECK(t.cols() == 4);
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), ConfigError);
    CHECK_THROWS_AS(Tensor::zeros({0, 4}), ConfigError);
}

TEST_CASE("row-major addressing") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.at(0, 0) == 1.0F);
    CHECK(t.at(0, 2) == 3.0F);
    CHECK(t.at(1, 0) == 4.0F);
    CHECK(t.at(1, 2) == 6.0F);
    t.at(1, 1) = 50.0F;
    CHECK(t[4] == 50.0F);
}

TEST_CASE("finite checks catch NaN and infinity") {
    Tensor t = Tensor::zeros({2, 2});
    CHECK(t.all_finite());
    t[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(t.require_finite("unit"), NumericError);
    t[3] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(t.require_finite("unit"), NumericError);
}

TEST_CASE("cast between precisions preserves values") {
    Tensor t({2, 2}, {0.5F, -1.25F, 3.0F, 0.0F});
    Tensor64 d = t.cast<double>();
    Tensor back = d.cast<float>();
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("same rng seed gives identical streams") {
    RngStream a(99), b(99);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.normal() == b.normal());
        CHECK(a.uniform() == b.uniform());
        CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_CASE("derived streams differ across ids and rounds") {
    std::set<std::uint64_t> firsts;
    for (std::uint64_t id = 0; id < 10; ++id) {
        for (std::uint64_t round = 0; round < 10; ++round) {
            firsts.insert(RngStream::derive(42, id, round).next_u64());
        }
    }
    CHECK(firsts.size() == 100);
}

TEST_CASE("normal draws have roughly standard moments") {
    RngStream rng(7);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("uniform stays in [0,1) and shuffle permutes") {
    RngStream rng(11);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> orig = v;
    rng.shuffle(v.begin(), v.end());
    std::multiset<int> a(v.begin(), v.end()), b(orig.begin(), orig.end());
    CHECK(a == b);
}

TEST_SUITE_END();
