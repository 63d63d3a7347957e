#include <gtest/gtest.h>

#include <cmath>

#include "alignkt/losses.hpp"
#include "alignkt/metrics.hpp"
#include "alignkt/numcore/grad_check.hpp"

using namespace alignkt;

namespace {

nc::Tensor col(std::vector<double> v) {
    const auto n = v.size();
    return nc::constant(nc::Array::matrix(n, 1, std::move(v)));
}

nc::Tensor vec(std::vector<double> v) { return nc::constant(nc::Array::row(std::move(v))); }

}  // namespace

TEST(Bce, KnownValue) {
    // -(log 0.9 + log 0.8) / 2
    const std::vector<double> t{1.0, 0.0};
    const std::vector<std::uint8_t> m{1, 1};
    EXPECT_NEAR(bce_loss(col({0.9, 0.2}), t, m).item(), 0.164252033486018, 1e-15);
}

TEST(Bce, MaskedEntriesIgnored) {
    const std::vector<double> t{1.0, 0.0, 1.0};
    const std::vector<std::uint8_t> m{1, 1, 0};
    EXPECT_NEAR(bce_loss(col({0.9, 0.2, 0.0001}), t, m).item(), 0.164252033486018, 1e-15);
    const std::vector<std::uint8_t> none{0, 0, 0};
    EXPECT_THROW(bce_loss(col({0.5, 0.5, 0.5}), t, none), std::invalid_argument);
}

TEST(Bce, ClampedAtExtremes) {
    const std::vector<double> t{1.0};
    const std::vector<std::uint8_t> m{1};
    EXPECT_NEAR(bce_loss(col({0.0}), t, m).item(), -std::log(1e-7), 1e-9);
    EXPECT_EQ(bce_loss(col({1.0}), t, m).item(), -std::log(1.0 - 1e-7));
}

TEST(Bce, Gradient) {
    nc::ParamStore ps;
    auto p = ps.add("p", nc::Array::matrix(3, 1, {0.3, 0.6, 0.9}));
    const std::vector<double> t{1.0, 0.0, 1.0};
    const std::vector<std::uint8_t> m{1, 1, 1};
    EXPECT_LT(nc::grad_check([&] { return bce_loss(p, t, m); }, ps).max_rel_error, 1e-7);
}

TEST(InfoNce, KnownValue) {
    // sim(a,p) = 1, sim(a,n) = 0, tau = 0.5: log(1 + e^{-2})
    const auto l = infonce({vec({1.0, 0.0})}, {vec({2.0, 0.0})}, {vec({0.0, 3.0})}, 0.5);
    EXPECT_NEAR(l.item(), std::log1p(std::exp(-2.0)), 1e-15);
    EXPECT_NEAR(infonce_from_sims(1.0, 0.0, 0.5), 0.1269280110429725, 1e-15);
}

TEST(InfoNce, SecondKnownValue) {
    // sim(a,p) = 0.6, sim(a,n) = 0.8 (3-4-5 triangle), tau = 0.2: log(1 + e^{1})
    const auto l = infonce({vec({3.0, 4.0})}, {vec({1.0, 0.0})}, {vec({0.0, 1.0})}, 0.2);
    EXPECT_NEAR(l.item(), 1.3132616875182228, 1e-14);
}

TEST(InfoNce, EqualSimilaritiesGiveLn2) {
    const auto l = infonce({vec({1.0, 1.0}), vec({0.0, 2.0})}, {vec({1.0, 1.0}), vec({3.0, 0.0})},
                           {vec({2.0, 2.0}), vec({-3.0, 0.0})}, 0.05);
    EXPECT_NEAR(l.item(), std::log(2.0), 1e-15);
}

TEST(InfoNce, ScaleInvariant) {
    const auto a = infonce({vec({0.3, -1.0, 2.0})}, {vec({0.1, 0.2, 0.3})}, {vec({-1.0, 0.5, 0.0})}, 0.1).item();
    const auto b = infonce({vec({3.0, -10.0, 20.0})}, {vec({0.01, 0.02, 0.03})}, {vec({-7.0, 3.5, 0.0})}, 0.1).item();
    EXPECT_NEAR(a, b, 1e-12);
}

TEST(InfoNce, Gradient) {
    nc::Rng rng(1);
    nc::ParamStore ps;
    std::vector<nc::Tensor> a, p, n;
    for (int i = 0; i < 3; ++i) {
        a.push_back(ps.add("a" + std::to_string(i), nc::Array::row({rng.normal(), rng.normal(), rng.normal()})));
        p.push_back(ps.add("p" + std::to_string(i), nc::Array::row({rng.normal(), rng.normal(), rng.normal()})));
        n.push_back(ps.add("n" + std::to_string(i), nc::Array::row({rng.normal(), rng.normal(), rng.normal()})));
    }
    EXPECT_LT(nc::grad_check([&] { return infonce(a, p, n, 0.5); }, ps).max_rel_error, 1e-6);
}

TEST(InfoNce, InvalidArguments) {
    EXPECT_THROW(infonce({vec({1.0})}, {vec({1.0})}, {vec({1.0})}, 0.0), std::invalid_argument);
    EXPECT_THROW(infonce({vec({1.0})}, {}, {vec({1.0})}, 0.1), std::invalid_argument);
    EXPECT_THROW(infonce({vec({0.0, 0.0})}, {vec({1.0, 0.0})}, {vec({1.0, 0.0})}, 0.1), nc::NumericError);
}

TEST(TotalLoss, Combination) {
    const auto r = total_loss(nc::constant(nc::Array::scalar(0.5)), nc::constant(nc::Array::scalar(0.7)),
                              nc::constant(nc::Array::scalar(0.2)), 0.1, 0.05);
    EXPECT_NEAR(r.total, 0.59, 1e-15);
    EXPECT_NEAR(r.total_tensor.item(), 0.59, 1e-15);
    const auto z = total_loss(nc::constant(nc::Array::scalar(0.5)), {}, {}, 0.1, 0.05);
    EXPECT_EQ(z.total, 0.5);
    EXPECT_THROW(total_loss(nc::constant(nc::Array::scalar(0.5)), {}, {}, -1.0, 0.05), std::invalid_argument);
}

TEST(Metrics, AucSmallCases) {
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y), 0.75);
    EXPECT_EQ(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.2, 0.3, 0.4}, y), 1.0);
    EXPECT_EQ(auc(std::vector<double>{0.4, 0.3, 0.2, 0.1}, y), 0.0);
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetric);
}

TEST(Metrics, AucMatchesPairCounting) {
    nc::Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(60);
        std::vector<double> p(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<double>(rng.below(8)) / 8.0;  // many ties
            y[i] = static_cast<int>(rng.below(2));
        }
        y[0] = 0;
        y[1] = 1;
        double wins = 0.0, pairs = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (y[i] == 1 && y[j] == 0) {
                    pairs += 1.0;
                    wins += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
                }
        EXPECT_NEAR(auc(p, y), wins / pairs, 1e-12);
    }
}

TEST(Metrics, Accuracy) {
    EXPECT_EQ(accuracy(std::vector<double>{0.5, 0.49, 0.9, 0.1}, std::vector<int>{1, 0, 0, 0}), 0.75);
}
