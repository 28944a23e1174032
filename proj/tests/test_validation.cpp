#include "test_util.hpp"

#include "ttrs/engine.hpp"
#include "ttrs/error.hpp"
#include "ttrs/markov_models.hpp"
#include "ttrs/validation.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>

#include <cmath>
#include <random>

using namespace ttrs;
using ttrs::testing::dense_chain;
using ttrs::testing::max_abs_diff;
using ttrs::testing::random_tt;

namespace {

RowMatrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    RowMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    Eigen::HouseholderQR<RowMatrix> qr(m);
    return qr.householderQ();
}

DenseTensor random_core(std::size_t l, std::size_t n, std::size_t r, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    DenseTensor g({l, n, r});
    for (auto& v : g.data()) v = nd(rng);
    return g;
}

// R1 o g o R2 for a core g of shape (l, n, r).
DenseTensor rotate(const DenseTensor& g, const RowMatrix& R1, const RowMatrix& R2) {
    const std::size_t l = g.extent(0), n = g.extent(1), r = g.extent(2);
    DenseTensor out({l, n, r}, 0.0);
    for (std::size_t x = 0; x < n; ++x) {
        RowMatrix slice(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(r));
        for (std::size_t a = 0; a < l; ++a)
            for (std::size_t b = 0; b < r; ++b) slice(Eigen::Index(a), Eigen::Index(b)) = g.at({a, x, b});
        const RowMatrix s = R1 * slice * R2;
        for (std::size_t a = 0; a < l; ++a)
            for (std::size_t b = 0; b < r; ++b) out.at({a, x, b}) = s(Eigen::Index(a), Eigen::Index(b));
    }
    return out;
}

DenseTensor subtract(const DenseTensor& a, const DenseTensor& b) {
    DenseTensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

MarkovSpec stationary_chain(std::size_t d, std::size_t n, std::uint64_t seed) {
    auto spec = random_markov_spec(Shape(d, n), 1, seed, true);
    const auto& K = spec.kernels[0];
    Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(Eigen::Index(n), 1.0 / double(n));
    RowMatrix Km(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n * n; ++i) Km.data()[i] = K[i];
    for (int it = 0; it < 2000; ++it) pi = pi * Km;
    pi /= pi.sum();
    spec.initial = DenseTensor({n}, std::vector<double>(pi.data(), pi.data() + n));
    spec.validate(1e-12);
    return spec;
}

double l2(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TEST(SolveCdeFull, ReproducesExactTt) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 5; ++t) {
        const auto p = tt_contract_full(random_tt(Shape(4, 3), {2, 2, 2}, rng));
        const auto tt = solve_cde_full(p, {2, 2, 2});
        EXPECT_EQ(tt.ranks(), (std::vector<std::size_t>{1, 2, 2, 2, 1}));
        double scale = 0;
        for (double v : p.values()) scale = std::max(scale, std::abs(v));
        EXPECT_LT(max_abs_diff(tt_contract_full(tt), p), 1e-10 * std::max(1.0, scale));
    }
}

TEST(SolveCdeFull, AgreesWithTtRsOnMarkovInput) {
    const auto spec = random_markov_spec(Shape(5, 3), 1, 4);
    const auto p = dense_chain(spec);
    const auto cde = solve_cde_full(p, {3, 3, 3, 3});
    const auto fit = tt_rs(p, RankSpec::uniform(3, 5), markov_sketch_plan(spec.extents, 1));
    EXPECT_LT(max_abs_diff(tt_contract_full(cde), tt_contract_full(fit.tt)), 1e-9);
}

TEST(SolveCdeFull, ProductDensityHasRankOneCores) {
    DenseTensor p(Shape(3, 4));
    const std::vector<double> u = {0.1, 0.2, 0.3, 0.4};
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = u[i / 16] * u[i / 4 % 4] * u[i % 4];
    const auto tt = solve_cde_full(p, {1, 1});
    EXPECT_EQ(tt.max_rank(), 1u);
    EXPECT_LT(max_abs_diff(tt_contract_full(tt), p), 1e-14);
}

TEST(SolveCdeFull, Errors) {
    std::mt19937_64 rng(2);
    const auto p = tt_contract_full(random_tt(Shape(4, 3), {2, 2, 2}, rng));
    EXPECT_THROW((void)solve_cde_full(p, {2, 3, 2}), RankError);
    EXPECT_THROW((void)solve_cde_full(p, {2, 1, 2}), RankError);
    EXPECT_THROW((void)solve_cde_full(DenseTensor(Shape(6, 7), 1.0), {1, 1, 1, 1, 1}), SizeError);
}

TEST(CoreDistance, ZeroForIdenticalCores) {
    std::mt19937_64 rng(3);
    const auto g = random_core(3, 4, 2, rng);
    const auto r = core_distance(g, g);
    EXPECT_LT(r.distance, 1e-14);
}

TEST(CoreDistance, RecoversRandomRotations) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
        const auto g = random_core(3, 5, 3, rng);
        const auto R1 = random_orthogonal(3, rng), R2 = random_orthogonal(3, rng);
        const auto r = core_distance(rotate(g, R1, R2), g);
        EXPECT_LE(r.distance, 1e-8) << "trial " << t;
    }
}

TEST(CoreDistance, NeverExceedsUnalignedDistance) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 30; ++t) {
        const auto a = random_core(2, 4, 3, rng), b = random_core(2, 4, 3, rng);
        const auto r = core_distance(a, b);
        EXPECT_GE(r.distance, 0.0);
        EXPECT_LE(r.distance, triple_norm(subtract(a, b)) + 1e-14);
        // Reported rotations reproduce the reported value.
        EXPECT_NEAR(triple_norm(subtract(a, rotate(b, r.R1, r.R2))), r.distance, 1e-12);
        EXPECT_LT((r.R1 * r.R1.transpose() - RowMatrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((r.R2 * r.R2.transpose() - RowMatrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE(r.iterations, kProcrustesMaxIterations);
    }
}

TEST(CoreDistance, ShapeMismatch) {
    std::mt19937_64 rng(6);
    EXPECT_THROW((void)core_distance(random_core(2, 3, 2, rng), random_core(2, 3, 3, rng)), ShapeError);
}

TEST(CoreDistance, NormalizedFitDistanceOfExactFitIsSmall) {
    const auto spec = random_markov_spec(Shape(5, 3), 1, 8);
    const auto p = dense_chain(spec);
    const auto plan = markov_sketch_plan(spec.extents, 1);
    const auto a = tt_rs(p, RankSpec::uniform(3, 5), plan);
    const auto b = solve_cde_full(p, {3, 3, 3, 3});
    // Different gauges of the same tensor; the aligned distance is not zero in
    // general (gauges differ by invertible, not orthogonal, maps) but is finite.
    const double dist = max_normalized_core_distance(a.tt, a.tt);
    EXPECT_LT(dist, 1e-14);
    EXPECT_TRUE(std::isfinite(max_normalized_core_distance(a.tt, b)));
}

TEST(Constants, ProductDensityRankOneIdentity) {
    const std::vector<std::vector<double>> m = {{0.2, 0.8}, {0.1, 0.3, 0.6}, {0.5, 0.5}, {0.3, 0.7}};
    MarkovSpec s;
    s.order = 1;
    s.extents = {2, 3, 2, 2};
    s.initial = DenseTensor({2}, m[0]);
    for (std::size_t k = 1; k < 4; ++k) {
        DenseTensor K({m[k - 1].size(), m[k].size()});
        for (std::size_t a = 0; a < m[k - 1].size(); ++a)
            for (std::size_t b = 0; b < m[k].size(); ++b) K.at({a, b}) = m[k][b];
        s.kernels.push_back(K);
    }
    const auto rep = compute_constants(s, RankSpec::uniform(1, 4));
    // sigma_1 of a rank-1 marginal unfolding is the product of the factor norms.
    double expect = l2(m[0]) * l2(m[1]);
    for (std::size_t k = 1; k < 3; ++k) expect = std::min(expect, l2(m[k - 1]) * l2(m[k]) * l2(m[k + 1]));
    EXPECT_NEAR(rep.c_P, expect, 1e-14);
    EXPECT_GE(rep.c_A, 1.0);
    EXPECT_GT(rep.c_G, 0.0);
}

TEST(Constants, BoundsAndJson) {
    const auto spec = random_markov_spec(Shape(6, 3), 1, 3);
    const auto rep = compute_constants(spec, RankSpec::uniform(3, 6));
    EXPECT_GE(rep.c_A, 1.0);
    EXPECT_GT(rep.c_P, 0.0);
    EXPECT_GT(rep.c_G, 0.0);
    EXPECT_EQ(rep.marginal_spectra.size(), 5u);
    EXPECT_EQ(rep.core_norms.size(), 6u);
    double minnorm = rep.core_norms[0];
    for (double v : rep.core_norms) minnorm = std::min(minnorm, v);
    EXPECT_DOUBLE_EQ(rep.c_G, minnorm);
    const auto j = rep.to_json();
    for (const char* key : {"c_P", "c_G", "c_A", "ranks", "marginal_spectra", "core_norms", "pinv_norms"})
        EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Constants, StationaryHomogeneousChainIndependentOfD) {
    const auto base = compute_constants(stationary_chain(5, 3, 11), RankSpec::uniform(3, 5));
    for (std::size_t d : {10u, 20u}) {
        const auto rep = compute_constants(stationary_chain(d, 3, 11), RankSpec::uniform(3, d));
        EXPECT_NEAR(rep.c_P, base.c_P, 1e-10 * base.c_P) << "d = " << d;
        EXPECT_NEAR(rep.c_G, base.c_G, 1e-8 * base.c_G) << "d = " << d;
        EXPECT_NEAR(rep.c_A, base.c_A, 1e-8 * base.c_A) << "d = " << d;
    }
}

TEST(SampleComplexity, FormulaAndScaling) {
    DiagnosticsReport rep;
    rep.c_A = 2.0;
    rep.c_G = 0.5;
    rep.c_P = 0.25;
    const auto a = check_sample_complexity(rep, 9, 3, 8, 0.1, 0.05);
    const double expect = 16.0 * 4.0 * 9.0 * 25.0 * std::pow(9.0, 5) * 3.0 * std::log(2.0 * 729.0 * 8.0 / 0.05) / 0.01;
    EXPECT_NEAR(a.per_core, expect, 1e-9 * expect);
    EXPECT_NEAR(a.contraction, a.per_core * 144.0 / 16.0 * 64.0, 1e-9 * a.contraction);
    const auto b = check_sample_complexity(rep, 9, 3, 8, 0.2, 0.05);
    EXPECT_NEAR(a.per_core / b.per_core, 4.0, 1e-12);
    const auto c = check_sample_complexity(rep, 9, 3, 16, 0.1, 0.05);
    EXPECT_NEAR(c.per_core / a.per_core, std::log(2.0 * 729.0 * 16.0 / 0.05) / std::log(2.0 * 729.0 * 8.0 / 0.05), 1e-12);
    rep.c_G = 0.0;
    EXPECT_THROW((void)check_sample_complexity(rep, 9, 3, 8, 0.1, 0.05), DegenerateError);
}

TEST(Concentration, BoundFormula) {
    EXPECT_NEAR(concentration_bound(9, 3, 8, 50000, 0.05), std::sqrt(std::log(2.0 * 729.0 * 8.0 / 0.05) / 100000.0), 1e-15);
    EXPECT_LT(concentration_bound(9, 3, 8, 200000, 0.05), concentration_bound(9, 3, 8, 50000, 0.05));
}

TEST(Concentration, AncestralSamplesWithinBound) {
    const auto spec = random_markov_spec(Shape(6, 3), 1, 12);
    std::size_t within = 0;
    for (std::uint64_t t = 0; t < 20; ++t) within += check_concentration(sample_ancestral(spec, 20000, t), spec, 0.05).within;
    EXPECT_GE(within, 19u);
}

TEST(Concentration, WrongModelIsDetected) {
    const auto spec = random_markov_spec(Shape(6, 3), 1, 12);
    const auto other = random_markov_spec(Shape(6, 3), 1, 13);
    const auto r = check_concentration(sample_ancestral(spec, 100000, 1), other, 0.05);
    EXPECT_FALSE(r.within);
    EXPECT_GT(r.worst_ratio, 1.0);
}
