#include "test_util.hpp"

#include "ttrs/engine.hpp"
#include "ttrs/error.hpp"
#include "ttrs/markov_models.hpp"
#include "ttrs/sketching.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <random>

using namespace ttrs;
using ttrs::testing::dense_chain;
using ttrs::testing::max_abs_diff;
using ttrs::testing::random_tt;

namespace {

RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    RowMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

RowMatrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
    Eigen::HouseholderQR<RowMatrix> qr(random_matrix(n, n, rng));
    return qr.householderQ();
}

double spectral_norm(const RowMatrix& m) {
    return Eigen::JacobiSVD<RowMatrix>(m).singularValues()(0);
}

double pinv_norm(const RowMatrix& m) {
    const auto s = Eigen::JacobiSVD<RowMatrix>(m).singularValues();
    return 1.0 / s(s.size() - 1);
}

DenseTensor tensor_from(const RowMatrix& m, Shape shape) {
    return DenseTensor(std::move(shape), std::vector<double>(m.data(), m.data() + m.size()));
}

}  // namespace

TEST(Trim, ColumnsAreOrthonormal) {
    std::mt19937_64 rng(1);
    const Shape e = {3, 4, 3, 2};
    const auto p = tt_contract_full(ttrs::testing::random_density_tt(e, {2, 3, 2}, rng));
    const auto phi = run_sketching(p, gaussian_sketch_plan(e, 4, 4, 2));
    const auto tr = trim(phi, RankSpec::fixed({2, 3, 2}));
    ASSERT_EQ(tr.B.size(), 4u);
    for (std::size_t c = 0; c < 3; ++c) {
        const auto U = tr.B[c].matrix(tr.B[c].extent(0) * tr.B[c].extent(1));
        const RowMatrix G = U.transpose() * U;
        EXPECT_LT((G - RowMatrix::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff(), 1e-10);
    }
    EXPECT_EQ(max_abs_diff(tr.B[3], phi[3]), 0.0);
}

TEST(Trim, SignConventionLargestEntryPositive) {
    std::mt19937_64 rng(2);
    const RowMatrix M = random_matrix(6, 4, rng);
    const auto tr = trim({tensor_from(M, {1, 6, 4}), tensor_from(random_matrix(4, 1, rng), {4, 1, 1})},
                         RankSpec::fixed({3}));
    const auto U = tr.B[0].matrix(6);
    for (Eigen::Index j = 0; j < U.cols(); ++j) {
        Eigen::Index arg = 0;
        U.col(j).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(U(arg, j), 0.0);
    }
    // Negating the input leaves B unchanged.
    const auto neg = trim({tensor_from(-M, {1, 6, 4}), tensor_from(random_matrix(4, 1, rng), {4, 1, 1})},
                          RankSpec::fixed({3}));
    EXPECT_LT(max_abs_diff(neg.B[0], tr.B[0]), 1e-12);
}

TEST(Trim, ExactRankReconstruction) {
    std::mt19937_64 rng(3);
    const RowMatrix M = random_matrix(8, 3, rng) * random_matrix(3, 5, rng);
    const auto tr = trim({tensor_from(M, {2, 4, 5}), DenseTensor({5, 1, 1}, 1.0)}, RankSpec::fixed({3}));
    const auto U = tr.B[0].matrix(8);
    EXPECT_LT((U * (U.transpose() * M) - M).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Trim, OrthonormalInputKeepsColumnSpace) {
    std::mt19937_64 rng(4);
    Eigen::HouseholderQR<RowMatrix> qr(random_matrix(7, 3, rng));
    const RowMatrix Q = RowMatrix(qr.householderQ()).leftCols(3);
    const auto tr = trim({tensor_from(Q, {1, 7, 3}), DenseTensor({3, 1, 1}, 1.0)}, RankSpec::fixed({3}));
    const auto U = tr.B[0].matrix(7);
    EXPECT_LT((U * U.transpose() - Q * Q.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Trim, ThresholdSelectsNumericalRank) {
    std::mt19937_64 rng(5);
    const RowMatrix M = random_matrix(9, 2, rng) * random_matrix(2, 6, rng);
    const auto tr = trim({tensor_from(M, {3, 3, 6}), DenseTensor({6, 1, 1}, 1.0)}, RankSpec::relative(1e-10));
    EXPECT_EQ(tr.ranks, (std::vector<std::size_t>{2}));
    EXPECT_THROW((void)RankSpec::relative(0.0), ArgumentError);
}

TEST(Trim, Errors) {
    std::mt19937_64 rng(6);
    const auto last = DenseTensor({3, 1, 1}, 1.0);
    EXPECT_THROW((void)trim({tensor_from(random_matrix(2, 3, rng), {1, 2, 3}), last}, RankSpec::fixed({3})), RankError);
    EXPECT_THROW((void)trim({DenseTensor({1, 4, 3}, 0.0), last}, RankSpec::fixed({1})), DegenerateError);
    EXPECT_THROW((void)trim({tensor_from(random_matrix(4, 3, rng), {1, 4, 3}), last}, RankSpec::fixed({0})), RankError);
}

TEST(ClipRanks, LimitedBySketchSizes) {
    const auto o1 = markov_sketch_plan(Shape(6, 2), 1);
    EXPECT_EQ(clip_ranks({3, 3, 3, 3, 3}, o1), (std::vector<std::size_t>(5, 2)));
    const auto o2 = markov_sketch_plan(Shape(6, 2), 2);
    EXPECT_EQ(clip_ranks({3, 3, 3, 3, 3}, o2), (std::vector<std::size_t>{2, 3, 3, 3, 2}));
}

TEST(FormSystem, MarkovRowSums) {
    const auto spec = random_markov_spec({3, 2, 4, 3}, 1, 7);
    const auto plan = markov_sketch_plan(spec.extents, 1);
    const auto tr = trim(run_sketching(dense_chain(spec), plan), RankSpec::fixed(clip_ranks({9, 9, 9}, plan)));
    const auto sys = form_system(tr, plan);
    // First cut: A_0 = B_0.
    EXPECT_EQ((sys.A[0] - tr.B[0].matrix(3)).cwiseAbs().maxCoeff(), 0.0);
    for (std::size_t c = 1; c < 3; ++c) {
        const auto& B = tr.B[c];
        RowMatrix expect = RowMatrix::Zero(static_cast<Eigen::Index>(B.extent(1)), static_cast<Eigen::Index>(B.extent(2)));
        for (std::size_t a = 0; a < B.extent(0); ++a)
            for (std::size_t x = 0; x < B.extent(1); ++x)
                for (std::size_t j = 0; j < B.extent(2); ++j) expect(Eigen::Index(x), Eigen::Index(j)) += B.at({a, x, j});
        EXPECT_LT((sys.A[c] - expect).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(FormSystem, DensePlanMatchesExplicitProjectionPath) {
    // Recursive A_c agrees with the explicit S_c o Phi_bar_c o q_c form on exact input.
    std::mt19937_64 rng(8);
    const Shape e = {3, 2, 3, 2};
    const auto p = tt_contract_full(ttrs::testing::random_density_tt(e, {2, 2, 2}, rng));
    const auto plan = gaussian_sketch_plan(e, 2, 3, 9);
    const auto ranks = RankSpec::fixed({2, 2, 2});
    const auto tr = trim(run_sketching(p, plan), ranks, true);
    const auto rec = form_system(tr, plan);
    const auto ex = run_explicit_sketching(p, explicit_left_sketches(plan), plan);
    const auto exp_sys = form_system(tr, ex.psi);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_LT((rec.A[c] - exp_sys.A[c]).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PinvSolve, MatchesNormalEquations) {
    std::mt19937_64 rng(9);
    const RowMatrix A = random_matrix(9, 4, rng), B = random_matrix(9, 5, rng);
    const RowMatrix X = pinv_solve(A, B);
    const RowMatrix oracle = (A.transpose() * A).inverse() * A.transpose() * B;
    EXPECT_LT((X - oracle).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_THROW((void)pinv_solve(RowMatrix::Zero(3, 2), RowMatrix::Ones(3, 1)), DegenerateError);
    EXPECT_THROW((void)pinv_solve(A, random_matrix(8, 1, rng)), ShapeError);
}

TEST(PinvSolve, DropsNullDirections) {
    std::mt19937_64 rng(10);
    const RowMatrix A = random_matrix(6, 2, rng) * random_matrix(2, 3, rng);  // rank 2, 3 columns
    const RowMatrix B = random_matrix(6, 2, rng);
    const RowMatrix X = pinv_solve(A, B);
    const RowMatrix oracle = A.completeOrthogonalDecomposition().pseudoInverse() * B;
    EXPECT_LT((X - oracle).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SolveCores, IdentitySystemReturnsB) {
    std::mt19937_64 rng(11);
    TrimResult tr;
    tr.B = {tensor_from(random_matrix(3, 2, rng), {1, 3, 2}), tensor_from(random_matrix(2, 6, rng), {2, 3, 2}),
            tensor_from(random_matrix(2, 3, rng), {2, 3, 1})};
    tr.ranks = {2, 2};
    SystemMatrices sys{{RowMatrix::Identity(2, 2), RowMatrix::Identity(2, 2)}};
    const auto fit = solve_cores(sys, tr);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(max_abs_diff(fit.tt.core(k), tr.B[k]), 0.0);
    EXPECT_TRUE(fit.report.warnings.empty());
}

TEST(SolveCores, RankDeficientSystemWarns) {
    TrimResult tr;
    tr.B = {DenseTensor({1, 2, 2}, 1.0), DenseTensor({2, 2, 1}, 1.0)};
    tr.ranks = {2};
    SystemMatrices sys{{RowMatrix::Ones(2, 2)}};
    const auto fit = solve_cores(sys, tr);
    EXPECT_EQ(fit.report.warnings.size(), 1u);
    EXPECT_LT(fit.report.sigma_min[0], 1e-12);
}

TEST(TtRs, ExactMarkovRecovery) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto spec = random_markov_spec(Shape(5, 3), 1, seed);
        const auto p = dense_chain(spec);
        const auto plan = markov_sketch_plan(spec.extents, 1);
        const auto fit = tt_rs(p, RankSpec::uniform(3, 5), plan);
        EXPECT_LT(max_abs_diff(tt_contract_full(fit.tt), p), 1e-10) << "seed " << seed;
        for (double r : fit.report.core_residuals) {
            EXPECT_GE(r, 0.0);
            EXPECT_LT(r, 1e-10);
        }
        EXPECT_EQ(fit.report.algorithm, "tt-rs");
    }
}

TEST(TtRs, ExactOrderTwoRecovery) {
    const auto spec = random_markov_spec(Shape(6, 2), 2, 3);
    const auto p = dense_chain(spec);
    const auto plan = markov_sketch_plan(spec.extents, 2);
    const auto fit = tt_rs(p, RankSpec::fixed(clip_ranks(std::vector<std::size_t>(5, 4), plan)), plan);
    EXPECT_LT(max_abs_diff(tt_contract_full(fit.tt), p), 1e-10);
}

TEST(TtRs, GaussianPlanRecoversRandomTt) {
    std::mt19937_64 rng(12);
    const Shape e(4, 3);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto truth = random_tt(e, {2, 2, 2}, rng);
        const auto p = tt_contract_full(truth);
        const auto fit = tt_rs(p, RankSpec::uniform(2, 4), gaussian_sketch_plan(e, 2, 2, 100 + seed));
        EXPECT_LT(max_abs_diff(tt_contract_full(fit.tt), p), 1e-8 * max_abs_diff(p, DenseTensor(e, 0.0))) << "seed " << seed;
    }
}

TEST(TtRs, SamplesAndDenseAgreeOnEmpiricalMeasure) {
    const auto spec = random_markov_spec(Shape(4, 3), 1, 2);
    const auto s = sample_ancestral(spec, 2000, 5);
    DenseTensor phat(spec.extents, 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < 4; ++k) off = off * 3 + s.row(i)[k];
        phat[off] += 1.0 / 2000.0;
    }
    const auto plan = markov_sketch_plan(spec.extents, 1);
    const auto a = tt_rs(s, RankSpec::uniform(3, 4), plan);
    const auto b = tt_rs(phat, RankSpec::uniform(3, 4), plan);
    EXPECT_LT(tt_rel_l2_error(a.tt, b.tt), 1e-12);
}

TEST(TtS, AgreesWithTtRsOnExactInput) {
    std::mt19937_64 rng(13);
    const Shape e = {3, 3, 2, 3};
    const auto p = tt_contract_full(ttrs::testing::random_density_tt(e, {2, 2, 2}, rng));
    const auto plan = gaussian_sketch_plan(e, 3, 3, 14);
    const auto ranks = RankSpec::uniform(2, 4);
    const auto rs = tt_rs(p, ranks, plan);
    const auto s = tt_s(p, ranks, explicit_left_sketches(plan), plan);
    EXPECT_LT(tt_rel_l2_error(rs.tt, s.tt), 1e-9);
    EXPECT_EQ(s.report.algorithm, "tt-s");
}

TEST(TtS, WindowSketchesRecoverMarkovChain) {
    const auto spec = random_markov_spec(Shape(5, 3), 1, 21);
    const auto p = dense_chain(spec);
    const auto plan = markov_sketch_plan(spec.extents, 1);
    const auto fit = tt_s(p, RankSpec::uniform(3, 5), explicit_left_sketches(plan), plan);
    EXPECT_LT(max_abs_diff(tt_contract_full(fit.tt), p), 1e-10);
}

TEST(TtS, VanishingSingularValueIsDegenerate) {
    // A product density has rank-1 sketches; asking for rank 2 leaves a zero singular value.
    const Shape e(4, 3);
    DenseTensor p(e, 1.0 / 81.0);
    const auto plan = markov_sketch_plan(e, 1);
    EXPECT_THROW((void)tt_s(p, RankSpec::uniform(2, 4), explicit_left_sketches(plan), plan), DegenerateError);
}

TEST(SolveCores, RotationInsensitive) {
    const auto spec = random_markov_spec(Shape(5, 3), 1, 31);
    const auto plan = markov_sketch_plan(spec.extents, 1);
    const auto tr = trim(run_sketching(dense_chain(spec), plan), RankSpec::uniform(3, 5));
    const auto base = solve_cores(form_system(tr, plan), tr);
    std::mt19937_64 rng(32);
    auto rotated = tr;
    for (std::size_t c = 0; c + 1 < rotated.B.size(); ++c) {
        auto& B = rotated.B[c];
        const RowMatrix R = random_orthogonal(static_cast<Eigen::Index>(B.extent(2)), rng);
        B = tensor_from(B.matrix(B.extent(0) * B.extent(1)) * R, B.shape());
    }
    const auto rot = solve_cores(form_system(rotated, plan), rotated);
    EXPECT_LT(max_abs_diff(tt_contract_full(rot.tt), tt_contract_full(base.tt)), 1e-9);
}

TEST(SolveCores, PerturbationBoundHolds) {
    // A o X = B with B in range(A); perturbed solve obeys the tensor-equation bound.
    std::mt19937_64 rng(33);
    std::normal_distribution<double> nd;
    const Eigen::Index m = 6, n = 3, l1 = 4, l2 = 2;
    for (int trial = 0; trial < 200; ++trial) {
        const RowMatrix A = random_matrix(m, n, rng);
        const RowMatrix X = random_matrix(n, l1 * l2, rng);
        const RowMatrix B = A * X;
        RowMatrix dA = random_matrix(m, n, rng);
        const double scale = std::uniform_real_distribution<double>(1e-6, 0.5)(rng);
        dA *= scale / (pinv_norm(A) * spectral_norm(dA));
        RowMatrix dB = random_matrix(m, l1 * l2, rng) * std::pow(10.0, -3.0 * std::abs(nd(rng)));
        const RowMatrix X2 = pinv_solve(A + dA, B + dB);
        const auto triple = [&](const RowMatrix& Y) { return triple_norm(tensor_from(Y, {std::size_t(n), std::size_t(l1), std::size_t(l2)})); };
        const double pa = pinv_norm(A), na = spectral_norm(dA);
        ASSERT_LE(pa * na, 0.5 + 1e-12);
        const double bound =
            std::sqrt(8.0 * m * l2) * pa * (na * triple(X) + dB.cwiseAbs().maxCoeff()) / (1.0 - pa * na);
        EXPECT_LE(triple(X2 - X), bound * (1 + 1e-9)) << "trial " << trial;
    }
}

TEST(FitReport, JsonFields) {
    const auto spec = random_markov_spec(Shape(4, 2), 1, 1);
    const auto fit = tt_rs(dense_chain(spec), RankSpec::uniform(2, 4), markov_sketch_plan(spec.extents, 1));
    const auto j = fit.report.to_json();
    EXPECT_EQ(j.at("algorithm"), "tt-rs");
    EXPECT_EQ(j.at("ranks").size(), 3u);
    EXPECT_EQ(j.at("core_residuals").size(), 4u);
    EXPECT_TRUE(j.contains("warnings"));
}
