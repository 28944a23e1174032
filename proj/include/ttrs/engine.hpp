#pragma once

/// The four stages of the estimator (sketch, trim, form system, solve) and
/// the two drivers: recursive left sketches (tt_rs) and explicit left
/// sketches (tt_s).

#include "ttrs/empirical_data.hpp"
#include "ttrs/sketching.hpp"
#include "ttrs/tensor_core.hpp"

#include <string>
#include <vector>

namespace ttrs {

/// Target ranks per cut, or a relative singular-value threshold.
struct RankSpec {
    std::vector<std::size_t> ranks;  ///< one per cut; empty selects threshold mode
    double threshold = 0.0;          ///< keep sigma_i > threshold * sigma_1

    static RankSpec fixed(std::vector<std::size_t> ranks);
    static RankSpec uniform(std::size_t rank, std::size_t dims);
    static RankSpec relative(double threshold);
};

/// Shrink each rank to what the plan's sketch sizes can support.
[[nodiscard]] std::vector<std::size_t> clip_ranks(std::vector<std::size_t> ranks, const SketchPlan& plan);

struct TrimResult {
    std::vector<DenseTensor> B;                    ///< per core, (m_{i-1}, n_i, r_i); last is Phi_{d-1}
    std::vector<std::size_t> ranks;                ///< per cut
    std::vector<Eigen::VectorXd> singular_values;  ///< full spectrum per cut
    std::vector<RowMatrix> projections;            ///< per cut V_r Sigma_r^{-1}, when requested
};

/// Top-r left singular vectors of each Phi_i unfolded as ((m, n); l).  Each
/// vector's largest-magnitude entry is made positive.
[[nodiscard]] TrimResult trim(const std::vector<DenseTensor>& phi, const RankSpec& ranks, bool keep_projections = false);

struct SystemMatrices {
    std::vector<RowMatrix> A;  ///< per cut, (m_c x r_c)
};

/// A_c = s_c applied to B_c (recursive left sketches).
[[nodiscard]] SystemMatrices form_system(const TrimResult& trimmed, const SketchPlan& plan);
/// A_c = psi_c * q_c (explicit left sketches; needs projections).
[[nodiscard]] SystemMatrices form_system(const TrimResult& trimmed, const std::vector<RowMatrix>& psi);

struct FitReport {
    std::string algorithm;
    std::vector<std::size_t> ranks;
    std::vector<std::vector<double>> trim_singular_values;
    std::vector<double> core_residuals;  ///< ||A X - B||_F per core (0 for the first)
    std::vector<double> sigma_min;       ///< per cut, smallest singular value of A_c (0 if rank deficient)
    std::vector<double> sigma_max;
    std::vector<std::string> warnings;
    double sketch_ms = 0, trim_ms = 0, system_ms = 0, solve_ms = 0;

    [[nodiscard]] nlohmann::json to_json() const;
};

struct FitResult {
    TensorTrain tt;
    FitReport report;
};

inline constexpr double kPinvCutoff = 1e-12;

/// Least-squares solution X = A^+ B with singular values below cutoff*sigma_max dropped.
[[nodiscard]] RowMatrix pinv_solve(const Eigen::Ref<const RowMatrix>& A, const Eigen::Ref<const RowMatrix>& B,
                                   double cutoff = kPinvCutoff);

/// G_0 = B_0; A_{i-1} G_i = B_i in the least-squares sense.
[[nodiscard]] FitResult solve_cores(const SystemMatrices& system, const TrimResult& trimmed,
                                    double condition_tolerance = kPinvCutoff);

[[nodiscard]] FitResult tt_rs_from_sketches(const std::vector<DenseTensor>& phi, const RankSpec& ranks,
                                            const SketchPlan& plan);
[[nodiscard]] FitResult tt_rs(const SampleSet& samples, const RankSpec& ranks, const SketchPlan& plan);
[[nodiscard]] FitResult tt_rs(const DenseTensor& p, const RankSpec& ranks, const SketchPlan& plan);

[[nodiscard]] FitResult tt_s_from_sketches(const ExplicitSketches& sk, const RankSpec& ranks);
[[nodiscard]] FitResult tt_s(const SampleSet& samples, const RankSpec& ranks, const std::vector<LeftSketch>& left,
                             const SketchPlan& right_plan);
[[nodiscard]] FitResult tt_s(const DenseTensor& p, const RankSpec& ranks, const std::vector<LeftSketch>& left,
                             const SketchPlan& right_plan);

}  // namespace ttrs
