#pragma once

/// Reference machinery for checking the estimator: a brute-force solver of
/// the full core equations, a rotation-aligned distance between cores, the
/// perturbation constants of a Markov chain, and sample-size bounds.

#include "ttrs/engine.hpp"
#include "ttrs/markov_models.hpp"
#include "ttrs/tensor_core.hpp"

#include <json.hpp>

#include <vector>

namespace ttrs {

struct DiagnosticsReport {
    double c_P = 0.0;  ///< min over cuts of sigma_{r_c} of the designated marginal unfolding
    double c_G = 0.0;  ///< min over cores of triple_norm(G_k)
    double c_A = 1.0;  ///< max(1, max over cuts of ||A_c^+||)
    std::vector<std::size_t> ranks;
    std::vector<std::vector<double>> marginal_spectra;  ///< per cut
    std::vector<double> core_norms;                     ///< triple_norm per core
    std::vector<double> pinv_norms;                     ///< ||A_c^+|| per cut

    [[nodiscard]] nlohmann::json to_json() const;
};

struct CoreDistanceResult {
    double distance = 0.0;
    RowMatrix R1, R2;
    std::size_t iterations = 0;
    bool converged = false;
};

inline constexpr std::size_t kCdeMaxEntries = 100'000;
inline constexpr double kCdeRankTolerance = 1e-10;

/// Solves the full (unsketched) core equations.  Exponential cost; for
/// reference use on small tensors only.  Throws RankError when an unfolding
/// rank differs from the declared rank.
[[nodiscard]] TensorTrain solve_cde_full(const DenseTensor& p, const std::vector<std::size_t>& ranks);

inline constexpr std::size_t kProcrustesMaxIterations = 100;
inline constexpr double kProcrustesTolerance = 1e-10;
inline constexpr std::size_t kProcrustesSignBits = 6;

/// Upper bound on min over orthogonal R1, R2 of triple_norm(g_hat - R1 g R2),
/// by alternating Procrustes steps on the Frobenius objective, restarted from
/// the identity and from sign-adjusted matches of the mode-1 Gram eigenbases.
/// Never exceeds triple_norm(g_hat - g_star).  `iterations` belongs to the
/// run that produced the reported minimum.
[[nodiscard]] CoreDistanceResult core_distance(const DenseTensor& g_hat, const DenseTensor& g_star);

/// max_k core_distance(fit_k, exact_k) / triple_norm(exact_k).
[[nodiscard]] double max_normalized_core_distance(const TensorTrain& fit, const TensorTrain& exact);

/// Constants from an exact fit with the chain's own Markov plan.
[[nodiscard]] DiagnosticsReport compute_constants(const MarkovSpec& spec, const RankSpec& ranks);

struct SampleComplexity {
    double per_core = 0.0;     ///< N for core distances within delta
    double contraction = 0.0;  ///< N for the sup-norm contraction error within delta
};
[[nodiscard]] SampleComplexity check_sample_complexity(const DiagnosticsReport& report, std::size_t n, std::size_t r,
                                                       std::size_t d, double delta, double eta);

/// sqrt(log(2 n^k d / eta) / (2 N)), the deviation bound for k-variable windows.
[[nodiscard]] double concentration_bound(std::size_t n, std::size_t window, std::size_t d, std::size_t samples,
                                         double eta);

struct ConcentrationCheck {
    bool within = true;
    double worst_ratio = 0.0;  ///< max deviation / bound over all windows checked
};
/// Sup-norm deviations of all contiguous 1-, 2- and 3-variable window
/// marginals against their bounds.
[[nodiscard]] ConcentrationCheck check_concentration(const SampleSet& s, const MarkovSpec& spec, double eta);

}  // namespace ttrs
