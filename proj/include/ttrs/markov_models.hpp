#pragma once

/// Ground-truth models: generic Markov chains of order m, the Ginzburg-Landau
/// chain (discretized and continuous), the short-range Ising chain, exact
/// tensor trains for them, and samplers.

#include "ttrs/empirical_data.hpp"
#include "ttrs/sketching.hpp"
#include "ttrs/tensor_core.hpp"

#include <cstdint>
#include <vector>

namespace ttrs {

/// p(x) = p_init(x_0..x_{m-1}) * prod_{k>=m} K_k(x_{k-m}..x_{k-1}, x_k).
struct MarkovSpec {
    std::size_t order = 1;
    Shape extents;
    DenseTensor initial;               ///< joint law of x_0..x_{m-1}
    std::vector<DenseTensor> kernels;  ///< for k = m..d-1, or a single shared kernel
    bool homogeneous = false;

    [[nodiscard]] std::size_t dims() const noexcept { return extents.size(); }
    /// Kernel of variable k (k >= order), last index is x_k.
    [[nodiscard]] const DenseTensor& kernel(std::size_t k) const;
    /// Throws on bad shapes, negative entries or non-normalized rows.
    void validate(double tol = 1e-12) const;
};

/// Random chain with entries drawn uniformly from [floor, 1] and normalized.
[[nodiscard]] MarkovSpec random_markov_spec(const Shape& extents, std::size_t order, std::uint64_t seed,
                                            bool homogeneous = false, double floor = 0.05);

/// Unnormalized chain density: log p = sum_k log_factors[k](x_{max(0,k-m)}..x_k).
struct ChainFactors {
    std::size_t order = 1;
    Shape extents;
    std::vector<DenseTensor> log_factors;

    [[nodiscard]] std::size_t dims() const noexcept { return extents.size(); }
    [[nodiscard]] std::size_t window_first(std::size_t k) const noexcept { return k >= order ? k - order : 0; }
    [[nodiscard]] double log_weight(std::span<const std::uint16_t> x) const;
};

/// Normalized chain with the same density (log-domain backward messages).
[[nodiscard]] MarkovSpec factors_to_markov(const ChainFactors& f);

struct GinzburgLandauSpec {
    std::size_t dims = 8;
    double lower = -4.0;
    double upper = 4.0;
    double beta = 1.0;
    double lambda = 1.0;
    double h = 1.0;
};

/// Pair term of the energy; the quartic well belongs to the first argument.
[[nodiscard]] double gl_pair_energy(const GinzburgLandauSpec& s, double u, double v);
/// Energy with zero boundary values on both ends.
[[nodiscard]] double gl_energy(const GinzburgLandauSpec& s, std::span<const double> x);

struct DiscretizedGL {
    std::vector<double> grid;  ///< lower + i (upper - lower) / (n - 1)
    ChainFactors factors;
    MarkovSpec chain;
};
[[nodiscard]] DiscretizedGL gl_discretize(const GinzburgLandauSpec& s, std::size_t n);

struct IsingSpec {
    std::size_t dims = 8;
    double beta = 0.4;
    std::vector<int> alphabet = {-1, 1};
};

/// J_ij = -1/(1+|i-j|) for |i-j| <= 2, else 0 (diagonal included).
[[nodiscard]] double ising_coupling(std::size_t i, std::size_t j);
/// sum over all ordered pairs (i, j) of J_ij x_i x_j.
[[nodiscard]] double ising_energy(std::span<const int> x);
[[nodiscard]] ChainFactors ising_factors(const IsingSpec& s);
/// Order-2 chain with the Boltzmann law exp(-beta E) / Z.
[[nodiscard]] MarkovSpec ising_spec_to_markov(const IsingSpec& s);

/// Exact tensor train of the chain (bond = last m variables, with states that
/// the rest of the chain cannot tell apart merged).
[[nodiscard]] TensorTrain markov_to_tt(const MarkovSpec& spec);
/// Exact marginal of the contiguous window [first, last].
[[nodiscard]] DenseTensor markov_marginal(const MarkovSpec& spec, std::size_t first, std::size_t last);
/// Exact sketches of a window plan, without materializing the density.
[[nodiscard]] std::vector<DenseTensor> markov_exact_sketches(const MarkovSpec& spec, const SketchPlan& plan);

[[nodiscard]] SampleSet sample_ancestral(const MarkovSpec& spec, std::size_t n_samples, std::uint64_t seed);

inline constexpr std::size_t kDefaultBurnIn = 1000;
inline constexpr std::size_t kDefaultThin = 10;
inline constexpr double kDefaultMhSigma = 0.5;

/// Single-site systematic-scan Gibbs, one chain, one sample every `thin` sweeps.
[[nodiscard]] SampleSet sample_gibbs(const ChainFactors& f, std::size_t n_samples, std::size_t burn_in,
                                     std::size_t thin, std::uint64_t seed);

/// Per-coordinate Gaussian random-walk Metropolis with reflection at the
/// interval ends, one chain, one sample every `thin` sweeps.
[[nodiscard]] SampleSet sample_mh_continuous(const GinzburgLandauSpec& s, std::size_t n_samples, double sigma,
                                             std::size_t burn_in, std::size_t thin, std::uint64_t seed);

/// Independent draws from the continuous chain: Nystrom backward messages on
/// a fine table plus rejection from the Gaussian part of each conditional.
[[nodiscard]] SampleSet sample_gl_iid(const GinzburgLandauSpec& s, std::size_t n_samples, std::uint64_t seed);

struct TtSampleResult {
    SampleSet samples;
    std::size_t clipped_steps = 0;   ///< conditionals with negative entries set to zero
    std::size_t fallback_steps = 0;  ///< conditionals with no positive mass, drawn uniformly
};
/// Sequential conditional sampling from a TT.
[[nodiscard]] TtSampleResult sample_from_tt(const TensorTrain& tt, std::size_t n_samples, std::uint64_t seed);

[[nodiscard]] nlohmann::json markov_spec_to_json(const MarkovSpec& s);
[[nodiscard]] MarkovSpec markov_spec_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json gl_spec_to_json(const GinzburgLandauSpec& s);
[[nodiscard]] GinzburgLandauSpec gl_spec_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json ising_spec_to_json(const IsingSpec& s);
[[nodiscard]] IsingSpec ising_spec_from_json(const nlohmann::json& j);

/// Uniform double in [0, 1) from the top 53 bits.
[[nodiscard]] inline double unit_uniform(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace ttrs
