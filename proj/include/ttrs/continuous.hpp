#pragma once

/// Continuous variables on [a, b]: orthonormal basis expansions, empirical
/// coefficient moments of adjacent variables, and the coefficient-space
/// estimator for Markov densities.

#include "ttrs/engine.hpp"
#include "ttrs/empirical_data.hpp"
#include "ttrs/markov_models.hpp"
#include "ttrs/tensor_core.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ttrs {

/// Orthonormal functions phi_0..phi_{M-1} on [a, b]; phi_0 is the constant.
class BasisSet {
public:
    /// 1/sqrt(L), then sqrt(2/L) cos(2 pi j (x-a)/L), sqrt(2/L) sin(...) for j = 1, 2, ...
    /// Orthonormality is checked with a 50-node Gauss-Legendre rule.
    static BasisSet fourier(std::size_t size, double lower, double upper);

    [[nodiscard]] const std::string& family() const noexcept { return family_; }
    [[nodiscard]] std::size_t size() const noexcept { return size_; }
    [[nodiscard]] double lower() const noexcept { return lower_; }
    [[nodiscard]] double upper() const noexcept { return upper_; }
    /// Value of the constant function phi_0.
    [[nodiscard]] double constant() const noexcept;

    void eval(double x, double* out) const;
    [[nodiscard]] std::vector<double> eval(double x) const;
    /// Gram matrix under an n-point Gauss-Legendre rule.
    [[nodiscard]] RowMatrix gram(std::size_t nodes) const;

private:
    std::string family_;
    std::size_t size_ = 0;
    double lower_ = 0.0, upper_ = 1.0;
};

/// Coefficient sketches in the same (m, n, l) layout as the discrete ones:
/// core 0 is (1, M, M), interior cores (M, M, M), the last (M, M, 1).
struct CoeffTensors {
    std::size_t size = 0;  ///< M
    double constant = 0.0; ///< value of phi_0
    std::vector<DenseTensor> phi;
};

/// Empirical moments of adjacent variables, scaled by powers of phi_0 so that
/// marginalized variables carry their constant coefficient.
[[nodiscard]] CoeffTensors estimate_coeff_marginals(const SampleSet& s, const BasisSet& basis);
/// Exact moments from a full coefficient tensor of shape (M, ..., M).
[[nodiscard]] CoeffTensors coeff_marginals_from_full(const DenseTensor& nu, const BasisSet& basis);

struct ContinuousTT {
    BasisSet basis;
    TensorTrain coeffs;
};

struct ContinuousFit {
    ContinuousTT model;
    FitReport report;
};

[[nodiscard]] ContinuousFit tt_rs_continuous_markov(const CoeffTensors& moments, const RankSpec& ranks,
                                                    const BasisSet& basis);
[[nodiscard]] ContinuousFit tt_rs_continuous_markov(const SampleSet& s, const RankSpec& ranks, const BasisSet& basis);

/// Value of the fitted function at a point.
[[nodiscard]] double eval_continuous(const ContinuousTT& f, std::span<const double> x);

inline constexpr std::size_t kDefaultQuadratureNodes = 50;

/// Coefficients of the normalized Ginzburg-Landau density, as a TT whose bond
/// runs over quadrature nodes.
[[nodiscard]] TensorTrain markov_to_coeff_tt(const GinzburgLandauSpec& s, const BasisSet& basis,
                                             std::size_t nodes = kDefaultQuadratureNodes);
/// Squared L2 norm of the normalized density under the same rule.
[[nodiscard]] double gl_density_norm_squared(const GinzburgLandauSpec& s, std::size_t nodes = kDefaultQuadratureNodes);

struct L2ErrorDecomposition {
    double approx = 0.0;      ///< ||p - p_A|| / ||p||
    double estimation = 0.0;  ///< ||p_A - q|| / ||p||
    double total = 0.0;       ///< sqrt(approx^2 + estimation^2)
};

/// Needs the exact coefficient TT, ||p||^2 and the fitted coefficients.
[[nodiscard]] L2ErrorDecomposition l2_error_decomposition(const TensorTrain& exact_coeffs, double density_norm_sq,
                                                          const TensorTrain& fitted_coeffs);

// "TTRSC1": magic, u64 family-name length, name bytes, u64 M, f64 a, f64 b,
// then a complete TTRS1 stream for the coefficients.
void save_continuous_tt(const std::filesystem::path& path, const ContinuousTT& f);
[[nodiscard]] ContinuousTT load_continuous_tt(const std::filesystem::path& path);

}  // namespace ttrs
