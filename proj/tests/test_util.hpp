#pragma once

#include "ttrs/empirical_data.hpp"
#include "ttrs/markov_models.hpp"
#include "ttrs/tensor_core.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

namespace ttrs::testing {

inline TensorTrain random_tt(const Shape& extents, const std::vector<std::size_t>& ranks, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < extents.size(); ++k) {
        const std::size_t l = k == 0 ? 1 : ranks[k - 1];
        const std::size_t r = k + 1 == extents.size() ? 1 : ranks[k];
        DenseTensor G({l, extents[k], r});
        for (auto& v : G.data()) v = nd(rng);
        cores.push_back(std::move(G));
    }
    return TensorTrain(std::move(cores));
}

/// Random TT with nonnegative entries normalized to sum 1.
inline TensorTrain random_density_tt(const Shape& extents, const std::vector<std::size_t>& ranks, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < extents.size(); ++k) {
        const std::size_t l = k == 0 ? 1 : ranks[k - 1];
        const std::size_t r = k + 1 == extents.size() ? 1 : ranks[k];
        DenseTensor G({l, extents[k], r});
        for (auto& v : G.data()) v = u(rng);
        cores.push_back(std::move(G));
    }
    TensorTrain tt(std::move(cores));
    const double total = tt_contract_full(tt).sum();
    return tt_scaled(tt, 1.0 / total);
}

/// Dense chain product p(x_0..x_{m-1}) prod_k K_k(x_{k-m}..x_k), by enumeration.
inline DenseTensor dense_chain(const MarkovSpec& s) {
    DenseTensor p(s.extents);
    const std::size_t d = s.dims(), m = s.order;
    std::vector<std::size_t> x(d, 0);
    for (std::size_t flat = 0; flat < p.size(); ++flat) {
        std::size_t rem = flat;
        for (std::size_t k = d; k-- > 0;) {
            x[k] = rem % s.extents[k];
            rem /= s.extents[k];
        }
        double v = s.initial(std::span<const std::size_t>(x.data(), m));
        for (std::size_t k = m; k < d; ++k) v *= s.kernel(k)(std::span<const std::size_t>(x.data() + k - m, m + 1));
        p[flat] = v;
    }
    return p;
}

inline double max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
    double w = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a[i] - b[i]));
    return w;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ttrs_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Least-squares slope and coefficient of determination of y against x.
struct LineFit {
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
};
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    LineFit f;
    f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    f.intercept = (sy - f.slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double my = sy / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += e * e;
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

}  // namespace ttrs::testing
