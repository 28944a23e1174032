#pragma once

#include <cstddef>
#include <vector>

namespace ttrs {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [a, b].
[[nodiscard]] QuadratureRule gauss_legendre(std::size_t n, double a, double b);

}  // namespace ttrs
