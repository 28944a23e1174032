#include "ttrs/quadrature.hpp"

#include "ttrs/error.hpp"

#include <gsl/gsl_integration.h>

#include <cmath>
#include <memory>

namespace ttrs {

namespace {

// P_n(x) and P_n'(x) by the three-term recurrence.
void legendre(std::size_t n, long double x, long double& p, long double& dp) {
    long double p0 = 1.0L, p1 = x;
    if (n == 0) {
        p = 1.0L;
        dp = 0.0L;
        return;
    }
    for (std::size_t k = 2; k <= n; ++k) {
        const long double pk = ((2.0L * k - 1.0L) * x * p1 - (k - 1.0L) * p0) / static_cast<long double>(k);
        p0 = p1;
        p1 = pk;
    }
    p = p1;
    dp = static_cast<long double>(n) * (x * p1 - p0) / (x * x - 1.0L);
}

}  // namespace

QuadratureRule gauss_legendre(std::size_t n, double a, double b) {
    if (n == 0) throw ArgumentError("quadrature needs at least one node");
    if (!(a < b)) throw ArgumentError("quadrature interval must satisfy a < b");
    std::unique_ptr<gsl_integration_glfixed_table, decltype(&gsl_integration_glfixed_table_free)> table(
        gsl_integration_glfixed_table_alloc(n), &gsl_integration_glfixed_table_free);
    if (!table) throw Error("cannot allocate Gauss-Legendre table");
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const long double half = 0.5L * (static_cast<long double>(b) - a), mid = 0.5L * (static_cast<long double>(b) + a);
    for (std::size_t i = 0; i < n; ++i) {
        double x0 = 0.0, w0 = 0.0;
        gsl_integration_glfixed_point(-1.0, 1.0, i, &x0, &w0, table.get());
        // GSL's computed (untabulated) rules are good to about 1e-12; polish.
        long double x = x0, p = 0, dp = 0;
        for (int it = 0; it < 3; ++it) {
            legendre(n, x, p, dp);
            x -= p / dp;
        }
        legendre(n, x, p, dp);
        rule.nodes[i] = static_cast<double>(mid + half * x);
        rule.weights[i] = static_cast<double>(half * 2.0L / ((1.0L - x * x) * dp * dp));
    }
    return rule;
}

}  // namespace ttrs
