#include "ttrs/markov_models.hpp"

#include "ttrs/error.hpp"
#include "ttrs/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace ttrs {

namespace {

std::size_t range_size(const Shape& n, std::size_t first, std::size_t last) {
    std::size_t s = 1;
    for (std::size_t v = first; v <= last; ++v) s *= n[v];
    return s;
}

Shape range_shape(const Shape& n, std::size_t first, std::size_t last) {
    return Shape(n.begin() + static_cast<std::ptrdiff_t>(first), n.begin() + static_cast<std::ptrdiff_t>(last) + 1);
}

double log_sum_exp(const double* v, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
    return mx + std::log(s);
}

// Index of the first entry of cdf strictly greater than u*total.
std::size_t draw_from_cdf(const double* cdf, std::size_t n, double u) {
    const double target = u * cdf[n - 1];
    auto it = std::upper_bound(cdf, cdf + n, target);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf), n - 1);
}

// Sum over the leading `drop` block of a row-major tensor.
DenseTensor sum_leading(const DenseTensor& t, std::size_t drop, Shape rest) {
    DenseTensor out(std::move(rest), 0.0);
    const std::size_t inner = out.size();
    for (std::size_t a = 0; a < drop; ++a)
        for (std::size_t i = 0; i < inner; ++i) out[i] += t[a * inner + i];
    return out;
}


// Merge bond states at each cut whose slices in the next core are identical.
// Exact: the merged state's left column is the sum of the originals.
std::vector<DenseTensor> merge_equal_bond_states(std::vector<DenseTensor> cores) {
    for (std::size_t k = cores.size() - 1; k-- > 0;) {
        auto& L = cores[k];
        auto& R = cores[k + 1];
        const std::size_t r = R.extent(0), slice = R.extent(1) * R.extent(2);
        const auto row = [&](std::size_t b) { return R.data().subspan(b * slice, slice); };
        std::vector<std::size_t> keep, target(r);
        for (std::size_t b = 0; b < r; ++b) {
            std::size_t t = keep.size();
            for (std::size_t j = 0; j < keep.size(); ++j)
                if (std::ranges::equal(row(keep[j]), row(b))) {
                    t = j;
                    break;
                }
            if (t == keep.size()) keep.push_back(b);
            target[b] = t;
        }
        if (keep.size() == r) continue;
        const std::size_t l = L.extent(0), n = L.extent(1), q = keep.size();
        DenseTensor L2({l, n, q}, 0.0);
        for (std::size_t a = 0; a < l * n; ++a)
            for (std::size_t b = 0; b < r; ++b) L2[a * q + target[b]] += L[a * r + b];
        DenseTensor R2({q, R.extent(1), R.extent(2)});
        for (std::size_t j = 0; j < q; ++j) std::ranges::copy(row(keep[j]), R2.data().begin() + static_cast<std::ptrdiff_t>(j * slice));
        L = std::move(L2);
        R = std::move(R2);
    }
    return cores;
}

}  // namespace

// ---------------------------------------------------------------- MarkovSpec

const DenseTensor& MarkovSpec::kernel(std::size_t k) const {
    if (k < order || k >= dims()) throw ArgumentError("no kernel for variable " + std::to_string(k));
    return homogeneous ? kernels.at(0) : kernels.at(k - order);
}

void MarkovSpec::validate(double tol) const {
    const std::size_t d = dims();
    if (order == 0 || order >= d) throw ArgumentError("Markov order must satisfy 1 <= m < d");
    for (auto n : extents)
        if (n == 0) throw ShapeError("zero extent in Markov spec");
    if (initial.shape() != range_shape(extents, 0, order - 1)) throw ShapeError("initial law has the wrong shape");
    for (double v : initial.data())
        if (!(v >= 0.0)) throw RangeError("initial law has a negative or NaN entry");
    if (std::abs(initial.sum() - 1.0) > tol * static_cast<double>(initial.size()) + tol)
        throw RangeError("initial law does not sum to 1");
    if (homogeneous) {
        if (kernels.size() != 1) throw ShapeError("homogeneous chains carry exactly one kernel");
        const Shape want = range_shape(extents, 0, order);
        for (std::size_t k = order; k < d; ++k)
            if (range_shape(extents, k - order, k) != want) throw ShapeError("homogeneous chains need equal extents");
    } else if (kernels.size() != d - order) {
        throw ShapeError("need one kernel per variable after the initial block");
    }
    for (std::size_t k = order; k < d; ++k) {
        const auto& K = kernel(k);
        if (K.shape() != range_shape(extents, k - order, k))
            throw ShapeError("kernel of variable " + std::to_string(k) + " has the wrong shape");
        const std::size_t n = extents[k];
        for (std::size_t row = 0; row < K.size() / n; ++row) {
            double s = 0.0;
            for (std::size_t x = 0; x < n; ++x) {
                const double v = K[row * n + x];
                if (!(v >= 0.0)) throw RangeError("kernel has a negative or NaN entry");
                s += v;
            }
            if (std::abs(s - 1.0) > tol * static_cast<double>(n) + tol)
                throw RangeError("kernel row of variable " + std::to_string(k) + " does not sum to 1");
        }
    }
}

MarkovSpec random_markov_spec(const Shape& extents, std::size_t order, std::uint64_t seed, bool homogeneous,
                              double floor) {
    MarkovSpec s;
    s.order = order;
    s.extents = extents;
    s.homogeneous = homogeneous;
    const std::size_t d = extents.size();
    if (order == 0 || order >= d) throw ArgumentError("Markov order must satisfy 1 <= m < d");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(floor, 1.0);
    s.initial = DenseTensor(range_shape(extents, 0, order - 1));
    for (auto& v : s.initial.data()) v = unif(rng);
    const double tot = s.initial.sum();
    for (auto& v : s.initial.data()) v /= tot;
    const std::size_t count = homogeneous ? 1 : d - order;
    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t k = order + j;
        DenseTensor K(range_shape(extents, k - order, k));
        const std::size_t n = extents[k];
        for (auto& v : K.data()) v = unif(rng);
        for (std::size_t row = 0; row < K.size() / n; ++row) {
            double r = 0.0;
            for (std::size_t x = 0; x < n; ++x) r += K[row * n + x];
            for (std::size_t x = 0; x < n; ++x) K[row * n + x] /= r;
        }
        s.kernels.push_back(std::move(K));
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------- factors

double ChainFactors::log_weight(std::span<const std::uint16_t> x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < dims(); ++k) {
        std::size_t off = 0;
        for (std::size_t v = window_first(k); v <= k; ++v) off = off * extents[v] + x[v];
        s += log_factors[k][off];
    }
    return s;
}

MarkovSpec factors_to_markov(const ChainFactors& f) {
    const std::size_t d = f.dims(), m = f.order;
    if (m == 0 || m >= d) throw ArgumentError("chain order must satisfy 1 <= m < d");
    if (f.log_factors.size() != d) throw ShapeError("need one factor per variable");
    for (std::size_t k = 0; k < d; ++k)
        if (f.log_factors[k].shape() != range_shape(f.extents, f.window_first(k), k))
            throw ShapeError("factor " + std::to_string(k) + " has the wrong shape");

    auto state_first = [m](std::size_t k) { return k + 1 >= m ? k + 1 - m : 0; };
    // mu[k]: log of the backward message over the state x_{state_first(k)..k}
    std::vector<std::vector<double>> mu(d);
    mu[d - 1].assign(range_size(f.extents, state_first(d - 1), d - 1), 0.0);
    std::vector<double> buf;
    for (std::size_t k = d - 1; k-- > 0;) {
        const std::size_t n = f.extents[k + 1];
        const auto& phi = f.log_factors[k + 1];
        const std::size_t next = mu[k + 1].size();
        mu[k].assign(phi.size() / n, 0.0);
        buf.resize(n);
        for (std::size_t s = 0; s < mu[k].size(); ++s) {
            for (std::size_t x = 0; x < n; ++x) {
                const std::size_t flat = s * n + x;
                buf[x] = phi[flat] + mu[k + 1][flat % next];
            }
            mu[k][s] = log_sum_exp(buf.data(), n);
        }
    }

    MarkovSpec spec;
    spec.order = m;
    spec.extents = f.extents;
    spec.initial = DenseTensor(range_shape(f.extents, 0, m - 1));
    {
        std::vector<double> lw(spec.initial.size());
        std::vector<std::size_t> idx(m, 0);
        for (std::size_t flat = 0; flat < lw.size(); ++flat) {
            double s = mu[m - 1][flat];
            for (std::size_t k = 0; k < m; ++k) {
                std::size_t off = 0;
                for (std::size_t v = 0; v <= k; ++v) off = off * f.extents[v] + idx[v];
                s += f.log_factors[k][off];
            }
            lw[flat] = s;
            for (std::size_t v = m; v-- > 0;) {
                if (++idx[v] < f.extents[v]) break;
                idx[v] = 0;
            }
        }
        const double lz = log_sum_exp(lw.data(), lw.size());
        for (std::size_t i = 0; i < lw.size(); ++i) spec.initial[i] = std::exp(lw[i] - lz);
    }
    for (std::size_t k = m; k < d; ++k) {
        const auto& phi = f.log_factors[k];
        const std::size_t n = f.extents[k];
        const std::size_t next = mu[k].size();
        DenseTensor K(phi.shape());
        buf.resize(n);
        for (std::size_t row = 0; row < K.size() / n; ++row) {
            for (std::size_t x = 0; x < n; ++x) {
                const std::size_t flat = row * n + x;
                buf[x] = phi[flat] + mu[k][flat % next];
            }
            const double lz = log_sum_exp(buf.data(), n);
            for (std::size_t x = 0; x < n; ++x) K[row * n + x] = std::isfinite(lz) ? std::exp(buf[x] - lz) : 1.0 / static_cast<double>(n);
        }
        spec.kernels.push_back(std::move(K));
    }
    return spec;
}

// ---------------------------------------------------------------- Ginzburg-Landau

double gl_pair_energy(const GinzburgLandauSpec& s, double u, double v) {
    const double g = (u - v) / s.h;
    const double w = u * u - 1.0;
    return s.beta * (0.5 * s.lambda * g * g + w * w / (4.0 * s.lambda));
}

double gl_energy(const GinzburgLandauSpec& s, std::span<const double> x) {
    if (x.size() != s.dims) throw ShapeError("configuration length differs from d");
    double e = gl_pair_energy(s, 0.0, x.empty() ? 0.0 : x[0]);
    for (std::size_t k = 0; k < x.size(); ++k) e += gl_pair_energy(s, x[k], k + 1 < x.size() ? x[k + 1] : 0.0);
    return e;
}

DiscretizedGL gl_discretize(const GinzburgLandauSpec& s, std::size_t n) {
    if (s.dims < 2) throw ArgumentError("Ginzburg-Landau chains need d >= 2");
    if (n < 2) throw ArgumentError("discretization needs at least two grid points");
    if (!(s.lower < s.upper)) throw ArgumentError("interval must satisfy lower < upper");
    if (!(s.beta > 0 && s.lambda > 0 && s.h > 0)) throw ArgumentError("beta, lambda and h must be positive");
    DiscretizedGL out;
    out.grid.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.grid[i] = s.lower + static_cast<double>(i) * (s.upper - s.lower) / static_cast<double>(n - 1);
    const std::size_t d = s.dims;
    auto& f = out.factors;
    f.order = 1;
    f.extents.assign(d, n);
    // factor 0 holds the left boundary term, factor d-1 also the right one
    DenseTensor f0({n});
    for (std::size_t i = 0; i < n; ++i) f0[i] = -gl_pair_energy(s, 0.0, out.grid[i]);
    f.log_factors.push_back(std::move(f0));
    for (std::size_t k = 1; k < d; ++k) {
        DenseTensor fk({n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double e = gl_pair_energy(s, out.grid[i], out.grid[j]);
                if (k + 1 == d) e += gl_pair_energy(s, out.grid[j], 0.0);
                fk[i * n + j] = -e;
            }
        f.log_factors.push_back(std::move(fk));
    }
    out.chain = factors_to_markov(f);
    return out;
}

// ---------------------------------------------------------------- Ising

double ising_coupling(std::size_t i, std::size_t j) {
    const std::size_t g = i > j ? i - j : j - i;
    return g <= 2 ? -1.0 / (1.0 + static_cast<double>(g)) : 0.0;
}

double ising_energy(std::span<const int> x) {
    double e = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) e += ising_coupling(i, j) * x[i] * x[j];
    return e;
}

ChainFactors ising_factors(const IsingSpec& s) {
    if (s.dims < 3) throw ArgumentError("the Ising chain needs d >= 3");
    if (s.alphabet.empty()) throw ArgumentError("empty Ising alphabet");
    const std::size_t n = s.alphabet.size();
    ChainFactors f;
    f.order = 2;
    f.extents.assign(s.dims, n);
    // factor k collects every ordered pair whose larger index is k
    for (std::size_t k = 0; k < s.dims; ++k) {
        const std::size_t first = f.window_first(k);
        DenseTensor t(range_shape(f.extents, first, k));
        std::vector<std::size_t> idx(k - first + 1, 0);
        for (std::size_t flat = 0; flat < t.size(); ++flat) {
            const double xk = s.alphabet[idx.back()];
            double e = ising_coupling(k, k) * xk * xk;
            for (std::size_t v = first; v < k; ++v) e += 2.0 * ising_coupling(v, k) * s.alphabet[idx[v - first]] * xk;
            t[flat] = -s.beta * e;
            for (std::size_t v = idx.size(); v-- > 0;) {
                if (++idx[v] < n) break;
                idx[v] = 0;
            }
        }
        f.log_factors.push_back(std::move(t));
    }
    return f;
}

MarkovSpec ising_spec_to_markov(const IsingSpec& s) { return factors_to_markov(ising_factors(s)); }

// ---------------------------------------------------------------- exact objects

TensorTrain markov_to_tt(const MarkovSpec& spec) {
    spec.validate(1e-9);
    const std::size_t d = spec.dims(), m = spec.order;
    const auto& n = spec.extents;
    auto bond = [&](std::size_t k) -> std::size_t {
        if (k + 1 >= d) return 1;
        return range_size(n, k + 1 >= m ? k + 1 - m : 0, k);
    };
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < d; ++k) {
        const std::size_t l = k == 0 ? 1 : bond(k - 1), r = bond(k), nk = n[k];
        DenseTensor G({l, nk, r}, 0.0);
        for (std::size_t a = 0; a < l; ++a)
            for (std::size_t x = 0; x < nk; ++x) {
                const std::size_t joint = a * nk + x;
                const std::size_t b = k + 1 == d ? 0 : joint % r;
                double v = 1.0;
                if (k + 1 == m) v = spec.initial[joint];
                else if (k >= m) v = spec.kernel(k)[joint];
                G[(a * nk + x) * r + b] = v;
            }
        cores.push_back(std::move(G));
    }
    return TensorTrain(merge_equal_bond_states(std::move(cores)));
}

DenseTensor markov_marginal(const MarkovSpec& spec, std::size_t first, std::size_t last) {
    const std::size_t d = spec.dims(), m = spec.order;
    if (first > last || last >= d) throw ArgumentError("invalid marginal window");
    const auto& n = spec.extents;
    const std::size_t t = std::min(last, first + m - 1);
    // joint over [s, u]
    std::size_t s = 0, u = 0;
    DenseTensor J;
    if (t + 1 <= m) {
        J = marginal(spec.initial, window_range(0, t));
        s = 0;
        u = t;
    } else {
        J = spec.initial;
        s = 0;
        u = m - 1;
    }
    auto extend = [&](std::size_t k) {
        const auto& K = spec.kernel(k);
        const std::size_t nk = n[k];
        const std::size_t cond = K.size() / nk;
        DenseTensor out(range_shape(n, s, k));
        for (std::size_t p = 0; p < J.size(); ++p) {
            const double jp = J[p];
            const double* row = K.data().data() + (p % cond) * nk;
            for (std::size_t x = 0; x < nk; ++x) out[p * nk + x] = jp * row[x];
        }
        J = std::move(out);
        u = k;
    };
    while (u < t) {
        extend(u + 1);
        J = sum_leading(J, n[s], range_shape(n, s + 1, u));
        ++s;
    }
    while (u < last) extend(u + 1);
    if (s < first) J = sum_leading(J, range_size(n, s, first - 1), range_shape(n, first, u));
    return J;
}

std::vector<DenseTensor> markov_exact_sketches(const MarkovSpec& spec, const SketchPlan& plan) {
    plan.validate();
    if (!plan.is_window()) throw ArgumentError("exact chain sketches need a window plan");
    if (plan.extents != spec.extents) throw ShapeError("plan extents differ from the chain");
    const std::size_t d = plan.dims();
    std::vector<DenseTensor> phi;
    for (std::size_t i = 0; i < d; ++i) {
        const std::size_t a = i == 0 ? 0 : plan.left[i - 1].first;
        const std::size_t b = i + 1 == d ? d - 1 : plan.right[i].last;
        phi.push_back(markov_marginal(spec, a, b).reshaped(
            Shape{plan.left_size_before(i), spec.extents[i], plan.right_size_after(i)}));
    }
    return phi;
}

// ---------------------------------------------------------------- samplers

SampleSet sample_ancestral(const MarkovSpec& spec, std::size_t n_samples, std::uint64_t seed) {
    spec.validate(1e-9);
    const std::size_t d = spec.dims(), m = spec.order;
    const auto& n = spec.extents;
    std::vector<double> init_cdf(spec.initial.size());
    std::partial_sum(spec.initial.data().begin(), spec.initial.data().end(), init_cdf.begin());
    std::vector<std::vector<double>> cdf(spec.homogeneous ? 1 : d - m);
    for (std::size_t j = 0; j < cdf.size(); ++j) {
        const auto& K = spec.kernel(m + j);
        cdf[j].resize(K.size());
        const std::size_t nk = n[m + j];
        for (std::size_t row = 0; row < K.size() / nk; ++row)
            std::partial_sum(K.data().begin() + static_cast<std::ptrdiff_t>(row * nk),
                             K.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * nk),
                             cdf[j].begin() + static_cast<std::ptrdiff_t>(row * nk));
    }
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> codes(n_samples * d);
    for (std::size_t i = 0; i < n_samples; ++i) {
        std::uint16_t* x = codes.data() + i * d;
        std::size_t flat = draw_from_cdf(init_cdf.data(), init_cdf.size(), unit_uniform(rng()));
        for (std::size_t v = m; v-- > 0;) {
            x[v] = static_cast<std::uint16_t>(flat % n[v]);
            flat /= n[v];
        }
        for (std::size_t k = m; k < d; ++k) {
            std::size_t row = 0;
            for (std::size_t v = k - m; v < k; ++v) row = row * n[v] + x[v];
            const std::size_t nk = n[k];
            const auto& c = cdf[spec.homogeneous ? 0 : k - m];
            x[k] = static_cast<std::uint16_t>(draw_from_cdf(c.data() + row * nk, nk, unit_uniform(rng())));
        }
    }
    return SampleSet::discrete(n, std::move(codes));
}

SampleSet sample_gibbs(const ChainFactors& f, std::size_t n_samples, std::size_t burn_in, std::size_t thin,
                       std::uint64_t seed) {
    if (thin == 0) throw ArgumentError("thinning interval must be at least 1");
    const std::size_t d = f.dims(), m = f.order;
    if (f.log_factors.size() != d) throw ShapeError("need one factor per variable");
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> x(d);
    for (std::size_t k = 0; k < d; ++k) x[k] = static_cast<std::uint16_t>(rng() % f.extents[k]);
    std::vector<double> lp, cdf;
    auto sweep = [&] {
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t nk = f.extents[k];
            lp.assign(nk, 0.0);
            for (std::size_t j = k; j < d && j <= k + m; ++j) {
                const std::size_t wf = f.window_first(j);
                if (wf > k) continue;
                std::size_t base = 0, stride = 1;
                for (std::size_t v = wf; v <= j; ++v) base = base * f.extents[v] + (v == k ? 0 : x[v]);
                for (std::size_t v = k + 1; v <= j; ++v) stride *= f.extents[v];
                const auto& t = f.log_factors[j];
                for (std::size_t c = 0; c < nk; ++c) lp[c] += t[base + c * stride];
            }
            const double mx = *std::max_element(lp.begin(), lp.end());
            cdf.resize(nk);
            double acc = 0.0;
            for (std::size_t c = 0; c < nk; ++c) cdf[c] = acc += std::exp(lp[c] - mx);
            x[k] = static_cast<std::uint16_t>(draw_from_cdf(cdf.data(), nk, unit_uniform(rng())));
        }
    };
    for (std::size_t b = 0; b < burn_in; ++b) sweep();
    std::vector<std::uint16_t> codes;
    codes.reserve(n_samples * d);
    for (std::size_t i = 0; i < n_samples; ++i) {
        for (std::size_t t = 0; t < thin; ++t) sweep();
        codes.insert(codes.end(), x.begin(), x.end());
    }
    return SampleSet::discrete(f.extents, std::move(codes));
}

SampleSet sample_mh_continuous(const GinzburgLandauSpec& s, std::size_t n_samples, double sigma, std::size_t burn_in,
                               std::size_t thin, std::uint64_t seed) {
    if (thin == 0) throw ArgumentError("thinning interval must be at least 1");
    if (!(sigma > 0)) throw ArgumentError("proposal width must be positive");
    const std::size_t d = s.dims;
    const double a = s.lower, b = s.upper;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    std::vector<double> x(d, 0.0);
    auto local = [&](std::size_t k, double v) {
        const double left = k == 0 ? 0.0 : x[k - 1];
        const double right = k + 1 == d ? 0.0 : x[k + 1];
        return gl_pair_energy(s, left, v) + gl_pair_energy(s, v, right);
    };
    auto sweep = [&] {
        for (std::size_t k = 0; k < d; ++k) {
            double y = x[k] + normal(rng);
            while (y < a || y > b) y = y < a ? 2 * a - y : 2 * b - y;
            const double de = local(k, y) - local(k, x[k]);
            if (de <= 0.0 || unit_uniform(rng()) < std::exp(-de)) x[k] = y;
        }
    };
    for (std::size_t i = 0; i < burn_in; ++i) sweep();
    std::vector<double> values;
    values.reserve(n_samples * d);
    for (std::size_t i = 0; i < n_samples; ++i) {
        for (std::size_t t = 0; t < thin; ++t) sweep();
        values.insert(values.end(), x.begin(), x.end());
    }
    return SampleSet::continuous(d, a, b, std::move(values));
}

SampleSet sample_gl_iid(const GinzburgLandauSpec& s, std::size_t n_samples, std::uint64_t seed) {
    const std::size_t d = s.dims;
    if (d < 1) throw ArgumentError("need at least one variable");
    const double a = s.lower, b = s.upper;
    constexpr std::size_t kNodes = 128;
    constexpr std::size_t kTable = 8193;
    const auto rule = gauss_legendre(kNodes, a, b);
    const double step = (b - a) / static_cast<double>(kTable - 1);

    // log beta_k on the quadrature nodes and on the table, k = d-1 .. 0
    std::vector<std::vector<double>> table(d, std::vector<double>(kTable));
    std::vector<double> node_log(kNodes), next_log(kNodes);
    for (std::size_t q = 0; q < kNodes; ++q) node_log[q] = -gl_pair_energy(s, rule.nodes[q], 0.0);
    for (std::size_t g = 0; g < kTable; ++g) table[d - 1][g] = -gl_pair_energy(s, a + g * step, 0.0);
    std::vector<double> terms(kNodes);
    auto message = [&](double z, const std::vector<double>& from) {
        for (std::size_t q = 0; q < kNodes; ++q)
            terms[q] = std::log(rule.weights[q]) - gl_pair_energy(s, z, rule.nodes[q]) + from[q];
        return log_sum_exp(terms.data(), kNodes);
    };
    for (std::size_t k = d - 1; k-- > 0;) {
        for (std::size_t g = 0; g < kTable; ++g) table[k][g] = message(a + g * step, node_log);
        for (std::size_t q = 0; q < kNodes; ++q) next_log[q] = message(rule.nodes[q], node_log);
        const double shift = *std::max_element(next_log.begin(), next_log.end());
        for (std::size_t q = 0; q < kNodes; ++q) node_log[q] = next_log[q] - shift;
    }
    std::vector<double> table_max(d);
    for (std::size_t k = 0; k < d; ++k) table_max[k] = *std::max_element(table[k].begin(), table[k].end());

    const double sd = s.h / std::sqrt(s.beta * s.lambda);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sd);
    std::vector<double> values(n_samples * d);
    for (std::size_t i = 0; i < n_samples; ++i) {
        double prev = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const auto& tk = table[k];
            double y = 0.0;
            while (true) {
                y = prev + normal(rng);
                if (y < a || y > b) continue;
                const double pos = (y - a) / step;
                const auto g = std::min<std::size_t>(static_cast<std::size_t>(pos), kTable - 2);
                const double fr = pos - static_cast<double>(g);
                const double lb = (1.0 - fr) * tk[g] + fr * tk[g + 1];
                if (std::log(unit_uniform(rng()) + 0x1.0p-60) < lb - table_max[k]) break;
            }
            values[i * d + k] = y;
            prev = y;
        }
    }
    return SampleSet::continuous(d, a, b, std::move(values));
}

TtSampleResult sample_from_tt(const TensorTrain& tt, std::size_t n_samples, std::uint64_t seed) {
    const std::size_t d = tt.dims();
    const auto n = tt.extents();
    // H[k](a, x) = sum_b G_k(a, x, b) R_{k+1}(b), with R the suffix sums
    std::vector<RowMatrix> H(d);
    Eigen::VectorXd R = Eigen::VectorXd::Ones(1);
    for (std::size_t k = d; k-- > 0;) {
        const auto& G = tt.core(k);
        const auto l = static_cast<Eigen::Index>(G.extent(0)), nk = static_cast<Eigen::Index>(G.extent(1)),
                   r = static_cast<Eigen::Index>(G.extent(2));
        H[k] = RowMatrix(l, nk);
        for (Eigen::Index a = 0; a < l; ++a)
            for (Eigen::Index x = 0; x < nk; ++x) {
                double acc = 0.0;
                for (Eigen::Index b = 0; b < r; ++b) acc += G[static_cast<std::size_t>((a * nk + x) * r + b)] * R(b);
                H[k](a, x) = acc;
            }
        R = H[k].rowwise().sum();
    }
    const double total = R(0);
    if (!(total > 0.0) || !std::isfinite(total)) throw DegenerateError("tensor train has no positive total mass");

    TtSampleResult out;
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> codes(n_samples * d);
    std::vector<double> w;
    for (std::size_t i = 0; i < n_samples; ++i) {
        Eigen::RowVectorXd v = Eigen::RowVectorXd::Ones(1);
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t nk = n[k];
            Eigen::RowVectorXd cond = v * H[k];
            w.resize(nk);
            double acc = 0.0;
            bool clipped = false;
            for (std::size_t x = 0; x < nk; ++x) {
                double c = cond(static_cast<Eigen::Index>(x));
                if (!(c > 0.0)) {
                    clipped = clipped || c < 0.0;
                    c = 0.0;
                }
                w[x] = acc += c;
            }
            if (clipped) ++out.clipped_steps;
            std::size_t pick = 0;
            if (!(acc > 0.0)) {
                ++out.fallback_steps;
                pick = static_cast<std::size_t>(rng() % nk);
            } else {
                pick = draw_from_cdf(w.data(), nk, unit_uniform(rng()));
            }
            codes[i * d + k] = static_cast<std::uint16_t>(pick);
            const auto& G = tt.core(k);
            const std::size_t l = G.extent(0), r = G.extent(2);
            Eigen::RowVectorXd nv = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(r));
            for (std::size_t a = 0; a < l; ++a)
                for (std::size_t b = 0; b < r; ++b)
                    nv(static_cast<Eigen::Index>(b)) += v(static_cast<Eigen::Index>(a)) * G[(a * nk + pick) * r + b];
            const double scale = nv.cwiseAbs().maxCoeff();
            v = scale > 0.0 ? Eigen::RowVectorXd(nv / scale) : nv;
        }
    }
    out.samples = SampleSet::discrete(n, std::move(codes));
    return out;
}

// ---------------------------------------------------------------- JSON

nlohmann::json markov_spec_to_json(const MarkovSpec& s) {
    nlohmann::json j;
    j["model"] = "markov";
    j["order"] = s.order;
    j["extents"] = s.extents;
    j["homogeneous"] = s.homogeneous;
    j["initial"] = s.initial.values();
    auto ks = nlohmann::json::array();
    for (const auto& k : s.kernels) ks.push_back(k.values());
    j["kernels"] = std::move(ks);
    return j;
}

MarkovSpec markov_spec_from_json(const nlohmann::json& j) {
    try {
        MarkovSpec s;
        s.order = j.value("order", std::size_t{1});
        s.extents = j.at("extents").get<Shape>();
        s.homogeneous = j.value("homogeneous", false);
        if (s.order == 0 || s.order >= s.extents.size()) throw ParseError("Markov order must satisfy 1 <= m < d");
        s.initial = DenseTensor(range_shape(s.extents, 0, s.order - 1), j.at("initial").get<std::vector<double>>());
        const auto& ks = j.at("kernels");
        for (std::size_t i = 0; i < ks.size(); ++i) {
            const std::size_t k = s.homogeneous ? s.order : s.order + i;
            if (k >= s.extents.size()) throw ParseError("too many kernels");
            s.kernels.emplace_back(range_shape(s.extents, k - s.order, k), ks[i].get<std::vector<double>>());
        }
        s.validate(1e-9);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("Markov spec: ") + e.what());
    } catch (const ShapeError& e) {
        throw ParseError(std::string("Markov spec: ") + e.what());
    }
}

nlohmann::json gl_spec_to_json(const GinzburgLandauSpec& s) {
    return {{"model", "gl"}, {"d", s.dims}, {"a", s.lower}, {"b", s.upper},
            {"beta", s.beta}, {"lambda", s.lambda}, {"h", s.h}};
}

GinzburgLandauSpec gl_spec_from_json(const nlohmann::json& j) {
    try {
        GinzburgLandauSpec s;
        s.dims = j.value("d", s.dims);
        s.lower = j.value("a", s.lower);
        s.upper = j.value("b", s.upper);
        s.beta = j.value("beta", s.beta);
        s.lambda = j.value("lambda", s.lambda);
        s.h = j.value("h", s.h);
        if (!(s.lower < s.upper) || !(s.beta > 0) || !(s.lambda > 0) || !(s.h > 0) || s.dims < 1)
            throw ParseError("invalid Ginzburg-Landau parameters");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("Ginzburg-Landau spec: ") + e.what());
    }
}

nlohmann::json ising_spec_to_json(const IsingSpec& s) {
    return {{"model", "ising"}, {"d", s.dims}, {"beta", s.beta}, {"alphabet", s.alphabet}};
}

IsingSpec ising_spec_from_json(const nlohmann::json& j) {
    try {
        IsingSpec s;
        s.dims = j.value("d", s.dims);
        s.beta = j.value("beta", s.beta);
        if (j.contains("alphabet")) s.alphabet = j.at("alphabet").get<std::vector<int>>();
        if (s.dims < 3 || s.alphabet.empty()) throw ParseError("invalid Ising parameters");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("Ising spec: ") + e.what());
    }
}

}  // namespace ttrs
