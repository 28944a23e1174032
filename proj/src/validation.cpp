#include "ttrs/validation.hpp"

#include "ttrs/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ttrs {

namespace {

using Index = Eigen::Index;

RowMatrix polar_factor(const RowMatrix& M) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

RowMatrix slice(const DenseTensor& g, std::size_t x) {
    const std::size_t l = g.extent(0), n = g.extent(1), r = g.extent(2);
    RowMatrix S(static_cast<Index>(l), static_cast<Index>(r));
    for (std::size_t a = 0; a < l; ++a)
        for (std::size_t b = 0; b < r; ++b) S(static_cast<Index>(a), static_cast<Index>(b)) = g[(a * n + x) * r + b];
    return S;
}

double aligned_triple_norm(const std::vector<RowMatrix>& hat, const std::vector<RowMatrix>& star, const RowMatrix& R1,
                           const RowMatrix& R2) {
    double best = 0.0;
    for (std::size_t x = 0; x < hat.size(); ++x) {
        const RowMatrix D = hat[x] - R1 * star[x] * R2;
        best = std::max(best, D.size() == 0 ? 0.0 : Eigen::JacobiSVD<Eigen::MatrixXd>(D).singularValues()(0));
    }
    return best;
}

double frobenius_objective(const std::vector<RowMatrix>& hat, const std::vector<RowMatrix>& star, const RowMatrix& R1,
                           const RowMatrix& R2) {
    double f = 0.0;
    for (std::size_t x = 0; x < hat.size(); ++x) f += (hat[x] - R1 * star[x] * R2).squaredNorm();
    return f;
}

// Starting points for R1: the identity, then eigenbasis matches of the mode-1
// Gram matrices under every sign pattern (the exact answer when g_hat is an
// exact rotation with a simple spectrum).
std::vector<RowMatrix> procrustes_starts(const std::vector<RowMatrix>& hat, const std::vector<RowMatrix>& star) {
    const Index l = hat.front().rows();
    std::vector<RowMatrix> out{RowMatrix::Identity(l, l)};
    RowMatrix Gh = RowMatrix::Zero(l, l), Gs = RowMatrix::Zero(l, l);
    for (std::size_t x = 0; x < hat.size(); ++x) {
        Gh += hat[x] * hat[x].transpose();
        Gs += star[x] * star[x].transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eh(Gh), es(Gs);
    const Index flipped = std::min<Index>(l, kProcrustesSignBits);
    for (std::size_t mask = 0; mask < (std::size_t{1} << flipped); ++mask) {
        Eigen::VectorXd sign = Eigen::VectorXd::Ones(l);
        for (Index j = 0; j < flipped; ++j)
            if (mask >> j & 1U) sign(l - 1 - j) = -1.0;
        out.emplace_back(eh.eigenvectors() * sign.asDiagonal() * es.eigenvectors().transpose());
    }
    return out;
}

}  // namespace

nlohmann::json DiagnosticsReport::to_json() const {
    return {{"c_P", c_P},
            {"c_G", c_G},
            {"c_A", c_A},
            {"ranks", ranks},
            {"marginal_spectra", marginal_spectra},
            {"core_norms", core_norms},
            {"pinv_norms", pinv_norms}};
}

TensorTrain solve_cde_full(const DenseTensor& p, const std::vector<std::size_t>& ranks) {
    const std::size_t d = p.order();
    if (d < 2) throw ArgumentError("need at least two variables");
    if (p.size() > kCdeMaxEntries)
        throw SizeError("full core equations limited to " + std::to_string(kCdeMaxEntries) + " entries, got " +
                        std::to_string(p.size()));
    if (ranks.size() != d - 1) throw ArgumentError("expected one rank per cut");

    // Column bases of the unfoldings.
    std::vector<RowMatrix> phi(d - 1);
    for (std::size_t k = 0; k + 1 < d; ++k) {
        const auto U = unfold(p, k + 1);
        Eigen::BDCSVD<Eigen::MatrixXd> svd(U, Eigen::ComputeThinU);
        const auto& s = svd.singularValues();
        const std::size_t r = ranks[k];
        const double cut = kCdeRankTolerance * (s.size() ? s(0) : 0.0);
        std::size_t numeric = 0;
        while (numeric < static_cast<std::size_t>(s.size()) && s(static_cast<Index>(numeric)) > cut) ++numeric;
        if (r == 0 || numeric != r)
            throw RankError("unfolding " + std::to_string(k) + " has numerical rank " + std::to_string(numeric) +
                            ", declared " + std::to_string(r));
        phi[k] = svd.matrixU().leftCols(static_cast<Index>(r));
    }

    std::vector<DenseTensor> cores;
    const Shape& n = p.shape();
    cores.emplace_back(Shape{1, n[0], ranks[0]}, std::vector<double>(phi[0].data(), phi[0].data() + phi[0].size()));
    for (std::size_t k = 1; k < d; ++k) {
        const Index rows = phi[k - 1].rows() * static_cast<Index>(n[k]);
        const Index rp = phi[k - 1].cols();
        const auto nk = static_cast<Index>(n[k]);
        RowMatrix K = RowMatrix::Zero(rows, rp * nk);
        for (Index y = 0; y < phi[k - 1].rows(); ++y)
            for (Index x = 0; x < nk; ++x)
                for (Index a = 0; a < rp; ++a) K(y * nk + x, a * nk + x) = phi[k - 1](y, a);
        const bool last = k + 1 == d;
        // the last equation reads p flattened against the same Kronecker factor
        const RowMatrix X = last ? pinv_solve(K, Eigen::Map<const RowMatrix>(p.data().data(), rows, 1)) : pinv_solve(K, phi[k]);
        const std::size_t r = last ? 1 : ranks[k];
        cores.emplace_back(Shape{static_cast<std::size_t>(rp), n[k], r}, std::vector<double>(X.data(), X.data() + X.size()));
    }
    return TensorTrain(std::move(cores));
}

CoreDistanceResult core_distance(const DenseTensor& g_hat, const DenseTensor& g_star) {
    if (g_hat.order() != 3 || g_hat.shape() != g_star.shape())
        throw ShapeError("core_distance needs two 3-way cores of the same shape");
    const std::size_t l = g_hat.extent(0), n = g_hat.extent(1), r = g_hat.extent(2);
    std::vector<RowMatrix> hat(n), star(n);
    for (std::size_t x = 0; x < n; ++x) {
        hat[x] = slice(g_hat, x);
        star[x] = slice(g_star, x);
    }
    CoreDistanceResult res;
    res.R1 = RowMatrix::Identity(static_cast<Index>(l), static_cast<Index>(l));
    res.R2 = RowMatrix::Identity(static_cast<Index>(r), static_cast<Index>(r));
    res.distance = aligned_triple_norm(hat, star, res.R1, res.R2);
    res.converged = true;

    for (const auto& R1_init : procrustes_starts(hat, star)) {
        RowMatrix R1 = R1_init, R2;
        double f = std::numeric_limits<double>::infinity();
        for (std::size_t it = 1; it <= kProcrustesMaxIterations; ++it) {
            RowMatrix K = RowMatrix::Zero(static_cast<Index>(r), static_cast<Index>(r));
            for (std::size_t x = 0; x < n; ++x) K += (R1 * star[x]).transpose() * hat[x];
            R2 = polar_factor(K);
            RowMatrix M = RowMatrix::Zero(static_cast<Index>(l), static_cast<Index>(l));
            for (std::size_t x = 0; x < n; ++x) M += hat[x] * (star[x] * R2).transpose();
            R1 = polar_factor(M);

            const double f_new = frobenius_objective(hat, star, R1, R2);
            const bool done = f - f_new <= kProcrustesTolerance * std::max(f_new, std::numeric_limits<double>::min());
            const double value = aligned_triple_norm(hat, star, R1, R2);
            if (value < res.distance) {
                res.distance = value;
                res.R1 = R1;
                res.R2 = R2;
                res.iterations = it;
                res.converged = done;
            }
            if (done) break;
            f = f_new;
        }
    }
    return res;
}

double max_normalized_core_distance(const TensorTrain& fit, const TensorTrain& exact) {
    if (fit.dims() != exact.dims()) throw ShapeError("trains have different lengths");
    double worst = 0.0;
    for (std::size_t k = 0; k < fit.dims(); ++k) {
        const double norm = triple_norm(exact.core(k));
        if (!(norm > 0.0)) throw DegenerateError("exact core " + std::to_string(k) + " is zero");
        worst = std::max(worst, core_distance(fit.core(k), exact.core(k)).distance / norm);
    }
    return worst;
}

DiagnosticsReport compute_constants(const MarkovSpec& spec, const RankSpec& ranks) {
    const auto plan = markov_sketch_plan(spec.extents, spec.order);
    const auto phi = markov_exact_sketches(spec, plan);
    const auto tr = trim(phi, ranks);
    const auto sys = form_system(tr, plan);
    const auto fit = solve_cores(sys, tr);

    DiagnosticsReport rep;
    rep.ranks = tr.ranks;
    rep.c_P = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < tr.ranks.size(); ++c) {
        const auto& s = tr.singular_values[c];
        rep.marginal_spectra.emplace_back(s.data(), s.data() + s.size());
        const std::size_t r = tr.ranks[c];
        rep.c_P = std::min(rep.c_P, r <= static_cast<std::size_t>(s.size()) ? s(static_cast<Index>(r) - 1) : 0.0);
    }
    rep.c_G = std::numeric_limits<double>::infinity();
    for (const auto& G : fit.tt.cores()) {
        rep.core_norms.push_back(triple_norm(G));
        rep.c_G = std::min(rep.c_G, rep.core_norms.back());
    }
    rep.c_A = 1.0;
    for (const auto& A : sys.A) {
        const auto s = Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues();
        const double smin = s.size() && A.rows() >= A.cols() ? s(s.size() - 1) : 0.0;
        const double pn = smin > 0.0 ? 1.0 / smin : std::numeric_limits<double>::infinity();
        rep.pinv_norms.push_back(pn);
        rep.c_A = std::max(rep.c_A, pn);
    }
    return rep;
}

SampleComplexity check_sample_complexity(const DiagnosticsReport& rep, std::size_t n, std::size_t r, std::size_t d,
                                         double delta, double eta) {
    if (!(rep.c_P > 0.0) || !(rep.c_G > 0.0) || !std::isfinite(rep.c_A) || !std::isfinite(rep.c_P) ||
        !std::isfinite(rep.c_G))
        throw DegenerateError("sample complexity needs finite positive constants");
    if (!(delta > 0.0 && delta < 1.0) || !(eta > 0.0 && eta < 1.0))
        throw ArgumentError("delta and eta must lie in (0, 1)");
    if (n == 0 || r == 0 || d == 0) throw ArgumentError("n, r and d must be positive");
    const double nn = static_cast<double>(n);
    const double base = rep.c_A * rep.c_A * std::pow(1.0 + 1.0 / rep.c_G, 2) * std::pow(1.0 + 1.0 / rep.c_P, 2) *
                        std::pow(nn, 5) * static_cast<double>(r) *
                        std::log(2.0 * nn * nn * nn * static_cast<double>(d) / eta) / (delta * delta);
    const double dd = static_cast<double>(d);
    return {16.0 * base, 144.0 * dd * dd * base};
}

double concentration_bound(std::size_t n, std::size_t window, std::size_t d, std::size_t samples, double eta) {
    if (samples == 0) throw ArgumentError("need at least one sample");
    if (!(eta > 0.0 && eta < 1.0)) throw ArgumentError("eta must lie in (0, 1)");
    const double cells = std::pow(static_cast<double>(n), static_cast<double>(window));
    return std::sqrt(std::log(2.0 * cells * static_cast<double>(d) / eta) / (2.0 * static_cast<double>(samples)));
}

ConcentrationCheck check_concentration(const SampleSet& s, const MarkovSpec& spec, double eta) {
    if (s.extents() != spec.extents) throw ShapeError("samples and chain have different extents");
    const std::size_t d = spec.dims();
    const std::size_t n = *std::max_element(spec.extents.begin(), spec.extents.end());
    ConcentrationCheck out;
    for (std::size_t w = 1; w <= std::min<std::size_t>(3, d); ++w) {
        const double bound = concentration_bound(n, w, d, s.size(), eta);
        for (std::size_t first = 0; first + w <= d; ++first) {
            const auto win = window_range(first, first + w - 1);
            const auto emp = marginal(s, win);
            const auto exact = markov_marginal(spec, first, first + w - 1);
            double dev = 0.0;
            for (std::size_t i = 0; i < exact.size(); ++i) dev = std::max(dev, std::abs(emp.frequencies[i] - exact[i]));
            out.worst_ratio = std::max(out.worst_ratio, dev / bound);
        }
    }
    out.within = out.worst_ratio <= 1.0;
    return out;
}

}  // namespace ttrs
