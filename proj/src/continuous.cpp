#include "ttrs/continuous.hpp"

#include "ttrs/error.hpp"
#include "ttrs/quadrature.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ttrs {

namespace {

constexpr std::array<char, 6> kContMagic = {'T', 'T', 'R', 'S', 'C', '1'};
constexpr std::size_t kBatch = 4096;

// Running sum with Kahan compensation, entrywise.
struct CompensatedSum {
    std::vector<double> sum, carry;
    explicit CompensatedSum(std::size_t n) : sum(n, 0.0), carry(n, 0.0) {}
    void add(const double* v) {
        for (std::size_t i = 0; i < sum.size(); ++i) {
            const double y = v[i] - carry[i];
            const double t = sum[i] + y;
            carry[i] = (t - sum[i]) - y;
            sum[i] = t;
        }
    }
};

}  // namespace

// ---------------------------------------------------------------- basis

BasisSet BasisSet::fourier(std::size_t size, double lower, double upper) {
    if (size == 0) throw ArgumentError("basis needs at least one function");
    if (!(lower < upper)) throw ArgumentError("basis interval must satisfy lower < upper");
    BasisSet b;
    b.family_ = "fourier";
    b.size_ = size;
    b.lower_ = lower;
    b.upper_ = upper;
    const RowMatrix g = b.gram(kDefaultQuadratureNodes);
    const double dev = (g - RowMatrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
    if (dev > 1e-10)
        throw NumericalError("Fourier basis of size " + std::to_string(size) + " is not orthonormal under the " +
                             std::to_string(kDefaultQuadratureNodes) + "-node rule (deviation " + std::to_string(dev) + ")");
    return b;
}

double BasisSet::constant() const noexcept { return 1.0 / std::sqrt(upper_ - lower_); }

void BasisSet::eval(double x, double* out) const {
    const double len = upper_ - lower_;
    const double amp = std::sqrt(2.0 / len);
    const double theta = 2.0 * std::numbers::pi * (x - lower_) / len;
    out[0] = 1.0 / std::sqrt(len);
    for (std::size_t i = 1, j = 1; i < size_; ++j) {
        out[i++] = amp * std::cos(static_cast<double>(j) * theta);
        if (i < size_) out[i++] = amp * std::sin(static_cast<double>(j) * theta);
    }
}

std::vector<double> BasisSet::eval(double x) const {
    std::vector<double> v(size_);
    eval(x, v.data());
    return v;
}

RowMatrix BasisSet::gram(std::size_t nodes) const {
    const auto rule = gauss_legendre(nodes, lower_, upper_);
    RowMatrix P(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(size_));
    for (std::size_t q = 0; q < nodes; ++q) eval(rule.nodes[q], P.row(static_cast<Eigen::Index>(q)).data());
    const Eigen::Map<const Eigen::VectorXd> w(rule.weights.data(), static_cast<Eigen::Index>(nodes));
    return P.transpose() * w.asDiagonal() * P;
}

// ---------------------------------------------------------------- moments

CoeffTensors estimate_coeff_marginals(const SampleSet& s, const BasisSet& basis) {
    if (s.kind() != SampleKind::continuous) throw ArgumentError("coefficient moments need continuous samples");
    if (s.lower() < basis.lower() || s.upper() > basis.upper())
        throw RangeError("sample interval exceeds the basis interval");
    const std::size_t d = s.dims(), N = s.size(), M = basis.size();
    if (d < 2) throw ArgumentError("need at least two variables");
    if (N == 0) throw DegenerateError("no samples");
    const auto m = static_cast<Eigen::Index>(M);

    std::vector<CompensatedSum> acc;
    for (std::size_t i = 0; i < d; ++i) acc.emplace_back(i == 0 || i + 1 == d ? M * M : M * M * M);

    std::vector<RowMatrix> P(d);
    RowMatrix kr, prod;
    for (std::size_t start = 0; start < N; start += kBatch) {
        const std::size_t B = std::min(kBatch, N - start);
        const auto b = static_cast<Eigen::Index>(B);
        for (std::size_t k = 0; k < d; ++k) {
            P[k].resize(b, m);
            for (std::size_t i = 0; i < B; ++i) basis.eval(s.value_row(start + i)[k], P[k].row(static_cast<Eigen::Index>(i)).data());
        }
        prod.noalias() = P[0].transpose() * P[1];
        acc[0].add(prod.data());
        for (std::size_t k = 1; k + 1 < d; ++k) {
            kr.resize(b, m * m);
            for (Eigen::Index i = 0; i < b; ++i)
                for (Eigen::Index u = 0; u < m; ++u) kr.row(i).segment(u * m, m) = P[k - 1](i, u) * P[k].row(i);
            prod.noalias() = kr.transpose() * P[k + 1];
            acc[k].add(prod.data());
        }
        prod.noalias() = P[d - 2].transpose() * P[d - 1];
        acc[d - 1].add(prod.data());
    }

    CoeffTensors out;
    out.size = M;
    out.constant = basis.constant();
    for (std::size_t k = 0; k < d; ++k) {
        const double scale = (k == 0 ? 1.0 : std::pow(out.constant, static_cast<double>(k) - 1.0)) / static_cast<double>(N);
        std::vector<double> v = std::move(acc[k].sum);
        for (auto& x : v) x *= scale;
        const Shape shape = k == 0 ? Shape{1, M, M} : (k + 1 == d ? Shape{M, M, 1} : Shape{M, M, M});
        out.phi.emplace_back(shape, std::move(v));
    }
    return out;
}

CoeffTensors coeff_marginals_from_full(const DenseTensor& nu, const BasisSet& basis) {
    const std::size_t d = nu.order(), M = basis.size();
    if (d < 2) throw ArgumentError("need at least two variables");
    for (auto e : nu.shape())
        if (e != M) throw ShapeError("coefficient tensor extents must equal the basis size");
    CoeffTensors out;
    out.size = M;
    out.constant = basis.constant();
    const double c = out.constant;
    for (std::size_t k = 0; k < d; ++k) {
        const std::size_t first = k == 0 ? 0 : k - 1;
        const std::size_t last = k + 1 == d ? d - 1 : k + 1;
        const std::size_t width = last - first + 1;
        const double scale = (k == 0 ? 1.0 : std::pow(c, static_cast<double>(k) - 1.0)) /
                             std::pow(c, static_cast<double>(d - width));
        const Shape shape = k == 0 ? Shape{1, M, M} : (k + 1 == d ? Shape{M, M, 1} : Shape{M, M, M});
        DenseTensor t(shape);
        std::vector<std::size_t> idx(d, 0), w(width, 0);
        for (std::size_t flat = 0; flat < t.size(); ++flat) {
            std::size_t rem = flat;
            for (std::size_t j = width; j-- > 0;) {
                w[j] = rem % M;
                rem /= M;
            }
            std::fill(idx.begin(), idx.end(), 0);
            for (std::size_t j = 0; j < width; ++j) idx[first + j] = w[j];
            t[flat] = scale * nu(idx);
        }
        out.phi.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------- estimator

ContinuousFit tt_rs_continuous_markov(const CoeffTensors& moments, const RankSpec& ranks, const BasisSet& basis) {
    if (moments.size != basis.size()) throw ShapeError("moments were computed with a different basis size");
    const auto t0 = std::chrono::steady_clock::now();
    auto tr = trim(moments.phi, ranks);
    const auto t1 = std::chrono::steady_clock::now();
    SystemMatrices sys;
    const auto M = static_cast<Eigen::Index>(moments.size);
    for (std::size_t c = 0; c + 1 < tr.B.size(); ++c) {
        const auto& B = tr.B[c];
        // the constant function sits at left index 0
        sys.A.push_back(B.matrix(B.extent(0) * B.extent(1)).topRows(M));
    }
    const auto t2 = std::chrono::steady_clock::now();
    auto fit = solve_cores(sys, tr);
    const auto t3 = std::chrono::steady_clock::now();
    fit.report.algorithm = "tt-rs-continuous";
    fit.report.trim_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    fit.report.system_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    fit.report.solve_ms = std::chrono::duration<double, std::milli>(t3 - t2).count();
    return {{basis, std::move(fit.tt)}, std::move(fit.report)};
}

ContinuousFit tt_rs_continuous_markov(const SampleSet& s, const RankSpec& ranks, const BasisSet& basis) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto mom = estimate_coeff_marginals(s, basis);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    auto fit = tt_rs_continuous_markov(mom, ranks, basis);
    fit.report.sketch_ms = ms;
    return fit;
}

double eval_continuous(const ContinuousTT& f, std::span<const double> x) {
    const auto& tt = f.coeffs;
    if (x.size() != tt.dims()) throw CoordinateError("point has the wrong dimension");
    const std::size_t M = f.basis.size();
    std::vector<double> phi(M);
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Ones(1);
    for (std::size_t k = 0; k < tt.dims(); ++k) {
        f.basis.eval(x[k], phi.data());
        const auto& G = tt.core(k);
        const std::size_t l = G.extent(0), r = G.extent(2);
        if (G.extent(1) != M) throw ShapeError("coefficient core does not match the basis size");
        RowMatrix S = RowMatrix::Zero(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(r));
        for (std::size_t a = 0; a < l; ++a)
            for (std::size_t j = 0; j < M; ++j)
                for (std::size_t b = 0; b < r; ++b)
                    S(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += G[(a * M + j) * r + b] * phi[j];
        v = v * S;
    }
    return v(0);
}

// ---------------------------------------------------------------- exact coefficients

TensorTrain markov_to_coeff_tt(const GinzburgLandauSpec& s, const BasisSet& basis, std::size_t nodes) {
    const std::size_t d = s.dims, M = basis.size();
    if (d < 2) throw ArgumentError("need at least two variables");
    if (basis.lower() != s.lower || basis.upper() != s.upper) throw ArgumentError("basis and model intervals differ");
    const auto rule = gauss_legendre(nodes, s.lower, s.upper);
    const auto Q = static_cast<Eigen::Index>(nodes);
    const auto m = static_cast<Eigen::Index>(M);
    RowMatrix F(Q, Q), P(Q, m);
    Eigen::VectorXd w(Q), f0(Q), fd(Q);
    for (Eigen::Index q = 0; q < Q; ++q) {
        const double t = rule.nodes[static_cast<std::size_t>(q)];
        w(q) = rule.weights[static_cast<std::size_t>(q)];
        f0(q) = std::exp(-gl_pair_energy(s, 0.0, t));
        fd(q) = std::exp(-gl_pair_energy(s, t, 0.0));
        basis.eval(t, P.row(q).data());
        for (Eigen::Index p = 0; p < Q; ++p) F(q, p) = std::exp(-gl_pair_energy(s, t, rule.nodes[static_cast<std::size_t>(p)]));
    }
    // log Z through a rescaled forward recursion
    Eigen::VectorXd v = (f0.array() * w.array()).matrix();
    double log_z = 0.0;
    for (std::size_t k = 1; k < d; ++k) {
        v = (F.transpose() * v).cwiseProduct(w);
        const double sc = v.maxCoeff();
        log_z += std::log(sc);
        v /= sc;
    }
    log_z += std::log(v.dot(fd));
    const double per_core = std::exp(-log_z / static_cast<double>(d));

    const RowMatrix WP = w.asDiagonal() * P;  // (Q, M)
    std::vector<DenseTensor> cores;
    {
        DenseTensor G({1, M, nodes});
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t q = 0; q < nodes; ++q)
                G[j * nodes + q] = per_core * f0(static_cast<Eigen::Index>(q)) * WP(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j));
        cores.push_back(std::move(G));
    }
    for (std::size_t k = 1; k + 1 < d; ++k) {
        DenseTensor G({nodes, M, nodes});
        for (std::size_t a = 0; a < nodes; ++a)
            for (std::size_t j = 0; j < M; ++j)
                for (std::size_t q = 0; q < nodes; ++q)
                    G[(a * M + j) * nodes + q] = per_core * F(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(q)) *
                                                 WP(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j));
        cores.push_back(std::move(G));
    }
    {
        const RowMatrix last = F * fd.asDiagonal() * WP;  // (Q, M)
        DenseTensor G({nodes, M, 1});
        for (std::size_t a = 0; a < nodes; ++a)
            for (std::size_t j = 0; j < M; ++j)
                G[a * M + j] = per_core * last(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
        cores.push_back(std::move(G));
    }
    return TensorTrain(std::move(cores));
}

double gl_density_norm_squared(const GinzburgLandauSpec& s, std::size_t nodes) {
    const std::size_t d = s.dims;
    if (d < 1) throw ArgumentError("need at least one variable");
    const auto rule = gauss_legendre(nodes, s.lower, s.upper);
    const auto Q = static_cast<Eigen::Index>(nodes);
    RowMatrix F(Q, Q);
    Eigen::VectorXd w(Q), f0(Q), fd(Q);
    for (Eigen::Index q = 0; q < Q; ++q) {
        const double t = rule.nodes[static_cast<std::size_t>(q)];
        w(q) = rule.weights[static_cast<std::size_t>(q)];
        f0(q) = std::exp(-gl_pair_energy(s, 0.0, t));
        fd(q) = std::exp(-gl_pair_energy(s, t, 0.0));
        for (Eigen::Index p = 0; p < Q; ++p) F(q, p) = std::exp(-gl_pair_energy(s, t, rule.nodes[static_cast<std::size_t>(p)]));
    }
    auto log_chain = [&](int power) {
        const RowMatrix Fp = F.array().pow(power).matrix();
        Eigen::VectorXd v = (f0.array().pow(power) * w.array()).matrix();
        double lz = 0.0;
        for (std::size_t k = 1; k < d; ++k) {
            v = (Fp.transpose() * v).cwiseProduct(w);
            const double sc = v.maxCoeff();
            lz += std::log(sc);
            v /= sc;
        }
        return lz + std::log(v.dot(Eigen::VectorXd(fd.array().pow(power))));
    };
    return std::exp(log_chain(2) - 2.0 * log_chain(1));
}

L2ErrorDecomposition l2_error_decomposition(const TensorTrain& exact, double norm_sq, const TensorTrain& fitted) {
    if (!(norm_sq > 0.0)) throw ArgumentError("density norm must be positive");
    L2ErrorDecomposition e;
    const double nu_sq = tt_inner(exact, exact);
    double rad = 1.0 - nu_sq / norm_sq;
    if (rad < -1e-10) throw NumericalError("projection norm exceeds the density norm (radicand " + std::to_string(rad) + ")");
    rad = std::max(rad, 0.0);
    e.approx = std::sqrt(rad);
    e.estimation = tt_norm(tt_add(exact, fitted, -1.0)) / std::sqrt(norm_sq);
    e.total = std::sqrt(e.approx * e.approx + e.estimation * e.estimation);
    return e;
}

// ---------------------------------------------------------------- files

void save_continuous_tt(const std::filesystem::path& path, const ContinuousTT& f) {
    std::ostringstream os(std::ios::binary);
    os.write(kContMagic.data(), kContMagic.size());
    io::write_u64(os, f.basis.family().size());
    os.write(f.basis.family().data(), static_cast<std::streamsize>(f.basis.family().size()));
    io::write_u64(os, f.basis.size());
    io::write_f64(os, f.basis.lower());
    io::write_f64(os, f.basis.upper());
    write_tt(os, f.coeffs);
    const std::string bytes = os.str();
    io::atomic_write(path, std::span<const char>(bytes.data(), bytes.size()));
}

ContinuousTT load_continuous_tt(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::array<char, 6> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kContMagic) throw ParseError("bad continuous-TT magic");
    const auto len = io::read_u64(in);
    if (len > 64) throw ParseError("implausible basis family name");
    std::string family(len, '\0');
    if (!in.read(family.data(), static_cast<std::streamsize>(len))) throw ParseError("truncated basis block");
    if (family != "fourier") throw ParseError("unknown basis family '" + family + "'");
    const auto M = io::read_u64(in);
    const double a = io::read_f64(in);
    const double b = io::read_f64(in);
    ContinuousTT f{BasisSet::fourier(M, a, b), read_tt(in)};
    for (auto n : f.coeffs.extents())
        if (n != M) throw ParseError("coefficient extents do not match the basis size");
    return f;
}

}  // namespace ttrs
