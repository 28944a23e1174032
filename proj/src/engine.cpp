#include "ttrs/engine.hpp"

#include "ttrs/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace ttrs {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::size_t window_product(const Shape& n, std::size_t first, std::size_t last) {
    std::size_t s = 1;
    for (std::size_t v = first; v < last; ++v) s *= n[v];
    return s;
}

}  // namespace

RankSpec RankSpec::fixed(std::vector<std::size_t> ranks) {
    RankSpec r;
    r.ranks = std::move(ranks);
    return r;
}

RankSpec RankSpec::uniform(std::size_t rank, std::size_t dims) {
    return fixed(std::vector<std::size_t>(dims > 0 ? dims - 1 : 0, rank));
}

RankSpec RankSpec::relative(double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("rank threshold must lie in (0, 1)");
    RankSpec r;
    r.threshold = threshold;
    return r;
}

std::vector<std::size_t> clip_ranks(std::vector<std::size_t> ranks, const SketchPlan& plan) {
    if (ranks.size() + 1 != plan.dims()) throw ShapeError("need one rank per cut");
    for (std::size_t c = 0; c < ranks.size(); ++c) {
        const std::size_t rows = plan.left_size_before(c) * plan.extents[c];
        ranks[c] = std::min({ranks[c], rows, plan.right[c].size});
    }
    return ranks;
}

TrimResult trim(const std::vector<DenseTensor>& phi, const RankSpec& spec, bool keep_projections) {
    const std::size_t d = phi.size();
    if (d < 2) throw ShapeError("trimming needs at least two sketched tensors");
    if (!spec.ranks.empty() && spec.ranks.size() + 1 != d) throw ShapeError("need one rank per cut");
    TrimResult out;
    for (std::size_t c = 0; c + 1 < d; ++c) {
        const auto& t = phi[c];
        if (t.order() != 3) throw ShapeError("sketched tensors must be 3-way");
        if (c > 0 && phi[c - 1].extent(2) == 0) throw ShapeError("empty sketch");
        const std::size_t rows = t.extent(0) * t.extent(1), cols = t.extent(2);
        const auto M = t.matrix(rows);
        if (M.cwiseAbs().maxCoeff() == 0.0)
            throw DegenerateError("sketched tensor of core " + std::to_string(c) + " is identically zero");
        Eigen::JacobiSVD<RowMatrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd s = svd.singularValues();
        std::size_t r = 0;
        if (!spec.ranks.empty()) {
            r = spec.ranks[c];
            if (r == 0) throw RankError("ranks must be positive");
            if (r > std::min(rows, cols))
                throw RankError("rank " + std::to_string(r) + " at cut " + std::to_string(c) + " exceeds the " +
                                std::to_string(rows) + " x " + std::to_string(cols) + " sketch");
        } else {
            while (r < static_cast<std::size_t>(s.size()) && s(static_cast<Eigen::Index>(r)) > spec.threshold * s(0)) ++r;
            r = std::max<std::size_t>(r, 1);
        }
        const auto ri = static_cast<Eigen::Index>(r);
        RowMatrix U = svd.matrixU().leftCols(ri);
        RowMatrix V = svd.matrixV().leftCols(ri);
        for (Eigen::Index j = 0; j < ri; ++j) {
            Eigen::Index arg = 0;
            U.col(j).cwiseAbs().maxCoeff(&arg);
            if (U(arg, j) < 0) {
                U.col(j) *= -1.0;
                V.col(j) *= -1.0;
            }
        }
        if (keep_projections) {
            if (!(s(ri - 1) > 1e-14 * s(0)))
                throw DegenerateError("singular value " + std::to_string(r) + " of the sketch at cut " +
                                      std::to_string(c) + " vanishes");
            out.projections.push_back(V * s.head(ri).cwiseInverse().asDiagonal());
        }
        out.B.emplace_back(Shape{t.extent(0), t.extent(1), r}, std::vector<double>(U.data(), U.data() + U.size()));
        out.ranks.push_back(r);
        out.singular_values.push_back(s);
    }
    const auto& last = phi.back();
    if (last.order() != 3 || last.extent(2) != 1) throw ShapeError("last sketched tensor must have right size 1");
    out.B.push_back(last);
    return out;
}

SystemMatrices form_system(const TrimResult& tr, const SketchPlan& plan) {
    plan.validate();
    const std::size_t d = plan.dims();
    if (tr.B.size() != d) throw ShapeError("trim result does not match the plan");
    SystemMatrices sys;
    for (std::size_t c = 0; c + 1 < d; ++c) {
        const auto& B = tr.B[c];
        const std::size_t mp = B.extent(0), n = B.extent(1), r = B.extent(2);
        const auto& blk = plan.left[c];
        if (mp != plan.left_size_before(c) || n != plan.extents[c])
            throw ShapeError("trimmed core " + std::to_string(c) + " does not match the plan");
        RowMatrix A = RowMatrix::Zero(static_cast<Eigen::Index>(blk.size), static_cast<Eigen::Index>(r));
        if (blk.kind == SketchKind::window) {
            // B rows are the variables of the previous window plus x_c; the new
            // window drops the oldest ones.
            const std::size_t prev_first = c == 0 ? 0 : plan.left[c - 1].first;
            const std::size_t drop = window_product(plan.extents, prev_first, blk.first);
            const auto Bm = B.matrix(mp * n);
            for (std::size_t t = 0; t < drop; ++t)
                A += Bm.middleRows(static_cast<Eigen::Index>(t * blk.size), static_cast<Eigen::Index>(blk.size));
        } else {
            const auto& s = blk.block;  // (m_c, n, m_prev)
            for (std::size_t b = 0; b < blk.size; ++b)
                for (std::size_t x = 0; x < n; ++x)
                    for (std::size_t a = 0; a < mp; ++a) {
                        const double w = s[(b * n + x) * mp + a];
                        if (w == 0.0) continue;
                        for (std::size_t j = 0; j < r; ++j)
                            A(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) += w * B[(a * n + x) * r + j];
                    }
        }
        sys.A.push_back(std::move(A));
    }
    return sys;
}

SystemMatrices form_system(const TrimResult& tr, const std::vector<RowMatrix>& psi) {
    if (tr.projections.size() != psi.size() || tr.B.size() != psi.size() + 1)
        throw ShapeError("explicit system needs one projection and one psi per cut");
    SystemMatrices sys;
    for (std::size_t c = 0; c < psi.size(); ++c) {
        if (psi[c].cols() != tr.projections[c].rows()) throw ShapeError("psi and projection sizes differ");
        sys.A.push_back(psi[c] * tr.projections[c]);
    }
    return sys;
}

RowMatrix pinv_solve(const Eigen::Ref<const RowMatrix>& A, const Eigen::Ref<const RowMatrix>& B, double cutoff) {
    if (A.rows() != B.rows()) throw ShapeError("least-squares operands have different row counts");
    Eigen::JacobiSVD<RowMatrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) throw DegenerateError("least-squares matrix is zero");
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff * s(0)) inv(i) = 1.0 / s(i);
    return svd.matrixV() * (inv.asDiagonal() * (svd.matrixU().transpose() * B));
}

FitResult solve_cores(const SystemMatrices& sys, const TrimResult& tr, double tol) {
    const std::size_t d = tr.B.size();
    if (sys.A.size() + 1 != d) throw ShapeError("system and trim result disagree on d");
    FitResult fit;
    auto& rep = fit.report;
    rep.ranks = tr.ranks;
    for (const auto& s : tr.singular_values) rep.trim_singular_values.emplace_back(s.data(), s.data() + s.size());
    std::vector<DenseTensor> cores;
    cores.push_back(tr.B[0]);
    rep.core_residuals.push_back(0.0);
    for (std::size_t i = 1; i < d; ++i) {
        const RowMatrix& A = sys.A[i - 1];
        const auto& B = tr.B[i];
        if (static_cast<std::size_t>(A.rows()) != B.extent(0))
            throw ShapeError("A_" + std::to_string(i - 1) + " rows do not match B_" + std::to_string(i));
        Eigen::JacobiSVD<RowMatrix> svd(A);
        const Eigen::VectorXd s = svd.singularValues();
        if (s.size() == 0 || s(0) == 0.0) throw DegenerateError("system matrix A_" + std::to_string(i - 1) + " is zero");
        const double smin = A.rows() < A.cols() ? 0.0 : s(s.size() - 1);
        rep.sigma_max.push_back(s(0));
        rep.sigma_min.push_back(smin);
        if (smin < tol * s(0))
            rep.warnings.push_back("A_" + std::to_string(i - 1) + " is ill-conditioned (sigma_min = " +
                                   std::to_string(smin) + ", sigma_max = " + std::to_string(s(0)) + ")");
        const auto rhs = B.matrix(B.extent(0));
        RowMatrix X = pinv_solve(A, rhs);
        rep.core_residuals.push_back((A * X - rhs).norm());
        cores.emplace_back(Shape{static_cast<std::size_t>(A.cols()), B.extent(1), B.extent(2)},
                           std::vector<double>(X.data(), X.data() + X.size()));
    }
    fit.tt = TensorTrain(std::move(cores));
    return fit;
}

FitResult tt_rs_from_sketches(const std::vector<DenseTensor>& phi, const RankSpec& ranks, const SketchPlan& plan) {
    auto t0 = Clock::now();
    auto tr = trim(phi, ranks);
    const double trim_ms = ms_since(t0);
    t0 = Clock::now();
    auto sys = form_system(tr, plan);
    const double sys_ms = ms_since(t0);
    t0 = Clock::now();
    auto fit = solve_cores(sys, tr);
    fit.report.solve_ms = ms_since(t0);
    fit.report.trim_ms = trim_ms;
    fit.report.system_ms = sys_ms;
    fit.report.algorithm = "tt-rs";
    return fit;
}

FitResult tt_rs(const SampleSet& samples, const RankSpec& ranks, const SketchPlan& plan) {
    const auto t0 = Clock::now();
    auto phi = run_sketching(samples, plan);
    const double sk = ms_since(t0);
    auto fit = tt_rs_from_sketches(phi, ranks, plan);
    fit.report.sketch_ms = sk;
    return fit;
}

FitResult tt_rs(const DenseTensor& p, const RankSpec& ranks, const SketchPlan& plan) {
    const auto t0 = Clock::now();
    auto phi = run_sketching(p, plan);
    const double sk = ms_since(t0);
    auto fit = tt_rs_from_sketches(phi, ranks, plan);
    fit.report.sketch_ms = sk;
    return fit;
}

FitResult tt_s_from_sketches(const ExplicitSketches& sk, const RankSpec& ranks) {
    auto t0 = Clock::now();
    auto tr = trim(sk.phi, ranks, true);
    const double trim_ms = ms_since(t0);
    t0 = Clock::now();
    auto sys = form_system(tr, sk.psi);
    const double sys_ms = ms_since(t0);
    t0 = Clock::now();
    auto fit = solve_cores(sys, tr);
    fit.report.solve_ms = ms_since(t0);
    fit.report.trim_ms = trim_ms;
    fit.report.system_ms = sys_ms;
    fit.report.algorithm = "tt-s";
    return fit;
}

FitResult tt_s(const SampleSet& samples, const RankSpec& ranks, const std::vector<LeftSketch>& left,
               const SketchPlan& right_plan) {
    const auto t0 = Clock::now();
    auto sk = run_explicit_sketching(samples, left, right_plan);
    const double ms = ms_since(t0);
    auto fit = tt_s_from_sketches(sk, ranks);
    fit.report.sketch_ms = ms;
    return fit;
}

FitResult tt_s(const DenseTensor& p, const RankSpec& ranks, const std::vector<LeftSketch>& left,
               const SketchPlan& right_plan) {
    const auto t0 = Clock::now();
    auto sk = run_explicit_sketching(p, left, right_plan);
    const double ms = ms_since(t0);
    auto fit = tt_s_from_sketches(sk, ranks);
    fit.report.sketch_ms = ms;
    return fit;
}

nlohmann::json FitReport::to_json() const {
    return {{"algorithm", algorithm},
            {"ranks", ranks},
            {"trim_singular_values", trim_singular_values},
            {"core_residuals", core_residuals},
            {"sigma_min", sigma_min},
            {"sigma_max", sigma_max},
            {"warnings", warnings},
            {"timings_ms", {{"sketch", sketch_ms}, {"trim", trim_ms}, {"system", system_ms}, {"solve", solve_ms}}}};
}

}  // namespace ttrs
