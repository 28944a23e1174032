#include "ttrs/tensor_core.hpp"

#include "ttrs/error.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace ttrs {

namespace {

constexpr std::array<char, 5> kTtMagic = {'T', 'T', 'R', 'S', '1'};

std::string shape_str(std::span<const std::size_t> s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

}  // namespace

std::size_t shape_size(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        if (e != 0 && n > std::numeric_limits<std::size_t>::max() / e)
            throw SizeError("tensor size overflows");
        n *= e;
    }
    return n;
}

// ---------------------------------------------------------------- DenseTensor

namespace {
void require_positive_extents(const Shape& s) {
    for (auto e : s)
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
}
}  // namespace

DenseTensor::DenseTensor(Shape shape, double fill) : shape_(std::move(shape)) {
    require_positive_extents(shape_);
    data_.assign(shape_size(shape_), fill);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    require_positive_extents(shape_);
    if (data_.size() != shape_size(shape_))
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

std::size_t DenseTensor::flat_index(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size())
        throw CoordinateError("index has " + std::to_string(idx.size()) + " entries, tensor order is " +
                              std::to_string(shape_.size()));
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= shape_[i])
            throw CoordinateError("index " + std::to_string(idx[i]) + " out of range for mode " +
                                  std::to_string(i) + " with extent " + std::to_string(shape_[i]));
        off = off * shape_[i] + idx[i];
    }
    return off;
}

double DenseTensor::at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(std::span<const std::size_t>(idx.begin(), idx.size()))];
}

double& DenseTensor::at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(std::span<const std::size_t>(idx.begin(), idx.size()))];
}

DenseTensor DenseTensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return DenseTensor(std::move(shape), data_);
}

Eigen::Map<RowMatrix> DenseTensor::matrix(std::size_t rows) {
    if (rows == 0 || data_.size() % rows != 0) throw ShapeError("row count does not divide tensor size");
    return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(data_.size() / rows)};
}

Eigen::Map<const RowMatrix> DenseTensor::matrix(std::size_t rows) const {
    if (rows == 0 || data_.size() % rows != 0) throw ShapeError("row count does not divide tensor size");
    return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(data_.size() / rows)};
}

double DenseTensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

UnfoldingView unfold(const DenseTensor& t, std::size_t k) {
    if (k < 1 || k >= t.order())
        throw ArgumentError("unfolding position " + std::to_string(k) + " outside [1, " + std::to_string(t.order() - 1) + "]");
    const auto& s = t.shape();
    const std::size_t rows = shape_size(std::span<const std::size_t>(s.data(), k));
    const std::size_t cols = t.size() / rows;
    return {t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

// ---------------------------------------------------------------- TensorTrain

TensorTrain::TensorTrain(std::vector<DenseTensor> cores) : cores_(std::move(cores)) {
    if (cores_.empty()) throw ShapeError("tensor train needs at least one core");
    for (std::size_t k = 0; k < cores_.size(); ++k) {
        const auto& c = cores_[k];
        if (c.order() != 3) throw ShapeError("core " + std::to_string(k) + " is not 3-way");
        if (c.extent(0) == 0 || c.extent(1) == 0 || c.extent(2) == 0)
            throw ShapeError("core " + std::to_string(k) + " has an empty mode");
        if (k == 0 && c.extent(0) != 1) throw ShapeError("first core must have left rank 1");
        if (k + 1 == cores_.size() && c.extent(2) != 1) throw ShapeError("last core must have right rank 1");
        if (k > 0 && cores_[k - 1].extent(2) != c.extent(0))
            throw ShapeError("bond mismatch between cores " + std::to_string(k - 1) + " and " +
                             std::to_string(k) + ": " + shape_str(cores_[k - 1].shape()) + " vs " +
                             shape_str(c.shape()));
    }
}

void TensorTrain::set_core(std::size_t k, DenseTensor core) {
    if (core.shape() != cores_.at(k).shape()) throw ShapeError("replacement core has a different shape");
    cores_[k] = std::move(core);
}

Shape TensorTrain::extents() const {
    Shape n;
    n.reserve(cores_.size());
    for (const auto& c : cores_) n.push_back(c.extent(1));
    return n;
}

std::vector<std::size_t> TensorTrain::ranks() const {
    std::vector<std::size_t> r;
    r.reserve(cores_.size() + 1);
    for (const auto& c : cores_) r.push_back(c.extent(0));
    r.push_back(cores_.empty() ? 1 : cores_.back().extent(2));
    return r;
}

std::size_t TensorTrain::max_rank() const {
    auto r = ranks();
    return *std::max_element(r.begin(), r.end());
}

// ---------------------------------------------------------------- operations

double tt_eval(const TensorTrain& tt, std::span<const std::size_t> x) {
    if (x.size() != tt.dims())
        throw CoordinateError("coordinate has " + std::to_string(x.size()) + " entries, expected " +
                              std::to_string(tt.dims()));
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Ones(1);
    for (std::size_t k = 0; k < tt.dims(); ++k) {
        const auto& c = tt.core(k);
        const std::size_t rl = c.extent(0), n = c.extent(1), rr = c.extent(2);
        if (x[k] >= n)
            throw CoordinateError("coordinate " + std::to_string(x[k]) + " out of range for mode " +
                                  std::to_string(k) + " with extent " + std::to_string(n));
        // slice G(:, x_k, :) is rl x rr with row stride n*rr
        Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>> slice(
            c.data().data() + x[k] * rr, static_cast<Eigen::Index>(rl), static_cast<Eigen::Index>(rr),
            Eigen::OuterStride<>(static_cast<Eigen::Index>(n * rr)));
        v = v * slice;
    }
    return v(0);
}

DenseTensor tt_contract_full(const TensorTrain& tt, std::size_t max_entries) {
    const Shape n = tt.extents();
    std::size_t total = 1;
    for (auto e : n) {
        if (total > max_entries / e) throw SizeError("dense contraction exceeds " + std::to_string(max_entries) + " entries");
        total *= e;
    }
    RowMatrix acc = RowMatrix::Ones(1, 1);
    for (std::size_t k = 0; k < tt.dims(); ++k) {
        const auto& c = tt.core(k);
        RowMatrix next = acc * c.matrix(c.extent(0));
        // (prefix, n_k * r_k) reinterpreted as (prefix * n_k, r_k)
        acc = Eigen::Map<RowMatrix>(next.data(), next.rows() * static_cast<Eigen::Index>(c.extent(1)),
                                    static_cast<Eigen::Index>(c.extent(2)));
    }
    return DenseTensor(n, std::vector<double>(acc.data(), acc.data() + acc.size()));
}

double tt_inner(const TensorTrain& a, const TensorTrain& b) {
    if (a.extents() != b.extents()) throw ShapeError("tensor trains have different extents");
    RowMatrix e = RowMatrix::Ones(1, 1);
    for (std::size_t k = 0; k < a.dims(); ++k) {
        const auto& ca = a.core(k);
        const auto& cb = b.core(k);
        const auto n = static_cast<Eigen::Index>(ca.extent(1));
        const auto ra = static_cast<Eigen::Index>(ca.extent(2));
        const auto rb = static_cast<Eigen::Index>(cb.extent(2));
        // (E^T A) per slice, then contract with B
        RowMatrix ea = e.transpose() * ca.matrix(ca.extent(0));  // rb_prev x (n*ra)
        RowMatrix next = RowMatrix::Zero(ra, rb);
        Eigen::Map<const RowMatrix> bm = cb.matrix(cb.extent(0));
        for (Eigen::Index i = 0; i < n; ++i)
            next.noalias() += ea.middleCols(i * ra, ra).transpose() * bm.middleCols(i * rb, rb);
        e = std::move(next);
    }
    return e(0, 0);
}

double tt_norm(const TensorTrain& tt) {
    RowMatrix carry = RowMatrix::Ones(1, 1);
    for (std::size_t k = 0; k < tt.dims(); ++k) {
        const auto& c = tt.core(k);
        RowMatrix m = carry * c.matrix(c.extent(0));
        RowMatrix stacked = Eigen::Map<RowMatrix>(m.data(), m.rows() * static_cast<Eigen::Index>(c.extent(1)),
                                                  static_cast<Eigen::Index>(c.extent(2)));
        if (k + 1 == tt.dims()) return stacked.norm();
        const Eigen::Index keep = std::min(stacked.rows(), stacked.cols());
        Eigen::HouseholderQR<RowMatrix> qr(stacked);
        carry = qr.matrixQR().topRows(keep).triangularView<Eigen::Upper>();
    }
    return carry.norm();
}

TensorTrain tt_add(const TensorTrain& a, const TensorTrain& b, double sign) {
    if (a.extents() != b.extents()) throw ShapeError("tensor trains have different extents");
    const std::size_t d = a.dims();
    if (d == 1) {
        DenseTensor c = a.core(0);
        for (std::size_t i = 0; i < c.size(); ++i) c[i] += sign * b.core(0)[i];
        return TensorTrain({c});
    }
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < d; ++k) {
        const auto& ca = a.core(k);
        const auto& cb = b.core(k);
        const std::size_t n = ca.extent(1);
        const std::size_t la = ca.extent(0), ra = ca.extent(2), lb = cb.extent(0), rb = cb.extent(2);
        const std::size_t l = k == 0 ? 1 : la + lb;
        const std::size_t r = k + 1 == d ? 1 : ra + rb;
        DenseTensor c({l, n, r});
        const std::size_t aoff_l = 0, boff_l = k == 0 ? 0 : la;
        const std::size_t aoff_r = 0, boff_r = k + 1 == d ? 0 : ra;
        const double bs = k == 0 ? sign : 1.0;
        for (std::size_t i = 0; i < la; ++i)
            for (std::size_t x = 0; x < n; ++x)
                for (std::size_t j = 0; j < ra; ++j)
                    c[((aoff_l + i) * n + x) * r + aoff_r + j] += ca[(i * n + x) * ra + j];
        for (std::size_t i = 0; i < lb; ++i)
            for (std::size_t x = 0; x < n; ++x)
                for (std::size_t j = 0; j < rb; ++j)
                    c[((boff_l + i) * n + x) * r + boff_r + j] += bs * cb[(i * n + x) * rb + j];
        cores.push_back(std::move(c));
    }
    return TensorTrain(std::move(cores));
}

TensorTrain tt_scaled(const TensorTrain& tt, double factor) {
    std::vector<DenseTensor> cores = tt.cores();
    for (auto& v : cores.front().data()) v *= factor;
    return TensorTrain(std::move(cores));
}

double tt_rel_l2_error(const TensorTrain& p, const TensorTrain& q) {
    const double np = tt_norm(p);
    if (np == 0.0) throw DegenerateError("reference tensor train has zero norm");
    return tt_norm(tt_add(p, q, -1.0)) / np;
}

double triple_norm(const DenseTensor& core) {
    if (core.order() != 3) throw ShapeError("triple norm needs a 3-way core");
    const std::size_t rl = core.extent(0), n = core.extent(1), rr = core.extent(2);
    double best = 0.0;
    RowMatrix slice(rl, rr);
    for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t i = 0; i < rl; ++i)
            for (std::size_t j = 0; j < rr; ++j) slice(i, j) = core[(i * n + x) * rr + j];
        double s = 0.0;
        if (rl == 1 || rr == 1) {
            s = slice.norm();
        } else {
            Eigen::JacobiSVD<RowMatrix> svd(slice);
            s = svd.singularValues()(0);
        }
        best = std::max(best, s);
    }
    return best;
}

TensorTrain tt_from_dense(const DenseTensor& t, double rel_tol) {
    const std::size_t d = t.order();
    if (d == 0) throw ShapeError("cannot build a tensor train of a scalar");
    std::vector<DenseTensor> cores;
    RowMatrix rest = Eigen::Map<const RowMatrix>(t.data().data(), 1, static_cast<Eigen::Index>(t.size()));
    std::size_t r_prev = 1;
    for (std::size_t k = 0; k + 1 < d; ++k) {
        const auto n = static_cast<Eigen::Index>(t.extent(k));
        const Eigen::Index rows = static_cast<Eigen::Index>(r_prev) * n;
        RowMatrix m = Eigen::Map<RowMatrix>(rest.data(), rows, rest.size() / rows);
        Eigen::BDCSVD<RowMatrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        Eigen::Index r = 0;
        const double cut = s.size() ? rel_tol * s(0) : 0.0;
        while (r < s.size() && s(r) > cut) ++r;
        r = std::max<Eigen::Index>(r, 1);
        RowMatrix u = svd.matrixU().leftCols(r);
        cores.emplace_back(Shape{r_prev, static_cast<std::size_t>(n), static_cast<std::size_t>(r)},
                           std::vector<double>(u.data(), u.data() + u.size()));
        rest = s.head(r).asDiagonal() * svd.matrixV().leftCols(r).transpose();
        r_prev = static_cast<std::size_t>(r);
    }
    cores.emplace_back(Shape{r_prev, t.extent(d - 1), 1}, std::vector<double>(rest.data(), rest.data() + rest.size()));
    return TensorTrain(std::move(cores));
}

// ---------------------------------------------------------------- io

namespace io {

void write_u64(std::ostream& out, std::uint64_t v) {
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    out.write(b.data(), 8);
}

void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t read_u64(std::istream& in) {
    std::array<unsigned char, 8> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw ParseError("unexpected end of binary stream");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

void atomic_write(const std::filesystem::path& path, std::span<const char> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    atomic_write(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace io

void write_tt(std::ostream& out, const TensorTrain& tt) {
    out.write(kTtMagic.data(), kTtMagic.size());
    io::write_u64(out, tt.dims());
    for (auto r : tt.ranks()) io::write_u64(out, r);
    for (auto n : tt.extents()) io::write_u64(out, n);
    for (const auto& c : tt.cores())
        for (double v : c.data()) io::write_f64(out, v);
}

TensorTrain read_tt(std::istream& in) {
    std::array<char, 5> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kTtMagic) throw ParseError("bad tensor-train magic");
    const std::uint64_t d = io::read_u64(in);
    if (d == 0 || d > 100000) throw ParseError("implausible dimension count " + std::to_string(d));
    std::vector<std::size_t> r(d + 1), n(d);
    for (auto& v : r) v = io::read_u64(in);
    for (auto& v : n) v = io::read_u64(in);
    if (r.front() != 1 || r.back() != 1) throw ParseError("boundary ranks must be 1");
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < d; ++k) {
        if (r[k] == 0 || n[k] == 0 || r[k + 1] == 0) throw ParseError("zero extent in tensor-train header");
        Shape s{r[k], n[k], r[k + 1]};
        const std::size_t cnt = shape_size(s);
        if (cnt > kContractCap) throw ParseError("core too large");
        std::vector<double> data(cnt);
        for (auto& v : data) v = io::read_f64(in);
        cores.emplace_back(std::move(s), std::move(data));
    }
    return TensorTrain(std::move(cores));
}

nlohmann::json tt_to_json(const TensorTrain& tt) {
    nlohmann::json j;
    j["format"] = "TTRS1";
    j["d"] = tt.dims();
    j["ranks"] = tt.ranks();
    j["extents"] = tt.extents();
    auto cores = nlohmann::json::array();
    for (const auto& c : tt.cores()) cores.push_back(c.values());
    j["cores"] = std::move(cores);
    return j;
}

TensorTrain tt_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "TTRS1") throw ParseError("unknown tensor-train format tag");
        const auto d = j.at("d").get<std::size_t>();
        const auto r = j.at("ranks").get<std::vector<std::size_t>>();
        const auto n = j.at("extents").get<std::vector<std::size_t>>();
        const auto& cj = j.at("cores");
        if (r.size() != d + 1 || n.size() != d || cj.size() != d) throw ParseError("inconsistent tensor-train header");
        std::vector<DenseTensor> cores;
        for (std::size_t k = 0; k < d; ++k)
            cores.emplace_back(Shape{r[k], n[k], r[k + 1]}, cj[k].get<std::vector<double>>());
        return TensorTrain(std::move(cores));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("tensor-train JSON: ") + e.what());
    } catch (const ShapeError& e) {
        throw ParseError(std::string("tensor-train JSON: ") + e.what());
    }
}

void save_tt(const std::filesystem::path& path, const TensorTrain& tt) {
    if (path.extension() == ".json") {
        io::atomic_write_text(path, tt_to_json(tt).dump());
        return;
    }
    std::ostringstream os(std::ios::binary);
    write_tt(os, tt);
    const std::string s = os.str();
    io::atomic_write(path, std::span<const char>(s.data(), s.size()));
}

TensorTrain load_tt(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    if (path.extension() == ".json") {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("tensor-train JSON: ") + e.what());
        }
        return tt_from_json(j);
    }
    return read_tt(in);
}

}  // namespace ttrs
