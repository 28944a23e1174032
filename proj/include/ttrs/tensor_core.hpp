#pragma once

/// Dense tensors, tensor trains and their binary/JSON formats.
///
/// All indices are 0-based.  Storage is row-major (last index fastest), so a
/// tensor of shape (n_1, ..., n_d) unfolded at position k is the row-major
/// matrix with prod(n_1..n_k) rows, obtained without copying.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

namespace ttrs {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using UnfoldingView = Eigen::Map<const RowMatrix>;

/// Product of extents; throws SizeError on overflow.
[[nodiscard]] std::size_t shape_size(std::span<const std::size_t> shape);

class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(Shape shape, double fill = 0.0);
    DenseTensor(Shape shape, std::vector<double> data);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t order() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t extent(std::size_t mode) const { return shape_.at(mode); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t flat) noexcept { return data_[flat]; }
    double operator[](std::size_t flat) const noexcept { return data_[flat]; }

    /// Row-major flat offset of a multi-index; throws CoordinateError.
    [[nodiscard]] std::size_t flat_index(std::span<const std::size_t> idx) const;
    [[nodiscard]] double operator()(std::span<const std::size_t> idx) const { return data_[flat_index(idx)]; }
    [[nodiscard]] double at(std::initializer_list<std::size_t> idx) const;
    double& at(std::initializer_list<std::size_t> idx);

    /// Same data with a new shape of equal size.
    [[nodiscard]] DenseTensor reshaped(Shape shape) const;

    /// Mutable row-major matrix view with the given number of rows.
    [[nodiscard]] Eigen::Map<RowMatrix> matrix(std::size_t rows);
    [[nodiscard]] Eigen::Map<const RowMatrix> matrix(std::size_t rows) const;

    [[nodiscard]] double sum() const noexcept;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Zero-copy unfolding: rows index modes [0, k), columns index modes [k, d); 1 <= k < d.
[[nodiscard]] UnfoldingView unfold(const DenseTensor& t, std::size_t k);

/// Tensor train with cores of shape (r_{k-1}, n_k, r_k) and r_0 = r_d = 1.
class TensorTrain {
public:
    TensorTrain() = default;
    explicit TensorTrain(std::vector<DenseTensor> cores);

    [[nodiscard]] std::size_t dims() const noexcept { return cores_.size(); }
    [[nodiscard]] const DenseTensor& core(std::size_t k) const { return cores_.at(k); }
    [[nodiscard]] const std::vector<DenseTensor>& cores() const noexcept { return cores_; }
    /// Replace one core; its shape must match the existing one.
    void set_core(std::size_t k, DenseTensor core);

    [[nodiscard]] Shape extents() const;
    /// Bond ranks r_0..r_d (length d+1).
    [[nodiscard]] std::vector<std::size_t> ranks() const;
    [[nodiscard]] std::size_t max_rank() const;

private:
    std::vector<DenseTensor> cores_;
};

/// Entry of the contraction at x (0-based per mode).
[[nodiscard]] double tt_eval(const TensorTrain& tt, std::span<const std::size_t> x);

inline constexpr std::size_t kContractCap = 100'000'000;

/// Dense contraction G_1 ∘ ... ∘ G_d; throws SizeError above max_entries.
[[nodiscard]] DenseTensor tt_contract_full(const TensorTrain& tt, std::size_t max_entries = kContractCap);

/// Euclidean inner product of two contractions, computed core by core.
[[nodiscard]] double tt_inner(const TensorTrain& a, const TensorTrain& b);

/// Frobenius norm of the contraction, via left-orthogonalization.
[[nodiscard]] double tt_norm(const TensorTrain& tt);

/// Core-wise a + sign * b (block-diagonal bond structure).
[[nodiscard]] TensorTrain tt_add(const TensorTrain& a, const TensorTrain& b, double sign = 1.0);

/// Scale the first core.
[[nodiscard]] TensorTrain tt_scaled(const TensorTrain& tt, double factor);

/// ||p - q|| / ||p|| without forming dense tensors.
[[nodiscard]] double tt_rel_l2_error(const TensorTrain& p, const TensorTrain& q);

/// max_i ||G(:, i, :)||_2 for a 3-way core.
[[nodiscard]] double triple_norm(const DenseTensor& core);

/// Tensor train holding a dense tensor exactly (ranks of the unfoldings).
[[nodiscard]] TensorTrain tt_from_dense(const DenseTensor& t, double rel_tol = 1e-14);

// Binary format "TTRS1": magic, then u64 LE d, d+1 ranks, d extents, then the
// core entries as f64 LE in core order, each core row-major.
void write_tt(std::ostream& out, const TensorTrain& tt);
[[nodiscard]] TensorTrain read_tt(std::istream& in);

[[nodiscard]] nlohmann::json tt_to_json(const TensorTrain& tt);
[[nodiscard]] TensorTrain tt_from_json(const nlohmann::json& j);

/// File variants; a ".json" extension selects the JSON mirror.
void save_tt(const std::filesystem::path& path, const TensorTrain& tt);
[[nodiscard]] TensorTrain load_tt(const std::filesystem::path& path);

namespace io {
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
[[nodiscard]] std::uint64_t read_u64(std::istream& in);
[[nodiscard]] double read_f64(std::istream& in);
/// Write to a sibling temporary file and rename over the target.
void atomic_write(const std::filesystem::path& path, std::span<const char> bytes);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);
}  // namespace io

}  // namespace ttrs
