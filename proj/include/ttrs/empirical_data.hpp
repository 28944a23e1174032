#pragma once

/// Sample sets, their file formats, and empirical window marginals.
///
/// Discrete codes are 0-based in memory and 1-based on disk (CSV and binary).

#include "ttrs/tensor_core.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace ttrs {

enum class SampleKind { discrete, continuous };

/// Everything needed to interpret a sample file.
struct SampleSchema {
    SampleKind kind = SampleKind::discrete;
    std::size_t dims = 0;
    Shape extents;        ///< discrete only
    double lower = 0.0;   ///< continuous only
    double upper = 1.0;   ///< continuous only

    static SampleSchema discrete(Shape extents);
    static SampleSchema continuous(std::size_t dims, double lower, double upper);
};

/// N samples of a d-variate distribution, stored row-major (sample-major).
class SampleSet {
public:
    SampleSet() = default;
    static SampleSet discrete(Shape extents, std::vector<std::uint16_t> codes);
    static SampleSet continuous(std::size_t dims, double lower, double upper, std::vector<double> values);

    [[nodiscard]] SampleKind kind() const noexcept { return schema_.kind; }
    [[nodiscard]] const SampleSchema& schema() const noexcept { return schema_; }
    [[nodiscard]] std::size_t size() const noexcept { return count_; }
    [[nodiscard]] std::size_t dims() const noexcept { return schema_.dims; }
    [[nodiscard]] const Shape& extents() const noexcept { return schema_.extents; }
    [[nodiscard]] double lower() const noexcept { return schema_.lower; }
    [[nodiscard]] double upper() const noexcept { return schema_.upper; }

    [[nodiscard]] std::span<const std::uint16_t> codes() const noexcept { return codes_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::span<const std::uint16_t> row(std::size_t i) const {
        return {codes_.data() + i * schema_.dims, schema_.dims};
    }
    [[nodiscard]] std::span<const double> value_row(std::size_t i) const {
        return {values_.data() + i * schema_.dims, schema_.dims};
    }

    /// First `count` samples.
    [[nodiscard]] SampleSet head(std::size_t count) const;

private:
    SampleSchema schema_;
    std::size_t count_ = 0;
    std::vector<std::uint16_t> codes_;
    std::vector<double> values_;
};

/// Empirical joint frequency of a set of variables.
struct MarginalTensor {
    std::vector<std::size_t> window;   ///< variable indices, strictly increasing
    std::vector<std::int64_t> counts;  ///< row-major over the window extents
    std::size_t total = 0;
    DenseTensor frequencies;           ///< counts / total
};

inline constexpr std::size_t kMarginalCap = 10'000'000;

/// Counts of the window variables; throws ArgumentError for unsorted or
/// out-of-range windows and on continuous data, SizeError above `cap` cells.
[[nodiscard]] MarginalTensor marginal(const SampleSet& s, std::span<const std::size_t> window,
                                      std::size_t cap = kMarginalCap);
/// Marginal of a dense (not necessarily normalized) tensor over a window.
[[nodiscard]] DenseTensor marginal(const DenseTensor& p, std::span<const std::size_t> window);
/// Contiguous window [first, last].
[[nodiscard]] std::vector<std::size_t> window_range(std::size_t first, std::size_t last);

// CSV: header x1..xd, then one sample per row.
// Binary "TTSAMP1": magic, u64 LE N, d, d extents (all 0 for continuous data,
// then f64 lower/upper), then u16 LE codes or f64 LE values, row-major.
[[nodiscard]] SampleSet load_samples(const std::filesystem::path& path, const SampleSchema& schema);
/// Binary files only (they carry their own schema).
[[nodiscard]] SampleSet load_samples(const std::filesystem::path& path);
void save_samples(const std::filesystem::path& path, const SampleSet& s);

[[nodiscard]] nlohmann::json schema_to_json(const SampleSchema& s);
[[nodiscard]] SampleSchema schema_from_json(const nlohmann::json& j);

}  // namespace ttrs
