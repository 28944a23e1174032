#pragma once

/// Sketch plans and the sketching stage.
///
/// Variables and cores are 0-based.  For a d-variate input the plan holds d-1
/// cuts; cut c sits between variables c and c+1.  Each cut carries
///   - a right sketch T (applied to variables c+1..d-1), of size l_c, and
///   - a left block s (producing the left state after variable c), of size m_c.
/// Dense right sketches are recursive: T_c(x_{c+1..}, g) =
/// sum_h t_c(g, x_{c+1}, h) T_{c+1}(x_{c+2..}, h), with t_{d-2} of right rank 1.
/// Dense left blocks have shape (m_c, n_c, m_{c-1}) with m_{-1} = 1.
///
/// Sketching returns one tensor per core, Phi_i of shape (m_{i-1}, n_i, l_i)
/// with phantom sizes m_{-1} = l_{d-1} = 1.

#include "ttrs/empirical_data.hpp"
#include "ttrs/tensor_core.hpp"

#include <cstdint>
#include <vector>

namespace ttrs {

enum class SketchKind { window, dense };

/// Right sketch of one cut.
struct RightSketch {
    SketchKind kind = SketchKind::window;
    std::size_t size = 0;   ///< l_c
    std::size_t first = 0;  ///< window: first selected variable (must be c+1)
    std::size_t last = 0;   ///< window: last selected variable
    DenseTensor block;      ///< dense: t_c of shape (l_c, n_{c+1}, l_{c+1})
};

/// Left sketch block of one cut.
struct LeftSketchBlock {
    SketchKind kind = SketchKind::window;
    std::size_t size = 0;   ///< m_c
    std::size_t first = 0;  ///< window: first selected variable
    std::size_t last = 0;   ///< window: last selected variable (must be c)
    DenseTensor block;      ///< dense: s_c of shape (m_c, n_c, m_{c-1})
};

struct SketchPlan {
    Shape extents;
    std::vector<LeftSketchBlock> left;  ///< one per cut
    std::vector<RightSketch> right;     ///< one per cut

    [[nodiscard]] std::size_t dims() const noexcept { return extents.size(); }
    /// Left-state size entering core i (1 for i = 0).
    [[nodiscard]] std::size_t left_size_before(std::size_t core) const;
    /// Right-sketch size leaving core i (1 for i = d-1).
    [[nodiscard]] std::size_t right_size_after(std::size_t core) const;
    [[nodiscard]] bool is_window() const;
    /// Throws ShapeError if the plan is internally inconsistent.
    void validate() const;
};

/// Window plan for an order-m chain: right windows x_{c+1..c+m}, left windows
/// of width `left_width` ending at x_c (0 selects width m).
[[nodiscard]] SketchPlan markov_sketch_plan(const Shape& extents, std::size_t order = 1,
                                            std::size_t left_width = 0);

/// Dense plan with i.i.d. standard normal blocks.
[[nodiscard]] SketchPlan gaussian_sketch_plan(const Shape& extents, const std::vector<std::size_t>& right_sizes,
                                              const std::vector<std::size_t>& left_sizes, std::uint64_t seed);
[[nodiscard]] SketchPlan gaussian_sketch_plan(const Shape& extents, std::size_t right_size, std::size_t left_size,
                                              std::uint64_t seed);

/// Sketched tensors Phi_0..Phi_{d-1} from samples (empirical measure).
[[nodiscard]] std::vector<DenseTensor> run_sketching(const SampleSet& s, const SketchPlan& plan);
/// Same from a dense density (exact contraction).
[[nodiscard]] std::vector<DenseTensor> run_sketching(const DenseTensor& p, const SketchPlan& plan);
/// One sketched tensor Phi_core.
[[nodiscard]] DenseTensor sketched_moment(const SampleSet& s, const SketchPlan& plan, std::size_t core);

/// Explicit (non-recursive) left sketch S_c over variables 0..c.
struct LeftSketch {
    SketchKind kind = SketchKind::window;
    std::size_t size = 0;
    std::size_t first = 0;           ///< window only
    std::vector<DenseTensor> chain;  ///< dense: c+1 blocks (m_j, n_j, m_{j-1}), m_{-1} = 1, last size = size
};

/// S_c = s_c ∘ ... ∘ s_0 for every cut of a plan.
[[nodiscard]] std::vector<LeftSketch> explicit_left_sketches(const SketchPlan& plan);

/// Sketches for the non-recursive variant: Phi_i uses S_{i-1}, and
/// psi_c = S_c applied to the right-sketched density (m_c x l_c).
struct ExplicitSketches {
    std::vector<DenseTensor> phi;
    std::vector<RowMatrix> psi;
};
[[nodiscard]] ExplicitSketches run_explicit_sketching(const SampleSet& s, const std::vector<LeftSketch>& left,
                                                      const SketchPlan& right_plan);
[[nodiscard]] ExplicitSketches run_explicit_sketching(const DenseTensor& p, const std::vector<LeftSketch>& left,
                                                      const SketchPlan& right_plan);

/// JSON with dense blocks stored as base64 little-endian f64.
[[nodiscard]] nlohmann::json plan_to_json(const SketchPlan& plan);
[[nodiscard]] SketchPlan plan_from_json(const nlohmann::json& j);

[[nodiscard]] std::string base64_encode_f64(std::span<const double> values);
[[nodiscard]] std::vector<double> base64_decode_f64(const std::string& text);

}  // namespace ttrs
