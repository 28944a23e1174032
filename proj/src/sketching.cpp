#include "ttrs/sketching.hpp"

#include "ttrs/error.hpp"

#include <sodium.h>

#include <algorithm>
#include <bit>
#include <random>

namespace ttrs {

namespace {

std::size_t window_size(const Shape& n, std::size_t first, std::size_t last) {
    std::size_t s = 1;
    for (std::size_t v = first; v <= last; ++v) s *= n[v];
    return s;
}

template <class Code>
std::size_t window_offset(const Shape& n, std::span<const Code> x, std::size_t first, std::size_t last) {
    std::size_t off = 0;
    for (std::size_t v = first; v <= last; ++v) off = off * n[v] + x[v];
    return off;
}

// Calls f(x, weight) for every support point of the empirical measure.
template <class F>
void visit_points(const SampleSet& s, F&& f) {
    if (s.kind() != SampleKind::discrete) throw ArgumentError("sketching needs discrete samples");
    if (s.size() == 0) throw DegenerateError("sketching an empty sample set");
    const double w = 1.0 / static_cast<double>(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) f(s.row(i), w);
}

template <class F>
void visit_points(const DenseTensor& p, F&& f) {
    const std::size_t d = p.order();
    std::vector<std::uint16_t> idx(d, 0);
    for (std::size_t flat = 0; flat < p.size(); ++flat) {
        if (p[flat] != 0.0) f(std::span<const std::uint16_t>(idx), p[flat]);
        for (std::size_t k = d; k-- > 0;) {
            if (++idx[k] < p.extent(k)) break;
            idx[k] = 0;
        }
    }
}

void check_extents(const Shape& data, const Shape& plan) {
    if (data != plan) throw ShapeError("sketch plan extents do not match the data");
}

// Right vectors v[i] = T after core i, for one point.
void right_vectors(const SketchPlan& plan, std::span<const std::uint16_t> x, std::vector<std::vector<double>>& v) {
    const std::size_t d = plan.dims();
    v[d - 1].assign(1, 1.0);
    for (std::size_t c = d - 1; c-- > 0;) {
        const auto& r = plan.right[c];
        auto& out = v[c];
        out.assign(r.size, 0.0);
        if (r.kind == SketchKind::window) {
            out[window_offset(plan.extents, x, r.first, r.last)] = 1.0;
            continue;
        }
        const std::size_t n = plan.extents[c + 1];
        const auto& next = v[c + 1];
        const std::size_t ln = next.size();
        const double* t = r.block.data().data() + x[c + 1] * ln;
        for (std::size_t g = 0; g < r.size; ++g) {
            const double* row = t + g * n * ln;
            double acc = 0.0;
            for (std::size_t h = 0; h < ln; ++h) acc += row[h] * next[h];
            out[g] = acc;
        }
    }
}

// Apply a dense left block (m, n, m_prev) at code x to prev.
void apply_left_block(const DenseTensor& block, std::size_t x, const std::vector<double>& prev, std::vector<double>& out) {
    const std::size_t m = block.extent(0), n = block.extent(1), mp = block.extent(2);
    out.assign(m, 0.0);
    const double* s = block.data().data() + x * mp;
    for (std::size_t b = 0; b < m; ++b) {
        const double* row = s + b * n * mp;
        double acc = 0.0;
        for (std::size_t a = 0; a < mp; ++a) acc += row[a] * prev[a];
        out[b] = acc;
    }
}

void add_outer(DenseTensor& phi, std::size_t x, const std::vector<double>& u, const std::vector<double>& v, double w) {
    const std::size_t n = phi.extent(1), l = phi.extent(2);
    double* base = phi.data().data();
    for (std::size_t b = 0; b < u.size(); ++b) {
        const double ub = u[b] * w;
        if (ub == 0.0) continue;
        double* row = base + (b * n + x) * l;
        for (std::size_t g = 0; g < l; ++g) row[g] += ub * v[g];
    }
}

std::vector<DenseTensor> allocate_phis(const SketchPlan& plan) {
    std::vector<DenseTensor> phi;
    for (std::size_t i = 0; i < plan.dims(); ++i)
        phi.emplace_back(Shape{plan.left_size_before(i), plan.extents[i], plan.right_size_after(i)}, 0.0);
    return phi;
}

template <class Source>
DenseTensor window_marginal(const Source& src, const Shape& ext, std::size_t first, std::size_t last) {
    const auto w = window_range(first, last);
    if constexpr (std::is_same_v<Source, SampleSet>) {
        (void)ext;
        return marginal(src, w).frequencies;
    } else {
        return marginal(src, w);
    }
}

template <class Source>
std::vector<DenseTensor> sketch_impl(const Source& src, const SketchPlan& plan, std::ptrdiff_t only) {
    plan.validate();
    const std::size_t d = plan.dims();
    auto phi = allocate_phis(plan);

    if (plan.is_window()) {
        for (std::size_t i = 0; i < d; ++i) {
            if (only >= 0 && static_cast<std::size_t>(only) != i) continue;
            const std::size_t a = i == 0 ? 0 : plan.left[i - 1].first;
            const std::size_t b = i + 1 == d ? d - 1 : plan.right[i].last;
            const auto m = window_marginal(src, plan.extents, a, b);
            phi[i] = m.reshaped(phi[i].shape());
        }
        return phi;
    }

    std::vector<std::vector<double>> lv(d), rv(d);
    visit_points(src, [&](std::span<const std::uint16_t> x, double w) {
        lv[0].assign(1, 1.0);
        for (std::size_t c = 0; c + 1 < d; ++c) {
            const auto& l = plan.left[c];
            if (l.kind == SketchKind::window) {
                lv[c + 1].assign(l.size, 0.0);
                lv[c + 1][window_offset(plan.extents, x, l.first, l.last)] = 1.0;
            } else {
                apply_left_block(l.block, x[c], lv[c], lv[c + 1]);
            }
        }
        right_vectors(plan, x, rv);
        for (std::size_t i = 0; i < d; ++i) {
            if (only >= 0 && static_cast<std::size_t>(only) != i) continue;
            add_outer(phi[i], x[i], lv[i], rv[i], w);
        }
    });
    return phi;
}

void left_sketch_vector(const LeftSketch& s, const Shape& ext, std::size_t cut, std::span<const std::uint16_t> x,
                        std::vector<double>& out, std::vector<double>& scratch) {
    if (s.kind == SketchKind::window) {
        out.assign(s.size, 0.0);
        out[window_offset(ext, x, s.first, cut)] = 1.0;
        return;
    }
    scratch.assign(1, 1.0);
    for (std::size_t j = 0; j <= cut; ++j) {
        apply_left_block(s.chain[j], x[j], scratch, out);
        std::swap(scratch, out);
    }
    std::swap(scratch, out);
}

void validate_left(const std::vector<LeftSketch>& left, const Shape& ext) {
    const std::size_t d = ext.size();
    if (left.size() + 1 != d) throw ShapeError("need one explicit left sketch per cut");
    for (std::size_t c = 0; c + 1 < d; ++c) {
        const auto& s = left[c];
        if (s.kind == SketchKind::window) {
            if (s.first > c || s.size != window_size(ext, s.first, c))
                throw ShapeError("explicit window left sketch " + std::to_string(c) + " is inconsistent");
            continue;
        }
        if (s.chain.size() != c + 1) throw ShapeError("explicit dense left sketch needs one block per variable");
        std::size_t prev = 1;
        for (std::size_t j = 0; j <= c; ++j) {
            const auto& b = s.chain[j];
            if (b.order() != 3 || b.extent(1) != ext[j] || b.extent(2) != prev)
                throw ShapeError("explicit left sketch block shape mismatch");
            prev = b.extent(0);
        }
        if (prev != s.size) throw ShapeError("explicit left sketch size mismatch");
    }
}

template <class Source>
ExplicitSketches explicit_impl(const Source& src, const std::vector<LeftSketch>& left, const SketchPlan& plan) {
    plan.validate();
    validate_left(left, plan.extents);
    const std::size_t d = plan.dims();
    ExplicitSketches out;
    for (std::size_t i = 0; i < d; ++i) {
        const std::size_t mb = i == 0 ? 1 : left[i - 1].size;
        out.phi.emplace_back(Shape{mb, plan.extents[i], plan.right_size_after(i)}, 0.0);
    }
    for (std::size_t c = 0; c + 1 < d; ++c) out.psi.push_back(RowMatrix::Zero(left[c].size, plan.right[c].size));

    const bool windows = plan.is_window() &&
                         std::all_of(left.begin(), left.end(), [](const auto& s) { return s.kind == SketchKind::window; });
    if (windows) {
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t a = i == 0 ? 0 : left[i - 1].first;
            const std::size_t b = i + 1 == d ? d - 1 : plan.right[i].last;
            out.phi[i] = window_marginal(src, plan.extents, a, b).reshaped(out.phi[i].shape());
        }
        for (std::size_t c = 0; c + 1 < d; ++c) {
            const auto m = window_marginal(src, plan.extents, left[c].first, plan.right[c].last);
            out.psi[c] = m.matrix(left[c].size);
        }
        return out;
    }

    std::vector<std::vector<double>> sv(d), rv(d);
    std::vector<double> scratch;
    visit_points(src, [&](std::span<const std::uint16_t> x, double w) {
        sv[0].assign(1, 1.0);
        for (std::size_t c = 0; c + 1 < d; ++c) left_sketch_vector(left[c], plan.extents, c, x, sv[c + 1], scratch);
        right_vectors(plan, x, rv);
        for (std::size_t i = 0; i < d; ++i) add_outer(out.phi[i], x[i], sv[i], rv[i], w);
        for (std::size_t c = 0; c + 1 < d; ++c) {
            const auto& u = sv[c + 1];
            const auto& v = rv[c];
            auto& psi = out.psi[c];
            for (std::size_t b = 0; b < u.size(); ++b) {
                if (u[b] == 0.0) continue;
                for (std::size_t g = 0; g < v.size(); ++g)
                    psi(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(g)) += w * u[b] * v[g];
            }
        }
    });
    return out;
}

DenseTensor normal_block(Shape shape, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    DenseTensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

const char* kind_name(SketchKind k) { return k == SketchKind::window ? "window" : "dense"; }

SketchKind kind_from(const std::string& s) {
    if (s == "window") return SketchKind::window;
    if (s == "dense") return SketchKind::dense;
    throw ParseError("unknown sketch kind '" + s + "'");
}

nlohmann::json block_json(const DenseTensor& t) {
    return {{"shape", t.shape()}, {"data", base64_encode_f64(t.data())}};
}

DenseTensor block_from(const nlohmann::json& j) {
    auto shape = j.at("shape").get<Shape>();
    auto data = base64_decode_f64(j.at("data").get<std::string>());
    try {
        return DenseTensor(std::move(shape), std::move(data));
    } catch (const ShapeError& e) {
        throw ParseError(std::string("sketch block: ") + e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------- SketchPlan

std::size_t SketchPlan::left_size_before(std::size_t core) const {
    return core == 0 ? 1 : left.at(core - 1).size;
}

std::size_t SketchPlan::right_size_after(std::size_t core) const {
    return core + 1 == dims() ? 1 : right.at(core).size;
}

bool SketchPlan::is_window() const {
    return std::all_of(left.begin(), left.end(), [](const auto& s) { return s.kind == SketchKind::window; }) &&
           std::all_of(right.begin(), right.end(), [](const auto& s) { return s.kind == SketchKind::window; });
}

void SketchPlan::validate() const {
    const std::size_t d = dims();
    if (d < 2) throw ShapeError("sketch plans need at least two variables");
    if (left.size() + 1 != d || right.size() + 1 != d) throw ShapeError("sketch plan needs one left and one right sketch per cut");
    for (auto n : extents)
        if (n == 0) throw ShapeError("zero extent in sketch plan");
    for (std::size_t c = 0; c + 1 < d; ++c) {
        const auto& r = right[c];
        if (r.size == 0) throw ShapeError("empty right sketch at cut " + std::to_string(c));
        if (r.kind == SketchKind::window) {
            if (r.first != c + 1 || r.last < r.first || r.last >= d || r.size != window_size(extents, r.first, r.last))
                throw ShapeError("inconsistent right window at cut " + std::to_string(c));
        } else {
            const std::size_t next = c + 2 == d ? 1 : right[c + 1].size;
            if (r.block.shape() != Shape{r.size, extents[c + 1], next})
                throw ShapeError("dense right block shape mismatch at cut " + std::to_string(c));
        }
        const auto& l = left[c];
        if (l.size == 0) throw ShapeError("empty left sketch at cut " + std::to_string(c));
        if (l.kind == SketchKind::window) {
            if (l.last != c || l.first > c || l.size != window_size(extents, l.first, l.last))
                throw ShapeError("inconsistent left window at cut " + std::to_string(c));
            // a window state must be a shift of the previous window state
            if (c > 0 && (left[c - 1].kind != SketchKind::window || left[c - 1].first > l.first))
                throw ShapeError("left window at cut " + std::to_string(c) + " does not extend the previous one");
        } else {
            const std::size_t prev = c == 0 ? 1 : left[c - 1].size;
            if (l.block.shape() != Shape{l.size, extents[c], prev})
                throw ShapeError("dense left block shape mismatch at cut " + std::to_string(c));
        }
    }
}

SketchPlan markov_sketch_plan(const Shape& extents, std::size_t order, std::size_t left_width) {
    const std::size_t d = extents.size();
    if (d < 2) throw ArgumentError("Markov sketch plans need d >= 2");
    if (order == 0 || order >= d) throw ArgumentError("Markov order must satisfy 1 <= m < d");
    if (left_width == 0) left_width = order;
    SketchPlan plan;
    plan.extents = extents;
    for (std::size_t c = 0; c + 1 < d; ++c) {
        RightSketch r;
        r.kind = SketchKind::window;
        r.first = c + 1;
        r.last = std::min(c + order, d - 1);
        r.size = window_size(extents, r.first, r.last);
        plan.right.push_back(std::move(r));
        LeftSketchBlock l;
        l.kind = SketchKind::window;
        l.last = c;
        l.first = c + 1 >= left_width ? c + 1 - left_width : 0;
        l.size = window_size(extents, l.first, l.last);
        plan.left.push_back(std::move(l));
    }
    plan.validate();
    return plan;
}

SketchPlan gaussian_sketch_plan(const Shape& extents, const std::vector<std::size_t>& right_sizes,
                                const std::vector<std::size_t>& left_sizes, std::uint64_t seed) {
    const std::size_t d = extents.size();
    if (d < 2) throw ArgumentError("sketch plans need d >= 2");
    if (right_sizes.size() + 1 != d || left_sizes.size() + 1 != d) throw ShapeError("need one sketch size per cut");
    std::mt19937_64 rng(seed);
    SketchPlan plan;
    plan.extents = extents;
    plan.right.resize(d - 1);
    plan.left.resize(d - 1);
    for (std::size_t c = 0; c + 1 < d; ++c) {
        if (right_sizes[c] == 0 || left_sizes[c] == 0) throw ArgumentError("sketch sizes must be positive");
        auto& l = plan.left[c];
        l.kind = SketchKind::dense;
        l.size = left_sizes[c];
        l.block = normal_block({l.size, extents[c], c == 0 ? 1 : left_sizes[c - 1]}, rng);
    }
    for (std::size_t c = d - 1; c-- > 0;) {
        auto& r = plan.right[c];
        r.kind = SketchKind::dense;
        r.size = right_sizes[c];
        r.block = normal_block({r.size, extents[c + 1], c + 2 == d ? 1 : right_sizes[c + 1]}, rng);
    }
    plan.validate();
    return plan;
}

SketchPlan gaussian_sketch_plan(const Shape& extents, std::size_t right_size, std::size_t left_size, std::uint64_t seed) {
    const std::size_t cuts = extents.empty() ? 0 : extents.size() - 1;
    return gaussian_sketch_plan(extents, std::vector<std::size_t>(cuts, right_size),
                                std::vector<std::size_t>(cuts, left_size), seed);
}

// ---------------------------------------------------------------- sketching

std::vector<DenseTensor> run_sketching(const SampleSet& s, const SketchPlan& plan) {
    check_extents(s.extents(), plan.extents);
    return sketch_impl(s, plan, -1);
}

std::vector<DenseTensor> run_sketching(const DenseTensor& p, const SketchPlan& plan) {
    check_extents(p.shape(), plan.extents);
    return sketch_impl(p, plan, -1);
}

DenseTensor sketched_moment(const SampleSet& s, const SketchPlan& plan, std::size_t core) {
    check_extents(s.extents(), plan.extents);
    if (core >= plan.dims()) throw ArgumentError("core index out of range");
    return std::move(sketch_impl(s, plan, static_cast<std::ptrdiff_t>(core))[core]);
}

std::vector<LeftSketch> explicit_left_sketches(const SketchPlan& plan) {
    plan.validate();
    std::vector<LeftSketch> out;
    const std::size_t d = plan.dims();
    for (std::size_t c = 0; c + 1 < d; ++c) {
        const auto& l = plan.left[c];
        LeftSketch s;
        s.size = l.size;
        if (l.kind == SketchKind::window) {
            s.kind = SketchKind::window;
            s.first = l.first;
        } else {
            s.kind = SketchKind::dense;
            for (std::size_t j = 0; j <= c; ++j) {
                const auto& lj = plan.left[j];
                if (lj.kind != SketchKind::dense)
                    throw ArgumentError("cannot express a mixed window/dense left recursion explicitly");
                s.chain.push_back(lj.block);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

ExplicitSketches run_explicit_sketching(const SampleSet& s, const std::vector<LeftSketch>& left, const SketchPlan& plan) {
    check_extents(s.extents(), plan.extents);
    return explicit_impl(s, left, plan);
}

ExplicitSketches run_explicit_sketching(const DenseTensor& p, const std::vector<LeftSketch>& left, const SketchPlan& plan) {
    check_extents(p.shape(), plan.extents);
    return explicit_impl(p, left, plan);
}

// ---------------------------------------------------------------- JSON

std::string base64_encode_f64(std::span<const double> values) {
    if (sodium_init() < 0) throw Error("libsodium initialisation failed");
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto u = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) bytes[8 * i + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xFFu);
    }
    const int variant = sodium_base64_VARIANT_ORIGINAL;
    std::string out(sodium_base64_encoded_len(bytes.size(), variant), '\0');
    sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), variant);
    out.resize(std::char_traits<char>::length(out.c_str()));
    return out;
}

std::vector<double> base64_decode_f64(const std::string& text) {
    if (sodium_init() < 0) throw Error("libsodium initialisation failed");
    std::vector<unsigned char> bytes(text.size() / 4 * 3 + 3);
    std::size_t len = 0;
    if (sodium_base642bin(bytes.data(), bytes.size(), text.data(), text.size(), nullptr, &len, nullptr,
                          sodium_base64_VARIANT_ORIGINAL) != 0)
        throw ParseError("invalid base64 payload");
    if (len % 8 != 0) throw ParseError("base64 payload is not a whole number of doubles");
    std::vector<double> out(len / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t u = 0;
        for (int b = 7; b >= 0; --b) u = (u << 8) | bytes[8 * i + b];
        out[i] = std::bit_cast<double>(u);
    }
    return out;
}

nlohmann::json plan_to_json(const SketchPlan& plan) {
    nlohmann::json j;
    j["format"] = "ttrs-plan-1";
    j["extents"] = plan.extents;
    auto left = nlohmann::json::array();
    for (const auto& l : plan.left) {
        nlohmann::json e{{"kind", kind_name(l.kind)}, {"size", l.size}};
        if (l.kind == SketchKind::window) {
            e["first"] = l.first;
            e["last"] = l.last;
        } else {
            e["block"] = block_json(l.block);
        }
        left.push_back(std::move(e));
    }
    auto right = nlohmann::json::array();
    for (const auto& r : plan.right) {
        nlohmann::json e{{"kind", kind_name(r.kind)}, {"size", r.size}};
        if (r.kind == SketchKind::window) {
            e["first"] = r.first;
            e["last"] = r.last;
        } else {
            e["block"] = block_json(r.block);
        }
        right.push_back(std::move(e));
    }
    j["left"] = std::move(left);
    j["right"] = std::move(right);
    return j;
}

SketchPlan plan_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "ttrs-plan-1") throw ParseError("unknown sketch-plan format");
        SketchPlan plan;
        plan.extents = j.at("extents").get<Shape>();
        for (const auto& e : j.at("left")) {
            LeftSketchBlock l;
            l.kind = kind_from(e.at("kind").get<std::string>());
            l.size = e.at("size").get<std::size_t>();
            if (l.kind == SketchKind::window) {
                l.first = e.at("first").get<std::size_t>();
                l.last = e.at("last").get<std::size_t>();
            } else {
                l.block = block_from(e.at("block"));
            }
            plan.left.push_back(std::move(l));
        }
        for (const auto& e : j.at("right")) {
            RightSketch r;
            r.kind = kind_from(e.at("kind").get<std::string>());
            r.size = e.at("size").get<std::size_t>();
            if (r.kind == SketchKind::window) {
                r.first = e.at("first").get<std::size_t>();
                r.last = e.at("last").get<std::size_t>();
            } else {
                r.block = block_from(e.at("block"));
            }
            plan.right.push_back(std::move(r));
        }
        try {
            plan.validate();
        } catch (const ShapeError& e) {
            throw ParseError(std::string("sketch plan: ") + e.what());
        }
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("sketch plan JSON: ") + e.what());
    }
}

}  // namespace ttrs
