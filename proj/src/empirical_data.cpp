#include "ttrs/empirical_data.hpp"

#include "ttrs/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

namespace ttrs {

namespace {

constexpr std::array<char, 7> kSampleMagic = {'T', 'T', 'S', 'A', 'M', 'P', '1'};

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
            field.remove_suffix(1);
        out.push_back(field);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

void validate_window(std::span<const std::size_t> window, std::size_t d) {
    if (window.empty()) throw ArgumentError("empty marginal window");
    for (std::size_t i = 0; i < window.size(); ++i) {
        if (window[i] >= d) throw ArgumentError("window variable " + std::to_string(window[i]) + " out of range");
        if (i > 0 && window[i] <= window[i - 1]) throw ArgumentError("window must be strictly increasing");
    }
}

}  // namespace

SampleSchema SampleSchema::discrete(Shape extents) {
    SampleSchema s;
    s.kind = SampleKind::discrete;
    s.dims = extents.size();
    s.extents = std::move(extents);
    return s;
}

SampleSchema SampleSchema::continuous(std::size_t dims, double lower, double upper) {
    SampleSchema s;
    s.kind = SampleKind::continuous;
    s.dims = dims;
    s.lower = lower;
    s.upper = upper;
    return s;
}

SampleSet SampleSet::discrete(Shape extents, std::vector<std::uint16_t> codes) {
    const std::size_t d = extents.size();
    if (d == 0) throw ShapeError("sample set needs at least one variable");
    for (auto n : extents)
        if (n == 0 || n > 65535) throw ShapeError("discrete extents must lie in [1, 65535]");
    if (codes.size() % d != 0) throw ShapeError("code array length is not a multiple of d");
    for (std::size_t i = 0; i < codes.size(); ++i)
        if (codes[i] >= extents[i % d])
            throw RangeError("code " + std::to_string(codes[i]) + " outside extent of variable " +
                             std::to_string(i % d + 1));
    SampleSet s;
    s.schema_ = SampleSchema::discrete(std::move(extents));
    s.count_ = codes.size() / d;
    s.codes_ = std::move(codes);
    return s;
}

SampleSet SampleSet::continuous(std::size_t dims, double lower, double upper, std::vector<double> values) {
    if (dims == 0) throw ShapeError("sample set needs at least one variable");
    if (!(lower < upper)) throw ArgumentError("continuous interval must satisfy lower < upper");
    if (values.size() % dims != 0) throw ShapeError("value array length is not a multiple of d");
    for (double v : values)
        if (!(v >= lower && v <= upper)) throw RangeError("sample value outside [lower, upper]");
    SampleSet s;
    s.schema_ = SampleSchema::continuous(dims, lower, upper);
    s.count_ = values.size() / dims;
    s.values_ = std::move(values);
    return s;
}

SampleSet SampleSet::head(std::size_t count) const {
    if (count > count_) throw ArgumentError("head count exceeds sample count");
    SampleSet s;
    s.schema_ = schema_;
    s.count_ = count;
    if (schema_.kind == SampleKind::discrete)
        s.codes_.assign(codes_.begin(), codes_.begin() + static_cast<std::ptrdiff_t>(count * schema_.dims));
    else
        s.values_.assign(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(count * schema_.dims));
    return s;
}

std::vector<std::size_t> window_range(std::size_t first, std::size_t last) {
    if (last < first) throw ArgumentError("window range is reversed");
    std::vector<std::size_t> w(last - first + 1);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = first + i;
    return w;
}

MarginalTensor marginal(const SampleSet& s, std::span<const std::size_t> window, std::size_t cap) {
    if (s.kind() != SampleKind::discrete) throw ArgumentError("marginal counts need discrete samples");
    validate_window(window, s.dims());
    if (s.size() == 0) throw DegenerateError("marginal of an empty sample set");
    Shape shape;
    for (auto v : window) shape.push_back(s.extents()[v]);
    MarginalTensor m;
    m.window.assign(window.begin(), window.end());
    const std::size_t cells = shape_size(shape);
    if (cells > cap) throw SizeError("marginal window has " + std::to_string(cells) + " cells, cap " + std::to_string(cap));
    m.counts.assign(cells, 0);
    m.total = s.size();
    const std::size_t d = s.dims();
    const auto codes = s.codes();
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::uint16_t* row = codes.data() + i * d;
        std::size_t off = 0;
        for (std::size_t j = 0; j < window.size(); ++j) off = off * shape[j] + row[window[j]];
        ++m.counts[off];
    }
    std::vector<double> freq(m.counts.size());
    const double inv = 1.0 / static_cast<double>(m.total);
    for (std::size_t i = 0; i < freq.size(); ++i) freq[i] = static_cast<double>(m.counts[i]) * inv;
    m.frequencies = DenseTensor(std::move(shape), std::move(freq));
    return m;
}

DenseTensor marginal(const DenseTensor& p, std::span<const std::size_t> window) {
    validate_window(window, p.order());
    Shape shape;
    for (auto v : window) shape.push_back(p.extent(v));
    DenseTensor out(shape, 0.0);
    const std::size_t d = p.order();
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t flat = 0; flat < p.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t j = 0; j < window.size(); ++j) off = off * shape[j] + idx[window[j]];
        out[off] += p[flat];
        for (std::size_t k = d; k-- > 0;) {
            if (++idx[k] < p.extent(k)) break;
            idx[k] = 0;
        }
    }
    return out;
}

// ---------------------------------------------------------------- files

nlohmann::json schema_to_json(const SampleSchema& s) {
    nlohmann::json j;
    j["kind"] = s.kind == SampleKind::discrete ? "discrete" : "continuous";
    j["d"] = s.dims;
    if (s.kind == SampleKind::discrete) {
        j["extents"] = s.extents;
    } else {
        j["lower"] = s.lower;
        j["upper"] = s.upper;
    }
    return j;
}

SampleSchema schema_from_json(const nlohmann::json& j) {
    try {
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "discrete") return SampleSchema::discrete(j.at("extents").get<Shape>());
        if (kind == "continuous")
            return SampleSchema::continuous(j.at("d").get<std::size_t>(), j.at("lower").get<double>(),
                                            j.at("upper").get<double>());
        throw ParseError("unknown sample kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("sample schema: ") + e.what());
    }
}

namespace {

// Data rows and columns are 1-based in messages.
std::string where(std::size_t row, std::size_t col) {
    return "row " + std::to_string(row) + ", x" + std::to_string(col + 1);
}

SampleSet load_csv(const std::filesystem::path& path, const SampleSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty sample file " + path.string());
    const auto header = split_csv(line);
    if (header.size() != schema.dims) throw ParseError("header has " + std::to_string(header.size()) + " columns, schema expects " + std::to_string(schema.dims));
    for (std::size_t k = 0; k < header.size(); ++k)
        if (header[k] != "x" + std::to_string(k + 1)) throw ParseError("header column " + std::to_string(k + 1) + " must be x" + std::to_string(k + 1));

    std::vector<std::uint16_t> codes;
    std::vector<double> values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++row;
        const auto fields = split_csv(line);
        if (fields.size() != schema.dims)
            throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(schema.dims) + " fields");
        for (std::size_t k = 0; k < fields.size(); ++k) {
            const auto f = fields[k];
            if (schema.kind == SampleKind::discrete) {
                long long v = 0;
                auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
                if (ec != std::errc{} || p != f.data() + f.size())
                    throw ParseError(where(row, k) + ": non-integer code '" + std::string(f) + "'");
                if (v < 1 || static_cast<std::size_t>(v) > schema.extents[k])
                    throw RangeError(where(row, k) + ": code " + std::to_string(v) +
                                     " outside 1.." + std::to_string(schema.extents[k]));
                codes.push_back(static_cast<std::uint16_t>(v - 1));
            } else {
                double v = 0;
                auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
                if (ec != std::errc{} || p != f.data() + f.size() || !std::isfinite(v))
                    throw ParseError(where(row, k) + ": non-numeric value '" + std::string(f) + "'");
                if (v < schema.lower || v > schema.upper)
                    throw RangeError(where(row, k) + ": value outside [lower, upper]");
                values.push_back(v);
            }
        }
    }
    if (schema.kind == SampleKind::discrete) return SampleSet::discrete(schema.extents, std::move(codes));
    return SampleSet::continuous(schema.dims, schema.lower, schema.upper, std::move(values));
}

SampleSet load_binary(const std::filesystem::path& path, const SampleSchema* expect) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::array<char, 7> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kSampleMagic) throw ParseError("bad sample-file magic in " + path.string());
    const std::uint64_t n = io::read_u64(in);
    const std::uint64_t d = io::read_u64(in);
    if (d == 0 || d > 100000) throw ParseError("implausible dimension count");
    Shape ext(d);
    for (auto& e : ext) e = io::read_u64(in);
    const bool cont = std::all_of(ext.begin(), ext.end(), [](auto e) { return e == 0; });
    if (!cont && std::any_of(ext.begin(), ext.end(), [](auto e) { return e == 0; }))
        throw ParseError("mixed zero and nonzero extents");
    SampleSet s;
    if (cont) {
        const double lo = io::read_f64(in);
        const double hi = io::read_f64(in);
        std::vector<double> vals(n * d);
        for (auto& v : vals) v = io::read_f64(in);
        s = SampleSet::continuous(d, lo, hi, std::move(vals));
    } else {
        std::vector<std::uint16_t> codes(n * d);
        std::vector<unsigned char> buf(2 * codes.size());
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw ParseError("truncated sample file");
        for (std::size_t i = 0; i < codes.size(); ++i) {
            const unsigned v = buf[2 * i] | (static_cast<unsigned>(buf[2 * i + 1]) << 8);
            if (v < 1 || v > ext[i % d]) throw RangeError("code outside declared extent");
            codes[i] = static_cast<std::uint16_t>(v - 1);
        }
        s = SampleSet::discrete(std::move(ext), std::move(codes));
    }
    if (expect) {
        const auto& got = s.schema();
        if (got.kind != expect->kind || got.dims != expect->dims ||
            (got.kind == SampleKind::discrete && got.extents != expect->extents))
            throw ParseError("sample file does not match the expected schema");
    }
    return s;
}

bool is_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<char, 7> magic{};
    return in.read(magic.data(), magic.size()) && magic == kSampleMagic;
}

}  // namespace

SampleSet load_samples(const std::filesystem::path& path, const SampleSchema& schema) {
    if (is_binary(path)) return load_binary(path, &schema);
    return load_csv(path, schema);
}

SampleSet load_samples(const std::filesystem::path& path) {
    if (!is_binary(path)) throw ParseError("a schema is required to read CSV samples: " + path.string());
    return load_binary(path, nullptr);
}

void save_samples(const std::filesystem::path& path, const SampleSet& s) {
    const std::size_t d = s.dims();
    if (path.extension() == ".csv") {
        std::ostringstream os;
        os.precision(17);
        for (std::size_t k = 0; k < d; ++k) os << (k ? "," : "") << 'x' << k + 1;
        os << '\n';
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                if (k) os << ',';
                if (s.kind() == SampleKind::discrete)
                    os << s.row(i)[k] + 1;
                else
                    os << s.value_row(i)[k];
            }
            os << '\n';
        }
        io::atomic_write_text(path, os.str());
        return;
    }
    std::ostringstream os(std::ios::binary);
    os.write(kSampleMagic.data(), kSampleMagic.size());
    io::write_u64(os, s.size());
    io::write_u64(os, d);
    if (s.kind() == SampleKind::discrete) {
        for (auto e : s.extents()) io::write_u64(os, e);
        for (auto c : s.codes()) {
            const unsigned v = c + 1u;
            const char b[2] = {static_cast<char>(v & 0xFFu), static_cast<char>((v >> 8) & 0xFFu)};
            os.write(b, 2);
        }
    } else {
        for (std::size_t k = 0; k < d; ++k) io::write_u64(os, 0);
        io::write_f64(os, s.lower());
        io::write_f64(os, s.upper());
        for (double v : s.values()) io::write_f64(os, v);
    }
    const std::string bytes = os.str();
    io::atomic_write(path, std::span<const char>(bytes.data(), bytes.size()));
}

}  // namespace ttrs
