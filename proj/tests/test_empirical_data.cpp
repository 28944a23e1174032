#include "test_util.hpp"

#include "ttrs/empirical_data.hpp"
#include "ttrs/error.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <random>
#include <string>

using namespace ttrs;
using ttrs::testing::temp_dir;

namespace {

std::filesystem::path write_text(const std::filesystem::path& dir, const std::string& name, const std::string& text) {
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SampleSet random_discrete(const Shape& extents, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> codes;
    for (std::size_t i = 0; i < n; ++i)
        for (auto e : extents) codes.push_back(static_cast<std::uint16_t>(std::uniform_int_distribution<std::size_t>(0, e - 1)(rng)));
    return SampleSet::discrete(extents, std::move(codes));
}

}  // namespace

TEST(LoadSamples, CsvTwoRows) {
    const auto dir = temp_dir("csv_two");
    const auto p = write_text(dir, "s.csv", "x1,x2\n1,2\n2,1\n");
    const auto s = load_samples(p, SampleSchema::discrete({2, 2}));
    EXPECT_EQ(s.size(), 2u);
    EXPECT_EQ(s.dims(), 2u);
    EXPECT_EQ(s.row(0)[0], 0);
    EXPECT_EQ(s.row(0)[1], 1);
    EXPECT_EQ(s.row(1)[0], 1);
    EXPECT_EQ(s.row(1)[1], 0);
}

TEST(LoadSamples, CodeAboveExtentReportsRowOne) {
    const auto dir = temp_dir("csv_range");
    const auto p = write_text(dir, "s.csv", "x1,x2\n3,1\n1,1\n");
    try {
        (void)load_samples(p, SampleSchema::discrete({2, 2}));
        FAIL() << "expected RangeError";
    } catch (const RangeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("x1"), std::string::npos) << msg;
    }
}

TEST(LoadSamples, ZeroCodeRejected) {
    const auto dir = temp_dir("csv_zero");
    const auto p = write_text(dir, "s.csv", "x1\n1\n0\n");
    EXPECT_THROW((void)load_samples(p, SampleSchema::discrete({2})), RangeError);
}

TEST(LoadSamples, ParseErrors) {
    const auto dir = temp_dir("csv_parse");
    const auto schema = SampleSchema::discrete({2, 2});
    EXPECT_THROW((void)load_samples(write_text(dir, "a.csv", "x1,x2\n1,a\n"), schema), ParseError);
    EXPECT_THROW((void)load_samples(write_text(dir, "b.csv", "x1,x2\n1\n"), schema), ParseError);
    EXPECT_THROW((void)load_samples(write_text(dir, "c.csv", "a,b\n1,1\n"), schema), ParseError);
    EXPECT_THROW((void)load_samples(write_text(dir, "d.csv", ""), schema), ParseError);
    EXPECT_THROW((void)load_samples(dir / "missing.csv", schema), ParseError);
}

TEST(LoadSamples, ContinuousCsv) {
    const auto dir = temp_dir("csv_cont");
    const auto schema = SampleSchema::continuous(2, -1.0, 1.0);
    const auto s = load_samples(write_text(dir, "s.csv", "x1,x2\n0.25,-0.5\n1,0\n"), schema);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_DOUBLE_EQ(s.value_row(0)[1], -0.5);
    EXPECT_THROW((void)load_samples(write_text(dir, "t.csv", "x1,x2\n1.5,0\n"), schema), RangeError);
}

TEST(SaveSamples, DiscreteBinaryRoundTripIsBitExact) {
    const auto dir = temp_dir("bin_disc");
    const auto s = random_discrete({3, 5, 2, 7}, 123, 11);
    save_samples(dir / "a.ttsamp", s);
    const auto t = load_samples(dir / "a.ttsamp");
    ASSERT_EQ(t.size(), s.size());
    EXPECT_EQ(t.extents(), s.extents());
    EXPECT_TRUE(std::equal(s.codes().begin(), s.codes().end(), t.codes().begin()));
    save_samples(dir / "b.ttsamp", t);
    EXPECT_EQ(read_bytes(dir / "a.ttsamp"), read_bytes(dir / "b.ttsamp"));
}

TEST(SaveSamples, ContinuousBinaryRoundTripIsBitExact) {
    const auto dir = temp_dir("bin_cont");
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2.0, 3.0);
    std::vector<double> v(40 * 3);
    for (auto& x : v) x = u(rng);
    const auto s = SampleSet::continuous(3, -2.0, 3.0, v);
    save_samples(dir / "a.ttsamp", s);
    const auto t = load_samples(dir / "a.ttsamp");
    EXPECT_EQ(t.kind(), SampleKind::continuous);
    EXPECT_EQ(t.lower(), -2.0);
    EXPECT_EQ(t.upper(), 3.0);
    EXPECT_TRUE(std::equal(s.values().begin(), s.values().end(), t.values().begin()));
    save_samples(dir / "b.ttsamp", t);
    EXPECT_EQ(read_bytes(dir / "a.ttsamp"), read_bytes(dir / "b.ttsamp"));
}

TEST(SaveSamples, BinaryStartsWithMagic) {
    const auto dir = temp_dir("bin_magic");
    save_samples(dir / "a.ttsamp", random_discrete({2}, 3, 1));
    EXPECT_EQ(read_bytes(dir / "a.ttsamp").substr(0, 7), "TTSAMP1");
    std::ofstream(dir / "bad.ttsamp") << "NOTSAMP";
    EXPECT_THROW((void)load_samples(dir / "bad.ttsamp"), ParseError);
}

TEST(SaveSamples, CsvRoundTrip) {
    const auto dir = temp_dir("csv_round");
    const auto s = random_discrete({4, 3}, 20, 3);
    save_samples(dir / "a.csv", s);
    EXPECT_EQ(read_bytes(dir / "a.csv").substr(0, 6), "x1,x2\n");
    const auto t = load_samples(dir / "a.csv", s.schema());
    EXPECT_TRUE(std::equal(s.codes().begin(), s.codes().end(), t.codes().begin()));
}

TEST(SampleSet, ConstructionValidates) {
    EXPECT_THROW((void)SampleSet::discrete({2, 2}, {0, 2}), RangeError);
    EXPECT_THROW((void)SampleSet::discrete({2, 2}, {0, 1, 0}), ShapeError);
    EXPECT_THROW((void)SampleSet::continuous(1, 1.0, 0.0, {0.5}), ArgumentError);
    EXPECT_THROW((void)SampleSet::continuous(1, 0.0, 1.0, {1.5}), RangeError);
}

TEST(SampleSet, HeadKeepsPrefix) {
    const auto s = random_discrete({3, 3}, 10, 2);
    const auto h = s.head(4);
    ASSERT_EQ(h.size(), 4u);
    EXPECT_TRUE(std::equal(h.codes().begin(), h.codes().end(), s.codes().begin()));
    EXPECT_THROW((void)s.head(11), ArgumentError);
}

TEST(Marginal, HandCountedPairs) {
    // (1,1),(1,2),(2,1),(1,1) in 1-based codes
    const auto s = SampleSet::discrete({2, 2}, {0, 0, 0, 1, 1, 0, 0, 0});
    const std::vector<std::size_t> w = {0, 1};
    const auto m = marginal(s, w);
    EXPECT_EQ(m.total, 4u);
    EXPECT_EQ(m.counts, (std::vector<std::int64_t>{2, 1, 1, 0}));
    EXPECT_DOUBLE_EQ(m.frequencies.at({0, 0}), 0.5);
    EXPECT_DOUBLE_EQ(m.frequencies.at({0, 1}), 0.25);
    EXPECT_DOUBLE_EQ(m.frequencies.at({1, 0}), 0.25);
    EXPECT_DOUBLE_EQ(m.frequencies.at({1, 1}), 0.0);
}

TEST(Marginal, SingleVariableSumsToOne) {
    const auto s = random_discrete({5, 4, 3}, 997, 8);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto m = marginal(s, window_range(k, k));
        EXPECT_NEAR(m.frequencies.sum(), 1.0, 1e-12);
        for (auto v : m.frequencies.values()) EXPECT_GE(v, 0.0);
    }
}

TEST(Marginal, ConsistentUnderFurtherSummation) {
    const auto s = random_discrete({3, 4, 2, 3}, 500, 21);
    const auto wide = marginal(s, window_range(0, 3));
    const auto narrow = marginal(s, window_range(1, 2));
    // Sum the wide count table over its first and last axes.
    std::vector<std::int64_t> summed(narrow.counts.size(), 0);
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t e = 0; e < 3; ++e) summed[b * 2 + c] += wide.counts[((a * 4 + b) * 2 + c) * 3 + e];
    EXPECT_EQ(summed, narrow.counts);
    const std::vector<std::size_t> inner = {1, 2};
    const auto via_dense = marginal(wide.frequencies, inner);
    for (std::size_t i = 0; i < via_dense.size(); ++i) EXPECT_NEAR(via_dense[i], narrow.frequencies[i], 1e-15);
}

TEST(Marginal, NonContiguousWindow) {
    const auto s = random_discrete({3, 4, 2}, 200, 4);
    const std::vector<std::size_t> w = {0, 2};
    const auto m = marginal(s, w);
    std::vector<std::int64_t> expect(6, 0);
    for (std::size_t i = 0; i < s.size(); ++i) ++expect[s.row(i)[0] * 2 + s.row(i)[2]];
    EXPECT_EQ(m.counts, expect);
}

TEST(Marginal, CountsAddUnderConcatenation) {
    const auto a = random_discrete({3, 3, 3}, 70, 1);
    const auto b = random_discrete({3, 3, 3}, 130, 2);
    std::vector<std::uint16_t> joined(a.codes().begin(), a.codes().end());
    joined.insert(joined.end(), b.codes().begin(), b.codes().end());
    const auto ab = SampleSet::discrete({3, 3, 3}, std::move(joined));
    const auto w = window_range(0, 2);
    const auto ma = marginal(a, w), mb = marginal(b, w), mab = marginal(ab, w);
    for (std::size_t i = 0; i < mab.counts.size(); ++i) {
        EXPECT_EQ(mab.counts[i], ma.counts[i] + mb.counts[i]);
        EXPECT_NEAR(mab.frequencies[i], (70 * ma.frequencies[i] + 130 * mb.frequencies[i]) / 200.0, 1e-15);
    }
}

TEST(Marginal, DenseMarginalOfEnumeratedSamples) {
    // Samples listing every cell once give a uniform tensor; their marginal
    // must match the dense marginal of that tensor.
    const Shape ext = {2, 3, 2};
    std::vector<std::uint16_t> codes;
    for (std::uint16_t a = 0; a < 2; ++a)
        for (std::uint16_t b = 0; b < 3; ++b)
            for (std::uint16_t c = 0; c < 2; ++c) codes.insert(codes.end(), {a, b, c});
    const auto s = SampleSet::discrete(ext, codes);
    const DenseTensor uniform(ext, 1.0 / 12.0);
    for (const auto& w : {window_range(0, 1), window_range(1, 2), window_range(2, 2)}) {
        const auto a = marginal(s, w).frequencies;
        const auto b = marginal(uniform, w);
        EXPECT_LT(ttrs::testing::max_abs_diff(a, b), 1e-15);
    }
}

TEST(Marginal, Errors) {
    const auto s = random_discrete({3, 3, 3}, 5, 1);
    const std::vector<std::size_t> unsorted = {1, 0};
    const std::vector<std::size_t> outside = {3};
    const std::vector<std::size_t> empty;
    EXPECT_THROW((void)marginal(s, unsorted), ArgumentError);
    EXPECT_THROW((void)marginal(s, outside), ArgumentError);
    EXPECT_THROW((void)marginal(s, empty), ArgumentError);
    EXPECT_THROW((void)marginal(s, window_range(0, 2), 26), SizeError);
    EXPECT_NO_THROW((void)marginal(s, window_range(0, 2), 27));
    EXPECT_THROW((void)window_range(2, 1), ArgumentError);
    const auto c = SampleSet::continuous(1, 0.0, 1.0, {0.5});
    EXPECT_THROW((void)marginal(c, window_range(0, 0)), ArgumentError);
}

TEST(Schema, JsonRoundTrip) {
    const auto d = SampleSchema::discrete({2, 9, 4});
    const auto d2 = schema_from_json(schema_to_json(d));
    EXPECT_EQ(d2.kind, SampleKind::discrete);
    EXPECT_EQ(d2.extents, d.extents);
    const auto c = SampleSchema::continuous(3, -1.5, 2.0);
    const auto c2 = schema_from_json(schema_to_json(c));
    EXPECT_EQ(c2.kind, SampleKind::continuous);
    EXPECT_EQ(c2.dims, 3u);
    EXPECT_EQ(c2.lower, -1.5);
    EXPECT_EQ(c2.upper, 2.0);
    EXPECT_THROW((void)schema_from_json(nlohmann::json{{"kind", "other"}}), ParseError);
}
