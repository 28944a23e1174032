#include "ttrs/cli.hpp"

#include "ttrs/continuous.hpp"
#include "ttrs/engine.hpp"
#include "ttrs/error.hpp"
#include "ttrs/sketching.hpp"

#include <CLI11.hpp>
#include <sodium.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

namespace ttrs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kModels = {"gl-discrete", "gl-continuous", "ising", "markov-file"};
const std::vector<std::string> kAlgorithms = {"tt-rs", "tt-s"};
const std::vector<std::string> kSamplers = {"auto", "ancestral", "gibbs", "mh", "iid"};

bool one_of(const std::string& v, const std::vector<std::string>& set) {
    return std::find(set.begin(), set.end(), v) != set.end();
}

std::string joined(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : "|") + x;
    return s;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingInputError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t default_jobs() {
    if (const char* env = std::getenv("TTRS_JOBS")) {
        std::size_t v = 0;
        const std::string s(env);
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size() || v == 0)
            throw ConfigError("TTRS_JOBS: expected a positive integer, got '" + s + "'");
        return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------- grid

struct Resolved {
    std::string sampler;
    std::size_t thin = 1;
};

Resolved resolve_sampler(const ExperimentConfig& c) {
    Resolved r;
    r.sampler = c.sampler == "auto" ? (c.continuous() ? "mh" : "ancestral") : c.sampler;
    r.thin = c.thin.value_or(r.sampler == "gibbs" ? kDefaultThin : 1);
    return r;
}

struct SampleCell {
    std::size_t d, N, trial;
};
struct FitCell {
    SampleCell s;
    std::size_t order, M;
};

std::vector<SampleCell> sample_cells(const ExperimentConfig& c) {
    std::vector<SampleCell> v;
    for (auto d : c.d_list)
        for (auto N : c.N_list)
            for (std::size_t t = 0; t < c.trials; ++t) v.push_back({d, N, t});
    return v;
}

std::vector<FitCell> fit_cells(const ExperimentConfig& c) {
    std::vector<FitCell> v;
    const std::vector<std::size_t> Ms = c.continuous() ? c.M_list : std::vector<std::size_t>{0};
    for (auto d : c.d_list)
        for (auto N : c.N_list)
            for (auto m : c.orders)
                for (auto M : Ms)
                    for (std::size_t t = 0; t < c.trials; ++t) v.push_back({{d, N, t}, m, M});
    return v;
}

json model_slice(const ExperimentConfig& c, std::size_t d) {
    json j = {{"model", c.model}, {"d", d}};
    if (c.model == "gl-discrete" || c.model == "gl-continuous") {
        auto g = c.gl;
        g.dims = d;
        j["params"] = gl_spec_to_json(g);
        if (c.model == "gl-discrete") j["n"] = c.n;
    } else if (c.model == "ising") {
        auto s = c.ising;
        s.dims = d;
        j["params"] = ising_spec_to_json(s);
    } else {
        j["file_hash"] = content_hash(json(read_text(c.markov_file)));
    }
    return j;
}

json sample_slice(const ExperimentConfig& c, const SampleCell& s) {
    const auto r = resolve_sampler(c);
    json j = model_slice(c, s.d);
    j["N"] = s.N;
    j["trial"] = s.trial;
    j["seed"] = trial_seed(c.seed, s.trial);
    j["sampler"] = r.sampler;
    if (r.sampler == "gibbs" || r.sampler == "mh") {
        j["burn_in"] = c.burn_in;
        j["thin"] = r.thin;
    }
    if (r.sampler == "mh") j["mh_sigma"] = c.mh_sigma;
    return j;
}

json fit_slice(const ExperimentConfig& c, const FitCell& f) {
    json j = sample_slice(c, f.s);
    j["algorithm"] = c.algorithm;
    j["order"] = f.order;
    j["rank"] = c.rank;
    if (c.continuous()) j["M"] = f.M;
    return j;
}

std::string short_hash(const json& j) { return content_hash(j).substr(0, 12); }

fs::path sample_path(const ExperimentConfig& c, const SampleCell& s) {
    return c.out / "samples" /
           (c.model + "-d" + std::to_string(s.d) + "-N" + std::to_string(s.N) + "-t" + std::to_string(s.trial) + "-" +
            short_hash(sample_slice(c, s)) + ".ttsamp");
}

fs::path fit_path(const ExperimentConfig& c, const FitCell& f) {
    std::string name = c.model + "-" + c.algorithm + "-o" + std::to_string(f.order) + "-d" + std::to_string(f.s.d);
    if (c.continuous()) name += "-M" + std::to_string(f.M);
    name += "-N" + std::to_string(f.s.N) + "-t" + std::to_string(f.s.trial) + "-" + short_hash(fit_slice(c, f));
    return c.out / "fits" / (name + (c.continuous() ? ".ttc" : ".tt"));
}

fs::path report_path(const fs::path& fit) {
    auto p = fit;
    return p.replace_extension(".report.json");
}

fs::path row_path(const ExperimentConfig& c, const FitCell& f) {
    json j = fit_slice(c, f);
    j["stage"] = "eval";
    return c.out / "rows" / (content_hash(j) + ".json");
}

// ---------------------------------------------------------------- models

struct DiscreteModel {
    MarkovSpec chain;
    std::optional<ChainFactors> factors;
};

DiscreteModel discrete_model(const ExperimentConfig& c, std::size_t d) {
    if (c.model == "gl-discrete") {
        auto g = c.gl;
        g.dims = d;
        auto disc = gl_discretize(g, c.n);
        return {std::move(disc.chain), std::move(disc.factors)};
    }
    if (c.model == "ising") {
        auto s = c.ising;
        s.dims = d;
        return {ising_spec_to_markov(s), ising_factors(s)};
    }
    auto spec = markov_spec_from_json(json::parse(read_text(c.markov_file)));
    if (spec.dims() != d) throw ConfigError("d: markov-file chain has " + std::to_string(spec.dims()) + " variables");
    return {std::move(spec), std::nullopt};
}

GinzburgLandauSpec continuous_model(const ExperimentConfig& c, std::size_t d) {
    auto g = c.gl;
    g.dims = d;
    return g;
}

std::size_t alphabet_size(const ExperimentConfig& c, std::size_t d) {
    if (c.model == "gl-discrete") return c.n;
    if (c.model == "ising") return c.ising.alphabet.size();
    if (c.model == "markov-file") {
        const auto e = discrete_model(c, d).chain.extents;
        return *std::max_element(e.begin(), e.end());
    }
    return 0;
}

// Exact objects shared by the cells of one grid.
class TruthCache {
public:
    explicit TruthCache(const ExperimentConfig& c) : c_(c) {}

    std::shared_ptr<const TensorTrain> discrete(std::size_t d) {
        return get(discrete_, d, [&] { return markov_to_tt(discrete_model(c_, d).chain); });
    }
    std::shared_ptr<const TensorTrain> coeffs(std::size_t d, std::size_t M) {
        return get(coeffs_, d * 100000 + M, [&] {
            const auto g = continuous_model(c_, d);
            return markov_to_coeff_tt(g, BasisSet::fourier(M, g.lower, g.upper));
        });
    }
    double norm_sq(std::size_t d) {
        return *get(norms_, d, [&] { return gl_density_norm_squared(continuous_model(c_, d)); });
    }

private:
    template <class T, class F>
    std::shared_ptr<const T> get(std::map<std::size_t, std::shared_ptr<const T>>& m, std::size_t key, F make) {
        {
            std::lock_guard lock(mu_);
            if (auto it = m.find(key); it != m.end()) return it->second;
        }
        auto v = std::make_shared<const T>(make());
        std::lock_guard lock(mu_);
        return m.emplace(key, std::move(v)).first->second;
    }

    const ExperimentConfig& c_;
    std::mutex mu_;
    std::map<std::size_t, std::shared_ptr<const TensorTrain>> discrete_, coeffs_;
    std::map<std::size_t, std::shared_ptr<const double>> norms_;
};

// ---------------------------------------------------------------- execution

void parallel_cells(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) body(i);
    };
    const std::size_t n = std::min(std::max<std::size_t>(jobs, 1), std::max<std::size_t>(count, 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

class Tally {
public:
    void done() {
        std::lock_guard lock(mu_);
        ++s_.completed;
    }
    void skipped() {
        std::lock_guard lock(mu_);
        ++s_.skipped;
    }
    void failed(std::string what) {
        std::lock_guard lock(mu_);
        std::cerr << "ttrs: " << what << '\n';
        s_.failed.push_back(std::move(what));
    }
    CommandSummary take() {
        std::sort(s_.failed.begin(), s_.failed.end());
        return std::move(s_);
    }

private:
    std::mutex mu_;
    CommandSummary s_;
};

std::size_t effective_jobs(const ExperimentConfig& c) { return c.jobs ? c.jobs : default_jobs(); }

void produce_sample(const ExperimentConfig& c, const SampleCell& s, const fs::path& path) {
    const auto r = resolve_sampler(c);
    const std::uint64_t seed = trial_seed(c.seed, s.trial);
    SampleSet set;
    if (c.continuous()) {
        const auto g = continuous_model(c, s.d);
        set = r.sampler == "iid" ? sample_gl_iid(g, s.N, seed)
                                 : sample_mh_continuous(g, s.N, c.mh_sigma, c.burn_in, r.thin, seed);
    } else {
        const auto m = discrete_model(c, s.d);
        if (r.sampler == "gibbs") {
            if (!m.factors) throw ConfigError("sampler: gibbs needs an energy-defined model");
            set = sample_gibbs(*m.factors, s.N, c.burn_in, r.thin, seed);
        } else {
            set = sample_ancestral(m.chain, s.N, seed);
        }
    }
    save_samples(path, set);
    json meta = sample_slice(c, s);
    meta["schema"] = schema_to_json(set.schema());
    auto meta_path = path;
    io::atomic_write_text(meta_path.replace_extension(".json"), meta.dump(2) + "\n");
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void produce_fit(const ExperimentConfig& c, const FitCell& f, const fs::path& in, const fs::path& out) {
    json report;
    if (c.continuous()) {
        const auto g = continuous_model(c, f.s.d);
        const auto samples = load_samples(in);
        const auto basis = BasisSet::fourier(f.M, g.lower, g.upper);
        const auto t0 = std::chrono::steady_clock::now();
        auto fit = tt_rs_continuous_markov(samples, RankSpec::uniform(std::min(c.rank, f.M), f.s.d), basis);
        const double wall = ms_since(t0);
        save_continuous_tt(out, fit.model);
        report = fit.report.to_json();
        report["wall_ms"] = wall;
    } else {
        const auto samples = load_samples(in);
        const auto plan = markov_sketch_plan(samples.extents(), f.order);
        const auto want = RankSpec::uniform(c.rank, f.s.d).ranks;
        const auto ranks = RankSpec::fixed(clip_ranks(want, plan));
        const auto t0 = std::chrono::steady_clock::now();
        auto fit = c.algorithm == "tt-s" ? tt_s(samples, ranks, explicit_left_sketches(plan), plan)
                                         : tt_rs(samples, ranks, plan);
        const double wall = ms_since(t0);
        save_tt(out, fit.tt);
        report = fit.report.to_json();
        report["wall_ms"] = wall;
        report["requested_ranks"] = want;
    }
    report["cell"] = fit_slice(c, f);
    io::atomic_write_text(report_path(out), report.dump(2) + "\n");
}

ResultRow evaluate(const ExperimentConfig& c, const FitCell& f, const fs::path& fit, TruthCache& truth) {
    ResultRow row;
    row.model = c.model;
    row.algorithm = c.algorithm;
    row.order = f.order;
    row.d = f.s.d;
    row.N = f.s.N;
    row.trial = f.s.trial;
    const auto rep = json::parse(read_text(report_path(fit)));
    row.wall_ms = rep.value("wall_ms", 0.0);
    if (c.continuous()) {
        row.M = f.M;
        const auto model = load_continuous_tt(fit);
        const auto exact = truth.coeffs(f.s.d, f.M);
        if (model.coeffs.extents() != exact->extents()) throw ShapeError("fitted and exact coefficient extents differ");
        const auto e = l2_error_decomposition(*exact, truth.norm_sq(f.s.d), model.coeffs);
        row.err = e.total;
        row.err_a = e.approx;
        row.err_e = e.estimation;
        row.err_t = e.total;
    } else {
        row.n = alphabet_size(c, f.s.d);
        const auto tt = load_tt(fit);
        const auto exact = truth.discrete(f.s.d);
        if (tt.extents() != exact->extents()) throw ShapeError("fitted and exact extents differ");
        row.err = tt_rel_l2_error(*exact, tt);
    }
    return row;
}

json row_to_json(const ResultRow& r) {
    json j = {{"model", r.model}, {"algorithm", r.algorithm}, {"order", r.order}, {"d", r.d},  {"n", r.n},
              {"M", r.M},         {"N", r.N},                 {"trial", r.trial}, {"wall_ms", r.wall_ms}};
    if (r.err) j["err"] = *r.err;
    if (r.err_a) j["err_a"] = *r.err_a;
    if (r.err_e) j["err_e"] = *r.err_e;
    if (r.err_t) j["err_t"] = *r.err_t;
    return j;
}

ResultRow row_from_json(const json& j) {
    ResultRow r;
    r.model = j.at("model");
    r.algorithm = j.at("algorithm");
    r.order = j.at("order");
    r.d = j.at("d");
    r.n = j.at("n");
    r.M = j.at("M");
    r.N = j.at("N");
    r.trial = j.at("trial");
    r.wall_ms = j.at("wall_ms");
    for (auto [key, field] : {std::pair{"err", &r.err}, {"err_a", &r.err_a}, {"err_e", &r.err_e}, {"err_t", &r.err_t}})
        if (j.contains(key)) *field = j.at(key).get<double>();
    return r;
}

std::string cell_label(const FitCell& f) {
    std::string s = "d=" + std::to_string(f.s.d) + " N=" + std::to_string(f.s.N) + " order=" + std::to_string(f.order);
    if (f.M) s += " M=" + std::to_string(f.M);
    return s + " trial=" + std::to_string(f.s.trial);
}

std::string sample_label(const SampleCell& s) {
    return "d=" + std::to_string(s.d) + " N=" + std::to_string(s.N) + " trial=" + std::to_string(s.trial);
}

}  // namespace

// ---------------------------------------------------------------- config

void validate(const ExperimentConfig& c) {
    if (!one_of(c.model, kModels)) throw ConfigError("model: expected one of " + joined(kModels) + ", got '" + c.model + "'");
    if (!one_of(c.algorithm, kAlgorithms))
        throw ConfigError("algorithm: expected one of " + joined(kAlgorithms) + ", got '" + c.algorithm + "'");
    if (!one_of(c.sampler, kSamplers))
        throw ConfigError("sampler: expected one of " + joined(kSamplers) + ", got '" + c.sampler + "'");
    if (c.trials < 1) throw ConfigError("trials: must be at least 1");
    if (c.d_list.empty()) throw ConfigError("d: list is empty");
    if (c.N_list.empty()) throw ConfigError("N: list is empty");
    if (c.orders.empty()) throw ConfigError("order: list is empty");
    if (c.rank < 1) throw ConfigError("rank: must be at least 1");
    for (auto N : c.N_list)
        if (N < 1) throw ConfigError("N: sample sizes must be positive");
    for (auto d : c.d_list)
        if (d < 2) throw ConfigError("d: need at least two variables");
    for (auto m : c.orders)
        for (auto d : c.d_list)
            if (m < 1 || m >= d) throw ConfigError("order: must satisfy 1 <= order < d for every d");
    if (c.thin && *c.thin == 0) throw ConfigError("thin: must be at least 1");
    if (!(c.mh_sigma > 0.0)) throw ConfigError("mh_sigma: must be positive");
    if (c.continuous()) {
        if (c.M_list.empty()) throw ConfigError("M: list is empty");
        for (auto M : c.M_list)
            if (M < 1) throw ConfigError("M: basis sizes must be positive");
        if (c.algorithm != "tt-rs") throw ConfigError("algorithm: gl-continuous supports tt-rs only");
        for (auto m : c.orders)
            if (m != 1) throw ConfigError("order: gl-continuous supports order 1 only");
        if (c.sampler != "auto" && c.sampler != "mh" && c.sampler != "iid")
            throw ConfigError("sampler: gl-continuous needs mh or iid");
    } else {
        if (c.sampler == "mh" || c.sampler == "iid") throw ConfigError("sampler: " + c.sampler + " needs gl-continuous");
        if (c.sampler == "gibbs" && c.model == "markov-file") throw ConfigError("sampler: gibbs needs gl-discrete or ising");
    }
    if (c.model == "gl-discrete" && c.n < 2) throw ConfigError("n: need at least two grid points");
    if (c.model == "gl-discrete" || c.model == "gl-continuous") {
        const auto& g = c.gl;
        if (!(g.lower < g.upper)) throw ConfigError("gl.a: must be below gl.b");
        if (!(g.beta > 0) || !(g.lambda > 0) || !(g.h > 0)) throw ConfigError("gl: beta, lambda and h must be positive");
    }
    if (c.model == "ising") {
        if (c.ising.alphabet.size() < 2) throw ConfigError("ising.alphabet: need at least two symbols");
        for (auto d : c.d_list)
            if (d < 3) throw ConfigError("d: the Ising chain needs at least three variables");
    }
    if (c.model == "markov-file" && c.markov_file.empty()) throw ConfigError("markov_file: required for model markov-file");
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    auto field = [&](const char* key, auto& dst) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(dst);
        } catch (const json::exception& e) {
            throw ConfigError(std::string(key) + ": " + e.what());
        }
    };
    auto list = [&](const char* key, std::vector<std::size_t>& dst) {
        if (!j.contains(key)) return;
        try {
            if (j.at(key).is_array())
                dst = j.at(key).get<std::vector<std::size_t>>();
            else
                dst = {j.at(key).get<std::size_t>()};
        } catch (const json::exception& e) {
            throw ConfigError(std::string(key) + ": " + e.what());
        }
    };
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        static const std::vector<std::string> known = {
            "model", "gl",   "ising", "markov_file", "n",       "d",      "N",      "M",    "order",
            "rank",  "algorithm", "sampler", "burn_in", "thin", "mh_sigma", "trials", "seed", "jobs", "out"};
        if (!one_of(key, known)) throw ConfigError(key + ": unknown field");
    }
    field("model", c.model);
    try {
        if (j.contains("gl")) c.gl = gl_spec_from_json(j.at("gl"));
        if (j.contains("ising")) c.ising = ising_spec_from_json(j.at("ising"));
    } catch (const Error& e) {
        throw ConfigError(std::string(j.contains("ising") ? "ising/gl" : "gl") + ": " + e.what());
    }
    if (j.contains("markov_file")) c.markov_file = j.at("markov_file").get<std::string>();
    field("n", c.n);
    list("d", c.d_list);
    list("N", c.N_list);
    list("M", c.M_list);
    list("order", c.orders);
    field("rank", c.rank);
    field("algorithm", c.algorithm);
    field("sampler", c.sampler);
    field("burn_in", c.burn_in);
    if (j.contains("thin")) {
        std::size_t t = 0;
        field("thin", t);
        c.thin = t;
    }
    field("mh_sigma", c.mh_sigma);
    if (j.contains("trials")) {
        long long t = 0;
        field("trials", t);
        if (t < 1) throw ConfigError("trials: must be at least 1");
        c.trials = static_cast<std::size_t>(t);
    }
    field("seed", c.seed);
    field("jobs", c.jobs);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json j = {{"model", c.model},     {"gl", gl_spec_to_json(c.gl)}, {"ising", ising_spec_to_json(c.ising)},
              {"n", c.n},             {"d", c.d_list},               {"N", c.N_list},
              {"M", c.M_list},        {"order", c.orders},           {"rank", c.rank},
              {"algorithm", c.algorithm}, {"sampler", c.sampler},    {"burn_in", c.burn_in},
              {"mh_sigma", c.mh_sigma}, {"trials", c.trials},        {"seed", c.seed},
              {"jobs", c.jobs},       {"out", c.out.string()}};
    if (!c.markov_file.empty()) j["markov_file"] = c.markov_file.string();
    if (c.thin) j["thin"] = *c.thin;
    return j;
}

ExperimentConfig load_config(const fs::path& path) {
    std::string text;
    try {
        text = read_text(path);
    } catch (const MissingInputError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    try {
        return config_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
}

std::string content_hash(const json& j) {
    if (sodium_init() < 0) throw Error("libsodium failed to initialise");
    const std::string text = j.dump();
    unsigned char digest[16];
    crypto_generichash(digest, sizeof digest, reinterpret_cast<const unsigned char*>(text.data()), text.size(), nullptr,
                       0);
    char hex[2 * sizeof digest + 1];
    sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
    return hex;
}

// ---------------------------------------------------------------- results.csv

std::string results_csv_header() { return "model,algorithm,order,d,n,M,N,trial,err,err_a,err_e,err_t,wall_ms"; }

std::string format_result_row(const ResultRow& r) {
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
    auto count = [](std::size_t v) { return v ? std::to_string(v) : std::string(); };
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", r.wall_ms);
    return r.model + "," + r.algorithm + "," + std::to_string(r.order) + "," + std::to_string(r.d) + "," + count(r.n) +
           "," + count(r.M) + "," + std::to_string(r.N) + "," + std::to_string(r.trial) + "," + opt(r.err) + "," +
           opt(r.err_a) + "," + opt(r.err_e) + "," + opt(r.err_t) + "," + wall;
}

void write_results_csv(const fs::path& path, const std::vector<ResultRow>& rows) {
    std::string text = results_csv_header() + "\n";
    for (const auto& r : rows) text += format_result_row(r) + "\n";
    io::atomic_write_text(path, text);
}

std::vector<ResultRow> read_results_csv(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line) || line != results_csv_header()) throw ParseError(path.string() + ": unexpected header");
    std::vector<ResultRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 13) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 13 columns");
        auto sz = [&](const std::string& s) -> std::size_t { return s.empty() ? 0 : std::stoull(s); };
        auto opt = [](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return std::stod(s);
        };
        try {
            ResultRow r;
            r.model = f[0];
            r.algorithm = f[1];
            r.order = sz(f[2]);
            r.d = sz(f[3]);
            r.n = sz(f[4]);
            r.M = sz(f[5]);
            r.N = sz(f[6]);
            r.trial = sz(f[7]);
            r.err = opt(f[8]);
            r.err_a = opt(f[9]);
            r.err_e = opt(f[10]);
            r.err_t = opt(f[11]);
            r.wall_ms = std::stod(f[12]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

// ---------------------------------------------------------------- commands

CommandSummary cmd_sample(const ExperimentConfig& c) {
    validate(c);
    const auto cells = sample_cells(c);
    Tally tally;
    parallel_cells(cells.size(), effective_jobs(c), [&](std::size_t i) {
        const auto& s = cells[i];
        try {
            const auto path = sample_path(c, s);
            if (!c.force && fs::exists(path)) return tally.skipped();
            produce_sample(c, s, path);
            tally.done();
        } catch (const std::exception& e) {
            tally.failed("sample " + sample_label(s) + ": " + e.what());
        }
    });
    return tally.take();
}

CommandSummary cmd_fit(const ExperimentConfig& c) {
    validate(c);
    const auto cells = fit_cells(c);
    Tally tally;
    parallel_cells(cells.size(), effective_jobs(c), [&](std::size_t i) {
        const auto& f = cells[i];
        try {
            const auto in = sample_path(c, f.s);
            const auto out = fit_path(c, f);
            if (!c.force && fs::exists(out) && fs::exists(report_path(out))) return tally.skipped();
            if (!fs::exists(in)) throw MissingInputError("missing sample file " + in.string());
            produce_fit(c, f, in, out);
            tally.done();
        } catch (const std::exception& e) {
            tally.failed("fit " + cell_label(f) + ": " + e.what());
        }
    });
    return tally.take();
}

CommandSummary cmd_eval(const ExperimentConfig& c) {
    validate(c);
    const auto cells = fit_cells(c);
    std::vector<std::optional<ResultRow>> rows(cells.size());
    TruthCache truth(c);
    Tally tally;
    parallel_cells(cells.size(), effective_jobs(c), [&](std::size_t i) {
        const auto& f = cells[i];
        try {
            const auto cache = row_path(c, f);
            if (!c.force && fs::exists(cache)) {
                rows[i] = row_from_json(json::parse(read_text(cache)));
                return tally.skipped();
            }
            const auto fit = fit_path(c, f);
            if (!fs::exists(fit) || !fs::exists(report_path(fit)))
                throw MissingInputError("missing fitted TT " + fit.string());
            rows[i] = evaluate(c, f, fit, truth);
            io::atomic_write_text(cache, row_to_json(*rows[i]).dump() + "\n");
            tally.done();
        } catch (const std::exception& e) {
            tally.failed("eval " + cell_label(f) + ": " + e.what());
        }
    });
    std::vector<ResultRow> ok;
    for (auto& r : rows)
        if (r) ok.push_back(std::move(*r));
    if (!ok.empty()) write_results_csv(c.out / "results.csv", ok);
    return tally.take();
}

CommandSummary cmd_sweep(const ExperimentConfig& c) {
    CommandSummary total;
    for (auto* stage : {&cmd_sample, &cmd_fit, &cmd_eval}) {
        auto s = stage(c);
        total.completed += s.completed;
        total.skipped += s.skipped;
        total.failed.insert(total.failed.end(), s.failed.begin(), s.failed.end());
    }
    return total;
}

// ---------------------------------------------------------------- entry point

int run(int argc, char** argv) {
    CLI::App app{"Tensor-train density estimation by recursive sketching"};
    app.require_subcommand(1);

    struct Overrides {
        std::string config, model, algorithm, sampler, out;
        std::vector<std::size_t> d, N, M, order;
        std::optional<std::size_t> n, trials, jobs, rank;
        std::optional<std::uint64_t> seed;
        bool force = false;
    } o;

    std::vector<std::pair<std::string, CommandSummary (*)(const ExperimentConfig&)>> commands = {
        {"sample", &cmd_sample}, {"fit", &cmd_fit}, {"eval", &cmd_eval}, {"sweep", &cmd_sweep}};
    const std::map<std::string, std::string> help = {
        {"sample", "Draw sample files for every (d, N, trial) cell"},
        {"fit", "Fit a tensor train to every sample file"},
        {"eval", "Compare fits with the exact model and write results.csv"},
        {"sweep", "Run sample, fit and eval over the grid, skipping finished cells"}};
    for (const auto& [name, _] : commands) {
        auto* sub = app.add_subcommand(name, help.at(name));
        sub->add_option("--config", o.config, "JSON experiment configuration");
        sub->add_option("--model", o.model, "gl-discrete | gl-continuous | ising | markov-file");
        sub->add_option("-d", o.d, "Number of variables (one or more)");
        sub->add_option("-n", o.n, "Grid points for gl-discrete");
        sub->add_option("-N", o.N, "Sample sizes (one or more)");
        sub->add_option("-M", o.M, "Basis sizes for gl-continuous (one or more)");
        sub->add_option("--order", o.order, "Sketch orders (one or more)");
        sub->add_option("--rank", o.rank, "Uniform target rank");
        sub->add_option("--trials", o.trials, "Trials per cell");
        sub->add_option("--seed", o.seed, "Seed base; trial t uses seed + 10007 t");
        sub->add_option("--algorithm", o.algorithm, "tt-rs | tt-s");
        sub->add_option("--sampler", o.sampler, "auto | ancestral | gibbs | mh | iid");
        sub->add_option("--jobs", o.jobs, "Parallel cells (default: TTRS_JOBS or all cores)");
        sub->add_option("--out", o.out, "Output directory");
        sub->add_flag("--force", o.force, "Recompute cells whose outputs exist");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
        if (!o.model.empty()) c.model = o.model;
        if (!o.algorithm.empty()) c.algorithm = o.algorithm;
        if (!o.sampler.empty()) c.sampler = o.sampler;
        if (!o.out.empty()) c.out = o.out;
        if (!o.d.empty()) c.d_list = o.d;
        if (!o.N.empty()) c.N_list = o.N;
        if (!o.M.empty()) c.M_list = o.M;
        if (!o.order.empty()) c.orders = o.order;
        if (o.n) c.n = *o.n;
        if (o.trials) c.trials = *o.trials;
        if (o.jobs) c.jobs = *o.jobs;
        if (o.rank) c.rank = *o.rank;
        if (o.seed) c.seed = *o.seed;
        c.force = o.force;
        validate(c);
        if (c.jobs == 0) c.jobs = default_jobs();

        for (const auto& [name, fn] : commands) {
            if (!app.got_subcommand(name)) continue;
            const auto s = fn(c);
            std::cerr << "ttrs " << name << ": " << s.completed << " done, " << s.skipped << " skipped, "
                      << s.failed.size() << " failed\n";
            if (!s.failed.empty()) {
                std::cerr << "failed cells:\n";
                for (const auto& f : s.failed) std::cerr << "  " << f << '\n';
                return 3;
            }
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "ttrs: config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ttrs: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace ttrs::cli
