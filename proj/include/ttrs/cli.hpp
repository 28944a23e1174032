#pragma once

/// Experiment harness behind the `ttrs` executable: configuration, the
/// sample -> fit -> eval pipeline over a parameter grid, and results.csv.

#include "ttrs/markov_models.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ttrs::cli {

struct ExperimentConfig {
    std::string model = "gl-discrete";  ///< gl-discrete | gl-continuous | ising | markov-file
    GinzburgLandauSpec gl;
    IsingSpec ising;
    std::filesystem::path markov_file;
    std::size_t n = 9;  ///< grid points for gl-discrete

    std::vector<std::size_t> d_list = {8};
    std::vector<std::size_t> N_list = {50000};
    std::vector<std::size_t> M_list = {15};
    std::vector<std::size_t> orders = {1};
    std::size_t rank = 3;  ///< uniform target rank, clipped to what each plan supports

    std::string algorithm = "tt-rs";  ///< tt-rs | tt-s
    std::string sampler = "auto";     ///< auto | ancestral | gibbs | mh | iid; auto is mh for gl-continuous, else ancestral
    std::size_t burn_in = kDefaultBurnIn;
    std::optional<std::size_t> thin;  ///< default 10 for gibbs, 1 for mh
    double mh_sigma = kDefaultMhSigma;

    std::size_t trials = 20;
    std::uint64_t seed = 0;
    std::size_t jobs = 0;  ///< 0 selects TTRS_JOBS or the hardware concurrency
    std::filesystem::path out = "out";
    bool force = false;

    [[nodiscard]] bool continuous() const noexcept { return model == "gl-continuous"; }
};

/// Throws ConfigError naming the offending field.
void validate(const ExperimentConfig& c);
[[nodiscard]] ExperimentConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json config_to_json(const ExperimentConfig& c);
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);

[[nodiscard]] inline std::uint64_t trial_seed(std::uint64_t base, std::size_t trial) noexcept {
    return base + static_cast<std::uint64_t>(trial) * 10007u;
}

/// Hex BLAKE2b-128 digest of the compact JSON dump.
[[nodiscard]] std::string content_hash(const nlohmann::json& j);

struct ResultRow {
    std::string model, algorithm;
    std::size_t order = 0, d = 0, n = 0, M = 0, N = 0, trial = 0;  ///< n or M left blank when 0
    std::optional<double> err, err_a, err_e, err_t;
    double wall_ms = 0.0;
};

/// model,algorithm,order,d,n,M,N,trial,err,err_a,err_e,err_t,wall_ms
[[nodiscard]] std::string results_csv_header();
[[nodiscard]] std::string format_result_row(const ResultRow& r);
void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
[[nodiscard]] std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

struct CommandSummary {
    std::size_t completed = 0;
    std::size_t skipped = 0;  ///< outputs already present
    std::vector<std::string> failed;
};

CommandSummary cmd_sample(const ExperimentConfig& c);
CommandSummary cmd_fit(const ExperimentConfig& c);
/// Writes <out>/results.csv in grid order.
CommandSummary cmd_eval(const ExperimentConfig& c);
CommandSummary cmd_sweep(const ExperimentConfig& c);

/// Entry point; returns 0, 2 (configuration error) or 3 (some cells failed).
int run(int argc, char** argv);

}  // namespace ttrs::cli
