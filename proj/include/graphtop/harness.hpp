#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "graphtop/graph.hpp"
#include "graphtop/pretrain.hpp"
#include "graphtop/prompt.hpp"

namespace graphtop {

struct ExperimentConfig {
    // graph source: a directory or inline CSBM parameters
    std::optional<std::filesystem::path> graph_dir;
    std::optional<CsbmParams> csbm;
    std::optional<std::filesystem::path> model_path;  // skip pretraining when set
    PretrainConfig pretrain;
    PromptConfig prompt;
    int shots = 5;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    bool baseline_linear_probe = true;
    int probe_epochs = 200;  // baseline training budget

    void validate() const;
};

ExperimentConfig experiment_config_from_json(const std::string& text);

struct PhaseTimings {
    double pretrain_seconds = 0.0;
    double tune_seconds = 0.0;
    double eval_seconds = 0.0;
};

struct RunResult {
    std::vector<double> graphtop_accuracies;      // one per seed
    std::vector<double> linear_probe_accuracies;  // empty when baseline disabled
    double graphtop_mean = 0.0;
    double graphtop_std = 0.0;
    double linear_probe_mean = 0.0;
    double linear_probe_std = 0.0;
    std::vector<PhaseTimings> timings;  // per seed; kept out of the result JSON
    ExperimentConfig config;
};

/// Per seed: build or load the graph, pretrain or load the backbone, sample
/// the split, tune, evaluate on the test nodes. A failing seed aborts the run.
RunResult run_experiment(const ExperimentConfig& config);

/// Deterministic result JSON (no timings; repeated runs are byte-identical).
std::string run_result_to_json(const RunResult& result);

struct Theorem1Row {
    double p = 0.0;
    double estimate = 0.0;
    double standard_error = 0.0;
    bool pass = false;
};

struct Theorem1Report {
    std::vector<Theorem1Row> rows;
    std::size_t samples = 0;
    bool all_pass = false;
};

Theorem1Report verify_theorem1(const std::vector<double>& probabilities, std::size_t samples,
                               std::uint64_t seed);

struct Theorem2Report {
    double dist_empirical = 0.0;
    double dist_theoretical = 0.0;  // ((p-q)^2/(p+q)^2) ||mu1-mu2||
    double rewired_dist_empirical = 0.0;
    double ratio_empirical = 0.0;
    double ratio_theoretical = 0.0;  // (p+q)/|p-q|
};

/// Empirical check of the separation bound: class-centroid distance of a
/// linear 2-layer GCN on a CSBM graph, before and after oracle rewiring
/// (every node keeps exactly its same-class 2-hop neighbors).
Theorem2Report verify_theorem2(const CsbmParams& params, std::uint64_t seed);

void export_prob_histogram(const GcnModel& model, const TrainedPrompt& prompt,
                           const Graph& graph, const LabeledSplit& split, int bins,
                           const std::filesystem::path& out);

void export_edge_density(const GcnModel& model, const TrainedPrompt& prompt, const Graph& graph,
                         const LabeledSplit& split, const std::filesystem::path& out);

/// Per-train-node candidate probabilities (deterministic; no sampling).
/// Shared by the exports and their tests.
std::vector<std::vector<double>> train_target_probs(const GcnModel& model,
                                                    const TrainedPrompt& prompt,
                                                    const Graph& graph,
                                                    const LabeledSplit& split);

enum class BenchStatus { ok, out_of_memory };

struct BenchScopeResult {
    double seconds_target_only = 0.0;
    double seconds_all_pairs = 0.0;
    double median_epoch_target_only = 0.0;
    double median_epoch_all_pairs = 0.0;
    BenchStatus target_only_status = BenchStatus::ok;
    BenchStatus all_pairs_status = BenchStatus::ok;
};

/// Wall-clock of tune_prompt under both rewiring scopes, same seed and epoch
/// budget, single-threaded for stable timing.
BenchScopeResult bench_rewire_scope(const Graph& graph, const GcnModel& model,
                                    const LabeledSplit& split, const PromptConfig& config);

/// Test accuracy when the learned projector is replaced by the label oracle
/// (p = 1 for same-class pairs, 0 otherwise); the probe is trained on the
/// oracle-rewired train representations.
double oracle_projector_accuracy(const GcnModel& model, const Graph& graph,
                                 const LabeledSplit& split, int rho, int probe_epochs, double lr,
                                 std::uint64_t seed);

}  // namespace graphtop
