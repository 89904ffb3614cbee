#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "graphtop/graph.hpp"
#include "graphtop/matrix.hpp"
#include "graphtop/nn.hpp"
#include "graphtop/rng.hpp"

namespace graphtop {

/// Shared pairwise projector: p = sigma(w2 . relu(w1' (h_i + h_j))), clamped
/// away from {0, 1}. The sum makes it symmetric in its arguments.
struct Projector {
    DenseMatrix w1;  // d_h x d_p
    DenseMatrix w2;  // d_p x 1

    std::size_t input_dim() const { return w1.rows(); }
    std::size_t hidden_dim() const { return w1.cols(); }

    static Projector init(std::size_t embed_dim, std::size_t hidden_dim, std::uint64_t seed);
};

enum class RewireScope { target_only, all_pairs };

struct PromptConfig {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double gamma = 0.5;
    int epochs = 500;
    double lr = 0.005;
    int rho = 2;
    double tau_floor = 0.1;
    double prob_clamp = 1e-6;
    std::uint64_t seed = 0;
    RewireScope rewire_scope = RewireScope::target_only;
    int projector_hidden = 128;  // d_p

    void validate() const;
};

/// One target's soft-rewired subgraph: selector values where rewiring is
/// allowed, base adjacency everywhere else.
struct PromptedSubgraph {
    DenseMatrix soft_adjacency;                // m x m, symmetric, zero diagonal
    std::vector<std::pair<int, int>> pairs;    // candidate pairs, local indices, a < b
    std::vector<double> probs;                 // p_ij per candidate pair
    const Subgraph* base = nullptr;
};

struct EpochStats {
    double tau = 0.0;
    double l_p = 0.0;
    double l_e = 0.0;
    double l_s = 0.0;
    double total = 0.0;
};

struct TrainedPrompt {
    Projector projector;
    LinearProbe probe;
    PromptConfig config;
    std::vector<EpochStats> log;
    int shots = 0;  // split size metadata, lets the eval CLI rebuild the split
};

double projector_prob(const Projector& projector, std::span<const double> h_i,
                      std::span<const double> h_j, double clamp = 1e-6);

/// sigma((g1 - g2 + logit(p)) / tau).
double soft_edge_selector(double p, double g1, double g2, double tau);

/// max(0.97 (1 - e/E) + 0.03, floor); the linear anneal used by the tuner.
double temperature(int epoch, int total_epochs, double floor = 0.1);

/// Monte-Carlo estimate of Pr(G1 - G2 + logit(p) >= 0); should converge to p.
double gumbel_edge_probability(double p, std::size_t samples, std::uint64_t seed);

PromptedSubgraph build_prompted_subgraph(const Subgraph& sub, const Projector& projector,
                                         const DenseMatrix& embeddings, double tau, Rng& rng,
                                         RewireScope scope, double clamp = 1e-6);

struct ObjectiveResult {
    double l_p = 0.0;
    double l_e = 0.0;
    double l_s = 0.0;
    double total = 0.0;
    // gradient of l_p + lambda1 l_e + lambda2 l_s w.r.t. the projector
    DenseMatrix d_w1;
    DenseMatrix d_w2;
    // gradient of l_p w.r.t. the probe
    DenseMatrix d_probe_weights;
    std::vector<double> d_probe_bias;
};

/// Full three-term objective over the split's train nodes, with analytic
/// gradients. Fresh Gumbel noise is drawn from `rng` (two draws per candidate
/// pair, train-node order).
ObjectiveResult prompt_objective(const GcnModel& model, const LinearProbe& probe,
                                 const Projector& projector, const LabeledSplit& split,
                                 const Graph& graph, const DenseMatrix& embeddings, double tau,
                                 const PromptConfig& config, Rng& rng);

using EpochCallback = std::function<void(int epoch, const EpochStats&)>;

/// Frozen-backbone prompt tuning: precompute embeddings and train subgraphs,
/// then per epoch anneal tau, resample noise, take one Adam step on the probe
/// (cross-entropy only) and one on the projector (all three terms).
/// Deterministic per config.seed regardless of `threads`.
TrainedPrompt tune_prompt(const GcnModel& model, const Graph& graph, const LabeledSplit& split,
                          const PromptConfig& config, const EpochCallback& on_epoch = {},
                          int threads = 0);

struct Prediction {
    int predicted_class = -1;
    std::vector<double> class_scores;
};

/// Deterministic inference: threshold each candidate probability at 0.5
/// (ties count as an edge), forward through the frozen model and probe.
Prediction infer_node(const GcnModel& model, const TrainedPrompt& prompt, const Graph& graph,
                      NodeId target);

double evaluate(const GcnModel& model, const TrainedPrompt& prompt, const Graph& graph,
                std::span<const NodeId> nodes);

/// No-prompting baseline: probe trained on the frozen full-graph embeddings.
LinearProbe train_linear_probe(const GcnModel& model, const Graph& graph,
                               const LabeledSplit& split, int epochs, double lr,
                               std::uint64_t seed);

void save_prompt(const TrainedPrompt& prompt, const std::filesystem::path& path);
TrainedPrompt load_prompt(const std::filesystem::path& path);

}  // namespace graphtop
