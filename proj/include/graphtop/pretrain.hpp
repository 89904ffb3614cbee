#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "graphtop/graph.hpp"
#include "graphtop/nn.hpp"

namespace graphtop {

enum class PretrainMode { bce, triplet };

struct PretrainConfig {
    PretrainMode mode = PretrainMode::bce;
    int epochs = 200;
    double lr = 0.005;
    int negatives_per_positive = 1;
    double edge_sample_fraction = 1.0;
    double margin = 1.0;  // triplet mode
    int hidden_dim = 128;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Uniformly sampled distinct unordered non-adjacent pairs, no self-pairs.
std::vector<std::pair<NodeId, NodeId>> sample_negative_pairs(const Graph& graph,
                                                             std::size_t count,
                                                             std::uint64_t seed);

using PretrainCallback = std::function<void(int epoch, double loss)>;

/// Self-supervised link prediction over the intact graph. bce mode scores
/// sampled edges against matched negatives with binary cross-entropy on
/// sigma(h_u . h_v); triplet mode uses a margin hinge per anchor node.
GcnModel pretrain_lp(const Graph& graph, const PretrainConfig& config,
                     const PretrainCallback& on_epoch = {});

void save_model(const GcnModel& model, const std::filesystem::path& path);
GcnModel load_model(const std::filesystem::path& path);

}  // namespace graphtop
