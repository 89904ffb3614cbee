#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "graphtop/matrix.hpp"

namespace graphtop {

using NodeId = std::int32_t;

/// Undirected attributed graph. Immutable after construction: edges are
/// deduplicated, stored once canonically (u < v) and indexed both ways for
/// O(deg) neighbor iteration.
class Graph {
public:
    /// `edges` in any orientation; duplicates and self-loops are rejected.
    /// `labels` may be empty (all unlabeled) or length n with -1 = unlabeled.
    Graph(NodeId num_nodes, DenseMatrix features, std::vector<std::pair<NodeId, NodeId>> edges,
          std::vector<int> labels, int num_classes);

    NodeId num_nodes() const noexcept { return num_nodes_; }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    int num_classes() const noexcept { return num_classes_; }
    std::size_t feature_dim() const noexcept { return features_.cols(); }

    const DenseMatrix& features() const noexcept { return features_; }
    const std::vector<std::pair<NodeId, NodeId>>& edges() const noexcept { return edges_; }
    const std::vector<int>& labels() const noexcept { return labels_; }
    int label(NodeId v) const { return labels_[static_cast<std::size_t>(v)]; }

    std::span<const NodeId> neighbors(NodeId v) const {
        return {adj_index_.data() + adj_offsets_[v], adj_index_.data() + adj_offsets_[v + 1]};
    }
    std::size_t degree(NodeId v) const {
        return static_cast<std::size_t>(adj_offsets_[v + 1] - adj_offsets_[v]);
    }
    bool has_edge(NodeId u, NodeId v) const;

    /// Labeled node ids in ascending order.
    std::vector<NodeId> labeled_nodes() const;

private:
    NodeId num_nodes_ = 0;
    int num_classes_ = 0;
    DenseMatrix features_;
    std::vector<std::pair<NodeId, NodeId>> edges_;  // canonical u < v, sorted
    std::vector<int> labels_;
    std::vector<std::int64_t> adj_offsets_;  // n + 1
    std::vector<NodeId> adj_index_;          // both directions, sorted per node
};

/// rho-hop ego net around a target node, remapped to local indices.
/// The target is always local index 0; remaining nodes follow in BFS order.
struct Subgraph {
    int target_local = 0;
    std::vector<NodeId> local_to_global;
    DenseMatrix features;                  // m x d_x, rows follow local_to_global
    std::vector<std::uint8_t> base_adjacency;  // dense m x m, symmetric 0/1, zero diagonal
    int hop = 0;

    // Derived index over base_adjacency for O(deg) iteration.
    std::vector<std::int64_t> adj_offsets;  // m + 1
    std::vector<int> adj_index;
    std::vector<double> base_degree;  // row sums of base_adjacency

    std::size_t size() const noexcept { return local_to_global.size(); }
    std::uint8_t adj(std::size_t i, std::size_t j) const {
        return base_adjacency[i * size() + j];
    }
    std::span<const int> base_neighbors(std::size_t i) const {
        return {adj_index.data() + adj_offsets[i], adj_index.data() + adj_offsets[i + 1]};
    }
};

/// Contextual stochastic block model with two classes: Gaussian features
/// around a class mean, intra-class edge probability p, inter-class q.
struct CsbmParams {
    NodeId num_nodes = 0;
    std::vector<double> mu1;
    std::vector<double> mu2;
    double intra_prob = 0.0;   // p
    double inter_prob = 0.0;   // q
    double class_balance = 0.5;

    void validate() const;

    /// Means +/- (separation/2) along the first feature axis.
    static CsbmParams with_separation(NodeId n, std::size_t dim, double p, double q,
                                      double separation, double balance = 0.5);
};

struct LabeledSplit {
    std::vector<NodeId> train_nodes;  // k per class
    std::vector<NodeId> test_nodes;   // all remaining labeled nodes
    int shots = 0;
    std::uint64_t seed = 0;
};

Graph load_graph(const std::filesystem::path& directory);
void save_graph(const Graph& graph, const std::filesystem::path& directory);

Graph generate_csbm(const CsbmParams& params, std::uint64_t seed);

Subgraph khop_subgraph(const Graph& graph, NodeId target, int rho);

LabeledSplit sample_k_shot(const Graph& graph, int k, std::uint64_t seed);

}  // namespace graphtop
