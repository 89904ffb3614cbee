#pragma once

// Per-target compute engine behind the prompt objective. Two code paths
// produce identical losses and gradients:
//   - a sparse path for target_only rewiring, which never materializes the
//     soft adjacency (the base structure is fixed; only row/column 0 varies),
//   - a dense reference path that builds the full soft adjacency, used for
//     all_pairs rewiring and as checking ground truth in tests.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "graphtop/graph.hpp"
#include "graphtop/matrix.hpp"
#include "graphtop/nn.hpp"
#include "graphtop/prompt.hpp"

namespace graphtop::detail {

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Per-subgraph state reused across epochs: candidate pairs, the layer-1
/// input product, and pointers into the frozen full-graph embeddings.
struct EngineContext {
    const Subgraph* sub = nullptr;
    const GcnModel* model = nullptr;
    const DenseMatrix* embeddings = nullptr;  // full-graph H
    RewireScope scope = RewireScope::target_only;
    double clamp = 1e-6;

    DenseMatrix m1;                          // X_sub * W1, m x d_h
    std::vector<std::pair<int, int>> pairs;  // local indices, a < b

    EngineContext() = default;
    EngineContext(const Subgraph& sub, const GcnModel& model, const DenseMatrix& embeddings,
                  RewireScope scope, double clamp);

    std::span<const double> embedding(int local) const {
        return embeddings->row(static_cast<std::size_t>(sub->local_to_global[
            static_cast<std::size_t>(local)]));
    }
};

struct TargetResult {
    double l_p = 0.0;
    double l_e = 0.0;
    double l_s = 0.0;
    DenseMatrix d_w1;   // projector grads of l_p + lambda1 l_e + lambda2 l_s
    DenseMatrix d_w2;
    DenseMatrix d_probe_weights;  // probe grads of l_p
    std::vector<double> d_probe_bias;
};

/// Evaluate one target's loss terms (and gradients when requested).
/// `noise` holds (g1, g2) per candidate pair. `dense_path` forces the dense
/// reference computation for target_only scope.
void eval_target(const EngineContext& ctx, const Projector& projector, const LinearProbe& probe,
                 int label, double tau, std::span<const double> noise, double lambda1,
                 double lambda2, double gamma, bool want_grads, bool dense_path,
                 TargetResult& out);

/// Deterministic hard-rewired class scores for inference. `prob_fn` maps a
/// global node pair to a rewiring probability; an edge exists iff prob >= 0.5.
std::vector<double> infer_target_scores(
    const EngineContext& ctx, const LinearProbe& probe,
    const std::function<double(NodeId, NodeId)>& prob_fn);

/// Candidate probabilities of the context's pairs under a projector.
std::vector<double> candidate_probs(const EngineContext& ctx, const Projector& projector);

}  // namespace graphtop::detail
