#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "graphtop/graph.hpp"
#include "graphtop/matrix.hpp"

namespace graphtop {

enum class Activation { relu, identity };

/// Frozen 2-layer GCN backbone. Bias-free; the inter-layer activation is
/// ReLU except in the linear validation mode.
struct GcnModel {
    DenseMatrix layer1_weights;  // d_x x d_h
    DenseMatrix layer2_weights;  // d_h x d_h
    Activation activation = Activation::relu;

    std::size_t input_dim() const { return layer1_weights.rows(); }
    std::size_t hidden_dim() const { return layer2_weights.cols(); }
    void validate() const;
};

struct LinearProbe {
    DenseMatrix weights;       // d_h x num_classes
    std::vector<double> bias;  // num_classes

    std::size_t input_dim() const { return weights.rows(); }
    std::size_t num_classes() const { return weights.cols(); }
};

/// D^{-1/2} (S + I) D^{-1/2} with D the diagonal of row sums of S + I.
/// Input must be square, symmetric, zero-diagonal with entries in [0, 1].
DenseMatrix normalize_adjacency(const DenseMatrix& soft_adj);

/// Entrywise gradient of a scalar loss w.r.t. soft_adj given the gradient
/// w.r.t. the normalized matrix. Mirrored entries are reported separately;
/// callers treating (i,j)/(j,i) as one variable add the two.
DenseMatrix normalize_adjacency_backward(const DenseMatrix& soft_adj,
                                         const DenseMatrix& upstream);

/// H = norm_adj * act(norm_adj * X * W1) * W2.
DenseMatrix gcn_forward(const GcnModel& model, const DenseMatrix& norm_adj,
                        const DenseMatrix& features);

/// Full-graph embeddings over the hard adjacency (sparse path). Computed once
/// before prompting and reused.
DenseMatrix embed_full_graph(const GcnModel& model, const Graph& graph);

/// Softmax cross-entropy of the probe on one representation.
double probe_loss(const LinearProbe& probe, std::span<const double> h, int label);

struct ProbeGrads {
    DenseMatrix d_weights;
    std::vector<double> d_bias;
    std::vector<double> d_h;
};

/// Loss plus gradients w.r.t. the probe parameters and the input vector.
double probe_loss_grad(const LinearProbe& probe, std::span<const double> h, int label,
                       ProbeGrads& grads);

/// Per-tensor Adam accumulators. One step() call per training step.
struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(std::size_t size = 0)
        : first_moment(size, 0.0), second_moment(size, 0.0) {}
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr);

/// Max relative error between `analytic` and central finite differences of
/// `loss` at `params`. When 0 < max_coords < dim, checks a random subset of
/// coordinates (deterministic per seed).
double finite_diff_check(const std::function<double(const std::vector<double>&)>& loss,
                         std::vector<double> params, std::span<const double> analytic,
                         double step, std::size_t max_coords = 0, std::uint64_t seed = 0);

/// Glorot-uniform matrix, deterministic per rng state.
DenseMatrix glorot_init(std::size_t rows, std::size_t cols, class Rng& rng);

}  // namespace graphtop
