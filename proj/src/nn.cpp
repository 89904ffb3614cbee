#include "graphtop/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "graphtop/rng.hpp"

namespace graphtop {

void GcnModel::validate() const {
    if (layer1_weights.cols() != layer2_weights.rows())
        throw std::invalid_argument("GcnModel: layer dimensions do not chain");
    if (!layer1_weights.all_finite() || !layer2_weights.all_finite())
        throw std::invalid_argument("GcnModel: non-finite weights");
}

DenseMatrix normalize_adjacency(const DenseMatrix& soft_adj) {
    const std::size_t m = soft_adj.rows();
    if (soft_adj.cols() != m) throw std::invalid_argument("normalize_adjacency: not square");
    for (std::size_t i = 0; i < m; ++i) {
        if (soft_adj(i, i) != 0.0)
            throw std::invalid_argument("normalize_adjacency: nonzero diagonal");
        for (std::size_t j = i + 1; j < m; ++j) {
            const double v = soft_adj(i, j);
            if (v != soft_adj(j, i))
                throw std::invalid_argument("normalize_adjacency: asymmetric input");
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("normalize_adjacency: entry outside [0, 1]");
        }
    }

    std::vector<double> scale(m);  // (rowsum(S + I))^{-1/2}
    for (std::size_t i = 0; i < m; ++i) {
        double d = 1.0;
        for (std::size_t j = 0; j < m; ++j) d += soft_adj(i, j);
        scale[i] = 1.0 / std::sqrt(d);
    }
    DenseMatrix out(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double t = (i == j ? 1.0 : soft_adj(i, j));
            out(i, j) = t * scale[i] * scale[j];
        }
    }
    return out;
}

DenseMatrix normalize_adjacency_backward(const DenseMatrix& soft_adj,
                                         const DenseMatrix& upstream) {
    const std::size_t m = soft_adj.rows();
    if (upstream.rows() != m || upstream.cols() != m)
        throw std::invalid_argument("normalize_adjacency_backward: shape mismatch");

    std::vector<double> degree(m), scale(m);
    for (std::size_t i = 0; i < m; ++i) {
        double d = 1.0;
        for (std::size_t j = 0; j < m; ++j) d += soft_adj(i, j);
        degree[i] = d;
        scale[i] = 1.0 / std::sqrt(d);
    }

    // c_u collects the degree paths: d_u scales row u and column u of the
    // normalized matrix.
    std::vector<double> c(m, 0.0);
    for (std::size_t u = 0; u < m; ++u) {
        double acc = 0.0;
        for (std::size_t b = 0; b < m; ++b) {
            const double t = (u == b ? 1.0 : soft_adj(u, b));
            if (t == 0.0) continue;
            acc += (upstream(u, b) + upstream(b, u)) * t * scale[b];
        }
        c[u] = acc;
    }

    DenseMatrix out(m, m);
    for (std::size_t u = 0; u < m; ++u) {
        const double ru3 = scale[u] / degree[u];  // d^{-3/2}
        for (std::size_t v = 0; v < m; ++v) {
            if (u == v) continue;
            out(u, v) = upstream(u, v) * scale[u] * scale[v] - 0.5 * ru3 * c[u];
        }
    }
    return out;
}

DenseMatrix gcn_forward(const GcnModel& model, const DenseMatrix& norm_adj,
                        const DenseMatrix& features) {
    model.validate();
    const std::size_t m = norm_adj.rows();
    if (norm_adj.cols() != m || features.rows() != m ||
        features.cols() != model.input_dim())
        throw std::invalid_argument("gcn_forward: shape mismatch");

    DenseMatrix z1 = matmul(norm_adj, matmul(features, model.layer1_weights));
    if (model.activation == Activation::relu)
        for (double& v : z1.data()) v = v > 0.0 ? v : 0.0;
    return matmul(norm_adj, matmul(z1, model.layer2_weights));
}

DenseMatrix embed_full_graph(const GcnModel& model, const Graph& graph) {
    model.validate();
    if (graph.feature_dim() != model.input_dim())
        throw std::invalid_argument("embed_full_graph: feature dim " +
                                    std::to_string(graph.feature_dim()) + " != model input " +
                                    std::to_string(model.input_dim()));
    const auto n = static_cast<std::size_t>(graph.num_nodes());
    std::vector<double> scale(n);
    for (std::size_t v = 0; v < n; ++v)
        scale[v] = 1.0 / std::sqrt(1.0 + static_cast<double>(graph.degree(static_cast<NodeId>(v))));

    auto propagate = [&](const DenseMatrix& in) {
        DenseMatrix out(n, in.cols());
        for (std::size_t u = 0; u < n; ++u) {
            auto orow = out.row(u);
            axpy(scale[u] * scale[u], in.row(u), orow);
            for (NodeId g : graph.neighbors(static_cast<NodeId>(u)))
                axpy(scale[u] * scale[static_cast<std::size_t>(g)],
                     in.row(static_cast<std::size_t>(g)), orow);
        }
        return out;
    };

    DenseMatrix z1 = propagate(matmul(graph.features(), model.layer1_weights));
    if (model.activation == Activation::relu)
        for (double& v : z1.data()) v = v > 0.0 ? v : 0.0;
    return propagate(matmul(z1, model.layer2_weights));
}

namespace {

/// logits, stabilized softmax and loss shared by the two probe entry points.
double probe_forward(const LinearProbe& probe, std::span<const double> h, int label,
                     std::vector<double>& softmax) {
    const std::size_t num_classes = probe.num_classes();
    if (h.size() != probe.input_dim())
        throw std::invalid_argument("probe_loss: representation dim mismatch");
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
        throw std::invalid_argument("probe_loss: label out of range");

    std::vector<double> logits(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        double z = probe.bias[c];
        for (std::size_t d = 0; d < h.size(); ++d) z += h[d] * probe.weights(d, c);
        logits[c] = z;
    }
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    softmax.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        softmax[c] = std::exp(logits[c] - zmax);
        sum += softmax[c];
    }
    for (double& s : softmax) s /= sum;
    return std::log(sum) + zmax - logits[static_cast<std::size_t>(label)];
}

}  // namespace

double probe_loss(const LinearProbe& probe, std::span<const double> h, int label) {
    std::vector<double> softmax;
    return probe_forward(probe, h, label, softmax);
}

double probe_loss_grad(const LinearProbe& probe, std::span<const double> h, int label,
                       ProbeGrads& grads) {
    std::vector<double> softmax;
    const double loss = probe_forward(probe, h, label, softmax);
    const std::size_t num_classes = probe.num_classes();

    grads.d_weights = DenseMatrix(probe.input_dim(), num_classes);
    grads.d_bias.assign(num_classes, 0.0);
    grads.d_h.assign(h.size(), 0.0);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double delta = softmax[c] - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0);
        grads.d_bias[c] = delta;
        for (std::size_t d = 0; d < h.size(); ++d) {
            grads.d_weights(d, c) = h[d] * delta;
            grads.d_h[d] += probe.weights(d, c) * delta;
        }
    }
    return loss;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");

    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

double finite_diff_check(const std::function<double(const std::vector<double>&)>& loss,
                         std::vector<double> params, std::span<const double> analytic,
                         double step, std::size_t max_coords, std::uint64_t seed) {
    if (params.size() != analytic.size())
        throw std::invalid_argument("finite_diff_check: gradient size mismatch");

    std::vector<std::size_t> coords(params.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && max_coords < coords.size()) {
        Rng rng(seed);
        for (std::size_t i = 0; i < max_coords; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.uniform_int(coords.size() - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }

    double max_err = 0.0;
    for (std::size_t i : coords) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = loss(params);
        params[i] = saved - step;
        const double down = loss(params);
        params[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::runtime_error("finite_diff_check: non-finite loss");
        const double fd = (up - down) / (2.0 * step);
        const double err =
            std::abs(fd - analytic[i]) / std::max(1e-8, std::abs(fd) + std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

DenseMatrix glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    DenseMatrix out(rows, cols);
    for (double& v : out.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
    return out;
}

}  // namespace graphtop
