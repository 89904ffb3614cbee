#include "graphtop/pretrain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "graphtop/rng.hpp"
#include "json_io.hpp"
#include "subgraph_engine.hpp"

namespace graphtop {

void PretrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("PretrainConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("PretrainConfig: lr must be positive");
    if (negatives_per_positive < 1)
        throw std::invalid_argument("PretrainConfig: negatives_per_positive must be >= 1");
    if (!(edge_sample_fraction > 0.0 && edge_sample_fraction <= 1.0))
        throw std::invalid_argument("PretrainConfig: edge_sample_fraction outside (0,1]");
    if (!(margin > 0.0)) throw std::invalid_argument("PretrainConfig: margin must be positive");
    if (hidden_dim < 1) throw std::invalid_argument("PretrainConfig: hidden_dim must be >= 1");
}

std::vector<std::pair<NodeId, NodeId>> sample_negative_pairs(const Graph& graph,
                                                             std::size_t count,
                                                             std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(graph.num_nodes());
    const std::size_t all_pairs = n * (n - 1) / 2;
    if (all_pairs < graph.num_edges() + count)
        throw std::invalid_argument("sample_negative_pairs: graph has only " +
                                    std::to_string(all_pairs - graph.num_edges()) +
                                    " non-edges, requested " + std::to_string(count));

    Rng rng(seed);
    std::set<std::pair<NodeId, NodeId>> chosen;
    std::vector<std::pair<NodeId, NodeId>> out;
    out.reserve(count);
    while (out.size() < count) {
        auto u = static_cast<NodeId>(rng.uniform_int(n));
        auto v = static_cast<NodeId>(rng.uniform_int(n));
        if (u == v) continue;
        if (u > v) std::swap(u, v);
        if (graph.has_edge(u, v)) continue;
        if (!chosen.insert({u, v}).second) continue;
        out.emplace_back(u, v);
    }
    return out;
}

namespace {

/// Sparse symmetric-normalized propagation with self-loops over the full
/// graph, shared by the forward and backward passes (the operator is its own
/// transpose).
DenseMatrix propagate(const Graph& graph, const std::vector<double>& scale,
                      const DenseMatrix& in) {
    const auto n = static_cast<std::size_t>(graph.num_nodes());
    DenseMatrix out(n, in.cols());
    for (std::size_t u = 0; u < n; ++u) {
        auto orow = out.row(u);
        axpy(scale[u] * scale[u], in.row(u), orow);
        for (NodeId g : graph.neighbors(static_cast<NodeId>(u)))
            axpy(scale[u] * scale[static_cast<std::size_t>(g)],
                 in.row(static_cast<std::size_t>(g)), orow);
    }
    return out;
}

}  // namespace

GcnModel pretrain_lp(const Graph& graph, const PretrainConfig& config,
                     const PretrainCallback& on_epoch) {
    config.validate();
    if (graph.num_edges() == 0) throw std::invalid_argument("pretrain_lp: graph has no edges");
    const auto n = static_cast<std::size_t>(graph.num_nodes());
    const auto dh = static_cast<std::size_t>(config.hidden_dim);

    Rng master(config.seed);
    GcnModel model;
    model.layer1_weights = glorot_init(graph.feature_dim(), dh, master);
    model.layer2_weights = glorot_init(dh, dh, master);
    model.activation = Activation::relu;

    std::vector<double> scale(n);
    for (std::size_t v = 0; v < n; ++v)
        scale[v] = 1.0 / std::sqrt(1.0 + static_cast<double>(graph.degree(static_cast<NodeId>(v))));
    const DenseMatrix propagated_features = propagate(graph, scale, graph.features());

    AdamState w1_state(model.layer1_weights.size());
    AdamState w2_state(model.layer2_weights.size());

    const auto& edges = graph.edges();
    std::vector<std::size_t> edge_order(edges.size());
    const auto num_positives = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(config.edge_sample_fraction * static_cast<double>(edges.size()))));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // forward
        DenseMatrix z1 = matmul(propagated_features, model.layer1_weights);
        DenseMatrix relu_in = z1;
        for (double& v : z1.data()) v = v > 0.0 ? v : 0.0;
        const DenseMatrix q = propagate(graph, scale, z1);
        const DenseMatrix h = matmul(q, model.layer2_weights);

        DenseMatrix dh_mat(n, dh);
        double loss = 0.0;
        if (config.mode == PretrainMode::bce) {
            for (std::size_t i = 0; i < edge_order.size(); ++i) edge_order[i] = i;
            if (num_positives < edges.size()) {
                for (std::size_t i = 0; i < num_positives; ++i) {
                    const auto j =
                        i + static_cast<std::size_t>(master.uniform_int(edge_order.size() - i));
                    std::swap(edge_order[i], edge_order[j]);
                }
            }
            const auto negatives = sample_negative_pairs(
                graph, num_positives * static_cast<std::size_t>(config.negatives_per_positive),
                master.bits());
            const double batch =
                static_cast<double>(num_positives + negatives.size());
            auto score_pair = [&](NodeId u, NodeId v, double y) {
                const auto hu = h.row(static_cast<std::size_t>(u));
                const auto hv = h.row(static_cast<std::size_t>(v));
                const double d = dot(hu, hv);
                // -log sigma(d) = softplus(-d); -log(1 - sigma(d)) = softplus(d)
                const double softplus = d > 0.0 ? d + std::log1p(std::exp(-d))
                                                : std::log1p(std::exp(d));
                loss += (y > 0.5 ? softplus - d : softplus) / batch;
                const double delta = (detail::stable_sigmoid(d) - y) / batch;
                axpy(delta, hv, dh_mat.row(static_cast<std::size_t>(u)));
                axpy(delta, hu, dh_mat.row(static_cast<std::size_t>(v)));
            };
            for (std::size_t i = 0; i < num_positives; ++i) {
                const auto [u, v] = edges[edge_order[i]];
                score_pair(u, v, 1.0);
            }
            for (auto [u, v] : negatives) score_pair(u, v, 0.0);
        } else {
            // one (anchor, neighbor, non-neighbor) triple per eligible node
            std::vector<std::array<NodeId, 3>> triples;
            for (std::size_t a = 0; a < n; ++a) {
                const auto anchor = static_cast<NodeId>(a);
                const std::size_t deg = graph.degree(anchor);
                if (deg == 0 || deg == n - 1) continue;
                const auto nb = graph.neighbors(anchor);
                const NodeId pos = nb[master.uniform_int(deg)];
                NodeId neg;
                do {
                    neg = static_cast<NodeId>(master.uniform_int(n));
                } while (neg == anchor || graph.has_edge(anchor, neg));
                triples.push_back({anchor, pos, neg});
            }
            if (triples.empty())
                throw std::runtime_error("pretrain_lp: no usable anchors for triplet mode");
            const double inv = 1.0 / static_cast<double>(triples.size());
            for (auto [a, p, ng] : triples) {
                const auto ha = h.row(static_cast<std::size_t>(a));
                const auto hp = h.row(static_cast<std::size_t>(p));
                const auto hn = h.row(static_cast<std::size_t>(ng));
                const double hinge = config.margin - dot(ha, hp) + dot(ha, hn);
                if (hinge <= 0.0) continue;
                loss += hinge * inv;
                auto da = dh_mat.row(static_cast<std::size_t>(a));
                for (std::size_t k = 0; k < dh; ++k) da[k] += (hn[k] - hp[k]) * inv;
                axpy(-inv, ha, dh_mat.row(static_cast<std::size_t>(p)));
                axpy(inv, ha, dh_mat.row(static_cast<std::size_t>(ng)));
            }
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("pretrain_lp: non-finite loss at epoch " +
                                     std::to_string(epoch));

        // backward: h = propagate(act(P W1)) W2
        DenseMatrix dw2(dh, dh);
        for (std::size_t u = 0; u < n; ++u) {
            const auto qrow = q.row(u);
            const auto drow = dh_mat.row(u);
            for (std::size_t k = 0; k < dh; ++k) {
                if (qrow[k] == 0.0) continue;
                auto out = dw2.row(k);
                axpy(qrow[k], drow, out);
            }
        }
        DenseMatrix dq(n, dh);
        for (std::size_t u = 0; u < n; ++u) {
            const auto drow = dh_mat.row(u);
            auto out = dq.row(u);
            for (std::size_t k = 0; k < dh; ++k)
                out[k] = dot(model.layer2_weights.row(k), drow);
        }
        DenseMatrix dz1 = propagate(graph, scale, dq);
        for (std::size_t i = 0; i < dz1.size(); ++i)
            if (relu_in.data()[i] <= 0.0) dz1.data()[i] = 0.0;
        DenseMatrix dw1(graph.feature_dim(), dh);
        for (std::size_t u = 0; u < n; ++u) {
            const auto prow = propagated_features.row(u);
            const auto drow = dz1.row(u);
            for (std::size_t d = 0; d < prow.size(); ++d) {
                if (prow[d] == 0.0) continue;
                axpy(prow[d], drow, dw1.row(d));
            }
        }

        adam_step(model.layer1_weights.data(), dw1.data(), w1_state, config.lr);
        adam_step(model.layer2_weights.data(), dw2.data(), w2_state, config.lr);
        if (on_epoch) on_epoch(epoch, loss);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Model checkpoint
// ---------------------------------------------------------------------------

namespace {
constexpr int kModelFormatVersion = 1;
}

void save_model(const GcnModel& model, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["activation"] = model.activation == Activation::relu ? "relu" : "identity";
    j["layer1_weights"] = detail::matrix_to_json(model.layer1_weights);
    j["layer2_weights"] = detail::matrix_to_json(model.layer2_weights);

    std::ofstream out(path);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

GcnModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != kModelFormatVersion)
        throw std::runtime_error(path.string() + ": unsupported format_version");

    GcnModel model;
    model.layer1_weights = detail::matrix_from_json(j.at("layer1_weights"), "layer1_weights");
    model.layer2_weights = detail::matrix_from_json(j.at("layer2_weights"), "layer2_weights");
    const auto act = j.at("activation").get<std::string>();
    if (act == "relu")
        model.activation = Activation::relu;
    else if (act == "identity")
        model.activation = Activation::identity;
    else
        throw std::runtime_error(path.string() + ": unknown activation '" + act + "'");
    model.validate();
    return model;
}

}  // namespace graphtop
