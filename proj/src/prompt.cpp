#include "graphtop/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json_io.hpp"
#include "parallel.hpp"
#include "subgraph_engine.hpp"

namespace graphtop {

using detail::EngineContext;
using detail::TargetResult;

Projector Projector::init(std::size_t embed_dim, std::size_t hidden_dim, std::uint64_t seed) {
    Rng rng(seed);
    Projector p;
    p.w1 = glorot_init(embed_dim, hidden_dim, rng);
    p.w2 = glorot_init(hidden_dim, 1, rng);
    return p;
}

void PromptConfig::validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0)
        throw std::invalid_argument("PromptConfig: negative lambda");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("PromptConfig: gamma outside (0,1)");
    if (epochs < 1) throw std::invalid_argument("PromptConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("PromptConfig: lr must be positive");
    if (rho < 1) throw std::invalid_argument("PromptConfig: rho must be >= 1");
    if (!(tau_floor > 0.0 && tau_floor <= 1.0))
        throw std::invalid_argument("PromptConfig: tau_floor outside (0,1]");
    if (!(prob_clamp > 0.0 && prob_clamp < 0.5))
        throw std::invalid_argument("PromptConfig: prob_clamp outside (0,0.5)");
    if (projector_hidden < 1) throw std::invalid_argument("PromptConfig: projector_hidden < 1");
}

double projector_prob(const Projector& projector, std::span<const double> h_i,
                      std::span<const double> h_j, double clamp) {
    if (h_i.size() != projector.input_dim() || h_j.size() != h_i.size())
        throw std::invalid_argument("projector_prob: dimension mismatch");
    const std::size_t dp = projector.hidden_dim();
    double z2 = 0.0;
    for (std::size_t k = 0; k < dp; ++k) {
        double z1 = 0.0;
        for (std::size_t d = 0; d < h_i.size(); ++d)
            z1 += (h_i[d] + h_j[d]) * projector.w1(d, k);
        if (z1 > 0.0) z2 += z1 * projector.w2(k, 0);
    }
    return std::clamp(detail::stable_sigmoid(z2), clamp, 1.0 - clamp);
}

double soft_edge_selector(double p, double g1, double g2, double tau) {
    return detail::stable_sigmoid((g1 - g2 + std::log(p / (1.0 - p))) / tau);
}

double temperature(int epoch, int total_epochs, double floor) {
    const double linear =
        0.97 * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs)) + 0.03;
    return std::max(linear, floor);
}

double gumbel_edge_probability(double p, std::size_t samples, std::uint64_t seed) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("gumbel_edge_probability: p outside (0,1)");
    Rng rng(seed);
    const double logit = std::log(p / (1.0 - p));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        const double g1 = rng.gumbel();
        const double g2 = rng.gumbel();
        if (g1 - g2 + logit >= 0.0) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples);
}

PromptedSubgraph build_prompted_subgraph(const Subgraph& sub, const Projector& projector,
                                         const DenseMatrix& embeddings, double tau, Rng& rng,
                                         RewireScope scope, double clamp) {
    const std::size_t m = sub.size();
    PromptedSubgraph out;
    out.base = &sub;
    out.soft_adjacency = DenseMatrix(m, m);
    if (scope == RewireScope::target_only)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                out.soft_adjacency(i, j) = static_cast<double>(sub.adj(i, j));

    if (scope == RewireScope::target_only) {
        for (int j = 1; j < static_cast<int>(m); ++j) out.pairs.emplace_back(0, j);
    } else {
        for (int a = 0; a < static_cast<int>(m); ++a)
            for (int b = a + 1; b < static_cast<int>(m); ++b) out.pairs.emplace_back(a, b);
    }

    out.probs.reserve(out.pairs.size());
    for (auto [a, b] : out.pairs) {
        const auto hi = embeddings.row(static_cast<std::size_t>(sub.local_to_global[
            static_cast<std::size_t>(a)]));
        const auto hj = embeddings.row(static_cast<std::size_t>(sub.local_to_global[
            static_cast<std::size_t>(b)]));
        const double p = projector_prob(projector, hi, hj, clamp);
        const double g1 = rng.gumbel();
        const double g2 = rng.gumbel();
        const double s = soft_edge_selector(p, g1, g2, tau);
        out.probs.push_back(p);
        out.soft_adjacency(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) = s;
        out.soft_adjacency(static_cast<std::size_t>(b), static_cast<std::size_t>(a)) = s;
    }
    return out;
}

namespace {

struct TuneWorkspace {
    std::vector<Subgraph> subgraphs;
    std::vector<EngineContext> contexts;
    std::vector<int> labels;
    std::size_t total_pairs = 0;

    TuneWorkspace(const GcnModel& model, const Graph& graph, const LabeledSplit& split,
                  const DenseMatrix& embeddings, const PromptConfig& config) {
        if (split.train_nodes.empty())
            throw std::invalid_argument("prompt tuning: empty train split");
        subgraphs.reserve(split.train_nodes.size());
        labels.reserve(split.train_nodes.size());
        for (NodeId v : split.train_nodes) {
            const int y = graph.label(v);
            if (y < 0)
                throw std::invalid_argument("prompt tuning: unlabeled train node " +
                                            std::to_string(v));
            labels.push_back(y);
            subgraphs.push_back(khop_subgraph(graph, v, config.rho));
        }
        contexts.reserve(subgraphs.size());
        for (const auto& sub : subgraphs) {
            contexts.emplace_back(sub, model, embeddings, config.rewire_scope,
                                  config.prob_clamp);
            total_pairs += contexts.back().pairs.size();
        }
    }
};

struct ReducedObjective {
    EpochStats stats;
    DenseMatrix d_w1, d_w2, d_probe_w;
    std::vector<double> d_probe_b;
};

/// One full-batch evaluation over the train targets; per-target results are
/// reduced in split order so threading never changes the bits.
ReducedObjective evaluate_objective(const TuneWorkspace& ws, const Projector& projector,
                                    const LinearProbe& probe, double tau,
                                    const std::vector<std::vector<double>>& noise,
                                    const PromptConfig& config, bool want_grads, int threads) {
    const std::size_t n = ws.contexts.size();
    std::vector<TargetResult> results(n);
    detail::parallel_for(n, threads, [&](std::size_t i) {
        detail::eval_target(ws.contexts[i], projector, probe, ws.labels[i], tau, noise[i],
                            config.lambda1, config.lambda2, config.gamma, want_grads,
                            /*dense_path=*/false, results[i]);
    });

    ReducedObjective red;
    red.stats.tau = tau;
    if (want_grads) {
        red.d_w1 = DenseMatrix(projector.w1.rows(), projector.w1.cols());
        red.d_w2 = DenseMatrix(projector.w2.rows(), projector.w2.cols());
        red.d_probe_w = DenseMatrix(probe.weights.rows(), probe.weights.cols());
        red.d_probe_b.assign(probe.bias.size(), 0.0);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = results[i];
        red.stats.l_p += r.l_p * inv_n;
        red.stats.l_e += r.l_e * inv_n;
        red.stats.l_s += r.l_s * inv_n;
        if (want_grads) {
            axpy(inv_n, r.d_w1.data(), std::span<double>(red.d_w1.data()));
            axpy(inv_n, r.d_w2.data(), std::span<double>(red.d_w2.data()));
            axpy(inv_n, r.d_probe_weights.data(), std::span<double>(red.d_probe_w.data()));
            axpy(inv_n, r.d_probe_bias, std::span<double>(red.d_probe_b));
        }
    }
    red.stats.total =
        red.stats.l_p + config.lambda1 * red.stats.l_e + config.lambda2 * red.stats.l_s;
    return red;
}

std::vector<std::vector<double>> draw_noise(const TuneWorkspace& ws, Rng& rng) {
    std::vector<std::vector<double>> noise(ws.contexts.size());
    for (std::size_t i = 0; i < ws.contexts.size(); ++i) {
        noise[i].resize(2 * ws.contexts[i].pairs.size());
        for (double& g : noise[i]) g = rng.gumbel();
    }
    return noise;
}

}  // namespace

ObjectiveResult prompt_objective(const GcnModel& model, const LinearProbe& probe,
                                 const Projector& projector, const LabeledSplit& split,
                                 const Graph& graph, const DenseMatrix& embeddings, double tau,
                                 const PromptConfig& config, Rng& rng) {
    config.validate();
    if (!(tau > 0.0)) throw std::invalid_argument("prompt_objective: tau must be positive");
    TuneWorkspace ws(model, graph, split, embeddings, config);
    const auto noise = draw_noise(ws, rng);
    ReducedObjective red =
        evaluate_objective(ws, projector, probe, tau, noise, config, /*want_grads=*/true, 1);

    ObjectiveResult out;
    out.l_p = red.stats.l_p;
    out.l_e = red.stats.l_e;
    out.l_s = red.stats.l_s;
    out.total = red.stats.total;
    out.d_w1 = std::move(red.d_w1);
    out.d_w2 = std::move(red.d_w2);
    out.d_probe_weights = std::move(red.d_probe_w);
    out.d_probe_bias = std::move(red.d_probe_b);
    if (!std::isfinite(out.total)) throw std::runtime_error("prompt_objective: non-finite loss");
    return out;
}

TrainedPrompt tune_prompt(const GcnModel& model, const Graph& graph, const LabeledSplit& split,
                          const PromptConfig& config, const EpochCallback& on_epoch,
                          int threads) {
    config.validate();
    model.validate();

    const DenseMatrix embeddings = embed_full_graph(model, graph);
    TuneWorkspace ws(model, graph, split, embeddings, config);

    Rng master(config.seed);
    const std::uint64_t projector_seed = master.bits();
    const std::uint64_t noise_seed = master.bits();

    TrainedPrompt prompt;
    prompt.config = config;
    prompt.shots = split.shots;
    prompt.projector = Projector::init(model.hidden_dim(),
                                       static_cast<std::size_t>(config.projector_hidden),
                                       projector_seed);
    prompt.probe.weights = DenseMatrix(model.hidden_dim(),
                                       static_cast<std::size_t>(graph.num_classes()));
    prompt.probe.bias.assign(static_cast<std::size_t>(graph.num_classes()), 0.0);

    AdamState w1_state(prompt.projector.w1.size());
    AdamState w2_state(prompt.projector.w2.size());
    AdamState probe_w_state(prompt.probe.weights.size());
    AdamState probe_b_state(prompt.probe.bias.size());

    Rng noise_rng(noise_seed);
    prompt.log.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const double tau = temperature(epoch, config.epochs, config.tau_floor);
        const auto noise = draw_noise(ws, noise_rng);
        ReducedObjective red = evaluate_objective(ws, prompt.projector, prompt.probe, tau, noise,
                                                  config, /*want_grads=*/true, threads);
        if (!std::isfinite(red.stats.total))
            throw std::runtime_error("tune_prompt: non-finite loss at epoch " +
                                     std::to_string(epoch));

        adam_step(prompt.probe.weights.data(), red.d_probe_w.data(), probe_w_state, config.lr);
        adam_step(prompt.probe.bias, red.d_probe_b, probe_b_state, config.lr);
        adam_step(prompt.projector.w1.data(), red.d_w1.data(), w1_state, config.lr);
        adam_step(prompt.projector.w2.data(), red.d_w2.data(), w2_state, config.lr);

        prompt.log.push_back(red.stats);
        if (on_epoch) on_epoch(epoch, red.stats);
    }
    return prompt;
}

namespace {

Prediction infer_with_embeddings(const GcnModel& model, const TrainedPrompt& prompt,
                                 const Graph& graph, const DenseMatrix& embeddings,
                                 NodeId target) {
    const Subgraph sub = khop_subgraph(graph, target, prompt.config.rho);
    EngineContext ctx(sub, model, embeddings, prompt.config.rewire_scope,
                      prompt.config.prob_clamp);
    auto prob_fn = [&](NodeId a, NodeId b) {
        return projector_prob(prompt.projector, embeddings.row(static_cast<std::size_t>(a)),
                              embeddings.row(static_cast<std::size_t>(b)),
                              prompt.config.prob_clamp);
    };
    Prediction pred;
    pred.class_scores = detail::infer_target_scores(ctx, prompt.probe, prob_fn);
    pred.predicted_class = static_cast<int>(
        std::max_element(pred.class_scores.begin(), pred.class_scores.end()) -
        pred.class_scores.begin());
    return pred;
}

}  // namespace

Prediction infer_node(const GcnModel& model, const TrainedPrompt& prompt, const Graph& graph,
                      NodeId target) {
    if (target < 0 || target >= graph.num_nodes())
        throw std::out_of_range("infer_node: target out of range");
    const DenseMatrix embeddings = embed_full_graph(model, graph);
    return infer_with_embeddings(model, prompt, graph, embeddings, target);
}

double evaluate(const GcnModel& model, const TrainedPrompt& prompt, const Graph& graph,
                std::span<const NodeId> nodes) {
    if (nodes.empty()) throw std::invalid_argument("evaluate: empty node list");
    for (NodeId v : nodes)
        if (graph.label(v) < 0)
            throw std::invalid_argument("evaluate: unlabeled node " + std::to_string(v));

    const DenseMatrix embeddings = embed_full_graph(model, graph);
    std::vector<int> predictions(nodes.size());
    detail::parallel_for(nodes.size(), 0, [&](std::size_t i) {
        predictions[i] =
            infer_with_embeddings(model, prompt, graph, embeddings, nodes[i]).predicted_class;
    });
    std::size_t correct = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (predictions[i] == graph.label(nodes[i])) ++correct;
    return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

LinearProbe train_linear_probe(const GcnModel& model, const Graph& graph,
                               const LabeledSplit& split, int epochs, double lr,
                               std::uint64_t seed) {
    if (epochs < 1) throw std::invalid_argument("train_linear_probe: epochs must be >= 1");
    if (split.train_nodes.empty())
        throw std::invalid_argument("train_linear_probe: empty train split");
    const DenseMatrix embeddings = embed_full_graph(model, graph);

    Rng rng(seed);
    LinearProbe probe;
    probe.weights = glorot_init(model.hidden_dim(), static_cast<std::size_t>(graph.num_classes()),
                                rng);
    probe.bias.assign(static_cast<std::size_t>(graph.num_classes()), 0.0);

    AdamState w_state(probe.weights.size());
    AdamState b_state(probe.bias.size());
    const double inv_n = 1.0 / static_cast<double>(split.train_nodes.size());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        DenseMatrix dw(probe.weights.rows(), probe.weights.cols());
        std::vector<double> db(probe.bias.size(), 0.0);
        for (NodeId v : split.train_nodes) {
            ProbeGrads g;
            probe_loss_grad(probe, embeddings.row(static_cast<std::size_t>(v)), graph.label(v),
                            g);
            axpy(inv_n, g.d_weights.data(), std::span<double>(dw.data()));
            axpy(inv_n, g.d_bias, std::span<double>(db));
        }
        adam_step(probe.weights.data(), dw.data(), w_state, lr);
        adam_step(probe.bias, db, b_state, lr);
    }
    return probe;
}

// ---------------------------------------------------------------------------
// Prompt checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr int kPromptFormatVersion = 1;

std::string scope_name(RewireScope scope) {
    return scope == RewireScope::target_only ? "target_only" : "all_pairs";
}

RewireScope scope_from_name(const std::string& name) {
    if (name == "target_only") return RewireScope::target_only;
    if (name == "all_pairs") return RewireScope::all_pairs;
    throw std::runtime_error("prompt checkpoint: unknown rewire_scope '" + name + "'");
}

}  // namespace

void save_prompt(const TrainedPrompt& prompt, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format_version"] = kPromptFormatVersion;
    j["projector"] = {{"w1", detail::matrix_to_json(prompt.projector.w1)},
                      {"w2", detail::matrix_to_json(prompt.projector.w2)}};
    j["probe"] = {{"weights", detail::matrix_to_json(prompt.probe.weights)},
                  {"bias", prompt.probe.bias}};
    j["config"] = {{"lambda1", prompt.config.lambda1},
                   {"lambda2", prompt.config.lambda2},
                   {"gamma", prompt.config.gamma},
                   {"epochs", prompt.config.epochs},
                   {"lr", prompt.config.lr},
                   {"rho", prompt.config.rho},
                   {"tau_floor", prompt.config.tau_floor},
                   {"prob_clamp", prompt.config.prob_clamp},
                   {"seed", prompt.config.seed},
                   {"rewire_scope", scope_name(prompt.config.rewire_scope)},
                   {"projector_hidden", prompt.config.projector_hidden}};
    j["shots"] = prompt.shots;

    std::ofstream out(path);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

TrainedPrompt load_prompt(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != kPromptFormatVersion)
        throw std::runtime_error(path.string() + ": unsupported format_version");

    TrainedPrompt prompt;
    prompt.projector.w1 = detail::matrix_from_json(j.at("projector").at("w1"), "projector.w1");
    prompt.projector.w2 = detail::matrix_from_json(j.at("projector").at("w2"), "projector.w2");
    prompt.probe.weights = detail::matrix_from_json(j.at("probe").at("weights"), "probe.weights");
    prompt.probe.bias = j.at("probe").at("bias").get<std::vector<double>>();
    const auto& c = j.at("config");
    prompt.config.lambda1 = c.at("lambda1").get<double>();
    prompt.config.lambda2 = c.at("lambda2").get<double>();
    prompt.config.gamma = c.at("gamma").get<double>();
    prompt.config.epochs = c.at("epochs").get<int>();
    prompt.config.lr = c.at("lr").get<double>();
    prompt.config.rho = c.at("rho").get<int>();
    prompt.config.tau_floor = c.at("tau_floor").get<double>();
    prompt.config.prob_clamp = c.at("prob_clamp").get<double>();
    prompt.config.seed = c.at("seed").get<std::uint64_t>();
    prompt.config.rewire_scope = scope_from_name(c.at("rewire_scope").get<std::string>());
    prompt.config.projector_hidden = c.at("projector_hidden").get<int>();
    prompt.shots = j.at("shots").get<int>();

    if (prompt.projector.w1.cols() != prompt.projector.w2.rows() ||
        prompt.projector.w2.cols() != 1)
        throw std::runtime_error(path.string() + ": projector shapes do not chain");
    if (prompt.probe.bias.size() != prompt.probe.weights.cols())
        throw std::runtime_error(path.string() + ": probe bias length mismatch");
    return prompt;
}

}  // namespace graphtop
