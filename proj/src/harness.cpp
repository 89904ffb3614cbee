#include "graphtop/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <new>
#include <numeric>
#include <stdexcept>

#include "json_io.hpp"
#include "parallel.hpp"
#include "subgraph_engine.hpp"

namespace graphtop {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::pair<double, double> mean_and_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace

void ExperimentConfig::validate() const {
    if (!graph_dir.has_value() && !csbm.has_value())
        throw std::invalid_argument("ExperimentConfig: need a graph directory or csbm params");
    if (graph_dir.has_value() && csbm.has_value())
        throw std::invalid_argument("ExperimentConfig: graph directory and csbm are exclusive");
    if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: need at least one seed");
    if (shots < 1) throw std::invalid_argument("ExperimentConfig: shots must be >= 1");
    if (probe_epochs < 1) throw std::invalid_argument("ExperimentConfig: probe_epochs < 1");
    if (csbm.has_value()) csbm->validate();
    pretrain.validate();
    prompt.validate();
}

RunResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    RunResult result;
    result.config = config;

    for (std::size_t si = 0; si < config.seeds.size(); ++si) {
        const std::uint64_t seed = config.seeds[si];
        try {
            PhaseTimings timing;
            const Graph graph = config.graph_dir.has_value()
                                    ? load_graph(*config.graph_dir)
                                    : generate_csbm(*config.csbm, seed);

            double t0 = now_seconds();
            GcnModel model;
            if (config.model_path.has_value()) {
                model = load_model(*config.model_path);
            } else {
                PretrainConfig pc = config.pretrain;
                pc.seed = seed;
                model = pretrain_lp(graph, pc);
            }
            timing.pretrain_seconds = now_seconds() - t0;

            const LabeledSplit split = sample_k_shot(graph, config.shots, seed);

            t0 = now_seconds();
            PromptConfig prompt_config = config.prompt;
            prompt_config.seed = seed;
            const TrainedPrompt prompt = tune_prompt(model, graph, split, prompt_config);
            timing.tune_seconds = now_seconds() - t0;

            t0 = now_seconds();
            result.graphtop_accuracies.push_back(
                evaluate(model, prompt, graph, split.test_nodes));
            if (config.baseline_linear_probe) {
                const LinearProbe probe = train_linear_probe(
                    model, graph, split, config.probe_epochs, config.prompt.lr, seed);
                const DenseMatrix h = embed_full_graph(model, graph);
                std::size_t correct = 0;
                for (NodeId v : split.test_nodes) {
                    const auto row = h.row(static_cast<std::size_t>(v));
                    std::vector<double> scores(probe.num_classes());
                    for (std::size_t c = 0; c < scores.size(); ++c) {
                        double z = probe.bias[c];
                        for (std::size_t d = 0; d < row.size(); ++d)
                            z += row[d] * probe.weights(d, c);
                        scores[c] = z;
                    }
                    const int pred = static_cast<int>(
                        std::max_element(scores.begin(), scores.end()) - scores.begin());
                    if (pred == graph.label(v)) ++correct;
                }
                result.linear_probe_accuracies.push_back(
                    static_cast<double>(correct) / static_cast<double>(split.test_nodes.size()));
            }
            timing.eval_seconds = now_seconds() - t0;
            result.timings.push_back(timing);
        } catch (const std::exception& e) {
            throw std::runtime_error("run_experiment: seed index " + std::to_string(si) +
                                     " (seed " + std::to_string(seed) + ") failed: " + e.what());
        }
    }

    std::tie(result.graphtop_mean, result.graphtop_std) =
        mean_and_std(result.graphtop_accuracies);
    std::tie(result.linear_probe_mean, result.linear_probe_std) =
        mean_and_std(result.linear_probe_accuracies);
    return result;
}

// ---------------------------------------------------------------------------
// Experiment config / result JSON
// ---------------------------------------------------------------------------

namespace {

constexpr int kResultFormatVersion = 1;

PretrainMode pretrain_mode_from_name(const std::string& name) {
    if (name == "bce") return PretrainMode::bce;
    if (name == "triplet") return PretrainMode::triplet;
    throw std::runtime_error("experiment config: unknown pretrain mode '" + name + "'");
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("experiment config: ") + e.what());
    }

    ExperimentConfig config;
    if (j.contains("graph_dir")) config.graph_dir = j["graph_dir"].get<std::string>();
    if (j.contains("csbm")) {
        const auto& c = j["csbm"];
        config.csbm = CsbmParams::with_separation(
            c.at("num_nodes").get<NodeId>(), c.at("feature_dim").get<std::size_t>(),
            c.at("intra_prob").get<double>(), c.at("inter_prob").get<double>(),
            c.at("mu_separation").get<double>(),
            c.value("class_balance", 0.5));
    }
    if (j.contains("model_path")) config.model_path = j["model_path"].get<std::string>();
    if (j.contains("pretrain")) {
        const auto& p = j["pretrain"];
        if (p.contains("mode"))
            config.pretrain.mode = pretrain_mode_from_name(p["mode"].get<std::string>());
        config.pretrain.epochs = p.value("epochs", config.pretrain.epochs);
        config.pretrain.lr = p.value("lr", config.pretrain.lr);
        config.pretrain.negatives_per_positive =
            p.value("negatives_per_positive", config.pretrain.negatives_per_positive);
        config.pretrain.edge_sample_fraction =
            p.value("edge_sample_fraction", config.pretrain.edge_sample_fraction);
        config.pretrain.margin = p.value("margin", config.pretrain.margin);
        config.pretrain.hidden_dim = p.value("hidden_dim", config.pretrain.hidden_dim);
    }
    if (j.contains("prompt")) {
        const auto& p = j["prompt"];
        config.prompt.lambda1 = p.value("lambda1", config.prompt.lambda1);
        config.prompt.lambda2 = p.value("lambda2", config.prompt.lambda2);
        config.prompt.gamma = p.value("gamma", config.prompt.gamma);
        config.prompt.epochs = p.value("epochs", config.prompt.epochs);
        config.prompt.lr = p.value("lr", config.prompt.lr);
        config.prompt.rho = p.value("rho", config.prompt.rho);
        config.prompt.tau_floor = p.value("tau_floor", config.prompt.tau_floor);
        config.prompt.prob_clamp = p.value("prob_clamp", config.prompt.prob_clamp);
        config.prompt.projector_hidden =
            p.value("projector_hidden", config.prompt.projector_hidden);
        if (p.contains("rewire_scope")) {
            const auto scope = p["rewire_scope"].get<std::string>();
            if (scope == "target_only")
                config.prompt.rewire_scope = RewireScope::target_only;
            else if (scope == "all_pairs")
                config.prompt.rewire_scope = RewireScope::all_pairs;
            else
                throw std::runtime_error("experiment config: unknown rewire_scope '" + scope +
                                         "'");
        }
    }
    config.shots = j.value("shots", config.shots);
    if (j.contains("seeds")) config.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("baselines"))
        config.baseline_linear_probe = j["baselines"].value("linear_probe", true);
    config.probe_epochs = j.value("probe_epochs", config.probe_epochs);
    return config;
}

std::string run_result_to_json(const RunResult& result) {
    nlohmann::json j;
    j["format_version"] = kResultFormatVersion;
    j["graphtop"] = {{"accuracies", result.graphtop_accuracies},
                     {"mean", result.graphtop_mean},
                     {"std", result.graphtop_std}};
    if (!result.linear_probe_accuracies.empty()) {
        j["linear_probe"] = {{"accuracies", result.linear_probe_accuracies},
                             {"mean", result.linear_probe_mean},
                             {"std", result.linear_probe_std}};
    }
    nlohmann::json config;
    config["shots"] = result.config.shots;
    config["seeds"] = result.config.seeds;
    config["prompt"] = {{"lambda1", result.config.prompt.lambda1},
                        {"lambda2", result.config.prompt.lambda2},
                        {"gamma", result.config.prompt.gamma},
                        {"epochs", result.config.prompt.epochs},
                        {"lr", result.config.prompt.lr},
                        {"rho", result.config.prompt.rho},
                        {"projector_hidden", result.config.prompt.projector_hidden}};
    if (result.config.graph_dir.has_value())
        config["graph_dir"] = result.config.graph_dir->string();
    if (result.config.csbm.has_value()) {
        const auto& c = *result.config.csbm;
        config["csbm"] = {{"num_nodes", c.num_nodes},
                          {"intra_prob", c.intra_prob},
                          {"inter_prob", c.inter_prob},
                          {"feature_dim", c.mu1.size()}};
    }
    if (result.config.model_path.has_value())
        config["model_path"] = result.config.model_path->string();
    else
        config["pretrain"] = {{"mode", result.config.pretrain.mode == PretrainMode::bce
                                           ? "bce"
                                           : "triplet"},
                              {"epochs", result.config.pretrain.epochs},
                              {"hidden_dim", result.config.pretrain.hidden_dim}};
    j["config"] = std::move(config);
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Theorem validators
// ---------------------------------------------------------------------------

Theorem1Report verify_theorem1(const std::vector<double>& probabilities, std::size_t samples,
                               std::uint64_t seed) {
    Theorem1Report report;
    report.samples = samples;
    report.all_pass = true;
    Rng master(seed);
    for (double p : probabilities) {
        Theorem1Row row;
        row.p = p;
        row.estimate = gumbel_edge_probability(p, samples, master.bits());
        row.standard_error = std::sqrt(p * (1.0 - p) / static_cast<double>(samples));
        row.pass = std::abs(row.estimate - p) <= 3.0 * row.standard_error;
        report.all_pass = report.all_pass && row.pass;
        report.rows.push_back(row);
    }
    return report;
}

Theorem2Report verify_theorem2(const CsbmParams& params, std::uint64_t seed) {
    params.validate();
    if (params.intra_prob == params.inter_prob)
        throw std::invalid_argument("verify_theorem2: ratio undefined at p=q");

    const Graph graph = generate_csbm(params, seed);
    const auto n = static_cast<std::size_t>(graph.num_nodes());
    const std::size_t dim = graph.feature_dim();

    // The separation argument is about plain neighborhood averaging (the
    // weight matrices are absorbed by the linear classifier), so both layers
    // aggregate by neighbor mean without a self term.
    auto neighbor_mean = [&](const DenseMatrix& in) {
        DenseMatrix out(n, in.cols());
        for (std::size_t u = 0; u < n; ++u) {
            const auto nb = graph.neighbors(static_cast<NodeId>(u));
            auto orow = out.row(u);
            if (nb.empty()) {
                std::copy(in.row(u).begin(), in.row(u).end(), orow.begin());
                continue;
            }
            for (NodeId v : nb) axpy(1.0, in.row(static_cast<std::size_t>(v)), orow);
            for (double& x : orow) x /= static_cast<double>(nb.size());
        }
        return out;
    };

    const DenseMatrix h1 = neighbor_mean(graph.features());
    const DenseMatrix h2 = neighbor_mean(h1);

    auto centroid_distance = [&](const DenseMatrix& h) {
        std::vector<double> c0(dim, 0.0), c1(dim, 0.0);
        std::size_t n0 = 0, n1 = 0;
        for (std::size_t v = 0; v < n; ++v) {
            if (graph.label(static_cast<NodeId>(v)) == 0) {
                axpy(1.0, h.row(v), std::span<double>(c0));
                ++n0;
            } else {
                axpy(1.0, h.row(v), std::span<double>(c1));
                ++n1;
            }
        }
        double ss = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = c0[d] / static_cast<double>(n0) - c1[d] / static_cast<double>(n1);
            ss += diff * diff;
        }
        return std::sqrt(ss);
    };

    // Oracle rewiring: each node's layer-2 neighborhood becomes exactly the
    // same-class nodes within its 2-hop ball (the p'=1, q'=0 construction).
    DenseMatrix h2_rewired(n, dim);
    {
        std::vector<std::uint8_t> in_ball(n, 0);
        std::vector<NodeId> touched;
        for (std::size_t u = 0; u < n; ++u) {
            touched.clear();
            const auto mark = [&](NodeId w) {
                if (!in_ball[static_cast<std::size_t>(w)]) {
                    in_ball[static_cast<std::size_t>(w)] = 1;
                    touched.push_back(w);
                }
            };
            for (NodeId v : graph.neighbors(static_cast<NodeId>(u))) {
                mark(v);
                for (NodeId w : graph.neighbors(v)) mark(w);
            }
            auto orow = h2_rewired.row(u);
            const int label = graph.label(static_cast<NodeId>(u));
            std::size_t count = 0;
            for (NodeId w : touched) {
                if (w != static_cast<NodeId>(u) && graph.label(w) == label) {
                    axpy(1.0, h1.row(static_cast<std::size_t>(w)), orow);
                    ++count;
                }
            }
            if (count == 0)
                std::copy(h1.row(u).begin(), h1.row(u).end(), orow.begin());
            else
                for (double& x : orow) x /= static_cast<double>(count);
            for (NodeId w : touched) in_ball[static_cast<std::size_t>(w)] = 0;
        }
    }

    Theorem2Report report;
    report.dist_empirical = centroid_distance(h2);
    report.rewired_dist_empirical = centroid_distance(h2_rewired);
    report.ratio_empirical = report.rewired_dist_empirical / report.dist_empirical;

    double mu_distance = 0.0;
    for (std::size_t d = 0; d < params.mu1.size(); ++d)
        mu_distance += (params.mu1[d] - params.mu2[d]) * (params.mu1[d] - params.mu2[d]);
    mu_distance = std::sqrt(mu_distance);
    const double p = params.intra_prob, q = params.inter_prob;
    report.dist_theoretical = ((p - q) * (p - q)) / ((p + q) * (p + q)) * mu_distance;
    report.ratio_theoretical = (p + q) / std::abs(p - q);
    return report;
}

// ---------------------------------------------------------------------------
// Figure data exports
// ---------------------------------------------------------------------------

std::vector<std::vector<double>> train_target_probs(const GcnModel& model,
                                                    const TrainedPrompt& prompt,
                                                    const Graph& graph,
                                                    const LabeledSplit& split) {
    const DenseMatrix embeddings = embed_full_graph(model, graph);
    std::vector<std::vector<double>> per_node(split.train_nodes.size());
    detail::parallel_for(split.train_nodes.size(), 0, [&](std::size_t i) {
        const Subgraph sub = khop_subgraph(graph, split.train_nodes[i], prompt.config.rho);
        detail::EngineContext ctx(sub, model, embeddings, prompt.config.rewire_scope,
                                  prompt.config.prob_clamp);
        per_node[i] = detail::candidate_probs(ctx, prompt.projector);
    });
    return per_node;
}

void export_prob_histogram(const GcnModel& model, const TrainedPrompt& prompt,
                           const Graph& graph, const LabeledSplit& split, int bins,
                           const std::filesystem::path& out) {
    if (bins < 1) throw std::invalid_argument("export_prob_histogram: bins must be >= 1");
    const auto per_node = train_target_probs(model, prompt, graph, split);
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (const auto& probs : per_node) {
        for (double p : probs) {
            auto b = static_cast<std::size_t>(p * bins);
            if (b >= counts.size()) b = counts.size() - 1;
            ++counts[b];
        }
    }
    std::ofstream file(out);
    if (!file) throw std::runtime_error(out.string() + ": cannot open for writing");
    file << "bin_center,count\n";
    char buf[32];
    for (std::size_t b = 0; b < counts.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%.17g", (static_cast<double>(b) + 0.5) / bins);
        file << buf << ',' << counts[b] << '\n';
    }
    if (!file) throw std::runtime_error(out.string() + ": write failed");
}

void export_edge_density(const GcnModel& model, const TrainedPrompt& prompt, const Graph& graph,
                         const LabeledSplit& split, const std::filesystem::path& out) {
    const auto per_node = train_target_probs(model, prompt, graph, split);
    std::ofstream file(out);
    if (!file) throw std::runtime_error(out.string() + ": cannot open for writing");
    file << "node_id,mean_prob,num_candidates\n";
    char buf[32];
    double mean_sum = 0.0;
    std::size_t mean_count = 0;
    for (std::size_t i = 0; i < per_node.size(); ++i) {
        const auto& probs = per_node[i];
        double mean = 0.0;
        if (!probs.empty()) {
            mean = std::accumulate(probs.begin(), probs.end(), 0.0) /
                   static_cast<double>(probs.size());
            mean_sum += mean;
            ++mean_count;
        }
        std::snprintf(buf, sizeof buf, "%.17g", mean);
        file << split.train_nodes[i] << ',' << buf << ',' << probs.size() << '\n';
    }
    std::snprintf(buf, sizeof buf, "%.17g",
                  mean_count ? mean_sum / static_cast<double>(mean_count) : 0.0);
    file << "summary," << buf << ',' << mean_count << '\n';
    if (!file) throw std::runtime_error(out.string() + ": write failed");
}

// ---------------------------------------------------------------------------
// Scope benchmark
// ---------------------------------------------------------------------------

BenchScopeResult bench_rewire_scope(const Graph& graph, const GcnModel& model,
                                    const LabeledSplit& split, const PromptConfig& config) {
    BenchScopeResult result;
    auto run_scope = [&](RewireScope scope, double& total, double& median,
                         BenchStatus& status) {
        PromptConfig c = config;
        c.rewire_scope = scope;
        std::vector<double> epoch_seconds;
        epoch_seconds.reserve(static_cast<std::size_t>(c.epochs));
        double last = now_seconds();
        const double start = last;
        try {
            tune_prompt(model, graph, split, c,
                        [&](int, const EpochStats&) {
                            const double now = now_seconds();
                            epoch_seconds.push_back(now - last);
                            last = now;
                        },
                        /*threads=*/1);
            total = now_seconds() - start;
            std::sort(epoch_seconds.begin(), epoch_seconds.end());
            median = epoch_seconds.empty() ? 0.0 : epoch_seconds[epoch_seconds.size() / 2];
            status = BenchStatus::ok;
        } catch (const std::bad_alloc&) {
            total = now_seconds() - start;
            median = 0.0;
            status = BenchStatus::out_of_memory;
        }
    };
    run_scope(RewireScope::target_only, result.seconds_target_only,
              result.median_epoch_target_only, result.target_only_status);
    run_scope(RewireScope::all_pairs, result.seconds_all_pairs, result.median_epoch_all_pairs,
              result.all_pairs_status);
    return result;
}

// ---------------------------------------------------------------------------
// Oracle projector (empirical shadow of the separation bound)
// ---------------------------------------------------------------------------

double oracle_projector_accuracy(const GcnModel& model, const Graph& graph,
                                 const LabeledSplit& split, int rho, int probe_epochs, double lr,
                                 std::uint64_t seed) {
    const DenseMatrix embeddings = embed_full_graph(model, graph);
    auto oracle_prob = [&](NodeId a, NodeId b) {
        return graph.label(a) >= 0 && graph.label(a) == graph.label(b) ? 1.0 : 0.0;
    };

    // identity readout turns the hard-rewired forward's scores into the raw
    // target representation
    LinearProbe readout;
    readout.weights = DenseMatrix(model.hidden_dim(), model.hidden_dim());
    for (std::size_t d = 0; d < model.hidden_dim(); ++d) readout.weights(d, d) = 1.0;
    readout.bias.assign(model.hidden_dim(), 0.0);

    auto rewired_repr = [&](NodeId v) {
        const Subgraph sub = khop_subgraph(graph, v, rho);
        detail::EngineContext ctx(sub, model, embeddings, RewireScope::target_only, 1e-6);
        return detail::infer_target_scores(ctx, readout, oracle_prob);
    };

    // train probe on the (fixed) oracle-rewired train representations
    std::vector<std::vector<double>> train_repr(split.train_nodes.size());
    detail::parallel_for(split.train_nodes.size(), 0, [&](std::size_t i) {
        train_repr[i] = rewired_repr(split.train_nodes[i]);
    });

    Rng rng(seed);
    LinearProbe probe;
    probe.weights =
        glorot_init(model.hidden_dim(), static_cast<std::size_t>(graph.num_classes()), rng);
    probe.bias.assign(static_cast<std::size_t>(graph.num_classes()), 0.0);
    AdamState w_state(probe.weights.size());
    AdamState b_state(probe.bias.size());
    const double inv_n = 1.0 / static_cast<double>(split.train_nodes.size());
    for (int epoch = 0; epoch < probe_epochs; ++epoch) {
        DenseMatrix dw(probe.weights.rows(), probe.weights.cols());
        std::vector<double> db(probe.bias.size(), 0.0);
        for (std::size_t i = 0; i < split.train_nodes.size(); ++i) {
            ProbeGrads g;
            probe_loss_grad(probe, train_repr[i], graph.label(split.train_nodes[i]), g);
            axpy(inv_n, g.d_weights.data(), std::span<double>(dw.data()));
            axpy(inv_n, g.d_bias, std::span<double>(db));
        }
        adam_step(probe.weights.data(), dw.data(), w_state, lr);
        adam_step(probe.bias, db, b_state, lr);
    }

    std::vector<int> predictions(split.test_nodes.size());
    detail::parallel_for(split.test_nodes.size(), 0, [&](std::size_t i) {
        const auto repr = rewired_repr(split.test_nodes[i]);
        std::vector<double> scores(probe.num_classes());
        for (std::size_t c = 0; c < scores.size(); ++c) {
            double z = probe.bias[c];
            for (std::size_t d = 0; d < repr.size(); ++d) z += repr[d] * probe.weights(d, c);
            scores[c] = z;
        }
        predictions[i] =
            static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    });
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.test_nodes.size(); ++i)
        if (predictions[i] == graph.label(split.test_nodes[i])) ++correct;
    return static_cast<double>(correct) / static_cast<double>(split.test_nodes.size());
}

}  // namespace graphtop
