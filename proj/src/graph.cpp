#include "graphtop/graph.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <sstream>

#include "graphtop/rng.hpp"
#include "json.hpp"

namespace graphtop {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string loc(const std::filesystem::path& file, std::size_t line) {
    return file.string() + ": line " + std::to_string(line);
}

}  // namespace

Graph::Graph(NodeId num_nodes, DenseMatrix features, std::vector<std::pair<NodeId, NodeId>> edges,
             std::vector<int> labels, int num_classes)
    : num_nodes_(num_nodes), num_classes_(num_classes), features_(std::move(features)) {
    if (num_nodes < 0) fail("Graph: negative node count");
    if (features_.rows() != static_cast<std::size_t>(num_nodes))
        fail("Graph: feature rows " + std::to_string(features_.rows()) + " != n " +
             std::to_string(num_nodes));
    if (labels.empty()) labels.assign(static_cast<std::size_t>(num_nodes), -1);
    if (labels.size() != static_cast<std::size_t>(num_nodes))
        fail("Graph: label count " + std::to_string(labels.size()) + " != n " +
             std::to_string(num_nodes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < -1 || labels[i] >= num_classes)
            fail("Graph: label " + std::to_string(labels[i]) + " of node " + std::to_string(i) +
                 " outside [0, " + std::to_string(num_classes) + ")");
    }
    labels_ = std::move(labels);

    edges_.reserve(edges.size());
    for (auto [u, v] : edges) {
        if (u == v) fail("Graph: self-loop at node " + std::to_string(u));
        if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes)
            fail("Graph: edge endpoint out of range: " + std::to_string(u) + " " +
                 std::to_string(v));
        if (u > v) std::swap(u, v);
        edges_.emplace_back(u, v);
    }
    std::sort(edges_.begin(), edges_.end());
    if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end())
        fail("Graph: duplicate edge");

    adj_offsets_.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
    for (auto [u, v] : edges_) {
        ++adj_offsets_[static_cast<std::size_t>(u) + 1];
        ++adj_offsets_[static_cast<std::size_t>(v) + 1];
    }
    for (std::size_t i = 1; i < adj_offsets_.size(); ++i) adj_offsets_[i] += adj_offsets_[i - 1];
    adj_index_.resize(static_cast<std::size_t>(adj_offsets_.back()));
    std::vector<std::int64_t> cursor(adj_offsets_.begin(), adj_offsets_.end() - 1);
    for (auto [u, v] : edges_) {
        adj_index_[static_cast<std::size_t>(cursor[u]++)] = v;
        adj_index_[static_cast<std::size_t>(cursor[v]++)] = u;
    }
    // edges_ is sorted, so each neighbor run is already ascending for u-side
    // insertions but not for v-side ones; sort per node.
    for (NodeId v = 0; v < num_nodes; ++v) {
        std::sort(adj_index_.begin() + adj_offsets_[v], adj_index_.begin() + adj_offsets_[v + 1]);
    }
}

bool Graph::has_edge(NodeId u, NodeId v) const {
    auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
}

std::vector<NodeId> Graph::labeled_nodes() const {
    std::vector<NodeId> out;
    for (NodeId v = 0; v < num_nodes_; ++v)
        if (labels_[static_cast<std::size_t>(v)] >= 0) out.push_back(v);
    return out;
}

// ---------------------------------------------------------------------------
// Directory format: edges.tsv / features.tsv / labels.tsv / meta.json
// ---------------------------------------------------------------------------

namespace {

struct Meta {
    NodeId num_nodes;
    std::size_t num_features;
    int num_classes;
};

Meta read_meta(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(path.string() + ": " + e.what());
    }
    for (const char* key : {"num_nodes", "num_features", "num_classes"})
        if (!j.contains(key) || !j[key].is_number_integer())
            fail(path.string() + ": missing integer field '" + std::string(key) + "'");
    return Meta{j["num_nodes"].get<NodeId>(), j["num_features"].get<std::size_t>(),
                j["num_classes"].get<int>()};
}

long parse_int(std::string_view tok, const std::filesystem::path& file, std::size_t line) {
    long value = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        fail(loc(file, line) + ": non-numeric token '" + std::string(tok) + "'");
    return value;
}

double parse_real(std::string_view tok, const std::filesystem::path& file, std::size_t line) {
    char* end = nullptr;
    std::string buf(tok);
    errno = 0;
    double value = std::strtod(buf.c_str(), &end);
    if (errno != 0 || end != buf.c_str() + buf.size() || buf.empty())
        fail(loc(file, line) + ": non-numeric token '" + buf + "'");
    return value;
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

Graph load_graph(const std::filesystem::path& directory) {
    const auto edges_path = directory / "edges.tsv";
    const auto features_path = directory / "features.tsv";
    const auto labels_path = directory / "labels.tsv";
    const auto meta_path = directory / "meta.json";
    for (const auto& p : {edges_path, features_path, labels_path, meta_path})
        if (!std::filesystem::exists(p)) fail(p.string() + ": missing file");

    const Meta meta = read_meta(meta_path);

    std::vector<std::pair<NodeId, NodeId>> edges;
    {
        std::ifstream in(edges_path);
        if (!in) fail(edges_path.string() + ": cannot open");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto toks = split_ws(line);
            if (toks.empty()) continue;
            if (toks.size() != 2)
                fail(loc(edges_path, lineno) + ": expected two node ids, got " +
                     std::to_string(toks.size()));
            const long u = parse_int(toks[0], edges_path, lineno);
            const long v = parse_int(toks[1], edges_path, lineno);
            if (u == v) fail(edges_path.string() + ": self-loop at line " + std::to_string(lineno));
            if (u < 0 || v < 0 || u >= meta.num_nodes || v >= meta.num_nodes)
                fail(loc(edges_path, lineno) + ": index out of range (n = " +
                     std::to_string(meta.num_nodes) + ")");
            edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
        }
        std::vector<std::pair<NodeId, NodeId>> canon = edges;
        for (auto& [u, v] : canon)
            if (u > v) std::swap(u, v);
        std::sort(canon.begin(), canon.end());
        if (std::adjacent_find(canon.begin(), canon.end()) != canon.end())
            fail(edges_path.string() + ": duplicate edge");
    }

    DenseMatrix features(static_cast<std::size_t>(meta.num_nodes), meta.num_features);
    {
        std::ifstream in(features_path);
        if (!in) fail(features_path.string() + ": cannot open");
        std::string line;
        std::size_t row = 0, lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto toks = split_ws(line);
            if (toks.empty()) continue;
            if (row >= static_cast<std::size_t>(meta.num_nodes))
                fail(features_path.string() + ": feature rows " + std::to_string(row + 1) +
                     " != n " + std::to_string(meta.num_nodes));
            if (toks.size() != meta.num_features)
                fail(loc(features_path, lineno) + ": expected " +
                     std::to_string(meta.num_features) + " values, got " +
                     std::to_string(toks.size()));
            for (std::size_t c = 0; c < toks.size(); ++c)
                features(row, c) = parse_real(toks[c], features_path, lineno);
            ++row;
        }
        if (row != static_cast<std::size_t>(meta.num_nodes))
            fail(features_path.string() + ": feature rows " + std::to_string(row) + " != n " +
                 std::to_string(meta.num_nodes));
    }

    std::vector<int> labels;
    {
        std::ifstream in(labels_path);
        if (!in) fail(labels_path.string() + ": cannot open");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto toks = split_ws(line);
            if (toks.empty()) continue;
            if (toks.size() != 1)
                fail(loc(labels_path, lineno) + ": expected one label");
            const long y = parse_int(toks[0], labels_path, lineno);
            if (y < -1 || y >= meta.num_classes)
                fail(loc(labels_path, lineno) + ": label " + std::to_string(y) +
                     " outside [0, " + std::to_string(meta.num_classes) + ")");
            labels.push_back(static_cast<int>(y));
        }
        if (labels.size() != static_cast<std::size_t>(meta.num_nodes))
            fail(labels_path.string() + ": label rows " + std::to_string(labels.size()) +
                 " != n " + std::to_string(meta.num_nodes));
    }

    return Graph(meta.num_nodes, std::move(features), std::move(edges), std::move(labels),
                 meta.num_classes);
}

void save_graph(const Graph& graph, const std::filesystem::path& directory) {
    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    auto open = [](const std::filesystem::path& p) {
        std::ofstream out(p);
        if (!out) fail(p.string() + ": cannot open for writing");
        return out;
    };

    {
        auto out = open(directory / "edges.tsv");
        for (auto [u, v] : graph.edges()) out << u << '\t' << v << '\n';
        if (!out) fail((directory / "edges.tsv").string() + ": write failed");
    }
    {
        auto out = open(directory / "features.tsv");
        char buf[32];
        for (std::size_t i = 0; i < static_cast<std::size_t>(graph.num_nodes()); ++i) {
            const auto row = graph.features().row(i);
            for (std::size_t c = 0; c < row.size(); ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", row[c]);
                if (c) out << '\t';
                out << buf;
            }
            out << '\n';
        }
        if (!out) fail((directory / "features.tsv").string() + ": write failed");
    }
    {
        auto out = open(directory / "labels.tsv");
        for (int y : graph.labels()) out << y << '\n';
        if (!out) fail((directory / "labels.tsv").string() + ": write failed");
    }
    {
        auto out = open(directory / "meta.json");
        nlohmann::json j{{"num_nodes", graph.num_nodes()},
                         {"num_features", graph.feature_dim()},
                         {"num_classes", graph.num_classes()}};
        out << j.dump(2) << '\n';
        if (!out) fail((directory / "meta.json").string() + ": write failed");
    }
}

// ---------------------------------------------------------------------------
// CSBM generation
// ---------------------------------------------------------------------------

void CsbmParams::validate() const {
    if (num_nodes < 2) fail("CsbmParams: need at least 2 nodes");
    if (mu1.size() != mu2.size() || mu1.empty()) fail("CsbmParams: mean dimensions differ");
    if (mu1 == mu2) fail("CsbmParams: mu1 == mu2");
    if (!(intra_prob > 0.0 && intra_prob < 1.0)) fail("CsbmParams: p outside (0,1)");
    if (!(inter_prob > 0.0 && inter_prob < 1.0)) fail("CsbmParams: q outside (0,1)");
    if (!(class_balance > 0.0 && class_balance < 1.0)) fail("CsbmParams: balance outside (0,1)");
    const auto n1 = static_cast<NodeId>(std::ceil(class_balance * num_nodes));
    if (n1 <= 0 || n1 >= num_nodes) fail("CsbmParams: a class is empty");
}

CsbmParams CsbmParams::with_separation(NodeId n, std::size_t dim, double p, double q,
                                       double separation, double balance) {
    CsbmParams params;
    params.num_nodes = n;
    params.mu1.assign(dim, 0.0);
    params.mu2.assign(dim, 0.0);
    params.mu1[0] = separation / 2.0;
    params.mu2[0] = -separation / 2.0;
    params.intra_prob = p;
    params.inter_prob = q;
    params.class_balance = balance;
    return params;
}

Graph generate_csbm(const CsbmParams& params, std::uint64_t seed) {
    params.validate();
    const NodeId n = params.num_nodes;
    const auto n1 = static_cast<NodeId>(std::ceil(params.class_balance * n));
    const std::size_t dim = params.mu1.size();

    // Class by node id, then features, then edges: a fixed draw order keeps
    // regeneration bit-identical for a given seed.
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (NodeId v = 0; v < n; ++v) labels[static_cast<std::size_t>(v)] = v < n1 ? 0 : 1;

    Rng rng(seed);
    DenseMatrix features(static_cast<std::size_t>(n), dim);
    for (NodeId v = 0; v < n; ++v) {
        const auto& mu = v < n1 ? params.mu1 : params.mu2;
        auto row = features.row(static_cast<std::size_t>(v));
        for (std::size_t c = 0; c < dim; ++c) row[c] = mu[c] + rng.normal();
    }

    std::vector<std::pair<NodeId, NodeId>> edges;
    for (NodeId u = 0; u < n; ++u) {
        for (NodeId v = u + 1; v < n; ++v) {
            const double prob =
                labels[static_cast<std::size_t>(u)] == labels[static_cast<std::size_t>(v)]
                    ? params.intra_prob
                    : params.inter_prob;
            if (rng.uniform() < prob) edges.emplace_back(u, v);
        }
    }

    return Graph(n, std::move(features), std::move(edges), std::move(labels), 2);
}

// ---------------------------------------------------------------------------
// k-hop ego net
// ---------------------------------------------------------------------------

Subgraph khop_subgraph(const Graph& graph, NodeId target, int rho) {
    if (target < 0 || target >= graph.num_nodes())
        fail("khop_subgraph: target " + std::to_string(target) + " out of range");
    if (rho < 1) fail("khop_subgraph: rho must be >= 1");

    std::vector<int> dist(static_cast<std::size_t>(graph.num_nodes()), -1);
    std::vector<NodeId> order;
    std::deque<NodeId> queue;
    dist[static_cast<std::size_t>(target)] = 0;
    queue.push_back(target);
    order.push_back(target);
    while (!queue.empty()) {
        const NodeId u = queue.front();
        queue.pop_front();
        const int du = dist[static_cast<std::size_t>(u)];
        if (du == rho) continue;
        for (NodeId v : graph.neighbors(u)) {
            if (dist[static_cast<std::size_t>(v)] < 0) {
                dist[static_cast<std::size_t>(v)] = du + 1;
                queue.push_back(v);
                order.push_back(v);
            }
        }
    }

    Subgraph sub;
    sub.hop = rho;
    sub.local_to_global = std::move(order);
    const std::size_t m = sub.local_to_global.size();

    std::vector<int> global_to_local(static_cast<std::size_t>(graph.num_nodes()), -1);
    for (std::size_t i = 0; i < m; ++i)
        global_to_local[static_cast<std::size_t>(sub.local_to_global[i])] = static_cast<int>(i);

    sub.features = DenseMatrix(m, graph.feature_dim());
    for (std::size_t i = 0; i < m; ++i) {
        const auto src = graph.features().row(static_cast<std::size_t>(sub.local_to_global[i]));
        auto dst = sub.features.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
    }

    sub.base_adjacency.assign(m * m, 0);
    sub.adj_offsets.assign(m + 1, 0);
    for (std::size_t i = 0; i < m; ++i) {
        for (NodeId g : graph.neighbors(sub.local_to_global[i])) {
            const int j = global_to_local[static_cast<std::size_t>(g)];
            if (j >= 0) {
                sub.base_adjacency[i * m + static_cast<std::size_t>(j)] = 1;
                ++sub.adj_offsets[i + 1];
            }
        }
    }
    for (std::size_t i = 1; i <= m; ++i) sub.adj_offsets[i] += sub.adj_offsets[i - 1];
    sub.adj_index.resize(static_cast<std::size_t>(sub.adj_offsets[m]));
    {
        std::vector<std::int64_t> cursor(sub.adj_offsets.begin(), sub.adj_offsets.end() - 1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                if (sub.base_adjacency[i * m + j])
                    sub.adj_index[static_cast<std::size_t>(cursor[i]++)] = static_cast<int>(j);
    }
    sub.base_degree.resize(m);
    for (std::size_t i = 0; i < m; ++i)
        sub.base_degree[i] = static_cast<double>(sub.adj_offsets[i + 1] - sub.adj_offsets[i]);

    return sub;
}

// ---------------------------------------------------------------------------
// k-shot split
// ---------------------------------------------------------------------------

LabeledSplit sample_k_shot(const Graph& graph, int k, std::uint64_t seed) {
    if (k < 1) fail("sample_k_shot: k must be >= 1");
    std::vector<std::vector<NodeId>> by_class(static_cast<std::size_t>(graph.num_classes()));
    for (NodeId v : graph.labeled_nodes())
        by_class[static_cast<std::size_t>(graph.label(v))].push_back(v);

    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() <= static_cast<std::size_t>(k))
            fail("sample_k_shot: class " + std::to_string(c) + " has " +
                 std::to_string(by_class[c].size()) + " labeled nodes, needs more than " +
                 std::to_string(k));
    }

    Rng rng(seed);
    LabeledSplit split;
    split.shots = k;
    split.seed = seed;
    std::vector<bool> in_train(static_cast<std::size_t>(graph.num_nodes()), false);
    for (auto& nodes : by_class) {
        // partial Fisher-Yates: first k slots become the class's train nodes
        for (int i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.uniform_int(nodes.size() - i));
            std::swap(nodes[static_cast<std::size_t>(i)], nodes[j]);
        }
        for (int i = 0; i < k; ++i) in_train[static_cast<std::size_t>(nodes[i])] = true;
    }
    for (NodeId v : graph.labeled_nodes())
        (in_train[static_cast<std::size_t>(v)] ? split.train_nodes : split.test_nodes).push_back(v);
    return split;
}

}  // namespace graphtop
