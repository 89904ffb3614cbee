#include "subgraph_engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace graphtop::detail {

namespace {

struct PairEval {
    double p_raw = 0.0;
    double p = 0.0;
    double s = 0.0;
    bool clamped = false;
};

/// Projector forward for one pair; z1 (pre-activation, d_p) is kept for the
/// backward pass.
PairEval projector_pair_forward(const EngineContext& ctx, const Projector& projector, int a,
                                int b, std::span<double> z1) {
    const auto hi = ctx.embedding(a);
    const auto hj = ctx.embedding(b);
    const std::size_t dh = hi.size();
    const std::size_t dp = projector.hidden_dim();

    std::fill(z1.begin(), z1.end(), 0.0);
    for (std::size_t d = 0; d < dh; ++d) {
        const double u = hi[d] + hj[d];
        if (u == 0.0) continue;
        const auto wrow = projector.w1.row(d);
        for (std::size_t k = 0; k < dp; ++k) z1[k] += u * wrow[k];
    }
    double z2 = 0.0;
    for (std::size_t k = 0; k < dp; ++k)
        if (z1[k] > 0.0) z2 += z1[k] * projector.w2(k, 0);

    PairEval ev;
    ev.p_raw = stable_sigmoid(z2);
    ev.p = std::clamp(ev.p_raw, ctx.clamp, 1.0 - ctx.clamp);
    ev.clamped = ev.p != ev.p_raw;
    return ev;
}

void projector_pair_backward(const EngineContext& ctx, const Projector& projector, int a, int b,
                             std::span<const double> z1, const PairEval& ev, double dp_total,
                             DenseMatrix& d_w1, DenseMatrix& d_w2) {
    if (ev.clamped || dp_total == 0.0) return;
    const auto hi = ctx.embedding(a);
    const auto hj = ctx.embedding(b);
    const std::size_t dh = hi.size();
    const std::size_t dp = projector.hidden_dim();

    const double dz2 = dp_total * ev.p_raw * (1.0 - ev.p_raw);
    std::vector<double> dz1(dp, 0.0);
    for (std::size_t k = 0; k < dp; ++k) {
        if (z1[k] > 0.0) {
            d_w2(k, 0) += dz2 * z1[k];
            dz1[k] = dz2 * projector.w2(k, 0);
        }
    }
    for (std::size_t d = 0; d < dh; ++d) {
        const double u = hi[d] + hj[d];
        if (u == 0.0) continue;
        auto grow = d_w1.row(d);
        for (std::size_t k = 0; k < dp; ++k) grow[k] += u * dz1[k];
    }
}

double bernoulli_entropy(double p) { return -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p)); }

int sign(double x) { return (x > 0.0) - (x < 0.0); }

// --------------------------------------------------------------------------
// Sparse target-only path. The soft adjacency is the base everywhere except
// row/column 0, so degrees, the two propagations and the adjacency gradient
// all reduce to the base CSR plus a dense row-0 correction.
// --------------------------------------------------------------------------

struct SparseCache {
    std::vector<double> deg, r;
    DenseMatrix z1;    // pre-activation, m x d_h
    DenseMatrix m2;    // act(z1) * W2
    std::vector<double> h0;
};

void forward_sparse(const EngineContext& ctx, std::span<const double> s, SparseCache& c) {
    const Subgraph& sub = *ctx.sub;
    const std::size_t m = sub.size();
    const std::size_t dh = ctx.model->hidden_dim();
    const bool relu = ctx.model->activation == Activation::relu;

    c.deg.resize(m);
    c.r.resize(m);
    double d0 = 1.0;
    for (std::size_t j = 1; j < m; ++j) d0 += s[j - 1];
    c.deg[0] = d0;
    for (std::size_t k = 1; k < m; ++k)
        c.deg[k] = sub.base_degree[k] + 1.0 - static_cast<double>(sub.adj(k, 0)) + s[k - 1];
    for (std::size_t k = 0; k < m; ++k) c.r[k] = 1.0 / std::sqrt(c.deg[k]);

    // layer 1: z1 = Ahat * m1 over the implicit soft adjacency
    DenseMatrix scaled(m, dh);
    for (std::size_t v = 0; v < m; ++v) {
        const auto src = ctx.m1.row(v);
        auto dst = scaled.row(v);
        for (std::size_t k = 0; k < dh; ++k) dst[k] = c.r[v] * src[k];
    }
    c.z1 = DenseMatrix(m, dh);
    for (std::size_t u = 1; u < m; ++u) {
        auto orow = c.z1.row(u);
        for (int v : sub.base_neighbors(u)) axpy(1.0, scaled.row(static_cast<std::size_t>(v)), orow);
        axpy(s[u - 1] - static_cast<double>(sub.adj(u, 0)), scaled.row(0), orow);
        axpy(1.0, scaled.row(u), orow);
        for (std::size_t k = 0; k < dh; ++k) orow[k] *= c.r[u];
    }
    {
        auto orow = c.z1.row(0);
        for (std::size_t j = 1; j < m; ++j) axpy(s[j - 1], scaled.row(j), orow);
        axpy(1.0, scaled.row(0), orow);
        for (std::size_t k = 0; k < dh; ++k) orow[k] *= c.r[0];
    }

    // layer 2: only the target row of Ahat * (act(z1) * W2) is needed
    DenseMatrix activated = c.z1;
    if (relu)
        for (double& v : activated.data()) v = v > 0.0 ? v : 0.0;
    c.m2 = matmul(activated, ctx.model->layer2_weights);

    c.h0.assign(dh, 0.0);
    for (std::size_t j = 1; j < m; ++j)
        axpy(s[j - 1] * c.r[j], c.m2.row(j), std::span<double>(c.h0));
    axpy(c.r[0], c.m2.row(0), std::span<double>(c.h0));
    for (std::size_t k = 0; k < dh; ++k) c.h0[k] *= c.r[0];
}

/// Gradient of the probe loss w.r.t. each selector value, given d(loss)/d(h0).
void backward_sparse(const EngineContext& ctx, std::span<const double> s, const SparseCache& c,
                     std::span<const double> dh0, std::vector<double>& ds) {
    const Subgraph& sub = *ctx.sub;
    const std::size_t m = sub.size();
    const std::size_t dh = ctx.model->hidden_dim();
    const bool relu = ctx.model->activation == Activation::relu;
    const DenseMatrix& w2 = ctx.model->layer2_weights;

    // v2 = W2 * dh0 (rows of W2 dotted with dh0)
    std::vector<double> v2(dh);
    for (std::size_t k = 0; k < dh; ++k) v2[k] = dot(w2.row(k), dh0);

    // row 0 of the normalized adjacency
    std::vector<double> arow0(m);
    arow0[0] = c.r[0] * c.r[0];
    for (std::size_t j = 1; j < m; ++j) arow0[j] = c.r[0] * c.r[j] * s[j - 1];

    // dz1[a,k] = arow0[a] * v2[k] * mask[a,k]; fold the mask into per-row
    // masked copies of v2 on the fly.
    auto masked_dot_m1 = [&](std::size_t a, std::size_t b) {
        // sum_k v2[k] * mask[a,k] * m1[b,k]
        const auto za = c.z1.row(a);
        const auto mb = ctx.m1.row(b);
        double acc = 0.0;
        if (relu) {
            for (std::size_t k = 0; k < dh; ++k)
                if (za[k] > 0.0) acc += v2[k] * mb[k];
        } else {
            for (std::size_t k = 0; k < dh; ++k) acc += v2[k] * mb[k];
        }
        return acc;
    };

    // G = e0 dh0' * m2' + dz1 * m1'; needed on row 0, column 0, the base-edge
    // support and the diagonal.
    std::vector<double> grow(m);  // layer-2 piece, row 0 only
    for (std::size_t b = 0; b < m; ++b) grow[b] = dot(c.m2.row(b), dh0);

    std::vector<double> g_0b(m), g_a0(m), g_diag(m);
    for (std::size_t b = 0; b < m; ++b) g_0b[b] = grow[b] + arow0[0] * masked_dot_m1(0, b);
    for (std::size_t a = 0; a < m; ++a) g_a0[a] = arow0[a] * masked_dot_m1(a, 0);
    g_a0[0] = g_0b[0];
    for (std::size_t u = 0; u < m; ++u) g_diag[u] = arow0[u] * masked_dot_m1(u, u);
    g_diag[0] = grow[0] + arow0[0] * masked_dot_m1(0, 0);

    // degree-path accumulators c_u = sum_b (G[u,b] + G[b,u]) T[u,b] r_b
    std::vector<double> cdeg(m, 0.0);
    {
        double acc = 2.0 * g_diag[0] * c.r[0];
        for (std::size_t j = 1; j < m; ++j) acc += (g_0b[j] + g_a0[j]) * s[j - 1] * c.r[j];
        cdeg[0] = acc;
    }
    for (std::size_t u = 1; u < m; ++u) {
        double acc = 2.0 * g_diag[u] * c.r[u] + (g_a0[u] + g_0b[u]) * s[u - 1] * c.r[0];
        cdeg[u] = acc;
    }
    // base edges off node 0: both orientations share one masked dot each
    for (std::size_t u = 1; u < m; ++u) {
        for (int vi : sub.base_neighbors(u)) {
            const auto v = static_cast<std::size_t>(vi);
            if (v == 0) continue;
            const double g_uv = arow0[u] * masked_dot_m1(u, v);
            const double g_vu = arow0[v] * masked_dot_m1(v, u);
            cdeg[u] += (g_uv + g_vu) * c.r[v];
        }
    }

    ds.assign(m > 0 ? m - 1 : 0, 0.0);
    const double r0c = 0.5 * (c.r[0] / c.deg[0]) * cdeg[0];  // 0.5 r0^3 c0
    for (std::size_t j = 1; j < m; ++j) {
        const double direct = (g_0b[j] + g_a0[j]) * c.r[0] * c.r[j];
        ds[j - 1] = direct - r0c - 0.5 * (c.r[j] / c.deg[j]) * cdeg[j];
    }
}

// --------------------------------------------------------------------------
// Dense reference path: materializes the soft adjacency. Used for all_pairs
// rewiring and as the checking path for the sparse one.
// --------------------------------------------------------------------------

struct DenseCache {
    DenseMatrix soft;  // m x m
    std::vector<double> deg, r;
    DenseMatrix ahat;
    DenseMatrix z1;
    DenseMatrix m2;
    std::vector<double> h0;
};

DenseMatrix dense_soft_adjacency(const EngineContext& ctx,
                                 std::span<const std::pair<int, int>> pairs,
                                 std::span<const double> s) {
    const Subgraph& sub = *ctx.sub;
    const std::size_t m = sub.size();
    DenseMatrix soft(m, m);
    if (ctx.scope == RewireScope::target_only) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                soft(i, j) = static_cast<double>(sub.adj(i, j));
    }
    for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
        const auto [a, b] = pairs[idx];
        soft(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) = s[idx];
        soft(static_cast<std::size_t>(b), static_cast<std::size_t>(a)) = s[idx];
    }
    return soft;
}

void forward_dense(const EngineContext& ctx, std::span<const std::pair<int, int>> pairs,
                   std::span<const double> s, DenseCache& c) {
    const std::size_t m = ctx.sub->size();
    const std::size_t dh = ctx.model->hidden_dim();
    const bool relu = ctx.model->activation == Activation::relu;

    c.soft = dense_soft_adjacency(ctx, pairs, s);
    c.deg.resize(m);
    c.r.resize(m);
    for (std::size_t u = 0; u < m; ++u) {
        double d = 1.0;
        for (std::size_t v = 0; v < m; ++v) d += c.soft(u, v);
        c.deg[u] = d;
        c.r[u] = 1.0 / std::sqrt(d);
    }
    c.ahat = DenseMatrix(m, m);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b)
            c.ahat(a, b) = (a == b ? 1.0 : c.soft(a, b)) * c.r[a] * c.r[b];

    c.z1 = matmul(c.ahat, ctx.m1);
    DenseMatrix activated = c.z1;
    if (relu)
        for (double& v : activated.data()) v = v > 0.0 ? v : 0.0;
    c.m2 = matmul(activated, ctx.model->layer2_weights);

    c.h0.assign(dh, 0.0);
    for (std::size_t b = 0; b < m; ++b)
        axpy(c.ahat(0, b), c.m2.row(b), std::span<double>(c.h0));
}

void backward_dense(const EngineContext& ctx, std::span<const std::pair<int, int>> pairs,
                    const DenseCache& c, std::span<const double> dh0, std::vector<double>& ds) {
    const std::size_t m = ctx.sub->size();
    const std::size_t dh = ctx.model->hidden_dim();
    const bool relu = ctx.model->activation == Activation::relu;
    const DenseMatrix& w2 = ctx.model->layer2_weights;

    std::vector<double> v2(dh);
    for (std::size_t k = 0; k < dh; ++k) v2[k] = dot(w2.row(k), dh0);

    DenseMatrix dz1(m, dh);
    for (std::size_t a = 0; a < m; ++a) {
        const double a0 = c.ahat(0, a);
        const auto za = c.z1.row(a);
        auto drow = dz1.row(a);
        for (std::size_t k = 0; k < dh; ++k)
            drow[k] = (!relu || za[k] > 0.0) ? a0 * v2[k] : 0.0;
    }

    DenseMatrix g(m, m);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) g(a, b) = dot(dz1.row(a), ctx.m1.row(b));
    for (std::size_t b = 0; b < m; ++b) g(0, b) += dot(c.m2.row(b), dh0);

    std::vector<double> cdeg(m, 0.0);
    for (std::size_t u = 0; u < m; ++u) {
        double acc = 0.0;
        for (std::size_t b = 0; b < m; ++b) {
            const double t = (u == b ? 1.0 : c.soft(u, b));
            if (t == 0.0) continue;
            acc += (g(u, b) + g(b, u)) * t * c.r[b];
        }
        cdeg[u] = acc;
    }

    ds.assign(pairs.size(), 0.0);
    for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
        const auto a = static_cast<std::size_t>(pairs[idx].first);
        const auto b = static_cast<std::size_t>(pairs[idx].second);
        const double dt_ab =
            g(a, b) * c.r[a] * c.r[b] - 0.5 * (c.r[a] / c.deg[a]) * cdeg[a];
        const double dt_ba =
            g(b, a) * c.r[b] * c.r[a] - 0.5 * (c.r[b] / c.deg[b]) * cdeg[b];
        ds[idx] = dt_ab + dt_ba;
    }
}

std::vector<double> probe_logits(const LinearProbe& probe, std::span<const double> h) {
    std::vector<double> logits(probe.num_classes());
    for (std::size_t cc = 0; cc < logits.size(); ++cc) {
        double z = probe.bias[cc];
        for (std::size_t d = 0; d < h.size(); ++d) z += h[d] * probe.weights(d, cc);
        logits[cc] = z;
    }
    return logits;
}

}  // namespace

EngineContext::EngineContext(const Subgraph& sub_, const GcnModel& model_,
                             const DenseMatrix& embeddings_, RewireScope scope_, double clamp_)
    : sub(&sub_), model(&model_), embeddings(&embeddings_), scope(scope_), clamp(clamp_) {
    if (embeddings->cols() != model->hidden_dim())
        throw std::invalid_argument("EngineContext: embedding dim != model hidden dim");
    for (NodeId g : sub->local_to_global)
        if (static_cast<std::size_t>(g) >= embeddings->rows())
            throw std::out_of_range("EngineContext: missing embedding row " + std::to_string(g));

    m1 = matmul(sub->features, model->layer1_weights);
    const int m = static_cast<int>(sub->size());
    if (scope == RewireScope::target_only) {
        for (int j = 1; j < m; ++j) pairs.emplace_back(0, j);
    } else {
        for (int a = 0; a < m; ++a)
            for (int b = a + 1; b < m; ++b) pairs.emplace_back(a, b);
    }
}

void eval_target(const EngineContext& ctx, const Projector& projector, const LinearProbe& probe,
                 int label, double tau, std::span<const double> noise, double lambda1,
                 double lambda2, double gamma, bool want_grads, bool dense_path,
                 TargetResult& out) {
    const std::size_t num_pairs = ctx.pairs.size();
    if (noise.size() != 2 * num_pairs)
        throw std::invalid_argument("eval_target: noise size mismatch");
    const std::size_t dp = projector.hidden_dim();

    // projector + selector forward over all candidate pairs
    std::vector<double> z1_all(num_pairs * dp);
    std::vector<PairEval> evals(num_pairs);
    std::vector<double> s(num_pairs);
    double p_sum = 0.0, entropy_sum = 0.0;
    for (std::size_t i = 0; i < num_pairs; ++i) {
        auto& ev = evals[i];
        ev = projector_pair_forward(ctx, projector, ctx.pairs[i].first, ctx.pairs[i].second,
                                    {z1_all.data() + i * dp, dp});
        ev.s = soft_edge_selector(ev.p, noise[2 * i], noise[2 * i + 1], tau);
        s[i] = ev.s;
        p_sum += ev.p;
        entropy_sum += bernoulli_entropy(ev.p);
    }
    const double mean_p = num_pairs ? p_sum / static_cast<double>(num_pairs) : 0.0;
    out.l_e = num_pairs ? entropy_sum / static_cast<double>(num_pairs) : 0.0;
    out.l_s = num_pairs ? std::abs(mean_p - gamma) : 0.0;

    const bool use_dense = dense_path || ctx.scope == RewireScope::all_pairs;
    SparseCache sc;
    DenseCache dc;
    std::span<const double> h0;
    if (use_dense) {
        forward_dense(ctx, ctx.pairs, s, dc);
        h0 = dc.h0;
    } else {
        forward_sparse(ctx, s, sc);
        h0 = sc.h0;
    }

    if (!want_grads) {
        out.l_p = probe_loss(probe, h0, label);
        return;
    }

    ProbeGrads pg;
    out.l_p = probe_loss_grad(probe, h0, label, pg);
    out.d_probe_weights = std::move(pg.d_weights);
    out.d_probe_bias = std::move(pg.d_bias);

    std::vector<double> ds;
    if (use_dense)
        backward_dense(ctx, ctx.pairs, dc, pg.d_h, ds);
    else
        backward_sparse(ctx, s, sc, pg.d_h, ds);

    out.d_w1 = DenseMatrix(projector.w1.rows(), projector.w1.cols());
    out.d_w2 = DenseMatrix(projector.w2.rows(), projector.w2.cols());
    const double inv_pairs = num_pairs ? 1.0 / static_cast<double>(num_pairs) : 0.0;
    const int density_sign = sign(mean_p - gamma);
    for (std::size_t i = 0; i < num_pairs; ++i) {
        const auto& ev = evals[i];
        // d s / d p through the selector
        const double selector_slope =
            ev.s * (1.0 - ev.s) / (tau * ev.p * (1.0 - ev.p));
        double dp_total = ds[i] * selector_slope;
        dp_total += lambda1 * (-std::log(ev.p / (1.0 - ev.p))) * inv_pairs;
        dp_total += lambda2 * static_cast<double>(density_sign) * inv_pairs;
        projector_pair_backward(ctx, projector, ctx.pairs[i].first, ctx.pairs[i].second,
                                {z1_all.data() + i * dp, dp}, ev, dp_total, out.d_w1, out.d_w2);
    }
}

std::vector<double> infer_target_scores(
    const EngineContext& ctx, const LinearProbe& probe,
    const std::function<double(NodeId, NodeId)>& prob_fn) {
    const std::size_t num_pairs = ctx.pairs.size();
    std::vector<double> s(num_pairs);
    for (std::size_t i = 0; i < num_pairs; ++i) {
        const NodeId ga = ctx.sub->local_to_global[static_cast<std::size_t>(ctx.pairs[i].first)];
        const NodeId gb = ctx.sub->local_to_global[static_cast<std::size_t>(ctx.pairs[i].second)];
        s[i] = prob_fn(ga, gb) >= 0.5 ? 1.0 : 0.0;
    }
    if (ctx.scope == RewireScope::all_pairs) {
        DenseCache dc;
        forward_dense(ctx, ctx.pairs, s, dc);
        return probe_logits(probe, dc.h0);
    }
    SparseCache sc;
    forward_sparse(ctx, s, sc);
    return probe_logits(probe, sc.h0);
}

std::vector<double> candidate_probs(const EngineContext& ctx, const Projector& projector) {
    std::vector<double> probs(ctx.pairs.size());
    std::vector<double> z1(projector.hidden_dim());
    for (std::size_t i = 0; i < ctx.pairs.size(); ++i) {
        probs[i] = projector_pair_forward(ctx, projector, ctx.pairs[i].first, ctx.pairs[i].second,
                                          z1)
                       .p;
    }
    return probs;
}

}  // namespace graphtop::detail
