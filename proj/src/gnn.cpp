#include "gmlm/gnn.hpp"

#include <stdexcept>

namespace gmlm {

// ---- aggregation operators ---------------------------------------------------

RelationAggregates RelationAggregates::build(const TextGraph& g) {
    RelationAggregates agg;
    agg.num_nodes = g.num_nodes;
    const std::size_t n = g.num_nodes;
    for (std::size_t r = 0; r < g.num_relations; ++r) {
        std::vector<double> m(n * n, 0.0);
        std::vector<double> in_count(n, 0.0);
        for (const Edge& e : g.edges) {
            if (static_cast<std::size_t>(e.rel) != r) continue;
            m[static_cast<std::size_t>(e.dst) * n + static_cast<std::size_t>(e.src)] += 1.0;
            in_count[static_cast<std::size_t>(e.dst)] += 1.0;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (in_count[i] == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) m[i * n + j] /= in_count[i];
        }
        agg.per_relation.push_back(Tensor::from_values({n, n}, std::move(m)));
    }
    return agg;
}

// ---- parameter factories --------------------------------------------------------

RgcnLayerParams RgcnLayerParams::init(std::size_t relations, std::size_t d_in, std::size_t d_out,
                                      Rng& rng) {
    RgcnLayerParams p;
    for (std::size_t r = 0; r < relations; ++r) {
        p.w_rel.push_back(xavier_uniform(d_in, d_out, {d_in, d_out}, rng));
    }
    p.w_self = xavier_uniform(d_in, d_out, {d_in, d_out}, rng);
    return p;
}

void RgcnLayerParams::append_params(NamedParams& out, const std::string& prefix) const {
    for (std::size_t r = 0; r < w_rel.size(); ++r) {
        out.emplace_back(prefix + ".w_rel" + std::to_string(r), w_rel[r]);
    }
    out.emplace_back(prefix + ".w_self", w_self);
}

GraphNormParams GraphNormParams::init(std::size_t d, double eps) {
    GraphNormParams p;
    p.alpha = Tensor::full({d}, 1.0).set_requires_grad(true);
    p.gamma = Tensor::full({d}, 1.0).set_requires_grad(true);
    p.shift = Tensor::zeros({d}).set_requires_grad(true);
    p.eps = eps;
    return p;
}

void GraphNormParams::append_params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".alpha", alpha);
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".shift", shift);
}

GnnBlockParams GnnBlockParams::init(std::size_t relations, std::size_t d_in, std::size_t d_out,
                                    std::size_t d_res, double keep_prob, double norm_eps,
                                    Rng& rng) {
    GnnBlockParams p;
    p.rgcn = RgcnLayerParams::init(relations, d_in, d_out, rng);
    p.norm = GraphNormParams::init(d_out, norm_eps);
    p.residual_proj = xavier_uniform(d_res, d_out, {d_res, d_out}, rng);
    p.keep_prob = keep_prob;
    return p;
}

void GnnBlockParams::append_params(NamedParams& out, const std::string& prefix) const {
    rgcn.append_params(out, prefix + ".rgcn");
    norm.append_params(out, prefix + ".norm");
    out.emplace_back(prefix + ".residual_proj", residual_proj);
}

MultiScaleFusionParams MultiScaleFusionParams::init(std::size_t d_hidden, std::size_t d_plm,
                                                    double ln_eps, Rng& rng) {
    MultiScaleFusionParams p;
    for (auto& w : p.proj) w = xavier_uniform(d_hidden, d_plm, {d_hidden, d_plm}, rng);
    p.logits = Tensor::zeros({1, 4}).set_requires_grad(true);
    p.ln_gamma = Tensor::full({d_plm}, 1.0).set_requires_grad(true);
    p.ln_shift = Tensor::zeros({d_plm}).set_requires_grad(true);
    p.ln_eps = ln_eps;
    return p;
}

void MultiScaleFusionParams::append_params(NamedParams& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < proj.size(); ++l) {
        out.emplace_back(prefix + ".proj" + std::to_string(l + 1), proj[l]);
    }
    out.emplace_back(prefix + ".logits", logits);
    out.emplace_back(prefix + ".ln_gamma", ln_gamma);
    out.emplace_back(prefix + ".ln_shift", ln_shift);
}

// ---- operations -------------------------------------------------------------------

Tensor soft_mask(const Tensor& x, const NodeMask& mask, double beta, const Tensor& e_mask) {
    if (beta < 0.0 || beta > 1.0) {
        throw std::invalid_argument("soft_mask: beta must lie in [0, 1]");
    }
    if (mask.bits.size() != x.rows()) {
        throw std::invalid_argument("soft_mask: mask covers " +
                                    std::to_string(mask.bits.size()) + " nodes, features have " +
                                    std::to_string(x.rows()));
    }
    if (e_mask.size() != x.cols()) {
        throw std::invalid_argument("soft_mask: mask token width " +
                                    std::to_string(e_mask.size()) + " != feature width " +
                                    std::to_string(x.cols()));
    }
    if (beta == 0.0 || mask.count() == 0) return x;

    std::vector<double> ind(x.rows(), 0.0);
    for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = mask.bits[i] ? 1.0 : 0.0;
    Tensor c = Tensor::from_values({x.rows(), 1}, std::move(ind));
    Tensor keep = affine(c, -beta, 1.0);  // 1 - beta on masked rows, 1 elsewhere
    return mul(x, keep) + mul(c * beta, e_mask);
}

Tensor rgcn_forward(const Tensor& h, const RelationAggregates& agg, const RgcnLayerParams& p) {
    if (agg.per_relation.size() != p.w_rel.size()) {
        throw std::invalid_argument("rgcn_forward: " + std::to_string(agg.per_relation.size()) +
                                    " relations in graph, " + std::to_string(p.w_rel.size()) +
                                    " relation weights");
    }
    Tensor out = matmul(h, p.w_self);
    for (std::size_t r = 0; r < p.w_rel.size(); ++r) {
        out = out + matmul(agg.per_relation[r], matmul(h, p.w_rel[r]));
    }
    return out;
}

Tensor graph_norm(const Tensor& h, const GraphNormParams& p) {
    Tensor centered = h - mul(mean_axis(h, 0, true), p.alpha);
    Tensor var = mean_axis(centered * centered, 0, true);
    return div(centered, sqrt(var + p.eps)) * p.gamma + p.shift;
}

Tensor gnn_block_forward(const Tensor& h_prev, const Tensor& residual_src,
                         const RelationAggregates& agg, const GnnBlockParams& p, bool train_mode,
                         Rng* rng) {
    Tensor z = gelu(graph_norm(rgcn_forward(h_prev, agg, p.rgcn), p.norm));
    return dropout(z, p.keep_prob, train_mode, rng) + matmul(residual_src, p.residual_proj);
}

Tensor multi_scale_weighted_sum(const std::array<Tensor, 4>& layer_outs,
                                const MultiScaleFusionParams& p) {
    Tensor w = softmax(p.logits, 1);  // 1 x 4 probability vector
    Tensor acc = mul(matmul(layer_outs[0], p.proj[0]), slice_cols(w, 0, 1));
    for (std::size_t l = 1; l < 4; ++l) {
        acc = acc + mul(matmul(layer_outs[l], p.proj[l]), slice_cols(w, l, 1));
    }
    return acc;
}

Tensor multi_scale_fuse(const std::array<Tensor, 4>& layer_outs,
                        const MultiScaleFusionParams& p) {
    return layer_norm(multi_scale_weighted_sum(layer_outs, p), p.ln_gamma, p.ln_shift, p.ln_eps);
}

// ---- the branch -----------------------------------------------------------------------

GnnBranch GnnBranch::init(std::size_t d_x, std::size_t d_hidden, std::size_t d_plm,
                          std::size_t relations, double keep_prob, double norm_eps, Rng& rng) {
    GnnBranch b;
    b.d_x = d_x;
    b.d_hidden = d_hidden;
    b.d_plm = d_plm;
    b.e_mask = xavier_uniform(d_x, d_x, {d_x}, rng);
    b.blocks[0] = GnnBlockParams::init(relations, d_x, d_hidden, d_x, keep_prob, norm_eps, rng);
    b.blocks[1] =
        GnnBlockParams::init(relations, d_hidden, d_hidden, d_x, keep_prob, norm_eps, rng);
    b.blocks[2] =
        GnnBlockParams::init(relations, d_hidden, d_hidden, d_hidden, keep_prob, norm_eps, rng);
    b.blocks[3] =
        GnnBlockParams::init(relations, d_hidden, d_hidden, d_hidden, keep_prob, norm_eps, rng);
    b.fusion = MultiScaleFusionParams::init(d_hidden, d_plm, norm_eps, rng);
    return b;
}

Tensor GnnBranch::forward(const Tensor& x_input, const RelationAggregates& agg, bool train_mode,
                          Rng* rng) const {
    // Residual sources: blocks 1 and 2 reach back to the (masked) input,
    // blocks 3 and 4 to the state two blocks below.
    Tensor h1 = gnn_block_forward(x_input, x_input, agg, blocks[0], train_mode, rng);
    Tensor h2 = gnn_block_forward(h1, x_input, agg, blocks[1], train_mode, rng);
    Tensor h3 = gnn_block_forward(h2, h1, agg, blocks[2], train_mode, rng);
    Tensor h4 = gnn_block_forward(h3, h2, agg, blocks[3], train_mode, rng);
    return multi_scale_fuse({h1, h2, h3, h4}, fusion);
}

NamedParams GnnBranch::named_params() const {
    NamedParams out;
    out.emplace_back("gnn.e_mask", e_mask);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        blocks[l].append_params(out, "gnn.block" + std::to_string(l + 1));
    }
    fusion.append_params(out, "gnn.fusion");
    return out;
}

}  // namespace gmlm
