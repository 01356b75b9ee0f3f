#include "gmlm/fusion.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace gmlm {

AttentionOut scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                  const Tensor* key_bias) {
    if (q.cols() != k.cols()) {
        throw std::invalid_argument("attention: query width " + std::to_string(q.cols()) +
                                    " != key width " + std::to_string(k.cols()));
    }
    if (k.rows() != v.rows()) {
        throw std::invalid_argument("attention: key count != value count");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor scores = matmul(q, transpose(k)) * scale;
    if (key_bias) scores = scores + *key_bias;
    Tensor weights = softmax(scores, 1);
    return {matmul(weights, v), weights};
}

CrossAttentionDirectionParams CrossAttentionDirectionParams::init(std::size_t d, Rng& rng) {
    CrossAttentionDirectionParams p;
    p.wq = xavier_uniform(d, d, {d, d}, rng);
    p.wk = xavier_uniform(d, d, {d, d}, rng);
    p.wv = xavier_uniform(d, d, {d, d}, rng);
    p.wo = xavier_uniform(d, d, {d, d}, rng);
    return p;
}

void CrossAttentionDirectionParams::append_params(NamedParams& out,
                                                  const std::string& prefix) const {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wo", wo);
}

CrossAttentionParams CrossAttentionParams::init(std::size_t d, std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw std::invalid_argument("cross attention: width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    }
    CrossAttentionParams p;
    p.heads = heads;
    p.graph_to_text = CrossAttentionDirectionParams::init(d, rng);
    p.text_to_graph = CrossAttentionDirectionParams::init(d, rng);
    return p;
}

void CrossAttentionParams::append_params(NamedParams& out, const std::string& prefix) const {
    graph_to_text.append_params(out, prefix + ".gtot");
    text_to_graph.append_params(out, prefix + ".ttog");
}

Tensor multi_head_cross_attention(const Tensor& queries_from, const Tensor& keys_values_from,
                                  const CrossAttentionDirectionParams& p, std::size_t heads,
                                  bool diagonal, const Tensor* key_bias) {
    if (diagonal) {
        return matmul(matmul(keys_values_from, p.wv), p.wo);
    }
    Tensor q = matmul(queries_from, p.wq);
    Tensor k = matmul(keys_values_from, p.wk);
    Tensor v = matmul(keys_values_from, p.wv);
    const std::size_t d = q.cols();
    const std::size_t dk = d / heads;
    std::vector<Tensor> heads_out;
    heads_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        AttentionOut a = scaled_dot_attention(slice_cols(q, h * dk, dk),
                                              slice_cols(k, h * dk, dk),
                                              slice_cols(v, h * dk, dk), key_bias);
        heads_out.push_back(a.output);
    }
    return matmul(heads == 1 ? heads_out[0] : concat_cols(heads_out), p.wo);
}

std::pair<Tensor, Tensor> bidirectional_fuse(const Tensor& h_g, const Tensor& h_plm,
                                             const CrossAttentionParams& p,
                                             const NodeMask* active) {
    if (h_g.rows() != h_plm.rows() || h_g.cols() != h_plm.cols()) {
        throw std::invalid_argument("bidirectional_fuse: graph states " +
                                    shape_str(h_g.shape()) + " vs text states " +
                                    shape_str(h_plm.shape()));
    }
    Tensor text_key_bias;
    const Tensor* bias_ptr = nullptr;
    if (p.mask_inactive_keys && active) {
        std::vector<double> bias(h_plm.rows(), 0.0);
        for (std::size_t i = 0; i < bias.size(); ++i) {
            if (!active->bits[i]) bias[i] = -std::numeric_limits<double>::infinity();
        }
        text_key_bias = Tensor::from_values({1, h_plm.rows()}, std::move(bias));
        bias_ptr = &text_key_bias;
    }
    Tensor h_gtot =
        multi_head_cross_attention(h_plm, h_g, p.graph_to_text, p.heads, p.diagonal);
    Tensor h_ttog =
        multi_head_cross_attention(h_g, h_plm, p.text_to_graph, p.heads, p.diagonal, bias_ptr);
    return {h_gtot, h_ttog};
}

FusionHeadParams FusionHeadParams::init(std::size_t d_plm, std::size_t d_fused,
                                        std::size_t classes, double keep_prob, double ln_eps,
                                        Rng& rng) {
    FusionHeadParams p;
    p.fuse_w = xavier_uniform(2 * d_plm, d_fused, {2 * d_plm, d_fused}, rng);
    p.fuse_b = Tensor::zeros({d_fused}).set_requires_grad(true);
    p.ln_gamma = Tensor::full({d_fused}, 1.0).set_requires_grad(true);
    p.ln_shift = Tensor::zeros({d_fused}).set_requires_grad(true);
    p.cls1_w = xavier_uniform(d_fused, d_fused, {d_fused, d_fused}, rng);
    p.cls1_b = Tensor::zeros({d_fused}).set_requires_grad(true);
    p.cls2_w = xavier_uniform(d_fused, classes, {d_fused, classes}, rng);
    p.cls2_b = Tensor::zeros({classes}).set_requires_grad(true);
    p.keep_prob = keep_prob;
    p.ln_eps = ln_eps;
    return p;
}

void FusionHeadParams::append_params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".fuse_w", fuse_w);
    out.emplace_back(prefix + ".fuse_b", fuse_b);
    out.emplace_back(prefix + ".ln_gamma", ln_gamma);
    out.emplace_back(prefix + ".ln_shift", ln_shift);
    out.emplace_back(prefix + ".cls1_w", cls1_w);
    out.emplace_back(prefix + ".cls1_b", cls1_b);
    out.emplace_back(prefix + ".cls2_w", cls2_w);
    out.emplace_back(prefix + ".cls2_b", cls2_b);
}

Tensor fused_representation(const Tensor& h_gtot, const Tensor& h_ttog,
                            const FusionHeadParams& p) {
    if (h_gtot.rows() != h_ttog.rows()) {
        throw std::invalid_argument("fused_representation: row counts disagree");
    }
    Tensor z = concat_cols({h_gtot, h_ttog});
    Tensor fused = layer_norm(matmul(z, p.fuse_w) + p.fuse_b, p.ln_gamma, p.ln_shift, p.ln_eps);
    return gelu(fused);
}

Tensor fusion_logits(const Tensor& h_gtot, const Tensor& h_ttog, const FusionHeadParams& p,
                     bool train_mode, Rng* rng) {
    Tensor fused = dropout(fused_representation(h_gtot, h_ttog, p), p.keep_prob, train_mode, rng);
    Tensor hidden = dropout(gelu(matmul(fused, p.cls1_w) + p.cls1_b), p.keep_prob, train_mode,
                            rng);
    return matmul(hidden, p.cls2_w) + p.cls2_b;
}

Tensor fuse_and_classify(const Tensor& h_gtot, const Tensor& h_ttog, const FusionHeadParams& p,
                         bool train_mode, Rng* rng) {
    return softmax(fusion_logits(h_gtot, h_ttog, p, train_mode, rng), 1);
}

}  // namespace gmlm
