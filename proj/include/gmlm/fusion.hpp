#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "gmlm/gnn.hpp"
#include "gmlm/graph.hpp"
#include "gmlm/rng.hpp"
#include "gmlm/tensor.hpp"

namespace gmlm {

struct AttentionOut {
    Tensor output;   // n_q x d_v
    Tensor weights;  // n_q x n_k, each row a probability vector
};

/// softmax(Q K^T / sqrt(d_k) + key_bias) V. key_bias, when given, is a
/// 1 x n_k additive row (use -inf to exclude keys).
AttentionOut scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                  const Tensor* key_bias = nullptr);

struct CrossAttentionDirectionParams {
    Tensor wq, wk, wv, wo;  // d x d each

    static CrossAttentionDirectionParams init(std::size_t d, Rng& rng);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

struct CrossAttentionParams {
    CrossAttentionDirectionParams graph_to_text;  // queries from the text side
    CrossAttentionDirectionParams text_to_graph;  // queries from the graph side
    std::size_t heads = 4;
    // Per-node attention that skips the N x N score matrix; each node sees
    // only itself (scale experiments).
    bool diagonal = false;
    // Exclude inactive text rows from the key/value set where text supplies
    // keys (ablation; the default keeps zero rows as ordinary keys).
    bool mask_inactive_keys = false;

    static CrossAttentionParams init(std::size_t d, std::size_t heads, Rng& rng);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

/// Multi-head projected attention for one direction: project, attend per
/// head, concatenate, output-project.
Tensor multi_head_cross_attention(const Tensor& queries_from, const Tensor& keys_values_from,
                                  const CrossAttentionDirectionParams& p, std::size_t heads,
                                  bool diagonal, const Tensor* key_bias = nullptr);

/// Returns {H_GtoT, H_TtoG}: text-queried attention over graph states and
/// graph-queried attention over text states. active, when given together
/// with mask_inactive_keys, removes inactive text rows from the key set.
std::pair<Tensor, Tensor> bidirectional_fuse(const Tensor& h_g, const Tensor& h_plm,
                                             const CrossAttentionParams& p,
                                             const NodeMask* active = nullptr);

struct FusionHeadParams {
    Tensor fuse_w, fuse_b;      // 2d x d_fused, d_fused
    Tensor ln_gamma, ln_shift;  // d_fused
    Tensor cls1_w, cls1_b;      // d_fused x d_fused
    Tensor cls2_w, cls2_b;      // d_fused x classes
    double keep_prob = 0.8;
    double ln_eps = 1e-5;

    static FusionHeadParams init(std::size_t d_plm, std::size_t d_fused, std::size_t classes,
                                 double keep_prob, double ln_eps, Rng& rng);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

/// The d_fused-wide node representation the classifier consumes:
/// GELU(LayerNorm(concat(h_gtot, h_ttog) W + b)), before any dropout.
Tensor fused_representation(const Tensor& h_gtot, const Tensor& h_ttog,
                            const FusionHeadParams& p);

/// Pre-softmax class scores of the fusion network and classifier.
Tensor fusion_logits(const Tensor& h_gtot, const Tensor& h_ttog, const FusionHeadParams& p,
                     bool train_mode, Rng* rng);

/// softmax(fusion_logits) rows; each a distribution over classes.
Tensor fuse_and_classify(const Tensor& h_gtot, const Tensor& h_ttog, const FusionHeadParams& p,
                         bool train_mode, Rng* rng);

}  // namespace gmlm
