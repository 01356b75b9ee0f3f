#pragma once

#include <cstddef>
#include <string>

#include "gmlm/fusion.hpp"
#include "gmlm/gnn.hpp"
#include "gmlm/graph.hpp"
#include "gmlm/rng.hpp"
#include "gmlm/tensor.hpp"
#include "gmlm/text.hpp"

namespace gmlm {

struct ModelConfig {
    std::size_t d_x = 0;        // node feature width (from data)
    std::size_t classes = 2;    // |Y| (from data)
    std::size_t relations = 2;  // |R| (from data)
    std::size_t d_hidden = 64;
    std::size_t d_plm = 128;
    std::size_t d_fused = 128;
    std::size_t text_layers = 2;
    std::size_t text_heads = 2;
    std::size_t text_ff = 256;
    std::size_t l_max = 32;
    std::size_t attn_heads = 4;
    std::size_t micro_batch = 8;
    double gnn_keep_prob = 0.8;
    double head_keep_prob = 0.8;
    double norm_eps = 1e-5;
    bool diagonal_attention = false;
    bool mask_inactive_keys = false;
};

/// Parameter group labels for differential optimization.
enum class ParamGroup { graph, text, other };

ParamGroup param_group_of(const std::string& name);

/// The full two-branch classifier: relational GNN over soft-masked features,
/// compact text encoder with active-node gating, bi-directional cross
/// attention, fusion network and classifier.
struct GmlmModel {
    ModelConfig cfg;
    Vocabulary vocab;
    GnnBranch gnn;
    TextEncoderParams text;
    CrossAttentionParams attn;
    FusionHeadParams head;
    /// Optional N x d_plm matrix replacing the internal encoder (precomputed
    /// sentence embeddings). Attached at run setup; not part of checkpoints.
    Tensor text_embeddings;

    static GmlmModel init(const ModelConfig& cfg, Vocabulary vocab, Rng& rng);

    /// GNN-branch embeddings of a (possibly soft-masked) feature matrix.
    Tensor graph_view(const Tensor& x_input, const RelationAggregates& agg, bool train_mode,
                      Rng* rng) const;

    /// Text-side N x d_plm matrix with inactive rows zeroed: the internal
    /// encoder, or the gated precomputed override when one is attached.
    Tensor text_matrix(const TextGraph& g, const NodeMask& active) const;

    /// Pre-softmax class scores for every node. active gates the text branch;
    /// x_input is the (optionally soft-masked) feature matrix.
    Tensor forward_logits(const TextGraph& g, const Tensor& x_input,
                          const RelationAggregates& agg, const NodeMask& active,
                          bool train_mode, Rng* rng) const;

    /// softmax(forward_logits) rows.
    Tensor forward_probs(const TextGraph& g, const Tensor& x_input,
                         const RelationAggregates& agg, const NodeMask& active, bool train_mode,
                         Rng* rng) const;

    /// Raw node features of g as a constant tensor.
    static Tensor features_of(const TextGraph& g);

    NamedParams named_params() const;
    NamedParams params_in_group(ParamGroup group) const;
    /// GNN parameters plus the mask token: everything stage 1 may move.
    NamedParams pretrain_params() const;
};

/// Writes config, vocabulary and every parameter (shape + values) as one JSON
/// document; loading reproduces the model bit-exactly.
void save_checkpoint(const GmlmModel& model, const std::string& path);
GmlmModel load_checkpoint(const std::string& path);

}  // namespace gmlm
