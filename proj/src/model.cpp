#include "gmlm/model.hpp"

#include <cstring>
#include <stdexcept>
#include <utility>

#include "gmlm/errors.hpp"

namespace gmlm {

ParamGroup param_group_of(const std::string& name) {
    if (name.rfind("text.", 0) == 0) {
        return ParamGroup::text;
    }
    if (name.rfind("gnn.", 0) == 0 && name != "gnn.e_mask") {
        return ParamGroup::graph;
    }
    return ParamGroup::other;
}

GmlmModel GmlmModel::init(const ModelConfig& cfg, Vocabulary vocab, Rng& rng) {
    if (cfg.d_x == 0 || cfg.classes < 2 || cfg.relations == 0) {
        throw std::invalid_argument("model config: d_x, classes and relations must be set");
    }
    GmlmModel m;
    m.cfg = cfg;
    m.vocab = std::move(vocab);
    m.gnn = GnnBranch::init(cfg.d_x, cfg.d_hidden, cfg.d_plm, cfg.relations, cfg.gnn_keep_prob,
                            cfg.norm_eps, rng);
    m.text = TextEncoderParams::init(m.vocab.size(), cfg.d_plm, cfg.text_layers, cfg.text_heads,
                                     cfg.l_max, cfg.text_ff, cfg.norm_eps, rng);
    m.attn = CrossAttentionParams::init(cfg.d_plm, cfg.attn_heads, rng);
    m.attn.diagonal = cfg.diagonal_attention;
    m.attn.mask_inactive_keys = cfg.mask_inactive_keys;
    m.head = FusionHeadParams::init(cfg.d_plm, cfg.d_fused, cfg.classes, cfg.head_keep_prob,
                                    cfg.norm_eps, rng);
    return m;
}

Tensor GmlmModel::graph_view(const Tensor& x_input, const RelationAggregates& agg,
                             bool train_mode, Rng* rng) const {
    return gnn.forward(x_input, agg, train_mode, rng);
}

Tensor GmlmModel::text_matrix(const TextGraph& g, const NodeMask& active) const {
    if (!text_embeddings.defined()) {
        return assemble_text_matrix(g, active, text, vocab, cfg.micro_batch);
    }
    if (text_embeddings.rows() != g.num_nodes || text_embeddings.cols() != cfg.d_plm) {
        throw ValidationError("text_matrix: precomputed embeddings are " +
                              std::to_string(text_embeddings.rows()) + "x" +
                              std::to_string(text_embeddings.cols()) + ", expected " +
                              std::to_string(g.num_nodes) + "x" + std::to_string(cfg.d_plm));
    }
    if (active.bits.size() != g.num_nodes) {
        throw std::invalid_argument("text_matrix: active mask length mismatch");
    }
    std::vector<double> gate(g.num_nodes, 0.0);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        if (active.bits[i]) gate[i] = 1.0;
    }
    return mul(text_embeddings, Tensor::from_values({g.num_nodes, 1}, gate));
}

Tensor GmlmModel::forward_logits(const TextGraph& g, const Tensor& x_input,
                                 const RelationAggregates& agg, const NodeMask& active,
                                 bool train_mode, Rng* rng) const {
    Tensor h_g = gnn.forward(x_input, agg, train_mode, rng);
    Tensor h_plm = text_matrix(g, active);
    auto [h_gtot, h_ttog] = bidirectional_fuse(h_g, h_plm, attn, &active);
    return fusion_logits(h_gtot, h_ttog, head, train_mode, rng);
}

Tensor GmlmModel::forward_probs(const TextGraph& g, const Tensor& x_input,
                                const RelationAggregates& agg, const NodeMask& active,
                                bool train_mode, Rng* rng) const {
    return softmax(forward_logits(g, x_input, agg, active, train_mode, rng), 1);
}

Tensor GmlmModel::features_of(const TextGraph& g) {
    return Tensor::from_values({g.num_nodes, g.feature_dim}, g.features);
}

NamedParams GmlmModel::named_params() const {
    NamedParams out = gnn.named_params();
    NamedParams t = text.named_params();
    out.insert(out.end(), t.begin(), t.end());
    attn.append_params(out, "attn");
    head.append_params(out, "head");
    return out;
}

NamedParams GmlmModel::params_in_group(ParamGroup group) const {
    NamedParams out;
    for (auto& [name, tensor] : named_params()) {
        if (param_group_of(name) == group) {
            out.emplace_back(name, tensor);
        }
    }
    return out;
}

NamedParams GmlmModel::pretrain_params() const {
    return gnn.named_params();
}

}  // namespace gmlm
