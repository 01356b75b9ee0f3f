#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gmlm/graph.hpp"
#include "gmlm/rng.hpp"
#include "gmlm/tensor.hpp"

namespace gmlm {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Constant dense aggregation operators for one graph: per relation r, an
/// N x N matrix whose row i averages the incoming r-neighbors of node i
/// (entry (i, j) = multiplicity of edge j->i under r divided by the total
/// incoming r-count of i). Multiplying it against node states realizes the
/// normalized neighborhood sum of a relational graph convolution.
struct RelationAggregates {
    std::size_t num_nodes = 0;
    std::vector<Tensor> per_relation;

    static RelationAggregates build(const TextGraph& g);
};

struct RgcnLayerParams {
    std::vector<Tensor> w_rel;  // one d_in x d_out matrix per relation
    Tensor w_self;              // d_in x d_out

    static RgcnLayerParams init(std::size_t relations, std::size_t d_in, std::size_t d_out,
                                Rng& rng);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

struct GraphNormParams {
    Tensor alpha;  // mean scale, length d
    Tensor gamma;  // gain, length d
    Tensor shift;  // bias, length d
    double eps = 1e-5;

    static GraphNormParams init(std::size_t d, double eps);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

struct GnnBlockParams {
    RgcnLayerParams rgcn;
    GraphNormParams norm;
    Tensor residual_proj;  // d_res x d_out
    double keep_prob = 0.8;

    static GnnBlockParams init(std::size_t relations, std::size_t d_in, std::size_t d_out,
                               std::size_t d_res, double keep_prob, double norm_eps, Rng& rng);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

struct MultiScaleFusionParams {
    std::array<Tensor, 4> proj;  // d_hidden x d_plm each
    Tensor logits;               // 1 x 4
    Tensor ln_gamma;             // d_plm
    Tensor ln_shift;             // d_plm
    double ln_eps = 1e-5;

    static MultiScaleFusionParams init(std::size_t d_hidden, std::size_t d_plm, double ln_eps,
                                       Rng& rng);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

// ---- operations -----------------------------------------------------------------

/// Blends masked rows toward the mask token: row i becomes
/// (1 - beta) * x_i + beta * e_mask when mask[i], and stays x_i otherwise.
Tensor soft_mask(const Tensor& x, const NodeMask& mask, double beta, const Tensor& e_mask);

/// One relational graph convolution: H W_self + sum_r M_r (H W_r), where M_r
/// averages incoming neighbors per relation. No activation here.
Tensor rgcn_forward(const Tensor& h, const RelationAggregates& agg, const RgcnLayerParams& p);

/// Feature-wise normalization over the node axis with a learnable mean scale:
/// u = H - alpha * col_mean(H); out = u / sqrt(col_var(u) + eps) * gamma + shift.
Tensor graph_norm(const Tensor& h, const GraphNormParams& p);

/// Dropout(GELU(GraphNorm(RGCN(h_prev)))) + residual_src * residual_proj.
Tensor gnn_block_forward(const Tensor& h_prev, const Tensor& residual_src,
                         const RelationAggregates& agg, const GnnBlockParams& p, bool train_mode,
                         Rng* rng);

/// Probability-weighted sum of per-layer projections, weights = softmax(logits).
Tensor multi_scale_weighted_sum(const std::array<Tensor, 4>& layer_outs,
                                const MultiScaleFusionParams& p);

/// LayerNorm(multi_scale_weighted_sum(...)).
Tensor multi_scale_fuse(const std::array<Tensor, 4>& layer_outs,
                        const MultiScaleFusionParams& p);

// ---- the branch --------------------------------------------------------------------

/// Four stacked relational blocks over soft-masked node features, fused
/// across depths into d_plm-wide per-node embeddings.
struct GnnBranch {
    Tensor e_mask;  // length d_x mask token
    std::array<GnnBlockParams, 4> blocks;
    MultiScaleFusionParams fusion;
    std::size_t d_x = 0;
    std::size_t d_hidden = 0;
    std::size_t d_plm = 0;

    static GnnBranch init(std::size_t d_x, std::size_t d_hidden, std::size_t d_plm,
                          std::size_t relations, double keep_prob, double norm_eps, Rng& rng);

    /// x_input is the (optionally soft-masked) N x d_x feature matrix.
    Tensor forward(const Tensor& x_input, const RelationAggregates& agg, bool train_mode,
                   Rng* rng) const;

    NamedParams named_params() const;
};

}  // namespace gmlm
