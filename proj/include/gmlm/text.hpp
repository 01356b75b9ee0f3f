#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "gmlm/gnn.hpp"
#include "gmlm/graph.hpp"
#include "gmlm/rng.hpp"
#include "gmlm/tensor.hpp"

namespace gmlm {

/// Dense token ids with three reserved slots. Built from a corpus by
/// frequency; ties resolve lexicographically so construction is deterministic.
struct Vocabulary {
    static constexpr int PAD = 0;
    static constexpr int UNK = 1;
    static constexpr int CLS = 2;

    std::map<std::string, int> token_to_id;

    std::size_t size() const { return token_to_id.size() + 3; }
    int id(const std::string& token) const;

    static Vocabulary build(const std::vector<std::string>& corpus, std::size_t max_size);

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
};

/// Lowercase alphanumeric-run split.
std::vector<std::string> split_tokens(const std::string& text);

struct TokenRow {
    std::vector<int> ids;      // length L
    std::vector<double> mask;  // 1.0 at real tokens, 0.0 at padding
};

/// Truncates to l_max and pads with PAD; empty text becomes a lone CLS.
TokenRow tokenize(const std::string& text, const Vocabulary& vocab, std::size_t l_max);

struct TransformerBlockParams {
    Tensor ln1_gamma, ln1_shift;
    Tensor wq, wk, wv, wo;  // d x d
    Tensor ln2_gamma, ln2_shift;
    Tensor ff1, ff1_bias;  // d x d_ff, d_ff
    Tensor ff2, ff2_bias;  // d_ff x d, d

    static TransformerBlockParams init(std::size_t d, std::size_t d_ff, Rng& rng);
    void append_params(NamedParams& out, const std::string& prefix) const;
};

/// Compact randomly initialized pre-norm transformer standing in for a
/// pretrained sentence encoder; the precomputed-embedding path bypasses it.
struct TextEncoderParams {
    Tensor token_embedding;     // V x d
    Tensor position_embedding;  // L_max x d
    std::vector<TransformerBlockParams> blocks;
    std::size_t d_plm = 0;
    std::size_t heads = 1;
    std::size_t l_max = 0;
    double ln_eps = 1e-5;

    static TextEncoderParams init(std::size_t vocab_size, std::size_t d, std::size_t layers,
                                  std::size_t heads, std::size_t l_max, std::size_t d_ff,
                                  double ln_eps, Rng& rng);
    NamedParams named_params() const;
};

/// Runs one token row through the encoder; returns the L x d last hidden
/// state. Self-attention keys at padding positions are masked to -inf.
Tensor encode_sequence(const TokenRow& row, const TextEncoderParams& p);

/// (sum_j o_j a_j) / (sum_j a_j), a 1 x d row.
Tensor masked_mean_pool(const Tensor& hidden, const std::vector<double>& mask);

/// N x d_plm matrix: pooled encoder output for active nodes, exact zero rows
/// for inactive ones. micro_batch only controls processing order granularity;
/// results do not depend on it.
Tensor assemble_text_matrix(const TextGraph& g, const NodeMask& active,
                            const TextEncoderParams& p, const Vocabulary& vocab,
                            std::size_t micro_batch);

/// Reads an N-row embedding matrix (.json array-of-rows, or CSV otherwise).
Tensor load_precomputed_embeddings(const std::string& path, const TextGraph& g);

void save_embeddings(const Tensor& m, const std::string& path);

}  // namespace gmlm
