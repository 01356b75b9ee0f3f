#include "gmlm/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "gmlm/errors.hpp"

namespace gmlm {

using nlohmann::json;

// ---- vocabulary -----------------------------------------------------------------

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? UNK : it->second;
}

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t max_size) {
    if (max_size < 4) throw std::invalid_argument("vocabulary: max_size must exceed specials");
    std::unordered_map<std::string, std::size_t> counts;
    for (const std::string& text : corpus) {
        for (std::string& tok : split_tokens(text)) ++counts[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    int next = 3;
    for (const auto& [tok, cnt] : ranked) {
        if (static_cast<std::size_t>(next) >= max_size) break;
        v.token_to_id.emplace(tok, next++);
    }
    return v;
}

void Vocabulary::save(const std::string& path) const {
    json doc(token_to_id);
    std::ofstream out(path);
    if (!out) throw ValidationError("vocabulary: cannot write " + path);
    out << doc.dump() << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("vocabulary: cannot open " + path);
    try {
        json doc = json::parse(in);
        Vocabulary v;
        v.token_to_id = doc.get<std::map<std::string, int>>();
        for (const auto& [tok, tid] : v.token_to_id) {
            if (tid < 3 || static_cast<std::size_t>(tid) >= v.size()) {
                throw ValidationError("vocabulary: id " + std::to_string(tid) + " for '" + tok +
                                      "' is not dense in [3, V)");
            }
        }
        return v;
    } catch (const json::exception& e) {
        throw ParseError("vocabulary: " + path + ": " + e.what());
    }
}

TokenRow tokenize(const std::string& text, const Vocabulary& vocab, std::size_t l_max) {
    if (l_max < 2) throw std::invalid_argument("tokenize: l_max must be at least 2");
    TokenRow row;
    for (const std::string& tok : split_tokens(text)) {
        if (row.ids.size() == l_max) break;
        row.ids.push_back(vocab.id(tok));
    }
    if (row.ids.empty()) row.ids.push_back(Vocabulary::CLS);
    row.mask.assign(row.ids.size(), 1.0);
    while (row.ids.size() < l_max) {
        row.ids.push_back(Vocabulary::PAD);
        row.mask.push_back(0.0);
    }
    return row;
}

// ---- encoder ----------------------------------------------------------------------

TransformerBlockParams TransformerBlockParams::init(std::size_t d, std::size_t d_ff, Rng& rng) {
    TransformerBlockParams b;
    b.ln1_gamma = Tensor::full({d}, 1.0).set_requires_grad(true);
    b.ln1_shift = Tensor::zeros({d}).set_requires_grad(true);
    b.wq = xavier_uniform(d, d, {d, d}, rng);
    b.wk = xavier_uniform(d, d, {d, d}, rng);
    b.wv = xavier_uniform(d, d, {d, d}, rng);
    b.wo = xavier_uniform(d, d, {d, d}, rng);
    b.ln2_gamma = Tensor::full({d}, 1.0).set_requires_grad(true);
    b.ln2_shift = Tensor::zeros({d}).set_requires_grad(true);
    b.ff1 = xavier_uniform(d, d_ff, {d, d_ff}, rng);
    b.ff1_bias = Tensor::zeros({d_ff}).set_requires_grad(true);
    b.ff2 = xavier_uniform(d_ff, d, {d_ff, d}, rng);
    b.ff2_bias = Tensor::zeros({d}).set_requires_grad(true);
    return b;
}

void TransformerBlockParams::append_params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".ln1_gamma", ln1_gamma);
    out.emplace_back(prefix + ".ln1_shift", ln1_shift);
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wo", wo);
    out.emplace_back(prefix + ".ln2_gamma", ln2_gamma);
    out.emplace_back(prefix + ".ln2_shift", ln2_shift);
    out.emplace_back(prefix + ".ff1", ff1);
    out.emplace_back(prefix + ".ff1_bias", ff1_bias);
    out.emplace_back(prefix + ".ff2", ff2);
    out.emplace_back(prefix + ".ff2_bias", ff2_bias);
}

TextEncoderParams TextEncoderParams::init(std::size_t vocab_size, std::size_t d,
                                          std::size_t layers, std::size_t heads,
                                          std::size_t l_max, std::size_t d_ff, double ln_eps,
                                          Rng& rng) {
    if (d % heads != 0) {
        throw std::invalid_argument("text encoder: width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    }
    TextEncoderParams p;
    p.d_plm = d;
    p.heads = heads;
    p.l_max = l_max;
    p.ln_eps = ln_eps;
    p.token_embedding = xavier_uniform(vocab_size, d, {vocab_size, d}, rng);
    p.position_embedding = xavier_uniform(l_max, d, {l_max, d}, rng);
    for (std::size_t k = 0; k < layers; ++k) {
        p.blocks.push_back(TransformerBlockParams::init(d, d_ff, rng));
    }
    return p;
}

NamedParams TextEncoderParams::named_params() const {
    NamedParams out;
    out.emplace_back("text.tok_emb", token_embedding);
    out.emplace_back("text.pos_emb", position_embedding);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        blocks[k].append_params(out, "text.block" + std::to_string(k + 1));
    }
    return out;
}

Tensor encode_sequence(const TokenRow& row, const TextEncoderParams& p) {
    const std::size_t len = row.ids.size();
    if (len == 0 || len > p.l_max) {
        throw std::invalid_argument("encode_sequence: length " + std::to_string(len) +
                                    " outside [1, " + std::to_string(p.l_max) + "]");
    }
    if (row.mask.size() != len) {
        throw std::invalid_argument("encode_sequence: mask length mismatch");
    }
    const std::size_t vocab = p.token_embedding.rows();
    std::vector<std::size_t> positions(len);
    for (std::size_t i = 0; i < len; ++i) {
        if (row.ids[i] < 0 || static_cast<std::size_t>(row.ids[i]) >= vocab) {
            throw std::invalid_argument("encode_sequence: token id " +
                                        std::to_string(row.ids[i]) + " outside vocabulary");
        }
        positions[i] = i;
    }

    Tensor x = gather_rows(p.token_embedding, row.ids) +
               gather_rows(p.position_embedding, positions);

    std::vector<double> key_bias(len, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
        if (row.mask[i] == 0.0) key_bias[i] = -std::numeric_limits<double>::infinity();
    }
    Tensor key_mask = Tensor::from_values({1, len}, std::move(key_bias));

    const std::size_t dk = p.d_plm / p.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (const TransformerBlockParams& b : p.blocks) {
        Tensor xn = layer_norm(x, b.ln1_gamma, b.ln1_shift, p.ln_eps);
        Tensor q = matmul(xn, b.wq), k = matmul(xn, b.wk), v = matmul(xn, b.wv);
        std::vector<Tensor> heads_out;
        for (std::size_t h = 0; h < p.heads; ++h) {
            Tensor qh = slice_cols(q, h * dk, dk);
            Tensor kh = slice_cols(k, h * dk, dk);
            Tensor vh = slice_cols(v, h * dk, dk);
            Tensor scores = matmul(qh, transpose(kh)) * scale + key_mask;
            heads_out.push_back(matmul(softmax(scores, 1), vh));
        }
        x = x + matmul(concat_cols(heads_out), b.wo);

        Tensor yn = layer_norm(x, b.ln2_gamma, b.ln2_shift, p.ln_eps);
        Tensor ff = matmul(gelu(matmul(yn, b.ff1) + b.ff1_bias), b.ff2) + b.ff2_bias;
        x = x + ff;
    }
    return x;
}

Tensor masked_mean_pool(const Tensor& hidden, const std::vector<double>& mask) {
    if (mask.size() != hidden.rows()) {
        throw std::invalid_argument("masked_mean_pool: mask length " +
                                    std::to_string(mask.size()) + " != rows " +
                                    std::to_string(hidden.rows()));
    }
    double count = 0.0;
    for (double m : mask) count += m;
    if (count < 1.0) {
        throw std::invalid_argument("masked_mean_pool: mask selects no rows");
    }
    Tensor weights = Tensor::from_values({1, mask.size()}, mask);
    return matmul(weights, hidden) * (1.0 / count);
}

Tensor assemble_text_matrix(const TextGraph& g, const NodeMask& active,
                            const TextEncoderParams& p, const Vocabulary& vocab,
                            std::size_t micro_batch) {
    if (micro_batch < 1) {
        throw std::invalid_argument("assemble_text_matrix: micro_batch must be at least 1");
    }
    if (active.bits.size() != g.num_nodes) {
        throw std::invalid_argument("assemble_text_matrix: mask length mismatch");
    }
    std::vector<Tensor> rows(g.num_nodes);
    Tensor zero_row = Tensor::zeros({1, p.d_plm});
    for (std::size_t i = 0; i < g.num_nodes; ++i) rows[i] = zero_row;

    const std::vector<std::size_t> todo = active.indices();
    for (std::size_t start = 0; start < todo.size(); start += micro_batch) {
        const std::size_t end = std::min(todo.size(), start + micro_batch);
        for (std::size_t k = start; k < end; ++k) {
            const std::size_t node = todo[k];
            TokenRow row = tokenize(g.texts[node], vocab, p.l_max);
            rows[node] = masked_mean_pool(encode_sequence(row, p), row.mask);
        }
    }
    return stack_rows(rows);
}

// ---- precomputed embeddings --------------------------------------------------------

Tensor load_precomputed_embeddings(const std::string& path, const TextGraph& g) {
    std::ifstream in(path);
    if (!in) throw ValidationError("embeddings: cannot open " + path);

    std::vector<std::vector<double>> rows;
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        try {
            json doc = json::parse(in);
            rows = doc.get<std::vector<std::vector<double>>>();
        } catch (const json::exception& e) {
            throw ParseError("embeddings: " + path + ": " + e.what());
        }
    } else {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            std::vector<double> row;
            std::stringstream ls(line);
            std::string cell;
            while (std::getline(ls, cell, ',')) {
                try {
                    row.push_back(std::stod(cell));
                } catch (const std::exception&) {
                    throw ParseError("embeddings: " + path + ":" + std::to_string(line_no) +
                                     ": bad number '" + cell + "'");
                }
            }
            rows.push_back(std::move(row));
        }
    }

    if (rows.size() != g.num_nodes) {
        throw ValidationError("embeddings: " + std::to_string(rows.size()) + " rows for " +
                              std::to_string(g.num_nodes) + " nodes");
    }
    const std::size_t width = rows.empty() ? 0 : rows[0].size();
    if (width == 0) throw ValidationError("embeddings: empty rows");
    std::vector<double> flat;
    flat.reserve(rows.size() * width);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != width) {
            throw ValidationError("embeddings: row " + std::to_string(i) + " has width " +
                                  std::to_string(rows[i].size()) + ", expected " +
                                  std::to_string(width));
        }
        flat.insert(flat.end(), rows[i].begin(), rows[i].end());
    }
    return Tensor::from_values({rows.size(), width}, std::move(flat));
}

void save_embeddings(const Tensor& m, const std::string& path) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m.at(i, j));
        rows.push_back(std::move(row));
    }
    std::ofstream out(path);
    if (!out) throw ValidationError("embeddings: cannot write " + path);
    out << rows.dump() << '\n';
}

}  // namespace gmlm
