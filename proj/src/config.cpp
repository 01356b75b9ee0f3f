#include "gmlm/config.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <string>

#include "gmlm/errors.hpp"

namespace gmlm {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) {
        throw ValidationError("config: " + where + " must be a JSON object");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ValidationError("config: unknown key '" + it.key() + "' in " + where);
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void parse_data(const json& j, DataConfig& d) {
    require_keys(j, {"graph", "format", "synthetic", "add_reverse_relations", "text_source",
                     "embeddings", "vocab_cap"},
                 "data");
    read(j, "graph", d.graph_path);
    read(j, "format", d.format);
    read(j, "add_reverse_relations", d.add_reverse);
    read(j, "text_source", d.text_source);
    read(j, "embeddings", d.embeddings_path);
    read(j, "vocab_cap", d.vocab_cap);
    if (auto it = j.find("synthetic"); it != j.end()) {
        require_keys(*it, {"nodes", "classes", "heterophily", "vocab", "seed"},
                     "data.synthetic");
        read(*it, "nodes", d.synthetic.nodes);
        read(*it, "classes", d.synthetic.classes);
        read(*it, "heterophily", d.synthetic.heterophily);
        read(*it, "vocab", d.synthetic.vocab);
        read(*it, "seed", d.synthetic.seed);
    }
}

void parse_model(const json& j, ModelConfig& m) {
    require_keys(j, {"d_hidden", "d_plm", "d_fused", "text_layers", "text_heads", "text_ff",
                     "l_max", "attn_heads", "micro_batch", "gnn_keep_prob", "head_keep_prob",
                     "norm_eps", "diagonal_attention", "mask_inactive_keys"},
                 "model");
    read(j, "d_hidden", m.d_hidden);
    read(j, "d_plm", m.d_plm);
    read(j, "d_fused", m.d_fused);
    read(j, "text_layers", m.text_layers);
    read(j, "text_heads", m.text_heads);
    read(j, "text_ff", m.text_ff);
    read(j, "l_max", m.l_max);
    read(j, "attn_heads", m.attn_heads);
    read(j, "micro_batch", m.micro_batch);
    read(j, "gnn_keep_prob", m.gnn_keep_prob);
    read(j, "head_keep_prob", m.head_keep_prob);
    read(j, "norm_eps", m.norm_eps);
    read(j, "diagonal_attention", m.diagonal_attention);
    read(j, "mask_inactive_keys", m.mask_inactive_keys);
}

void parse_splits(const json& j, SplitConfig& s) {
    require_keys(j, {"ratios", "seed", "path"}, "splits");
    if (auto it = j.find("ratios"); it != j.end()) {
        auto v = it->get<std::vector<double>>();
        if (v.size() != 3) {
            throw ValidationError("config: splits.ratios needs exactly 3 entries");
        }
        s.ratios = {v[0], v[1], v[2]};
    }
    read(j, "seed", s.seed);
    read(j, "path", s.path);
}

void parse_pretrain(const json& j, PretrainConfig& p) {
    require_keys(j, {"epochs", "beta", "tau", "mask_lo", "mask_hi", "lr", "weight_decay",
                     "batch_cap", "t0", "t_mult"},
                 "pretrain");
    read(j, "epochs", p.epochs);
    read(j, "beta", p.beta);
    read(j, "tau", p.tau);
    read(j, "mask_lo", p.mask_lo);
    read(j, "mask_hi", p.mask_hi);
    read(j, "lr", p.lr);
    read(j, "weight_decay", p.weight_decay);
    read(j, "batch_cap", p.batch_cap);
    read(j, "t0", p.t0);
    read(j, "t_mult", p.t_mult);
}

void parse_finetune(const json& j, FinetuneConfig& f) {
    require_keys(j, {"max_epochs", "patience", "active_lo", "active_hi", "beta",
                     "label_smoothing", "lr_graph", "lr_text", "lr_other", "wd_graph", "wd_text",
                     "wd_other", "warmup_frac", "clip_norm"},
                 "finetune");
    read(j, "max_epochs", f.max_epochs);
    read(j, "patience", f.patience);
    read(j, "active_lo", f.active_lo);
    read(j, "active_hi", f.active_hi);
    read(j, "beta", f.beta);
    read(j, "label_smoothing", f.label_smoothing);
    read(j, "lr_graph", f.lr_graph);
    read(j, "lr_text", f.lr_text);
    read(j, "lr_other", f.lr_other);
    read(j, "wd_graph", f.wd_graph);
    read(j, "wd_text", f.wd_text);
    read(j, "wd_other", f.wd_other);
    read(j, "warmup_frac", f.warmup_frac);
    read(j, "clip_norm", f.clip_norm);
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("config: " + path + ": " + e.what());
    }
    RunConfig cfg;
    try {
        require_keys(doc, {"data", "model", "splits", "pretrain", "finetune", "seeds", "out_dir",
                           "skip_pretrain", "workers"},
                     "top level");
        if (auto it = doc.find("data"); it != doc.end()) parse_data(*it, cfg.data);
        if (auto it = doc.find("model"); it != doc.end()) parse_model(*it, cfg.model);
        if (auto it = doc.find("splits"); it != doc.end()) parse_splits(*it, cfg.splits);
        if (auto it = doc.find("pretrain"); it != doc.end()) parse_pretrain(*it, cfg.pretrain);
        if (auto it = doc.find("finetune"); it != doc.end()) parse_finetune(*it, cfg.finetune);
        read(doc, "seeds", cfg.seeds);
        read(doc, "out_dir", cfg.out_dir);
        read(doc, "skip_pretrain", cfg.skip_pretrain);
        read(doc, "workers", cfg.workers);
    } catch (const json::exception& e) {
        throw ValidationError("config: " + path + ": " + e.what());
    }
    return cfg;
}

void validate_run_config(const RunConfig& cfg) {
    const bool has_file = !cfg.data.graph_path.empty();
    const bool has_synth = cfg.data.synthetic.nodes > 0;
    if (has_file == has_synth) {
        throw ValidationError(
            "config: exactly one of data.graph and data.synthetic.nodes must be set");
    }
    if (has_file && !std::filesystem::exists(cfg.data.graph_path)) {
        throw ValidationError("config: data.graph does not exist: " + cfg.data.graph_path);
    }
    if (cfg.data.format != "canonical-json" && cfg.data.format != "tsv-triple") {
        throw ValidationError("config: unknown data.format '" + cfg.data.format + "'");
    }
    if (cfg.data.text_source == "precomputed-file") {
        if (cfg.data.embeddings_path.empty()) {
            throw ValidationError("config: precomputed-file text source needs data.embeddings");
        }
        if (!std::filesystem::exists(cfg.data.embeddings_path)) {
            throw ValidationError("config: data.embeddings does not exist: " +
                                  cfg.data.embeddings_path);
        }
    } else if (cfg.data.text_source != "internal-encoder") {
        throw ValidationError("config: unknown text_source '" + cfg.data.text_source + "'");
    }
    if (!cfg.splits.path.empty() && !std::filesystem::exists(cfg.splits.path)) {
        throw ValidationError("config: splits.path does not exist: " + cfg.splits.path);
    }
    if (cfg.seeds.empty()) {
        throw ValidationError("config: seeds must not be empty");
    }
    if (cfg.out_dir.empty()) {
        throw ValidationError("config: out_dir must not be empty");
    }
    if (cfg.workers == 0) {
        throw ValidationError("config: workers must be at least 1");
    }
    if (cfg.finetune.patience >= cfg.finetune.max_epochs) {
        throw ValidationError("config: finetune.patience must be below finetune.max_epochs");
    }
    if (cfg.finetune.label_smoothing < 0.0 || cfg.finetune.label_smoothing >= 1.0) {
        throw ValidationError("config: finetune.label_smoothing must lie in [0, 1)");
    }
    if (cfg.pretrain.tau <= 0.0) {
        throw ValidationError("config: pretrain.tau must be positive");
    }
    if (cfg.pretrain.mask_lo < 0.0 || cfg.pretrain.mask_lo > cfg.pretrain.mask_hi ||
        cfg.pretrain.mask_hi > 1.0) {
        throw ValidationError("config: pretrain mask proportions must be ordered within [0, 1]");
    }
    if (cfg.finetune.active_lo <= 0.0 || cfg.finetune.active_lo > cfg.finetune.active_hi ||
        cfg.finetune.active_hi > 1.0) {
        throw ValidationError("config: finetune active proportions must be ordered within (0, 1]");
    }
    const double ratio_sum = cfg.splits.ratios[0] + cfg.splits.ratios[1] + cfg.splits.ratios[2];
    if (std::abs(ratio_sum - 1.0) > 1e-9) {
        throw ValidationError("config: split ratios must sum to 1");
    }
}

}  // namespace gmlm
