#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <utility>

#include "gmlm/errors.hpp"
#include "gmlm/model.hpp"

namespace gmlm {

using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"d_x", c.d_x},
                {"classes", c.classes},
                {"relations", c.relations},
                {"d_hidden", c.d_hidden},
                {"d_plm", c.d_plm},
                {"d_fused", c.d_fused},
                {"text_layers", c.text_layers},
                {"text_heads", c.text_heads},
                {"text_ff", c.text_ff},
                {"l_max", c.l_max},
                {"attn_heads", c.attn_heads},
                {"micro_batch", c.micro_batch},
                {"gnn_keep_prob", c.gnn_keep_prob},
                {"head_keep_prob", c.head_keep_prob},
                {"norm_eps", c.norm_eps},
                {"diagonal_attention", c.diagonal_attention},
                {"mask_inactive_keys", c.mask_inactive_keys}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_x = j.at("d_x").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.relations = j.at("relations").get<std::size_t>();
    c.d_hidden = j.at("d_hidden").get<std::size_t>();
    c.d_plm = j.at("d_plm").get<std::size_t>();
    c.d_fused = j.at("d_fused").get<std::size_t>();
    c.text_layers = j.at("text_layers").get<std::size_t>();
    c.text_heads = j.at("text_heads").get<std::size_t>();
    c.text_ff = j.at("text_ff").get<std::size_t>();
    c.l_max = j.at("l_max").get<std::size_t>();
    c.attn_heads = j.at("attn_heads").get<std::size_t>();
    c.micro_batch = j.at("micro_batch").get<std::size_t>();
    c.gnn_keep_prob = j.at("gnn_keep_prob").get<double>();
    c.head_keep_prob = j.at("head_keep_prob").get<double>();
    c.norm_eps = j.at("norm_eps").get<double>();
    c.diagonal_attention = j.at("diagonal_attention").get<bool>();
    c.mask_inactive_keys = j.at("mask_inactive_keys").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const GmlmModel& model, const std::string& path) {
    json doc;
    doc["config"] = config_to_json(model.cfg);
    doc["vocab"] = model.vocab.token_to_id;
    json params = json::object();
    for (const auto& [name, tensor] : model.named_params()) {
        params[name] = json{{"shape", tensor.shape()}, {"values", tensor.values()}};
    }
    doc["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw ValidationError("save_checkpoint: cannot write " + path);
    out << doc.dump() << "\n";
    if (!out) throw ValidationError("save_checkpoint: write failed for " + path);
}

GmlmModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("load_checkpoint: cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("load_checkpoint: " + path + ": " + e.what());
    }
    try {
        ModelConfig cfg = config_from_json(doc.at("config"));
        Vocabulary vocab;
        vocab.token_to_id = doc.at("vocab").get<std::map<std::string, int>>();
        Rng rng(0);
        GmlmModel model = GmlmModel::init(cfg, std::move(vocab), rng);
        const json& params = doc.at("params");
        for (auto& [name, tensor] : model.named_params()) {
            auto it = params.find(name);
            if (it == params.end()) {
                throw ValidationError("load_checkpoint: missing parameter " + name);
            }
            auto shape = it->at("shape").get<Shape>();
            auto values = it->at("values").get<std::vector<double>>();
            if (shape != tensor.shape() || values.size() != tensor.size()) {
                throw ValidationError("load_checkpoint: parameter " + name +
                                      " has shape/size mismatch");
            }
            std::memcpy(tensor.values_mut().data(), values.data(),
                        values.size() * sizeof(double));
        }
        if (params.size() != model.named_params().size()) {
            throw ValidationError("load_checkpoint: checkpoint has " +
                                  std::to_string(params.size()) + " parameters, model expects " +
                                  std::to_string(model.named_params().size()));
        }
        return model;
    } catch (const json::exception& e) {
        throw ParseError("load_checkpoint: " + path + ": " + e.what());
    }
}

}  // namespace gmlm
