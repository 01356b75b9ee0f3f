#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "gmlm/errors.hpp"
#include "gmlm/model.hpp"
#include "test_util.hpp"

using namespace gmlm;

namespace {

ModelConfig small_config(const TextGraph& g) {
    ModelConfig cfg;
    cfg.d_x = g.feature_dim;
    cfg.classes = g.num_classes;
    cfg.relations = g.num_relations;
    cfg.d_hidden = 6;
    cfg.d_plm = 8;
    cfg.d_fused = 10;
    cfg.text_layers = 1;
    cfg.text_heads = 2;
    cfg.text_ff = 12;
    cfg.l_max = 6;
    cfg.attn_heads = 2;
    cfg.micro_batch = 3;
    return cfg;
}

GmlmModel small_model(const TextGraph& g, std::uint64_t seed) {
    Rng rng(seed);
    Vocabulary vocab = Vocabulary::build(g.texts, 40);
    return GmlmModel::init(small_config(g), vocab, rng);
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/gmlm_model_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("param groups: text/graph/other partition the names") {
    CHECK(param_group_of("text.tok_emb") == ParamGroup::text);
    CHECK(param_group_of("text.block1.wq") == ParamGroup::text);
    CHECK(param_group_of("gnn.block2.rgcn.w_self") == ParamGroup::graph);
    CHECK(param_group_of("gnn.fusion.logits") == ParamGroup::graph);
    CHECK(param_group_of("gnn.e_mask") == ParamGroup::other);
    CHECK(param_group_of("attn.gtot.wq") == ParamGroup::other);
    CHECK(param_group_of("head.cls2_w") == ParamGroup::other);
}

TEST_CASE("model: named params are unique and the groups partition them") {
    TextGraph g = generate_synthetic(18, 3, 0.5, 24, 11);
    GmlmModel m = small_model(g, 5);

    NamedParams all = m.named_params();
    std::set<std::string> names;
    for (auto& [name, t] : all) {
        CHECK(t.defined());
        CHECK(t.requires_grad());
        names.insert(name);
    }
    CHECK(names.size() == all.size());

    const std::size_t split_total = m.params_in_group(ParamGroup::graph).size() +
                                    m.params_in_group(ParamGroup::text).size() +
                                    m.params_in_group(ParamGroup::other).size();
    CHECK(split_total == all.size());

    NamedParams stage1 = m.pretrain_params();
    std::set<std::string> stage1_names;
    for (auto& [name, t] : stage1) stage1_names.insert(name);
    CHECK(stage1_names.count("gnn.e_mask") == 1);
    for (auto& [name, t] : m.params_in_group(ParamGroup::graph)) {
        CHECK(stage1_names.count(name) == 1);
    }
    CHECK(stage1.size() == m.params_in_group(ParamGroup::graph).size() + 1);
}

TEST_CASE("model: forward_probs rows are distributions over the classes") {
    TextGraph g = generate_synthetic(15, 3, 0.4, 24, 3);
    TextGraph gr = add_reverse_relations(g);
    GmlmModel m = small_model(gr, 9);
    RelationAggregates agg = RelationAggregates::build(gr);

    NodeMask all;
    all.kind = MaskKind::active;
    all.bits.assign(gr.num_nodes, true);

    Tensor probs = m.forward_probs(gr, GmlmModel::features_of(gr), agg, all, false, nullptr);
    REQUIRE(probs.rows() == gr.num_nodes);
    REQUIRE(probs.cols() == gr.num_classes);
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        double row = 0.0;
        for (std::size_t c = 0; c < probs.cols(); ++c) {
            const double v = probs.values()[i * probs.cols() + c];
            CHECK(v >= 0.0);
            row += v;
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint: save/load round trip is bit exact") {
    TextGraph g = generate_synthetic(16, 4, 0.6, 30, 21);
    TextGraph gr = add_reverse_relations(g);
    GmlmModel m = small_model(gr, 33);
    RelationAggregates agg = RelationAggregates::build(gr);

    TempFile file("roundtrip.json");
    save_checkpoint(m, file.path);
    GmlmModel loaded = load_checkpoint(file.path);

    CHECK(loaded.cfg.d_hidden == m.cfg.d_hidden);
    CHECK(loaded.cfg.micro_batch == m.cfg.micro_batch);
    CHECK(loaded.vocab.token_to_id == m.vocab.token_to_id);

    NamedParams a = m.named_params();
    NamedParams b = loaded.named_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        REQUIRE(a[i].second.size() == b[i].second.size());
        for (std::size_t k = 0; k < a[i].second.size(); ++k) {
            CHECK(a[i].second.values()[k] == b[i].second.values()[k]);
        }
    }

    NodeMask all;
    all.kind = MaskKind::active;
    all.bits.assign(gr.num_nodes, true);
    Tensor p1 = m.forward_probs(gr, GmlmModel::features_of(gr), agg, all, false, nullptr);
    Tensor p2 = loaded.forward_probs(gr, GmlmModel::features_of(gr), agg, all, false, nullptr);
    for (std::size_t k = 0; k < p1.size(); ++k) {
        CHECK(p1.values()[k] == p2.values()[k]);
    }
}

TEST_CASE("checkpoint: malformed and incomplete files are rejected") {
    TextGraph g = generate_synthetic(12, 3, 0.5, 24, 2);
    GmlmModel m = small_model(g, 1);

    TempFile garbage("garbage.json");
    {
        std::ofstream out(garbage.path);
        out << "{not json";
    }
    CHECK_THROWS_AS(load_checkpoint(garbage.path), ParseError);

    TempFile missing("missing.json");
    save_checkpoint(m, missing.path);
    {
        std::ifstream in(missing.path);
        std::string doc((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const std::string key = "\"gnn.e_mask\"";
        doc.replace(doc.find(key), key.size(), "\"gnn.e_mask_gone\"");
        std::ofstream out(missing.path);
        out << doc;
    }
    CHECK_THROWS_AS(load_checkpoint(missing.path), ValidationError);

    CHECK_THROWS_AS(load_checkpoint("/tmp/gmlm_no_such_checkpoint.json"), ValidationError);
}

TEST_CASE("model: init rejects an unset feature width") {
    Vocabulary v;
    ModelConfig cfg;
    cfg.d_x = 0;
    Rng rng(0);
    CHECK_THROWS_AS(GmlmModel::init(cfg, v, rng), std::invalid_argument);
}
