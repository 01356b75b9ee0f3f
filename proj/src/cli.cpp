#include "gmlm/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "gmlm/config.hpp"
#include "gmlm/errors.hpp"
#include "gmlm/fusion.hpp"
#include "gmlm/graph.hpp"
#include "gmlm/model.hpp"
#include "gmlm/text.hpp"
#include "gmlm/training.hpp"

namespace gmlm {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(std::numeric_limits<double>::max_digits10);
    out << v;
    return out.str();
}

double cross_class_fraction(const TextGraph& g) {
    if (g.edges.empty()) return 0.0;
    std::size_t cross = 0;
    for (const Edge& e : g.edges)
        if (g.labels[static_cast<std::size_t>(e.src)] != g.labels[static_cast<std::size_t>(e.dst)])
            ++cross;
    return static_cast<double>(cross) / static_cast<double>(g.edges.size());
}

NodeMask all_active(std::size_t n) {
    return NodeMask{MaskKind::active, std::vector<bool>(n, true)};
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
    std::size_t nodes = 100;
    std::size_t classes = 3;
    double heterophily = 0.5;
    std::size_t vocab = 60;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    TextGraph g = generate_synthetic(a.nodes, a.classes, a.heterophily, a.vocab, a.seed);
    save_graph(g, a.out);
    std::cout << "synthetic graph: " << g.num_nodes << " nodes, " << g.edges.size()
              << " edges, " << g.num_classes << " classes, measured heterophily "
              << cross_class_fraction(g) << "\n";
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

// ---- shared data loading ----------------------------------------------------

struct LoadedData {
    TextGraph graph;
    SplitAssignment splits;
    Vocabulary vocab;
    Tensor precomputed;  // undefined unless the config points at an embedding file
};

TextGraph load_or_generate(const DataConfig& d) {
    TextGraph g;
    if (!d.graph_path.empty())
        g = load_graph(d.graph_path, d.format);
    else
        g = generate_synthetic(d.synthetic.nodes, d.synthetic.classes, d.synthetic.heterophily,
                               d.synthetic.vocab, d.synthetic.seed);
    if (d.add_reverse) g = add_reverse_relations(g);
    return g;
}

LoadedData load_run_data(const RunConfig& cfg) {
    LoadedData out;
    out.graph = load_or_generate(cfg.data);
    if (!cfg.splits.path.empty())
        out.splits = load_splits(cfg.splits.path, out.graph.num_nodes);
    else
        out.splits = make_splits(out.graph, cfg.splits.ratios, cfg.splits.seed);
    out.vocab = Vocabulary::build(out.graph.texts, cfg.data.vocab_cap);
    if (cfg.data.text_source == "precomputed-file")
        out.precomputed = load_precomputed_embeddings(cfg.data.embeddings_path, out.graph);
    return out;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::vector<std::uint64_t> seeds;  // override when nonempty
    bool skip_pretrain = false;
    int workers = 0;  // override when > 0
    std::string out;  // override when nonempty
};

ModelConfig resolve_model_config(const RunConfig& cfg, const TextGraph& g) {
    ModelConfig mc = cfg.model;
    mc.d_x = g.feature_dim;
    mc.classes = g.num_classes;
    mc.relations = g.num_relations;
    return mc;
}

TrainReport train_one_seed(const RunConfig& cfg, const LoadedData& data,
                           const RelationAggregates& agg, std::uint64_t seed,
                           const fs::path& out_dir) {
    Rng init_rng(seed);
    GmlmModel model = GmlmModel::init(resolve_model_config(cfg, data.graph), data.vocab, init_rng);
    if (data.precomputed.defined()) model.text_embeddings = data.precomputed;

    const std::string stem = "seed_" + std::to_string(seed);
    std::ofstream metrics(out_dir / (stem + "_metrics.jsonl"), std::ios::app);
    if (!metrics) throw std::runtime_error("cli: cannot open metrics log for seed " + std::to_string(seed));
    EpochSink sink = [&metrics](const EpochLog& log) {
        metrics << metrics_json_line(log) << "\n";
        metrics.flush();
    };

    if (!cfg.skip_pretrain && cfg.pretrain.epochs > 0) {
        PretrainConfig pc = cfg.pretrain;
        pc.seed = Rng::mix(seed, 0x9e3779b97f4a7c15ull);
        run_pretrain(model, data.graph, agg, pc, sink);
        save_checkpoint(model, (out_dir / (stem + "_pretrained.json")).string());
    }

    FinetuneConfig fc = cfg.finetune;
    fc.seed = Rng::mix(seed, 0xbf58476d1ce4e5b9ull);
    TrainReport report = run_finetune(model, data.graph, agg, data.splits, fc, sink);
    report.seed = seed;

    save_checkpoint(model, (out_dir / (stem + "_model.json")).string());
    std::ofstream rep(out_dir / (stem + "_report.json"));
    rep << report_json(report) << "\n";
    return report;
}

json summary_stats(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return json{{"mean", mean}, {"std", std::sqrt(var)}, {"per_seed", xs}};
}

void write_aggregate(const std::vector<TrainReport>& reports, const fs::path& out_dir) {
    std::vector<double> acc, f1;
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> best;
    for (const TrainReport& r : reports) {
        acc.push_back(r.test_acc);
        f1.push_back(r.test_f1);
        seeds.push_back(r.seed);
        best.push_back(r.best_epoch);
    }
    json doc{{"num_seeds", reports.size()},
             {"seeds", seeds},
             {"test_acc", summary_stats(acc)},
             {"test_f1", summary_stats(f1)},
             {"best_epoch", json{{"per_seed", best}}}};
    std::ofstream out(out_dir / "aggregate.json");
    out << doc.dump(2) << "\n";

    const json& a = doc["test_acc"];
    const json& f = doc["test_f1"];
    std::cout << "aggregate over " << reports.size() << " seeds: test_acc "
              << format_double(a["mean"].get<double>()) << " +/- "
              << format_double(a["std"].get<double>()) << ", test_f1 "
              << format_double(f["mean"].get<double>()) << " +/- "
              << format_double(f["std"].get<double>()) << "\n";
}

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = load_run_config(a.config_path);
    if (!a.seeds.empty()) cfg.seeds = a.seeds;
    if (a.skip_pretrain) cfg.skip_pretrain = true;
    if (a.workers > 0) cfg.workers = static_cast<std::size_t>(a.workers);
    if (!a.out.empty()) cfg.out_dir = a.out;
    validate_run_config(cfg);

    LoadedData data = load_run_data(cfg);
    RelationAggregates agg = RelationAggregates::build(data.graph);
    fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);
    save_splits(data.splits, (out_dir / "splits.json").string());

    std::vector<TrainReport> reports(cfg.seeds.size());
    std::vector<std::exception_ptr> failures(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= cfg.seeds.size()) return;
            try {
                reports[i] = train_one_seed(cfg, data, agg, cfg.seeds[i], out_dir);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };

    std::size_t threads = std::min(cfg.workers, cfg.seeds.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    for (const std::exception_ptr& e : failures)
        if (e) std::rethrow_exception(e);

    for (const TrainReport& r : reports)
        std::cout << "seed " << r.seed << ": test_acc " << format_double(r.test_acc)
                  << " test_f1 " << format_double(r.test_f1) << " best_epoch " << r.best_epoch
                  << "\n";
    write_aggregate(reports, out_dir);
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string graph;
    std::string format = "canonical-json";
    bool add_reverse = true;
    std::string splits;
    std::string split = "test";
    std::string embeddings;
    std::string out;
};

void check_data_dims(const ModelConfig& cfg, const TextGraph& g) {
    if (g.feature_dim != cfg.d_x)
        throw ValidationError("eval: graph feature width " + std::to_string(g.feature_dim) +
                              " does not match checkpoint feature width " +
                              std::to_string(cfg.d_x));
    if (g.num_classes != cfg.classes)
        throw ValidationError("eval: graph has " + std::to_string(g.num_classes) +
                              " classes but checkpoint expects " + std::to_string(cfg.classes));
    if (g.num_relations != cfg.relations)
        throw ValidationError("eval: graph has " + std::to_string(g.num_relations) +
                              " relations but checkpoint expects " +
                              std::to_string(cfg.relations) +
                              " (check the reverse-relation setting)");
}

SplitTag parse_split(const std::string& name) {
    if (name == "train") return SplitTag::train;
    if (name == "val") return SplitTag::val;
    if (name == "test") return SplitTag::test;
    throw std::invalid_argument("eval: unknown split '" + name + "' (use train, val or test)");
}

int cmd_eval(const EvalArgs& a) {
    SplitTag tag = parse_split(a.split);
    GmlmModel model = load_checkpoint(a.checkpoint);
    TextGraph g = load_graph(a.graph, a.format);
    if (a.add_reverse) g = add_reverse_relations(g);
    check_data_dims(model.cfg, g);
    if (!a.embeddings.empty())
        model.text_embeddings = load_precomputed_embeddings(a.embeddings, g);

    SplitAssignment splits = load_splits(a.splits, g.num_nodes);
    RelationAggregates agg = RelationAggregates::build(g);
    EvalMetrics m = evaluate(model, g, agg, splits.indices(tag));

    json doc{{"split", a.split}, {"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}};
    std::cout << doc.dump() << "\n";
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        out << doc.dump() << "\n";
    }
    return 0;
}

// ---- dump-embeddings -----------------------------------------------------------

struct DumpArgs {
    std::string checkpoint;
    std::string graph;
    std::string format = "canonical-json";
    bool add_reverse = true;
    std::string which = "fused";
    std::string embeddings;
    std::string out;
};

int cmd_dump_embeddings(const DumpArgs& a) {
    if (a.which != "gnn" && a.which != "text" && a.which != "fused")
        throw std::invalid_argument("dump-embeddings: unknown source '" + a.which +
                                    "' (use gnn, text or fused)");
    GmlmModel model = load_checkpoint(a.checkpoint);
    TextGraph g = load_graph(a.graph, a.format);
    if (a.add_reverse) g = add_reverse_relations(g);
    check_data_dims(model.cfg, g);
    if (!a.embeddings.empty())
        model.text_embeddings = load_precomputed_embeddings(a.embeddings, g);

    NoGradGuard guard;
    NodeMask active = all_active(g.num_nodes);
    Tensor m;
    if (a.which == "gnn") {
        RelationAggregates agg = RelationAggregates::build(g);
        m = model.gnn.forward(GmlmModel::features_of(g), agg, false, nullptr);
    } else if (a.which == "text") {
        m = model.text_matrix(g, active);
    } else {
        RelationAggregates agg = RelationAggregates::build(g);
        Tensor h_g = model.gnn.forward(GmlmModel::features_of(g), agg, false, nullptr);
        Tensor h_plm = model.text_matrix(g, active);
        auto [h_gtot, h_ttog] = bidirectional_fuse(h_g, h_plm, model.attn, &active);
        m = fused_representation(h_gtot, h_ttog, model.head);
    }

    const auto& shape = m.shape();
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("dump-embeddings: cannot open " + a.out);
    out << "id,label";
    for (std::size_t j = 0; j < shape[1]; ++j) out << ",e" << j;
    out << "\n";
    const std::vector<double>& v = m.values();
    for (std::size_t i = 0; i < shape[0]; ++i) {
        out << i << "," << g.labels[i];
        for (std::size_t j = 0; j < shape[1]; ++j)
            out << "," << format_double(v[i * shape[1] + j]);
        out << "\n";
    }
    std::cout << "wrote " << a.out << " (" << shape[0] << " x " << shape[1] << " " << a.which
              << " embeddings)\n";
    return 0;
}

}  // namespace

// ---- entry point ------------------------------------------------------------

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Two-branch graph/text node classifier"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic labeled text graph");
    synth->add_option("--nodes", synth_args.nodes, "Node count");
    synth->add_option("--classes", synth_args.classes, "Label count");
    synth->add_option("--heterophily", synth_args.heterophily,
                      "Probability that an edge crosses classes");
    synth->add_option("--vocab", synth_args.vocab, "Synthetic vocabulary size");
    synth->add_option("--seed", synth_args.seed, "Generator seed");
    synth->add_option("--out", synth_args.out, "Output graph path")->required();

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "Run contrastive pretraining and fine-tuning");
    train->add_option("--config", train_args.config_path, "Run config (JSON)")->required();
    train->add_option("--seeds", train_args.seeds, "Override the config seed list")
        ->delimiter(',');
    train->add_flag("--skip-pretrain", train_args.skip_pretrain,
                    "Fine-tune directly from random initialization");
    train->add_option("--workers", train_args.workers, "Threads across seeds");
    train->add_option("--out", train_args.out, "Override the output directory");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on one split");
    eval->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
    eval->add_option("--graph", eval_args.graph, "Graph file")->required();
    eval->add_option("--format", eval_args.format, "Graph format");
    eval->add_flag("--add-reverse,!--no-add-reverse", eval_args.add_reverse,
                   "Add reversed relations after loading");
    eval->add_option("--splits", eval_args.splits, "Split assignment file")->required();
    eval->add_option("--split", eval_args.split, "train, val or test");
    eval->add_option("--embeddings", eval_args.embeddings, "Precomputed text embeddings (TSV)");
    eval->add_option("--out", eval_args.out, "Also write the metrics JSON here");

    DumpArgs dump_args;
    CLI::App* dump = app.add_subcommand("dump-embeddings", "Export node embeddings as CSV");
    dump->add_option("--checkpoint", dump_args.checkpoint, "Model checkpoint")->required();
    dump->add_option("--graph", dump_args.graph, "Graph file")->required();
    dump->add_option("--format", dump_args.format, "Graph format");
    dump->add_flag("--add-reverse,!--no-add-reverse", dump_args.add_reverse,
                   "Add reversed relations after loading");
    dump->add_option("--which", dump_args.which, "gnn, text or fused");
    dump->add_option("--embeddings", dump_args.embeddings, "Precomputed text embeddings (TSV)");
    dump->add_option("--out", dump_args.out, "Output CSV path")->required();

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.push_back("gmlm");
    for (const std::string& s : args) argv_storage.push_back(s);
    std::vector<const char*> argv;
    for (const std::string& s : argv_storage) argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (dump->parsed()) return cmd_dump_embeddings(dump_args);
        return 2;
    } catch (const ValidationError& e) {  // covers ParseError too
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace gmlm
