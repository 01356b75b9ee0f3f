#include "gmlm/graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gmlm/errors.hpp"
#include "gmlm/rng.hpp"

namespace gmlm {

using nlohmann::json;

// ---- TextGraph ----------------------------------------------------------------

std::size_t TextGraph::degree(std::size_t node) const {
    std::size_t d = 0;
    for (const Edge& e : edges) {
        if (static_cast<std::size_t>(e.src) == node) ++d;
        if (static_cast<std::size_t>(e.dst) == node) ++d;
    }
    return d;
}

void TextGraph::validate() const {
    if (num_classes < 2) {
        throw ValidationError("graph: class count must be at least 2, got " +
                              std::to_string(num_classes));
    }
    if (texts.size() != num_nodes || labels.size() != num_nodes) {
        throw ValidationError("graph: texts/labels length does not match node count");
    }
    if (features.size() != num_nodes * feature_dim) {
        throw ValidationError("graph: feature buffer size does not match num_nodes x dim");
    }
    for (std::size_t i = 0; i < num_nodes; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw ValidationError("graph: node " + std::to_string(i) + " has label " +
                                  std::to_string(labels[i]) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
    }
    for (const Edge& e : edges) {
        if (e.src < 0 || e.dst < 0 || static_cast<std::size_t>(e.src) >= num_nodes ||
            static_cast<std::size_t>(e.dst) >= num_nodes) {
            throw ValidationError("graph: edge (" + std::to_string(e.src) + ", " +
                                  std::to_string(e.dst) + ") references a missing node");
        }
        if (e.rel < 0 || static_cast<std::size_t>(e.rel) >= num_relations) {
            throw ValidationError("graph: edge relation " + std::to_string(e.rel) +
                                  " outside [0, " + std::to_string(num_relations) + ")");
        }
    }
}

std::vector<std::size_t> SplitAssignment::indices(SplitTag tag) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] == static_cast<int>(tag)) out.push_back(i);
    }
    return out;
}

std::size_t SplitAssignment::count(SplitTag tag) const {
    return static_cast<std::size_t>(
        std::count(assignment.begin(), assignment.end(), static_cast<int>(tag)));
}

std::size_t NodeMask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
}

std::vector<std::size_t> NodeMask::indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) out.push_back(i);
    }
    return out;
}

// ---- ingestion ------------------------------------------------------------------

namespace {

TextGraph load_canonical_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("load_graph: cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("load_graph: " + path + ": " + e.what());
    }
    try {
        const auto& nodes = doc.at("nodes");
        TextGraph g;
        g.num_nodes = nodes.size();
        g.texts.resize(g.num_nodes);
        g.labels.resize(g.num_nodes);
        g.num_classes = doc.at("meta").at("num_classes").get<std::size_t>();

        std::vector<bool> seen(g.num_nodes, false);
        std::vector<std::vector<double>> rows(g.num_nodes);
        for (const auto& node : nodes) {
            const long long id = node.at("id").get<long long>();
            if (id < 0 || static_cast<std::size_t>(id) >= g.num_nodes) {
                throw ValidationError("load_graph: node id " + std::to_string(id) +
                                      " outside [0, " + std::to_string(g.num_nodes) + ")");
            }
            if (seen[id]) {
                throw ValidationError("load_graph: duplicate node id " + std::to_string(id));
            }
            seen[id] = true;
            rows[id] = node.at("features").get<std::vector<double>>();
            g.texts[id] = node.at("text").get<std::string>();
            g.labels[id] = node.at("label").get<int>();
        }
        g.feature_dim = g.num_nodes ? rows[0].size() : 0;
        g.features.reserve(g.num_nodes * g.feature_dim);
        for (std::size_t i = 0; i < g.num_nodes; ++i) {
            if (rows[i].size() != g.feature_dim) {
                throw ValidationError("load_graph: node " + std::to_string(i) + " has " +
                                      std::to_string(rows[i].size()) +
                                      " features, expected " + std::to_string(g.feature_dim));
            }
            g.features.insert(g.features.end(), rows[i].begin(), rows[i].end());
        }

        for (const auto& e : doc.at("edges")) {
            if (!e.is_array() || e.size() != 3) {
                throw ValidationError("load_graph: edge entries must be [src, dst, rel]");
            }
            g.edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
        }
        int max_rel = -1;
        for (const Edge& e : g.edges) max_rel = std::max(max_rel, e.rel);
        g.num_relations = static_cast<std::size_t>(max_rel + 1);
        if (doc.at("meta").contains("num_relations")) {
            g.num_relations = doc.at("meta").at("num_relations").get<std::size_t>();
        }
        if (g.num_relations == 0) g.num_relations = 1;
        g.validate();
        return g;
    } catch (const json::exception& e) {
        throw ParseError("load_graph: " + path + ": " + e.what());
    }
}

TextGraph load_tsv_triple(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("load_graph: cannot open " + path);
    TextGraph g;
    std::string line;
    std::size_t line_no = 0;
    int max_node = -1;
    int max_rel = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        int src, dst, rel;
        if (!(ls >> src >> dst >> rel)) {
            throw ParseError("load_graph: " + path + ":" + std::to_string(line_no) +
                             ": expected three integers (src dst rel)");
        }
        std::string extra;
        if (ls >> extra) {
            throw ParseError("load_graph: " + path + ":" + std::to_string(line_no) +
                             ": trailing content after triple");
        }
        if (src < 0 || dst < 0 || rel < 0) {
            throw ParseError("load_graph: " + path + ":" + std::to_string(line_no) +
                             ": negative field");
        }
        g.edges.push_back({src, dst, rel});
        max_node = std::max({max_node, src, dst});
        max_rel = std::max(max_rel, rel);
    }
    g.num_nodes = static_cast<std::size_t>(max_node + 1);
    g.num_relations = static_cast<std::size_t>(max_rel + 1);
    g.num_classes = 2;
    g.feature_dim = 0;
    g.texts.resize(g.num_nodes);
    g.labels.assign(g.num_nodes, 0);
    g.validate();
    return g;
}

}  // namespace

TextGraph load_graph(const std::string& path, const std::string& format) {
    if (format == "canonical-json") return load_canonical_json(path);
    if (format == "tsv-triple") return load_tsv_triple(path);
    throw ValidationError("load_graph: unknown format '" + format + "'");
}

void save_graph(const TextGraph& g, const std::string& path) {
    json nodes = json::array();
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        json features = json::array();
        for (std::size_t j = 0; j < g.feature_dim; ++j) features.push_back(g.feature_row(i)[j]);
        nodes.push_back({{"id", i},
                         {"features", std::move(features)},
                         {"text", g.texts[i]},
                         {"label", g.labels[i]}});
    }
    json edges = json::array();
    for (const Edge& e : g.edges) edges.push_back({e.src, e.dst, e.rel});
    json doc = {{"nodes", std::move(nodes)},
                {"edges", std::move(edges)},
                {"meta", {{"num_classes", g.num_classes}, {"num_relations", g.num_relations}}}};
    std::ofstream out(path);
    if (!out) throw ValidationError("save_graph: cannot write " + path);
    out << doc.dump(2) << '\n';
}

TextGraph add_reverse_relations(const TextGraph& g) {
    TextGraph out = g;
    const int shift = static_cast<int>(g.num_relations);
    out.num_relations = g.num_relations * 2;
    out.edges.reserve(g.edges.size() * 2);
    for (const Edge& e : g.edges) out.edges.push_back({e.dst, e.src, e.rel + shift});
    return out;
}

// ---- splits ------------------------------------------------------------------------

SplitAssignment make_splits(const TextGraph& g, const std::array<double, 3>& ratios,
                            std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("make_splits: ratios sum to " + std::to_string(total) +
                              ", expected 1");
    }
    std::vector<std::vector<std::size_t>> by_class(g.num_classes);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        by_class[static_cast<std::size_t>(g.labels[i])].push_back(i);
    }
    for (std::size_t c = 0; c < g.num_classes; ++c) {
        if (by_class[c].size() < 3) {
            throw ValidationError("make_splits: class " + std::to_string(c) + " has only " +
                                  std::to_string(by_class[c].size()) +
                                  " nodes; need at least 3 to stratify");
        }
    }

    SplitAssignment out;
    out.seed = seed;
    out.assignment.assign(g.num_nodes, 0);
    Rng root(seed);
    // Largest-remainder quotas per class, diffusing the rounding residue into
    // the next class so overall split totals also track the exact ratios.
    std::array<double, 3> carry{0.0, 0.0, 0.0};
    for (std::size_t c = 0; c < g.num_classes; ++c) {
        auto& members = by_class[c];
        Rng rng = root.fork(c);
        rng.shuffle(members);

        const std::size_t n = members.size();
        std::array<std::size_t, 3> quota{};
        std::array<double, 3> frac{};
        std::size_t assigned = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const double desired = ratios[s] * static_cast<double>(n) + carry[s];
            const double fl = std::floor(desired);
            quota[s] = static_cast<std::size_t>(std::max(0.0, fl));
            frac[s] = desired - fl;
            assigned += quota[s];
        }
        std::array<std::size_t, 3> order{0, 1, 2};
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
        for (std::size_t left = n - assigned, k = 0; left > 0; --left, ++k) {
            ++quota[order[k % 3]];
        }
        for (std::size_t s = 0; s < 3; ++s) {
            carry[s] += ratios[s] * static_cast<double>(n) - static_cast<double>(quota[s]);
        }

        std::size_t pos = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            for (std::size_t k = 0; k < quota[s]; ++k, ++pos) {
                out.assignment[members[pos]] = static_cast<int>(s);
            }
        }
    }
    return out;
}

void save_splits(const SplitAssignment& s, const std::string& path) {
    json doc = {{"seed", s.seed}, {"assignment", s.assignment}};
    std::ofstream out(path);
    if (!out) throw ValidationError("save_splits: cannot write " + path);
    out << doc.dump() << '\n';
}

SplitAssignment load_splits(const std::string& path, std::size_t expected_nodes) {
    std::ifstream in(path);
    if (!in) throw ValidationError("load_splits: cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
        SplitAssignment s;
        s.seed = doc.at("seed").get<std::uint64_t>();
        s.assignment = doc.at("assignment").get<std::vector<int>>();
        if (s.assignment.size() != expected_nodes) {
            throw ValidationError("load_splits: assignment covers " +
                                  std::to_string(s.assignment.size()) + " nodes, expected " +
                                  std::to_string(expected_nodes));
        }
        for (int tag : s.assignment) {
            if (tag < 0 || tag > 2) {
                throw ValidationError("load_splits: tag " + std::to_string(tag) +
                                      " outside {0, 1, 2}");
            }
        }
        return s;
    } catch (const json::exception& e) {
        throw ParseError("load_splits: " + path + ": " + e.what());
    }
}

// ---- sampling ----------------------------------------------------------------------

NodeMask degree_weighted_sample(const TextGraph& g, const NodeMask& eligible, double proportion,
                                std::uint64_t seed) {
    if (proportion <= 0.0 || proportion > 1.0) {
        throw std::invalid_argument("degree_weighted_sample: proportion must be in (0, 1]");
    }
    if (eligible.bits.size() != g.num_nodes) {
        throw std::invalid_argument("degree_weighted_sample: mask length mismatch");
    }
    std::vector<std::size_t> pool = eligible.indices();
    if (pool.empty()) {
        throw ValidationError("degree_weighted_sample: no eligible nodes");
    }
    const std::size_t k = static_cast<std::size_t>(
        std::llround(proportion * static_cast<double>(pool.size())));

    std::vector<double> weights(pool.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        weights[i] = static_cast<double>(g.degree(pool[i]) + 1);
        total += weights[i];
    }

    NodeMask out;
    out.kind = eligible.kind;
    out.bits.assign(g.num_nodes, false);
    Rng rng(seed);
    for (std::size_t picked = 0; picked < k; ++picked) {
        double target = rng.uniform() * total;
        std::size_t chosen = pool.size() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (weights[i] == 0.0) continue;
            acc += weights[i];
            if (target < acc) {
                chosen = i;
                break;
            }
        }
        out.bits[pool[chosen]] = true;
        total -= weights[chosen];
        weights[chosen] = 0.0;
    }
    return out;
}

// ---- synthetic corpus -----------------------------------------------------------------

TextGraph generate_synthetic(std::size_t num_nodes, std::size_t classes, double heterophily,
                             std::size_t vocab, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("generate_synthetic: need at least 2 classes");
    if (num_nodes < 2 * classes) {
        throw std::invalid_argument("generate_synthetic: need at least 2 nodes per class");
    }
    if (heterophily < 0.0 || heterophily > 1.0) {
        throw std::invalid_argument("generate_synthetic: heterophily must lie in [0, 1]");
    }
    if (vocab < classes + 1) {
        throw std::invalid_argument("generate_synthetic: vocab too small for class buckets");
    }

    Rng root(seed);
    TextGraph g;
    g.num_nodes = num_nodes;
    g.num_classes = classes;
    g.num_relations = 1;
    g.feature_dim = 8;

    g.labels.resize(num_nodes);
    for (std::size_t i = 0; i < num_nodes; ++i) g.labels[i] = static_cast<int>(i % classes);

    // Class-conditional Gaussian features around per-class anchor points.
    Rng feat_rng = root.fork(1);
    std::vector<double> anchors(classes * g.feature_dim);
    for (double& a : anchors) a = 2.0 * feat_rng.normal();
    g.features.resize(num_nodes * g.feature_dim);
    for (std::size_t i = 0; i < num_nodes; ++i) {
        const std::size_t c = static_cast<std::size_t>(g.labels[i]);
        for (std::size_t j = 0; j < g.feature_dim; ++j) {
            g.features[i * g.feature_dim + j] =
                anchors[c * g.feature_dim + j] + 0.5 * feat_rng.normal();
        }
    }

    // Vocabulary: the last fifth is shared; the rest is dealt round-robin to
    // classes so every class owns a nonempty bucket.
    const std::size_t shared_start = vocab - std::max<std::size_t>(1, vocab / 5);
    std::vector<std::vector<std::size_t>> bucket(classes);
    for (std::size_t w = 0; w < shared_start; ++w) bucket[w % classes].push_back(w);

    Rng text_rng = root.fork(2);
    g.texts.resize(num_nodes);
    for (std::size_t i = 0; i < num_nodes; ++i) {
        const std::size_t c = static_cast<std::size_t>(g.labels[i]);
        const std::size_t len = 4 + text_rng.uniform_index(5);
        std::string text;
        for (std::size_t t = 0; t < len; ++t) {
            std::size_t word;
            if (!bucket[c].empty() && text_rng.uniform() < 0.8) {
                word = bucket[c][text_rng.uniform_index(bucket[c].size())];
            } else {
                word = shared_start + text_rng.uniform_index(vocab - shared_start);
            }
            if (t) text += ' ';
            text += 'w' + std::to_string(word);
        }
        g.texts[i] = text;
    }

    // Roughly 2N directed edges; each edge crosses classes with probability
    // equal to the requested heterophily.
    Rng edge_rng = root.fork(3);
    const std::size_t num_edges = 2 * num_nodes;
    std::vector<std::vector<std::size_t>> members(classes);
    for (std::size_t i = 0; i < num_nodes; ++i) {
        members[static_cast<std::size_t>(g.labels[i])].push_back(i);
    }
    for (std::size_t e = 0; e < num_edges; ++e) {
        const std::size_t src = edge_rng.uniform_index(num_nodes);
        const std::size_t c = static_cast<std::size_t>(g.labels[src]);
        std::size_t dst;
        if (edge_rng.bernoulli(heterophily)) {
            do {
                dst = edge_rng.uniform_index(num_nodes);
            } while (static_cast<std::size_t>(g.labels[dst]) == c);
        } else {
            do {
                dst = members[c][edge_rng.uniform_index(members[c].size())];
            } while (dst == src);
        }
        g.edges.push_back({static_cast<int>(src), static_cast<int>(dst), 0});
    }
    g.validate();
    return g;
}

}  // namespace gmlm
