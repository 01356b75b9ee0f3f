#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gmlm {

struct Edge {
    int src = 0;
    int dst = 0;
    int rel = 0;

    bool operator==(const Edge&) const = default;
};

/// A node-attributed multigraph with typed directed edges, per-node feature
/// vectors, raw text and class labels. Immutable after construction; share
/// freely across threads.
struct TextGraph {
    std::size_t num_nodes = 0;
    std::size_t feature_dim = 0;
    std::size_t num_relations = 1;
    std::size_t num_classes = 2;
    std::vector<double> features;  // row-major, num_nodes x feature_dim
    std::vector<std::string> texts;
    std::vector<int> labels;
    std::vector<Edge> edges;

    const double* feature_row(std::size_t i) const { return features.data() + i * feature_dim; }

    /// In-degree + out-degree over all relations.
    std::size_t degree(std::size_t node) const;

    /// Throws ValidationError on any structural inconsistency.
    void validate() const;
};

enum class SplitTag : int { train = 0, val = 1, test = 2 };

struct SplitAssignment {
    std::uint64_t seed = 0;
    std::vector<int> assignment;  // one of 0 (train), 1 (val), 2 (test) per node

    std::vector<std::size_t> indices(SplitTag tag) const;
    std::size_t count(SplitTag tag) const;
};

enum class MaskKind { perturbation, active };

struct NodeMask {
    MaskKind kind = MaskKind::perturbation;
    std::vector<bool> bits;

    std::size_t count() const;
    std::vector<std::size_t> indices() const;
};

// ---- ingestion ---------------------------------------------------------------

/// format is "canonical-json" (full graph document) or "tsv-triple"
/// (edge list only; nodes get empty features/texts and label 0 with two
/// placeholder classes).
TextGraph load_graph(const std::string& path, const std::string& format);

void save_graph(const TextGraph& g, const std::string& path);

/// For each relation r adds relation r+|R| holding every edge reversed.
TextGraph add_reverse_relations(const TextGraph& g);

// ---- splits -------------------------------------------------------------------

/// Stratified per class with largest-remainder rounding; deterministic in seed.
/// Throws ValidationError if any class has fewer than 3 nodes.
SplitAssignment make_splits(const TextGraph& g, const std::array<double, 3>& ratios,
                            std::uint64_t seed);

void save_splits(const SplitAssignment& s, const std::string& path);
SplitAssignment load_splits(const std::string& path, std::size_t expected_nodes);

// ---- sampling ------------------------------------------------------------------

/// Samples round(proportion * |eligible|) distinct eligible nodes without
/// replacement, inclusion weight proportional to degree+1.
NodeMask degree_weighted_sample(const TextGraph& g, const NodeMask& eligible, double proportion,
                                std::uint64_t seed);

// ---- synthetic corpus ------------------------------------------------------------

/// Round-robin labels, class-conditional Gaussian features, class-specific
/// word buckets, and roughly 2N directed edges on relation 0 where each edge
/// crosses classes with the given probability.
TextGraph generate_synthetic(std::size_t num_nodes, std::size_t classes, double heterophily,
                             std::size_t vocab, std::uint64_t seed);

}  // namespace gmlm
