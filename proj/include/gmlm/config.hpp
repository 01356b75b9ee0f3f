#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gmlm/model.hpp"
#include "gmlm/training.hpp"

namespace gmlm {

struct SyntheticSpec {
    std::size_t nodes = 0;  // 0 means "no synthetic source configured"
    std::size_t classes = 3;
    double heterophily = 0.5;
    std::size_t vocab = 60;
    std::uint64_t seed = 0;
};

struct DataConfig {
    std::string graph_path;
    std::string format = "canonical-json";
    SyntheticSpec synthetic;
    bool add_reverse = true;
    std::string text_source = "internal-encoder";  // or "precomputed-file"
    std::string embeddings_path;
    std::size_t vocab_cap = 4096;
};

struct SplitConfig {
    std::array<double, 3> ratios = {0.48, 0.32, 0.20};
    std::uint64_t seed = 13;
    std::string path;  // when set, load this assignment instead of splitting
};

/// One self-contained experiment description: data source, model shape,
/// stage settings, splits, seeds and output location.
struct RunConfig {
    DataConfig data;
    ModelConfig model;  // d_x / classes / relations are filled from the data
    SplitConfig splits;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "runs";
    bool skip_pretrain = false;
    std::size_t workers = 1;
};

/// Parses a JSON config. Unknown keys and malformed values are rejected so
/// typos fail loudly instead of silently running defaults.
RunConfig load_run_config(const std::string& path);

/// Cheap structural checks (paths exist, seeds nonempty, ranges ordered),
/// run before any compute. Throws ValidationError.
void validate_run_config(const RunConfig& cfg);

}  // namespace gmlm
