#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gmlm/graph.hpp"
#include "gmlm/model.hpp"
#include "gmlm/rng.hpp"
#include "gmlm/tensor.hpp"

namespace gmlm {

// ---- losses -------------------------------------------------------------------

/// Normalized-temperature cross entropy over two views of the same batch:
/// rows i of z1 and z2 are positives, every other row of the 2B pool is a
/// negative, similarities are cosine / tau, and the two anchoring directions
/// are averaged. Zero-norm rows are rejected.
Tensor nt_xent_loss(const Tensor& z1, const Tensor& z2, double tau);

/// Mean over rows of -sum_c target_c * log(probs_c) with
/// target = (1 - s) * one_hot(label) + s / classes.
Tensor label_smoothed_ce(const Tensor& probs, const std::vector<int>& labels, double smoothing);

/// Same quantity from pre-softmax scores via a shift-stable log-softmax;
/// preferred inside the training loop where logits can grow large.
Tensor label_smoothed_ce_logits(const Tensor& logits, const std::vector<int>& labels,
                                double smoothing);

// ---- schedules ----------------------------------------------------------------

enum class ScheduleKind { warmup_linear, cosine_warm_restarts };

/// warmup_linear: 0 at step 0, 1 after the first 10% of total_steps, then
/// linear to 0 at total_steps. cosine_warm_restarts: half-cosine from 1 to 0
/// over t0 steps, each restart multiplying the period by t_mult
/// (total_steps is ignored).
double schedule_factor(std::size_t step, std::size_t total_steps, ScheduleKind kind,
                       std::size_t t0 = 10, std::size_t t_mult = 2);

// ---- optimizer ------------------------------------------------------------------

struct OptimizerGroup {
    std::string name;
    double lr = 1e-4;
    double weight_decay = 0.0;
    NamedParams params;
};

/// Adam with decoupled weight decay and bias correction:
/// p <- p - lr_eff * (m_hat / (sqrt(v_hat) + eps) + wd * p), lr_eff = lr * factor.
class AdamW {
public:
    explicit AdamW(std::vector<OptimizerGroup> groups, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8);

    void zero_grad();
    double global_grad_norm() const;
    /// Rescales every gradient so the global norm is at most max_norm;
    /// returns the pre-clip norm.
    double clip_global_norm(double max_norm);
    void step(double schedule_factor);

    std::size_t step_count() const { return t_; }
    const std::vector<OptimizerGroup>& groups() const { return groups_; }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };

    std::vector<OptimizerGroup> groups_;
    std::vector<std::vector<Slot>> slots_;
    double beta1_;
    double beta2_;
    double eps_;
    std::size_t t_ = 0;
};

// ---- metrics --------------------------------------------------------------------

struct EvalMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& probs);

/// Accuracy and macro F1 over node_set. Classes with no true instance in
/// node_set do not enter the F1 average.
EvalMetrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& truth,
                            const std::vector<std::size_t>& node_set, std::size_t classes);

/// Full-graph forward in eval mode (all nodes active, no perturbation, no
/// dropout), scored on node_set.
EvalMetrics evaluate(const GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                     const std::vector<std::size_t>& node_set);

// ---- early stopping ---------------------------------------------------------------

struct EarlyStopState {
    double best_value = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t since_improvement = 0;
    std::vector<std::vector<double>> snapshot;  // parallel to the tracked params
};

/// Strict improvement resets the counter and snapshots params; otherwise the
/// counter grows. Returns false (stop) once the counter exceeds patience.
bool early_stop_update(EarlyStopState& st, std::size_t epoch, double value,
                       const NamedParams& params, std::size_t patience);

/// Copies the best snapshot back into params. No-op if nothing was recorded.
void restore_snapshot(const EarlyStopState& st, const NamedParams& params);

// ---- stage configs ------------------------------------------------------------------

struct PretrainConfig {
    std::size_t epochs = 30;
    double beta = 0.7;
    double tau = 0.1;
    double mask_lo = 0.2;
    double mask_hi = 0.4;
    double lr = 1e-4;
    double weight_decay = 0.05;
    std::size_t batch_cap = 256;
    std::size_t t0 = 10;
    std::size_t t_mult = 2;
    std::uint64_t seed = 0;
};

struct FinetuneConfig {
    std::size_t max_epochs = 500;
    std::size_t patience = 30;
    double active_lo = 0.3;
    double active_hi = 0.8;
    double beta = 0.7;
    double label_smoothing = 0.2;
    double lr_graph = 1e-4;
    double lr_text = 1e-5;
    double lr_other = 1e-4;
    double wd_graph = 0.05;
    double wd_text = 0.01;
    double wd_other = 0.05;
    double warmup_frac = 0.10;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
};

/// Stage-1 optimizer: one group holding the GNN parameters and the mask
/// token; everything else stays out and therefore bit-identical.
AdamW make_pretrain_optimizer(const GmlmModel& model, const PretrainConfig& cfg);

/// Stage-2 optimizer: graph / text / other groups with their own lr and
/// weight decay.
AdamW make_finetune_optimizer(const GmlmModel& model, const FinetuneConfig& cfg);

struct PretrainState {
    AdamW opt;
    Rng root;
    std::size_t epoch = 0;
};

struct FinetuneState {
    AdamW opt;
    Rng root;
    std::size_t epoch = 0;
};

PretrainState make_pretrain_state(const GmlmModel& model, const PretrainConfig& cfg);
FinetuneState make_finetune_state(const GmlmModel& model, const FinetuneConfig& cfg);

// ---- epochs ------------------------------------------------------------------------

/// One contrastive step: two degree-weighted soft-maskings of the features,
/// the shared GNN on both, NT-Xent over a sampled batch, one optimizer step
/// under the cosine-warm-restarts factor. Returns the loss.
double pretrain_epoch(GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                      const PretrainConfig& cfg, PretrainState& st);

struct FinetuneEpochResult {
    double loss = 0.0;
    EvalMetrics val;
};

/// One supervised step: degree-weighted active sample of the training nodes
/// gates the text branch and soft-masks the features, label-smoothed loss
/// over the active rows, clipped AdamW step under the warmup-linear factor,
/// then a validation pass.
FinetuneEpochResult finetune_epoch(GmlmModel& model, const TextGraph& g,
                                   const RelationAggregates& agg, const SplitAssignment& splits,
                                   const FinetuneConfig& cfg, FinetuneState& st);

// ---- logging -------------------------------------------------------------------------

struct EpochLog {
    int stage = 1;
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_acc = 0.0;
    double val_f1 = 0.0;
    std::vector<std::pair<std::string, double>> lr_factors;
};

using EpochSink = std::function<void(const EpochLog&)>;

struct TrainReport {
    double test_acc = 0.0;
    double test_f1 = 0.0;
    std::size_t best_epoch = 0;
    std::uint64_t seed = 0;
};

/// One JSON object, no trailing newline.
std::string metrics_json_line(const EpochLog& log);
std::string report_json(const TrainReport& report);

// ---- full runs -------------------------------------------------------------------------

/// Runs cfg.epochs contrastive epochs; returns the last loss.
double run_pretrain(GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                    const PretrainConfig& cfg, const EpochSink& sink = nullptr);

/// Fine-tunes with early stopping on validation macro F1, restores the best
/// snapshot, and scores the test split.
TrainReport run_finetune(GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                         const SplitAssignment& splits, const FinetuneConfig& cfg,
                         const EpochSink& sink = nullptr);

}  // namespace gmlm
