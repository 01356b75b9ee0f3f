#include "gmlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <set>
#include <stdexcept>

#include "gmlm/errors.hpp"
#include "gmlm/fusion.hpp"
#include "gmlm/gnn.hpp"
#include "gmlm/text.hpp"

namespace gmlm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

NodeMask full_mask(std::size_t n, MaskKind kind) {
    NodeMask m;
    m.kind = kind;
    m.bits.assign(n, true);
    return m;
}

NodeMask mask_from_indices(std::size_t n, const std::vector<std::size_t>& idx, MaskKind kind) {
    NodeMask m;
    m.kind = kind;
    m.bits.assign(n, false);
    for (std::size_t i : idx) m.bits[i] = true;
    return m;
}

/// Row maxima of a matrix, ignoring -inf entries, as a detached n x 1 tensor.
/// Subtracting it keeps exp() in range without touching the gradient.
Tensor detached_row_max(const Tensor& m) {
    const std::size_t rows = m.rows();
    const std::size_t cols = m.cols();
    std::vector<double> mx(rows, kNegInf);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            mx[i] = std::max(mx[i], m.values()[i * cols + j]);
        }
        if (!std::isfinite(mx[i])) {
            throw std::invalid_argument("log-sum-exp: a row has no finite entry");
        }
    }
    return Tensor::from_values({rows, 1}, mx);
}

/// log(sum_j exp(m_ij)) per row, n x 1, stable under large entries.
Tensor row_log_sum_exp(const Tensor& m) {
    Tensor mx = detached_row_max(m);
    return add(log(sum_axis(exp(sub(m, mx)), 1)), mx);
}

Tensor one_hot_targets(std::size_t rows, std::size_t cols, const std::vector<int>& labels) {
    std::vector<double> h(rows * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= cols) {
            throw std::invalid_argument("cross entropy: label " + std::to_string(labels[i]) +
                                        " outside [0, " + std::to_string(cols) + ")");
        }
        h[i * cols + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::from_values({rows, cols}, h);
}

}  // namespace

// ---- losses -------------------------------------------------------------------

Tensor nt_xent_loss(const Tensor& z1, const Tensor& z2, double tau) {
    if (!z1.defined() || !z2.defined() || z1.ndim() != 2 || z2.ndim() != 2) {
        throw std::invalid_argument("nt_xent_loss: expects two defined matrices");
    }
    if (z1.rows() != z2.rows() || z1.cols() != z2.cols() || z1.rows() == 0) {
        throw std::invalid_argument("nt_xent_loss: views must share a nonempty B x d shape");
    }
    if (tau <= 0.0) {
        throw std::invalid_argument("nt_xent_loss: tau must be positive");
    }
    const std::size_t b = z1.rows();
    const std::size_t n = 2 * b;

    Tensor u = concat_rows({z1, z2});
    Tensor norms = sqrt(sum_axis(mul(u, u), 1));  // n x 1
    for (double v : norms.values()) {
        if (v == 0.0) {
            throw std::invalid_argument("nt_xent_loss: zero-norm embedding has no direction");
        }
    }
    Tensor unit = div(u, norms);
    Tensor sim = matmul(unit, transpose(unit)) * (1.0 / tau);

    std::vector<double> diag(n * n, 0.0);
    std::vector<double> partner(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        diag[i * n + i] = kNegInf;
        const std::size_t j = i < b ? i + b : i - b;
        partner[i * n + j] = 1.0;
    }
    Tensor masked = add(sim, Tensor::from_values({n, n}, diag));

    Tensor denom = sum(row_log_sum_exp(masked));
    Tensor pos = sum(mul(sim, Tensor::from_values({n, n}, partner)));
    return sub(denom, pos) * (1.0 / static_cast<double>(n));
}

Tensor label_smoothed_ce(const Tensor& probs, const std::vector<int>& labels, double smoothing) {
    if (!probs.defined() || probs.ndim() != 2 || probs.rows() == 0) {
        throw std::invalid_argument("label_smoothed_ce: expects a nonempty probability matrix");
    }
    if (labels.size() != probs.rows()) {
        throw std::invalid_argument("label_smoothed_ce: one label per row required");
    }
    if (smoothing < 0.0 || smoothing >= 1.0) {
        throw std::invalid_argument("label_smoothed_ce: smoothing must lie in [0, 1)");
    }
    const std::size_t rows = probs.rows();
    const std::size_t classes = probs.cols();
    Tensor hot = one_hot_targets(rows, classes, labels);

    Tensor picked = sum(log(sum_axis(mul(probs, hot), 1)));
    Tensor loss = picked * (-(1.0 - smoothing) / static_cast<double>(rows));
    if (smoothing > 0.0) {
        Tensor all = sum(log(probs));
        loss = add(loss, all * (-smoothing /
                                static_cast<double>(rows * classes)));
    }
    return loss;
}

Tensor label_smoothed_ce_logits(const Tensor& logits, const std::vector<int>& labels,
                                double smoothing) {
    if (!logits.defined() || logits.ndim() != 2 || logits.rows() == 0) {
        throw std::invalid_argument("label_smoothed_ce: expects a nonempty score matrix");
    }
    if (labels.size() != logits.rows()) {
        throw std::invalid_argument("label_smoothed_ce: one label per row required");
    }
    if (smoothing < 0.0 || smoothing >= 1.0) {
        throw std::invalid_argument("label_smoothed_ce: smoothing must lie in [0, 1)");
    }
    const std::size_t rows = logits.rows();
    const std::size_t classes = logits.cols();
    Tensor logp = sub(logits, row_log_sum_exp(logits));  // broadcast n x 1
    Tensor hot = one_hot_targets(rows, classes, labels);

    Tensor picked = sum(mul(logp, hot));
    Tensor loss = picked * (-(1.0 - smoothing) / static_cast<double>(rows));
    if (smoothing > 0.0) {
        loss = add(loss, sum(logp) * (-smoothing / static_cast<double>(rows * classes)));
    }
    return loss;
}

// ---- schedules ----------------------------------------------------------------

double schedule_factor(std::size_t step, std::size_t total_steps, ScheduleKind kind,
                       std::size_t t0, std::size_t t_mult) {
    switch (kind) {
        case ScheduleKind::warmup_linear: {
            if (total_steps == 0) {
                throw std::invalid_argument("schedule_factor: total_steps must be positive");
            }
            if (step >= total_steps) return 0.0;
            const auto warm = static_cast<std::size_t>(
                std::max<long long>(1, std::llround(0.10 * static_cast<double>(total_steps))));
            if (step <= warm) {
                return static_cast<double>(step) / static_cast<double>(warm);
            }
            return static_cast<double>(total_steps - step) /
                   static_cast<double>(total_steps - warm);
        }
        case ScheduleKind::cosine_warm_restarts: {
            if (t0 == 0 || t_mult == 0) {
                throw std::invalid_argument("schedule_factor: t0 and t_mult must be positive");
            }
            std::size_t rem = step;
            std::size_t period = t0;
            while (rem >= period) {
                rem -= period;
                period *= t_mult;
            }
            const double x = static_cast<double>(rem) / static_cast<double>(period);
            return 0.5 * (1.0 + std::cos(x * 3.14159265358979323846));
        }
    }
    throw std::logic_error("schedule_factor: unknown kind");
}

// ---- optimizer ------------------------------------------------------------------

AdamW::AdamW(std::vector<OptimizerGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (beta1_ < 0.0 || beta1_ >= 1.0 || beta2_ < 0.0 || beta2_ >= 1.0 || eps_ <= 0.0) {
        throw std::invalid_argument("optimizer: betas must lie in [0, 1), eps must be positive");
    }
    std::set<const detail::TensorNode*> seen;
    slots_.resize(groups_.size());
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
        slots_[gi].resize(groups_[gi].params.size());
        for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
            const auto& [name, p] = groups_[gi].params[pi];
            if (!p.defined()) {
                throw std::invalid_argument("optimizer: parameter " + name + " is undefined");
            }
            if (!seen.insert(p.node()).second) {
                throw std::invalid_argument("optimizer: parameter " + name +
                                            " appears in more than one group");
            }
            slots_[gi][pi].m.assign(p.size(), 0.0);
            slots_[gi][pi].v.assign(p.size(), 0.0);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& group : groups_) {
        for (auto& [name, p] : group.params) {
            p.zero_grad();
        }
    }
}

double AdamW::global_grad_norm() const {
    double sq = 0.0;
    for (const auto& group : groups_) {
        for (const auto& [name, p] : group.params) {
            if (!p.has_grad()) continue;
            for (double g : p.grad()) sq += g * g;
        }
    }
    return std::sqrt(sq);
}

double AdamW::clip_global_norm(double max_norm) {
    if (max_norm <= 0.0) {
        throw std::invalid_argument("clip_global_norm: max_norm must be positive");
    }
    const double norm = global_grad_norm();
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& group : groups_) {
            for (auto& [name, p] : group.params) {
                if (!p.has_grad()) continue;
                for (double& g : p.node()->grad) g *= scale;
            }
        }
    }
    return norm;
}

void AdamW::step(double schedule_factor) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
        const double lr_eff = groups_[gi].lr * schedule_factor;
        const double wd = groups_[gi].weight_decay;
        for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
            auto& [name, p] = groups_[gi].params[pi];
            Slot& slot = slots_[gi][pi];
            auto& value = p.values_mut();
            const double* g = p.has_grad() ? p.grad().data() : nullptr;
            for (std::size_t k = 0; k < value.size(); ++k) {
                const double gk = g ? g[k] : 0.0;
                slot.m[k] = beta1_ * slot.m[k] + (1.0 - beta1_) * gk;
                slot.v[k] = beta2_ * slot.v[k] + (1.0 - beta2_) * gk * gk;
                const double m_hat = slot.m[k] / bc1;
                const double v_hat = slot.v[k] / bc2;
                value[k] -= lr_eff * (m_hat / (std::sqrt(v_hat) + eps_) + wd * value[k]);
            }
        }
    }
}

// ---- metrics --------------------------------------------------------------------

std::vector<int> argmax_rows(const Tensor& probs) {
    const std::size_t rows = probs.rows();
    const std::size_t cols = probs.cols();
    std::vector<int> out(rows, 0);
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < cols; ++j) {
            if (probs.values()[i * cols + j] > probs.values()[i * cols + best]) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

EvalMetrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& truth,
                            const std::vector<std::size_t>& node_set, std::size_t classes) {
    if (node_set.empty()) {
        throw ValidationError("compute_metrics: node set is empty");
    }
    std::size_t correct = 0;
    std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (std::size_t i : node_set) {
        if (i >= predictions.size() || i >= truth.size()) {
            throw std::invalid_argument("compute_metrics: node index out of range");
        }
        const int t = truth[i];
        const int p = predictions[i];
        if (p == t) {
            ++correct;
            ++tp[static_cast<std::size_t>(t)];
        } else {
            ++fn[static_cast<std::size_t>(t)];
            ++fp[static_cast<std::size_t>(p)];
        }
    }
    double f1_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (tp[c] + fn[c] == 0) continue;  // class has no true instance here
        ++present;
        f1_sum += 2.0 * static_cast<double>(tp[c]) /
                  static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    }
    EvalMetrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(node_set.size());
    m.macro_f1 = present == 0 ? 0.0 : f1_sum / static_cast<double>(present);
    return m;
}

EvalMetrics evaluate(const GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                     const std::vector<std::size_t>& node_set) {
    if (node_set.empty()) {
        throw ValidationError("evaluate: node set is empty");
    }
    NoGradGuard guard;
    NodeMask all = full_mask(g.num_nodes, MaskKind::active);
    Tensor probs = model.forward_probs(g, GmlmModel::features_of(g), agg, all, false, nullptr);
    return compute_metrics(argmax_rows(probs), g.labels, node_set, g.num_classes);
}

// ---- early stopping ---------------------------------------------------------------

bool early_stop_update(EarlyStopState& st, std::size_t epoch, double value,
                       const NamedParams& params, std::size_t patience) {
    if (value > st.best_value) {
        st.best_value = value;
        st.best_epoch = epoch;
        st.since_improvement = 0;
        st.snapshot.clear();
        st.snapshot.reserve(params.size());
        for (const auto& [name, p] : params) {
            st.snapshot.push_back(p.values());
        }
        return true;
    }
    ++st.since_improvement;
    return st.since_improvement <= patience;
}

void restore_snapshot(const EarlyStopState& st, const NamedParams& params) {
    if (st.snapshot.empty()) return;
    if (st.snapshot.size() != params.size()) {
        throw std::invalid_argument("restore_snapshot: snapshot does not match parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (st.snapshot[i].size() != params[i].second.size()) {
            throw std::invalid_argument("restore_snapshot: size mismatch at " +
                                        params[i].first);
        }
        Tensor p = params[i].second;  // shares the node, so the write lands
        p.values_mut() = st.snapshot[i];
    }
}

// ---- stage setup ---------------------------------------------------------------------

AdamW make_pretrain_optimizer(const GmlmModel& model, const PretrainConfig& cfg) {
    OptimizerGroup group;
    group.name = "graph";
    group.lr = cfg.lr;
    group.weight_decay = cfg.weight_decay;
    group.params = model.pretrain_params();
    return AdamW({std::move(group)});
}

AdamW make_finetune_optimizer(const GmlmModel& model, const FinetuneConfig& cfg) {
    std::vector<OptimizerGroup> groups(3);
    groups[0] = {"graph", cfg.lr_graph, cfg.wd_graph, model.params_in_group(ParamGroup::graph)};
    groups[1] = {"text", cfg.lr_text, cfg.wd_text, model.params_in_group(ParamGroup::text)};
    groups[2] = {"other", cfg.lr_other, cfg.wd_other, model.params_in_group(ParamGroup::other)};
    return AdamW(std::move(groups));
}

PretrainState make_pretrain_state(const GmlmModel& model, const PretrainConfig& cfg) {
    return PretrainState{make_pretrain_optimizer(model, cfg), Rng(cfg.seed), 0};
}

FinetuneState make_finetune_state(const GmlmModel& model, const FinetuneConfig& cfg) {
    return FinetuneState{make_finetune_optimizer(model, cfg), Rng(cfg.seed), 0};
}

// ---- epochs ------------------------------------------------------------------------

double pretrain_epoch(GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                      const PretrainConfig& cfg, PretrainState& st) {
    if (cfg.mask_lo < 0.0 || cfg.mask_lo > cfg.mask_hi || cfg.mask_hi > 1.0) {
        throw std::invalid_argument("pretrain_epoch: mask proportion range must be ordered in [0, 1]");
    }
    Rng er = st.root.fork(st.epoch);
    const double p = er.uniform(cfg.mask_lo, cfg.mask_hi);
    NodeMask eligible = full_mask(g.num_nodes, MaskKind::perturbation);
    NodeMask m1 = degree_weighted_sample(g, eligible, p, er.next_u64());
    NodeMask m2 = degree_weighted_sample(g, eligible, p, er.next_u64());

    Tensor x = GmlmModel::features_of(g);
    Tensor h1 = model.graph_view(soft_mask(x, m1, cfg.beta, model.gnn.e_mask), agg, true, &er);
    Tensor h2 = model.graph_view(soft_mask(x, m2, cfg.beta, model.gnn.e_mask), agg, true, &er);

    std::vector<std::size_t> batch(g.num_nodes);
    std::iota(batch.begin(), batch.end(), std::size_t{0});
    er.shuffle(batch);
    batch.resize(std::min<std::size_t>(g.num_nodes, cfg.batch_cap));

    Tensor loss = nt_xent_loss(gather_rows(h1, batch), gather_rows(h2, batch), cfg.tau);
    st.opt.zero_grad();
    backward(loss);
    st.opt.step(schedule_factor(st.epoch, cfg.epochs, ScheduleKind::cosine_warm_restarts, cfg.t0,
                                cfg.t_mult));
    ++st.epoch;
    return loss.scalar_value();
}

FinetuneEpochResult finetune_epoch(GmlmModel& model, const TextGraph& g,
                                   const RelationAggregates& agg, const SplitAssignment& splits,
                                   const FinetuneConfig& cfg, FinetuneState& st) {
    if (cfg.active_lo <= 0.0 || cfg.active_lo > cfg.active_hi || cfg.active_hi > 1.0) {
        throw std::invalid_argument("finetune_epoch: active proportion range must be ordered in (0, 1]");
    }
    Rng er = st.root.fork(st.epoch);
    const double p = er.uniform(cfg.active_lo, cfg.active_hi);
    NodeMask train_pool =
        mask_from_indices(g.num_nodes, splits.indices(SplitTag::train), MaskKind::active);
    NodeMask active = degree_weighted_sample(g, train_pool, p, er.next_u64());
    const std::vector<std::size_t> rows = active.indices();
    if (rows.empty()) {
        throw ValidationError("finetune_epoch: active training set came up empty");
    }

    Tensor x = GmlmModel::features_of(g);
    Tensor masked = soft_mask(x, active, cfg.beta, model.gnn.e_mask);
    Tensor logits = model.forward_logits(g, masked, agg, active, true, &er);

    std::vector<int> labels;
    labels.reserve(rows.size());
    for (std::size_t i : rows) labels.push_back(g.labels[i]);
    Tensor loss =
        label_smoothed_ce_logits(gather_rows(logits, rows), labels, cfg.label_smoothing);

    st.opt.zero_grad();
    backward(loss);
    st.opt.clip_global_norm(cfg.clip_norm);
    st.opt.step(schedule_factor(st.epoch, cfg.max_epochs, ScheduleKind::warmup_linear));
    ++st.epoch;

    FinetuneEpochResult out;
    out.loss = loss.scalar_value();
    out.val = evaluate(model, g, agg, splits.indices(SplitTag::val));
    return out;
}

// ---- logging -------------------------------------------------------------------------

std::string metrics_json_line(const EpochLog& log) {
    nlohmann::json j{{"stage", log.stage},
                     {"epoch", log.epoch},
                     {"loss", log.loss},
                     {"val_acc", log.val_acc},
                     {"val_f1", log.val_f1}};
    j["lr_factors"] = nlohmann::json::object();
    for (const auto& [name, factor] : log.lr_factors) {
        j["lr_factors"][name] = factor;
    }
    return j.dump();
}

std::string report_json(const TrainReport& report) {
    return nlohmann::json{{"test_acc", report.test_acc},
                          {"test_f1", report.test_f1},
                          {"best_epoch", report.best_epoch},
                          {"seed", report.seed}}
        .dump();
}

// ---- full runs -------------------------------------------------------------------------

double run_pretrain(GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                    const PretrainConfig& cfg, const EpochSink& sink) {
    PretrainState st = make_pretrain_state(model, cfg);
    double loss = 0.0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const double factor =
            schedule_factor(e, cfg.epochs, ScheduleKind::cosine_warm_restarts, cfg.t0, cfg.t_mult);
        loss = pretrain_epoch(model, g, agg, cfg, st);
        if (sink) {
            EpochLog log;
            log.stage = 1;
            log.epoch = e;
            log.loss = loss;
            log.lr_factors = {{"graph", factor}};
            sink(log);
        }
    }
    return loss;
}

TrainReport run_finetune(GmlmModel& model, const TextGraph& g, const RelationAggregates& agg,
                         const SplitAssignment& splits, const FinetuneConfig& cfg,
                         const EpochSink& sink) {
    if (cfg.patience >= cfg.max_epochs) {
        throw std::invalid_argument("run_finetune: patience must be below max_epochs");
    }
    FinetuneState st = make_finetune_state(model, cfg);
    NamedParams params = model.named_params();
    EarlyStopState stop;
    for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
        const double factor = schedule_factor(e, cfg.max_epochs, ScheduleKind::warmup_linear);
        FinetuneEpochResult r = finetune_epoch(model, g, agg, splits, cfg, st);
        if (sink) {
            EpochLog log;
            log.stage = 2;
            log.epoch = e;
            log.loss = r.loss;
            log.val_acc = r.val.accuracy;
            log.val_f1 = r.val.macro_f1;
            log.lr_factors = {{"graph", factor}, {"text", factor}, {"other", factor}};
            sink(log);
        }
        if (!early_stop_update(stop, e, r.val.macro_f1, params, cfg.patience)) break;
    }
    restore_snapshot(stop, params);
    EvalMetrics test = evaluate(model, g, agg, splits.indices(SplitTag::test));
    TrainReport report;
    report.test_acc = test.accuracy;
    report.test_f1 = test.macro_f1;
    report.best_epoch = stop.best_epoch;
    report.seed = cfg.seed;
    return report;
}

}  // namespace gmlm
