#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gmlm/rng.hpp"

namespace gmlm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

/// One node of the define-by-run computation graph. Nodes are created in
/// strictly increasing `seq` order, so creation order is a topological order
/// of the graph: every input of a node was created before the node itself.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily; empty means "no grad yet"
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(TensorNode&)> adjoint;

    bool is_leaf() const { return inputs.empty(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

bool& grad_mode();

}  // namespace detail

/// Disables graph recording in the current thread for its lifetime.
/// Values are computed identically; only adjoint bookkeeping is skipped.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense multi-dimensional tensor of 64-bit floats with recorded lineage for
/// reverse-mode differentiation. Copying a Tensor is cheap: it shares the
/// underlying node. Rank is 1 or 2 throughout this project; a scalar is a
/// rank-1 tensor of size 1.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from_values(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);

    bool defined() const { return static_cast<bool>(n_); }

    const Shape& shape() const { return n_->shape; }
    std::size_t ndim() const { return n_->shape.size(); }
    std::size_t size() const { return n_->value.size(); }
    /// Row/column view: rank-1 tensors count as a single row.
    std::size_t rows() const { return ndim() == 1 ? 1 : n_->shape[0]; }
    std::size_t cols() const { return ndim() == 1 ? n_->shape[0] : n_->shape[1]; }

    const std::vector<double>& values() const { return n_->value; }
    /// Mutable access to raw values. Only meaningful for leaf tensors
    /// (parameters) between forward passes; graphs record value snapshots
    /// nowhere, so mutating a non-leaf invalidates nothing but makes no sense.
    std::vector<double>& values_mut() { return n_->value; }

    double at(std::size_t r, std::size_t c) const { return n_->value[r * cols() + c]; }
    double at(std::size_t i) const { return n_->value[i]; }

    /// Value of a single-element tensor.
    double scalar_value() const;

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool flag);

    /// Gradient buffer; populated after backward(). Same length as values.
    const std::vector<double>& grad() const;
    bool has_grad() const { return n_ && n_->grad.size() == n_->value.size(); }
    void zero_grad();

    detail::TensorNode* node() const { return n_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return n_; }

    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<detail::TensorNode> n_;
};

// ---- elementwise / broadcasting arithmetic ------------------------------
// Binary ops broadcast over rank <= 2 shapes where each dimension either
// matches or is 1 (so N x d with N x 1, 1 x d, or a scalar).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

/// y = scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return affine(a, 1.0, s); }
inline Tensor operator-(const Tensor& a, double s) { return affine(a, 1.0, -s); }
inline Tensor operator*(const Tensor& a, double s) { return affine(a, s, 0.0); }
inline Tensor operator*(double s, const Tensor& a) { return affine(a, s, 0.0); }
inline Tensor operator-(const Tensor& a) { return affine(a, -1.0, 0.0); }

// ---- unary math -----------------------------------------------------------

/// Exact-erf Gaussian error linear unit: x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);

// ---- linear algebra -------------------------------------------------------

/// Standard matrix product of rank-2 tensors [m x k] x [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// ---- reductions / structure ------------------------------------------------

/// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& x);
/// Sum over one axis of a rank-2 tensor; keepdim keeps the reduced axis at 1.
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = true);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = true);

/// Numerically stable softmax along `axis` (max-subtracted). Entries of -inf
/// are treated as excluded and get exactly zero weight.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
/// Stacks rank-1 tensors of equal width (or 1 x d tensors) into an n x d matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor concat_rows(const std::vector<Tensor>& blocks);
Tensor concat_cols(const std::vector<Tensor>& blocks);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);

/// LayerNorm over the last axis with learnable gain/shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta_shift,
                  double eps);

/// Inverted dropout: at train time multiplies by a Bernoulli(keep_prob) mask
/// scaled by 1/keep_prob drawn from `rng`; identity otherwise.
Tensor dropout(const Tensor& x, double keep_prob, bool train_mode, Rng* rng);

/// Xavier-uniform initialized leaf tensor with requires_grad set.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, Rng& rng);

// ---- reverse mode -----------------------------------------------------------

/// Runs reverse-mode accumulation from a scalar loss. Leaf gradients
/// accumulate across calls; intermediate gradients are recomputed per call.
void backward(const Tensor& loss);

// ---- gradient checking -------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool passed = true;
    std::vector<GradCheckEntry> per_parameter;
};

/// Compares analytic gradients of f() against central finite differences for
/// every element of every listed parameter. f must be deterministic: it is
/// invoked twice up front and must produce bit-identical values, otherwise a
/// HarnessError is raised. Relative error uses max(|analytic|, |numeric|, 1e-3)
/// as denominator so near-zero gradients are checked on an absolute scale.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double step, double tolerance);

}  // namespace gmlm
