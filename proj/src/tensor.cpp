#include "gmlm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include "gmlm/errors.hpp"

namespace gmlm {

namespace {

std::atomic<std::uint64_t> g_seq{1};

std::uint64_t next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

using NodePtr = std::shared_ptr<detail::TensorNode>;

NodePtr make_node(Shape shape, std::vector<double> value, const char* op,
                  std::vector<NodePtr> inputs,
                  std::function<void(detail::TensorNode&)> adjoint) {
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    n->seq = next_seq();
    bool record = detail::grad_mode();
    if (record) {
        record = false;
        for (const auto& in : inputs) {
            if (in->requires_grad) {
                record = true;
                break;
            }
        }
    }
    if (record) {
        n->requires_grad = true;
        n->inputs = std::move(inputs);
        n->adjoint = std::move(adjoint);
    }
    return n;
}

NodePtr leaf_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<detail::TensorNode>();
    if (value.size() != shape_numel(shape)) {
        throw std::invalid_argument("tensor: value count " + std::to_string(value.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->seq = next_seq();
    return n;
}

void check_rank2(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a rank-2 tensor, got shape " +
                                    shape_str(t.shape()));
    }
}

// ---- dense kernels ---------------------------------------------------------

// C += A (m x k) * B (k x n)
void mm_acc(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
            double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// dA += dC (m x n) * B^T  where B is (k x n)
void mm_bt_acc(const double* dc, std::size_t m, std::size_t n, const double* b, std::size_t k,
               double* da) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* dcrow = dc + i * n;
            const double* brow = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
            da[i * k + p] += s;
        }
    }
}

// dB += A^T * dC  where A is (m x k), dC is (m x n)
void mm_at_acc(const double* a, std::size_t m, std::size_t k, const double* dc, std::size_t n,
               double* db) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* dcrow = dc + i * n;
            double* dbrow = db + p * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * dcrow[j];
        }
    }
}

// ---- broadcasting ----------------------------------------------------------

struct BcastPlan {
    std::size_t out_r, out_c;
    std::size_t ra, ca, rb, cb;
    bool rank1_out;
};

void as_matrix(const detail::TensorNode& t, std::size_t& r, std::size_t& c, const char* op) {
    if (t.shape.size() == 1) {
        r = 1;
        c = t.shape[0];
    } else if (t.shape.size() == 2) {
        r = t.shape[0];
        c = t.shape[1];
    } else {
        throw std::invalid_argument(std::string(op) + ": rank > 2 not supported, got shape " +
                                    shape_str(t.shape));
    }
}

BcastPlan plan_broadcast(const detail::TensorNode& a, const detail::TensorNode& b,
                         const char* op) {
    BcastPlan p{};
    as_matrix(a, p.ra, p.ca, op);
    as_matrix(b, p.rb, p.cb, op);
    if ((p.ra != p.rb && p.ra != 1 && p.rb != 1) || (p.ca != p.cb && p.ca != 1 && p.cb != 1)) {
        throw std::invalid_argument(std::string(op) + ": shapes not broadcastable: " +
                                    shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    p.out_r = std::max(p.ra, p.rb);
    p.out_c = std::max(p.ca, p.cb);
    p.rank1_out = a.shape.size() == 1 && b.shape.size() == 1;
    return p;
}

enum class BinOp { Add, Sub, Mul, Div };

const char* binop_name(BinOp op) {
    switch (op) {
        case BinOp::Add: return "add";
        case BinOp::Sub: return "sub";
        case BinOp::Mul: return "mul";
        case BinOp::Div: return "div";
    }
    return "?";
}

Tensor binary(const Tensor& ta, const Tensor& tb, BinOp op) {
    const auto& a = *ta.node_ptr();
    const auto& b = *tb.node_ptr();
    const char* name = binop_name(op);
    const BcastPlan p = plan_broadcast(a, b, name);

    std::vector<double> out(p.out_r * p.out_c);
    for (std::size_t r = 0; r < p.out_r; ++r) {
        const std::size_t ar = (p.ra == 1 ? 0 : r) * p.ca;
        const std::size_t br = (p.rb == 1 ? 0 : r) * p.cb;
        for (std::size_t c = 0; c < p.out_c; ++c) {
            const double va = a.value[ar + (p.ca == 1 ? 0 : c)];
            const double vb = b.value[br + (p.cb == 1 ? 0 : c)];
            double v = 0.0;
            switch (op) {
                case BinOp::Add: v = va + vb; break;
                case BinOp::Sub: v = va - vb; break;
                case BinOp::Mul: v = va * vb; break;
                case BinOp::Div: v = va / vb; break;
            }
            out[r * p.out_c + c] = v;
        }
    }
    Shape out_shape = p.rank1_out ? Shape{p.out_c} : Shape{p.out_r, p.out_c};

    auto adjoint = [p, op](detail::TensorNode& o) {
        auto& na = *o.inputs[0];
        auto& nb = *o.inputs[1];
        const bool ga = na.requires_grad;
        const bool gb = nb.requires_grad;
        if (ga) na.ensure_grad();
        if (gb) nb.ensure_grad();
        for (std::size_t r = 0; r < p.out_r; ++r) {
            const std::size_t ar = (p.ra == 1 ? 0 : r) * p.ca;
            const std::size_t br = (p.rb == 1 ? 0 : r) * p.cb;
            for (std::size_t c = 0; c < p.out_c; ++c) {
                const std::size_t ia = ar + (p.ca == 1 ? 0 : c);
                const std::size_t ib = br + (p.cb == 1 ? 0 : c);
                const double g = o.grad[r * p.out_c + c];
                switch (op) {
                    case BinOp::Add:
                        if (ga) na.grad[ia] += g;
                        if (gb) nb.grad[ib] += g;
                        break;
                    case BinOp::Sub:
                        if (ga) na.grad[ia] += g;
                        if (gb) nb.grad[ib] -= g;
                        break;
                    case BinOp::Mul:
                        if (ga) na.grad[ia] += g * nb.value[ib];
                        if (gb) nb.grad[ib] += g * na.value[ia];
                        break;
                    case BinOp::Div: {
                        const double vb = nb.value[ib];
                        if (ga) na.grad[ia] += g / vb;
                        if (gb) nb.grad[ib] -= g * na.value[ia] / (vb * vb);
                        break;
                    }
                }
            }
        }
    };
    return Tensor(make_node(std::move(out_shape), std::move(out), name,
                            {ta.node_ptr(), tb.node_ptr()}, std::move(adjoint)));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_deriv(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return phi + x * pdf;
}

Tensor unary(const Tensor& tx, const char* name, double (*fwd)(double),
             const std::function<void(detail::TensorNode&)>& adjoint) {
    const auto& x = *tx.node_ptr();
    std::vector<double> out(x.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.value[i]);
    return Tensor(make_node(x.shape, std::move(out), name, {tx.node_ptr()}, adjoint));
}

}  // namespace

namespace detail {
bool& grad_mode() {
    thread_local bool mode = true;
    return mode;
}
}  // namespace detail

std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += " x ";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(leaf_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(leaf_node(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
    return Tensor(leaf_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double v) { return Tensor(leaf_node({1}, {v})); }

double Tensor::scalar_value() const {
    if (size() != 1) {
        throw std::invalid_argument("scalar_value: tensor has shape " + shape_str(shape()));
    }
    return n_->value[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    if (!n_->is_leaf()) {
        throw std::logic_error("set_requires_grad: only leaf tensors can be toggled");
    }
    n_->requires_grad = flag;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) {
        throw std::logic_error("grad: gradient not populated; run backward first");
    }
    return n_->grad;
}

void Tensor::zero_grad() {
    if (n_ && !n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

// ---- arithmetic -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div); }

Tensor affine(const Tensor& tx, double scale, double shift) {
    const auto& x = *tx.node_ptr();
    std::vector<double> out(x.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.value[i] + shift;
    auto adjoint = [scale](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) nx.grad[i] += scale * o.grad[i];
    };
    return Tensor(make_node(x.shape, std::move(out), "affine", {tx.node_ptr()}, adjoint));
}

Tensor gelu(const Tensor& tx) {
    auto adjoint = [](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            nx.grad[i] += o.grad[i] * gelu_deriv(nx.value[i]);
        }
    };
    return unary(tx, "gelu", &gelu_scalar, adjoint);
}

Tensor exp(const Tensor& tx) {
    auto adjoint = [](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) nx.grad[i] += o.grad[i] * o.value[i];
    };
    return unary(tx, "exp", [](double v) { return std::exp(v); }, adjoint);
}

Tensor log(const Tensor& tx) {
    auto adjoint = [](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) nx.grad[i] += o.grad[i] / nx.value[i];
    };
    return unary(tx, "log", [](double v) { return std::log(v); }, adjoint);
}

Tensor sqrt(const Tensor& tx) {
    auto adjoint = [](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            nx.grad[i] += o.grad[i] * 0.5 / o.value[i];
        }
    };
    return unary(tx, "sqrt", [](double v) { return std::sqrt(v); }, adjoint);
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    check_rank2(ta, "matmul");
    check_rank2(tb, "matmul");
    const auto& a = *ta.node_ptr();
    const auto& b = *tb.node_ptr();
    const std::size_t m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    }
    std::vector<double> out(m * n, 0.0);
    mm_acc(a.value.data(), m, k, b.value.data(), n, out.data());

    auto adjoint = [m, k, n](detail::TensorNode& o) {
        auto& na = *o.inputs[0];
        auto& nb = *o.inputs[1];
        if (na.requires_grad) {
            na.ensure_grad();
            mm_bt_acc(o.grad.data(), m, n, nb.value.data(), k, na.grad.data());
        }
        if (nb.requires_grad) {
            nb.ensure_grad();
            mm_at_acc(na.value.data(), m, k, o.grad.data(), n, nb.grad.data());
        }
    };
    return Tensor(make_node({m, n}, std::move(out), "matmul", {ta.node_ptr(), tb.node_ptr()},
                            adjoint));
}

Tensor transpose(const Tensor& tx) {
    check_rank2(tx, "transpose");
    const auto& x = *tx.node_ptr();
    const std::size_t r = x.shape[0], c = x.shape[1];
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.value[i * c + j];
    }
    auto adjoint = [r, c](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) nx.grad[i * c + j] += o.grad[j * r + i];
        }
    };
    return Tensor(make_node({c, r}, std::move(out), "transpose", {tx.node_ptr()}, adjoint));
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& tx) {
    const auto& x = *tx.node_ptr();
    double s = 0.0;
    for (double v : x.value) s += v;
    auto adjoint = [](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        const double g = o.grad[0];
        for (double& gi : nx.grad) gi += g;
    };
    return Tensor(make_node({1}, {s}, "sum", {tx.node_ptr()}, adjoint));
}

Tensor sum_axis(const Tensor& tx, std::size_t axis, bool keepdim) {
    check_rank2(tx, "sum_axis");
    if (axis > 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
    const auto& x = *tx.node_ptr();
    const std::size_t r = x.shape[0], c = x.shape[1];
    const std::size_t out_n = axis == 0 ? c : r;
    std::vector<double> out(out_n, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[axis == 0 ? j : i] += x.value[i * c + j];
        }
    }
    Shape out_shape = keepdim ? (axis == 0 ? Shape{1, c} : Shape{r, 1}) : Shape{out_n};
    auto adjoint = [r, c, axis](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                nx.grad[i * c + j] += o.grad[axis == 0 ? j : i];
            }
        }
    };
    return Tensor(make_node(std::move(out_shape), std::move(out), "sum_axis", {tx.node_ptr()},
                            adjoint));
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    check_rank2(x, "mean_axis");
    const double n = static_cast<double>(axis == 0 ? x.shape()[0] : x.shape()[1]);
    return affine(sum_axis(x, axis, keepdim), 1.0 / n, 0.0);
}

Tensor softmax(const Tensor& tx, std::size_t axis) {
    const auto& x = *tx.node_ptr();
    std::size_t r, c;
    as_matrix(x, r, c, "softmax");
    if (x.shape.size() == 1 && axis != 0) {
        throw std::invalid_argument("softmax: axis out of range for rank-1 tensor");
    }
    if (axis > 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
    const bool rows = x.shape.size() == 1 || axis == 1;
    const std::size_t lines = rows ? r : c;
    const std::size_t len = rows ? c : r;
    auto idx = [&](std::size_t line, std::size_t k) { return rows ? line * c + k : k * c + line; };

    std::vector<double> out(x.value.size());
    for (std::size_t l = 0; l < lines; ++l) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < len; ++k) m = std::max(m, x.value[idx(l, k)]);
        if (!std::isfinite(m)) {
            throw std::invalid_argument("softmax: a full line is masked to -inf");
        }
        double s = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
            const double e = std::exp(x.value[idx(l, k)] - m);
            out[idx(l, k)] = e;
            s += e;
        }
        for (std::size_t k = 0; k < len; ++k) out[idx(l, k)] /= s;
    }
    auto adjoint = [rows, lines, len, c](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        auto pos = [&](std::size_t line, std::size_t k) {
            return rows ? line * c + k : k * c + line;
        };
        for (std::size_t l = 0; l < lines; ++l) {
            double dot = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const std::size_t i = pos(l, k);
                dot += o.grad[i] * o.value[i];
            }
            for (std::size_t k = 0; k < len; ++k) {
                const std::size_t i = pos(l, k);
                nx.grad[i] += o.value[i] * (o.grad[i] - dot);
            }
        }
    };
    return Tensor(make_node(x.shape, std::move(out), "softmax", {tx.node_ptr()}, adjoint));
}

// ---- structural ----------------------------------------------------------------

Tensor gather_rows(const Tensor& tx, const std::vector<std::size_t>& idx) {
    check_rank2(tx, "gather_rows");
    const auto& x = *tx.node_ptr();
    const std::size_t r = x.shape[0], c = x.shape[1];
    std::vector<double> out(idx.size() * c);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= r) {
            throw std::invalid_argument("gather_rows: index " + std::to_string(idx[i]) +
                                        " out of range for " + shape_str(x.shape));
        }
        std::memcpy(out.data() + i * c, x.value.data() + idx[i] * c, c * sizeof(double));
    }
    auto adjoint = [idx, c](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                nx.grad[idx[i] * c + j] += o.grad[i * c + j];
            }
        }
    };
    return Tensor(make_node({idx.size(), c}, std::move(out), "gather_rows", {tx.node_ptr()},
                            adjoint));
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    std::vector<std::size_t> u(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) throw std::invalid_argument("gather_rows: negative index");
        u[i] = static_cast<std::size_t>(idx[i]);
    }
    return gather_rows(x, u);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no rows given");
    const std::size_t c = rows[0].cols();
    std::vector<double> out;
    out.reserve(rows.size() * c);
    std::vector<NodePtr> inputs;
    inputs.reserve(rows.size());
    for (const auto& row : rows) {
        if (row.rows() != 1 || row.cols() != c) {
            throw std::invalid_argument("stack_rows: every row must be a width-" +
                                        std::to_string(c) + " vector, got " +
                                        shape_str(row.shape()));
        }
        out.insert(out.end(), row.values().begin(), row.values().end());
        inputs.push_back(row.node_ptr());
    }
    auto adjoint = [c](detail::TensorNode& o) {
        for (std::size_t i = 0; i < o.inputs.size(); ++i) {
            auto& nr = *o.inputs[i];
            if (!nr.requires_grad) continue;
            nr.ensure_grad();
            for (std::size_t j = 0; j < c; ++j) nr.grad[j] += o.grad[i * c + j];
        }
    };
    return Tensor(make_node({rows.size(), c}, std::move(out), "stack_rows", std::move(inputs),
                            adjoint));
}

Tensor concat_rows(const std::vector<Tensor>& blocks) {
    if (blocks.empty()) throw std::invalid_argument("concat_rows: no blocks given");
    const std::size_t c = blocks[0].cols();
    std::size_t total = 0;
    std::vector<NodePtr> inputs;
    std::vector<std::size_t> block_rows;
    for (const auto& b : blocks) {
        if (b.cols() != c) {
            throw std::invalid_argument("concat_rows: column widths disagree: " +
                                        shape_str(blocks[0].shape()) + " vs " +
                                        shape_str(b.shape()));
        }
        total += b.rows();
        block_rows.push_back(b.rows());
        inputs.push_back(b.node_ptr());
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const auto& b : blocks) out.insert(out.end(), b.values().begin(), b.values().end());
    auto adjoint = [block_rows, c](detail::TensorNode& o) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < o.inputs.size(); ++i) {
            auto& nb = *o.inputs[i];
            const std::size_t n = block_rows[i] * c;
            if (nb.requires_grad) {
                nb.ensure_grad();
                for (std::size_t j = 0; j < n; ++j) nb.grad[j] += o.grad[off + j];
            }
            off += n;
        }
    };
    return Tensor(make_node({total, c}, std::move(out), "concat_rows", std::move(inputs),
                            adjoint));
}

Tensor concat_cols(const std::vector<Tensor>& blocks) {
    if (blocks.empty()) throw std::invalid_argument("concat_cols: no blocks given");
    const std::size_t r = blocks[0].rows();
    std::size_t total_c = 0;
    std::vector<NodePtr> inputs;
    std::vector<std::size_t> widths;
    for (const auto& b : blocks) {
        if (b.rows() != r) {
            throw std::invalid_argument("concat_cols: row counts disagree: " +
                                        shape_str(blocks[0].shape()) + " vs " +
                                        shape_str(b.shape()));
        }
        total_c += b.cols();
        widths.push_back(b.cols());
        inputs.push_back(b.node_ptr());
    }
    std::vector<double> out(r * total_c);
    std::size_t off = 0;
    for (const auto& b : blocks) {
        const std::size_t w = b.cols();
        for (std::size_t i = 0; i < r; ++i) {
            std::memcpy(out.data() + i * total_c + off, b.values().data() + i * w,
                        w * sizeof(double));
        }
        off += w;
    }
    auto adjoint = [widths, r, total_c](detail::TensorNode& o) {
        std::size_t col = 0;
        for (std::size_t i = 0; i < o.inputs.size(); ++i) {
            auto& nb = *o.inputs[i];
            const std::size_t w = widths[i];
            if (nb.requires_grad) {
                nb.ensure_grad();
                for (std::size_t row = 0; row < r; ++row) {
                    for (std::size_t j = 0; j < w; ++j) {
                        nb.grad[row * w + j] += o.grad[row * total_c + col + j];
                    }
                }
            }
            col += w;
        }
    };
    return Tensor(make_node({r, total_c}, std::move(out), "concat_cols", std::move(inputs),
                            adjoint));
}

Tensor slice_cols(const Tensor& tx, std::size_t start, std::size_t count) {
    check_rank2(tx, "slice_cols");
    const auto& x = *tx.node_ptr();
    const std::size_t r = x.shape[0], c = x.shape[1];
    if (start + count > c) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") exceeds width " +
                                    std::to_string(c));
    }
    std::vector<double> out(r * count);
    for (std::size_t i = 0; i < r; ++i) {
        std::memcpy(out.data() + i * count, x.value.data() + i * c + start,
                    count * sizeof(double));
    }
    auto adjoint = [r, c, start, count](detail::TensorNode& o) {
        auto& nx = *o.inputs[0];
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                nx.grad[i * c + start + j] += o.grad[i * count + j];
            }
        }
    };
    return Tensor(make_node({r, count}, std::move(out), "slice_cols", {tx.node_ptr()}, adjoint));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta_shift, double eps) {
    check_rank2(x, "layer_norm");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    if (gamma.size() != x.cols() || beta_shift.size() != x.cols()) {
        throw std::invalid_argument("layer_norm: gain/shift width " + shape_str(gamma.shape()) +
                                    " does not match " + shape_str(x.shape()));
    }
    Tensor mu = mean_axis(x, 1, true);
    Tensor centered = x - mu;
    Tensor var = mean_axis(centered * centered, 1, true);
    Tensor normed = centered / sqrt(var + eps);
    return normed * gamma + beta_shift;
}

Tensor dropout(const Tensor& x, double keep_prob, bool train_mode, Rng* rng) {
    if (keep_prob <= 0.0 || keep_prob > 1.0) {
        throw std::invalid_argument("dropout: keep probability must be in (0, 1]");
    }
    if (!train_mode || keep_prob == 1.0) return x;
    if (!rng) throw std::invalid_argument("dropout: rng required in train mode");
    std::vector<double> mask(x.size());
    const double scale = 1.0 / keep_prob;
    for (double& m : mask) m = rng->bernoulli(keep_prob) ? scale : 0.0;
    return mul(x, Tensor::from_values(x.shape(), std::move(mask)));
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-limit, limit);
    Tensor t = Tensor::from_values(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

// ---- reverse mode -----------------------------------------------------------------

namespace {

/// Linearized record of the primitive applications reachable from a root,
/// ordered so that every node's inputs precede it. Replaying adjoints in
/// reverse order yields chain-rule gradients for every recorded tensor.
struct ComputationTape {
    std::vector<detail::TensorNode*> order;

    static ComputationTape linearize(detail::TensorNode* root) {
        ComputationTape tape;
        std::unordered_set<detail::TensorNode*> seen;
        std::vector<detail::TensorNode*> stack{root};
        seen.insert(root);
        while (!stack.empty()) {
            detail::TensorNode* n = stack.back();
            stack.pop_back();
            tape.order.push_back(n);
            for (const auto& in : n->inputs) {
                if (in->requires_grad && seen.insert(in.get()).second) {
                    stack.push_back(in.get());
                }
            }
        }
        std::sort(tape.order.begin(), tape.order.end(),
                  [](const detail::TensorNode* a, const detail::TensorNode* b) {
                      return a->seq < b->seq;
                  });
        return tape;
    }

    void replay_adjoints(detail::TensorNode* root) {
        for (detail::TensorNode* n : order) {
            if (n->is_leaf()) {
                n->ensure_grad();
            } else {
                n->grad.assign(n->value.size(), 0.0);
            }
        }
        root->is_leaf() ? void(root->grad[0] += 1.0) : void(root->grad[0] = 1.0);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::TensorNode* n = *it;
            if (n->adjoint) n->adjoint(*n);
        }
    }
};

}  // namespace

void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
    if (loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_str(loss.shape()));
    }
    detail::TensorNode* root = loss.node();
    if (!root->requires_grad) return;
    ComputationTape tape = ComputationTape::linearize(root);
    tape.replay_adjoints(root);
}

// ---- gradient checking --------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double step, double tolerance) {
    if (step < 1e-6 || step > 1e-4) {
        throw std::invalid_argument("grad_check: step must lie in [1e-6, 1e-4]");
    }
    std::vector<double> probe1, probe2;
    {
        NoGradGuard ng;
        probe1 = f().values();
        probe2 = f().values();
    }
    if (probe1.size() != probe2.size() ||
        std::memcmp(probe1.data(), probe2.data(), probe1.size() * sizeof(double)) != 0) {
        throw HarnessError("grad_check: f is not deterministic under a fixed seed");
    }
    if (probe1.size() != 1) {
        throw std::invalid_argument("grad_check: f must evaluate to a scalar");
    }

    for (const auto& [name, p] : params) {
        (void)name;
        const_cast<Tensor&>(p).zero_grad();
    }
    Tensor loss = f();
    backward(loss);

    GradCheckReport report;
    for (const auto& [name, p] : params) {
        GradCheckEntry entry;
        entry.name = name;
        std::vector<double> analytic(p.size(), 0.0);
        if (p.has_grad()) analytic = p.node()->grad;

        auto& vals = const_cast<Tensor&>(p).values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            double fp, fm;
            {
                NoGradGuard ng;
                vals[i] = orig + step;
                fp = f().scalar_value();
                vals[i] = orig - step;
                fm = f().scalar_value();
            }
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.passed = entry.max_rel_err < tolerance;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.passed = report.passed && entry.passed;
        report.per_parameter.push_back(std::move(entry));
    }
    return report;
}

}  // namespace gmlm
