#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <vector>

#include "gmlm/errors.hpp"
#include "gmlm/rng.hpp"
#include "gmlm/tensor.hpp"
#include "test_util.hpp"

using namespace gmlm;
using testutil::check_close;
using testutil::random_param;
using testutil::random_tensor;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Standard normal CDF by composite Simpson quadrature of the density,
// deliberately not using std::erf so it can serve as an oracle for gelu.
double normal_cdf_quadrature(double x) {
    const int n = 2000;
    const double lo = 0.0, hi = std::abs(x);
    const double h = (hi - lo) / n;
    auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
    double s = pdf(lo) + pdf(hi);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(lo + i * h);
    const double integral = s * h / 3.0;
    return x >= 0.0 ? 0.5 + integral : 0.5 - integral;
}

}  // namespace

// ---- rng --------------------------------------------------------------------

TEST_CASE("rng: identical seeds give identical streams") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: uniform stays in [0, 1) and varies") {
    Rng r(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.05);
    CHECK(hi > 0.95);
}

TEST_CASE("rng: uniform_index covers the range and rejects n == 0") {
    Rng r(11);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i) ++hits[r.uniform_index(5)];
    for (int h : hits) CHECK(h > 0);
    CHECK_THROWS_AS((void)r.uniform_index(0), std::invalid_argument);
}

TEST_CASE("rng: shuffle is a permutation and is seed deterministic") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;
    Rng a(99), b(99);
    a.shuffle(v);
    b.shuffle(w);
    CHECK(v == w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("rng: fork gives independent reproducible substreams") {
    Rng root(2024);
    Rng f1 = root.fork(1);
    Rng f2 = root.fork(2);
    Rng f1_again = root.fork(1);
    CHECK(f1.next_u64() == f1_again.next_u64());
    CHECK(f1.seed() != f2.seed());
    CHECK(root.fork(1).seed() == root.fork(1).seed());
}

TEST_CASE("rng: normal has roughly standard moments") {
    Rng r(31337);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

// ---- construction and access --------------------------------------------------

TEST_CASE("tensor: factories produce the requested shapes and values") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.rows() == 2);
    CHECK(z.cols() == 3);
    CHECK(z.size() == 6);
    for (double v : z.values()) CHECK(v == 0.0);

    Tensor f = Tensor::full({4}, 2.5);
    CHECK(f.ndim() == 1);
    CHECK(f.rows() == 1);
    CHECK(f.cols() == 4);
    for (double v : f.values()) CHECK(v == 2.5);

    Tensor m = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    CHECK(m.at(0, 1) == 2.0);
    CHECK(m.at(1, 0) == 3.0);

    CHECK(Tensor::scalar(-7.0).scalar_value() == -7.0);
    CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS((void)m.scalar_value(), std::invalid_argument);
    CHECK(shape_str({2, 3}) == "[2 x 3]");
}

// ---- elementwise forward -------------------------------------------------------

TEST_CASE("tensor: binary ops broadcast rows, columns and scalars") {
    Tensor m = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row = Tensor::from_values({1, 3}, {10, 20, 30});
    Tensor col = Tensor::from_values({2, 1}, {100, 200});
    Tensor s = Tensor::scalar(2.0);

    check_close(add(m, row).values(), {11, 22, 33, 14, 25, 36}, 0.0);
    check_close(add(m, col).values(), {101, 102, 103, 204, 205, 206}, 0.0);
    check_close(mul(m, s).values(), {2, 4, 6, 8, 10, 12}, 0.0);
    check_close(sub(row, m).values(), {9, 18, 27, 6, 15, 24}, 0.0);
    check_close(div(m, s).values(), {0.5, 1, 1.5, 2, 2.5, 3}, 0.0);

    Tensor v1 = Tensor::from_values({3}, {1, 2, 3});
    Tensor v2 = Tensor::from_values({3}, {4, 5, 6});
    Tensor r = add(v1, v2);
    CHECK(r.ndim() == 1);
    check_close(r.values(), {5, 7, 9}, 0.0);

    Tensor r2 = add(m, v1);
    CHECK(r2.ndim() == 2);
    check_close(r2.values(), {2, 4, 6, 5, 7, 9}, 0.0);

    CHECK_THROWS_AS(add(m, Tensor::from_values({2, 2}, {1, 2, 3, 4})), std::invalid_argument);
}

TEST_CASE("tensor: affine and operator sugar") {
    Tensor x = Tensor::from_values({2}, {1.0, -2.0});
    check_close(affine(x, 3.0, 1.0).values(), {4.0, -5.0}, 0.0);
    check_close((x + 1.0).values(), {2.0, -1.0}, 0.0);
    check_close((x * -2.0).values(), {-2.0, 4.0}, 0.0);
    check_close((-x).values(), {-1.0, 2.0}, 0.0);
}

TEST_CASE("tensor: gelu matches the quadrature oracle") {
    const std::vector<double> xs = {-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.5};
    Tensor t = Tensor::from_values({xs.size()}, xs);
    Tensor y = gelu(t);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double expected = xs[i] * normal_cdf_quadrature(xs[i]);
        CHECK(std::abs(y.at(i) - expected) < 1e-12);
    }
    CHECK(y.at(3) == 0.0);
    CHECK(std::abs(y.at(5) - 0.8413447460685429) < 1e-12);
}

TEST_CASE("tensor: exp log sqrt pointwise forward") {
    Tensor x = Tensor::from_values({3}, {0.0, 1.0, 4.0});
    check_close(gmlm::exp(x).values(), {1.0, std::exp(1.0), std::exp(4.0)}, 1e-15);
    check_close(gmlm::sqrt(x).values(), {0.0, 1.0, 2.0}, 0.0);
    Tensor p = Tensor::from_values({2}, {1.0, std::exp(2.0)});
    check_close(gmlm::log(p).values(), {0.0, 2.0}, 1e-15);
}

// ---- matmul and transpose -------------------------------------------------------

TEST_CASE("tensor: matmul matches hand example and loop oracle") {
    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_values({2, 1}, {1, 1});
    check_close(matmul(a, b).values(), {3, 7}, 0.0);

    Rng rng(5);
    Tensor p = random_tensor({4, 6}, rng);
    Tensor q = random_tensor({6, 3}, rng);
    Tensor c = matmul(p, q);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 6; ++k) s += p.at(i, k) * q.at(k, j);
            CHECK(std::abs(c.at(i, j) - s) < 1e-12);
        }
    }
    CHECK_THROWS_AS(matmul(p, p), std::invalid_argument);
}

TEST_CASE("tensor: transpose flips indices") {
    Tensor a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor t = transpose(a);
    CHECK(t.rows() == 3);
    CHECK(t.cols() == 2);
    check_close(t.values(), {1, 4, 2, 5, 3, 6}, 0.0);
}

// ---- reductions -------------------------------------------------------------------

TEST_CASE("tensor: sum and axis reductions") {
    Tensor a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum(a).scalar_value() == 21.0);

    Tensor s0 = sum_axis(a, 0);
    CHECK(s0.shape() == Shape{1, 3});
    check_close(s0.values(), {5, 7, 9}, 0.0);

    Tensor s1 = sum_axis(a, 1);
    CHECK(s1.shape() == Shape{2, 1});
    check_close(s1.values(), {6, 15}, 0.0);

    Tensor s1f = sum_axis(a, 1, false);
    CHECK(s1f.shape() == Shape{2});

    check_close(mean_axis(a, 1).values(), {2, 5}, 1e-15);
    check_close(mean_axis(a, 0).values(), {2.5, 3.5, 4.5}, 1e-15);
}

// ---- softmax ------------------------------------------------------------------------

TEST_CASE("tensor: softmax matches closed-form values and normalizes") {
    Tensor x = Tensor::from_values({1, 2}, {0.0, std::log(3.0)});
    Tensor y = softmax(x, 1);
    CHECK(std::abs(y.at(0, 0) - 0.25) < 1e-15);
    CHECK(std::abs(y.at(0, 1) - 0.75) < 1e-15);

    Rng rng(17);
    Tensor z = softmax(random_tensor({5, 7}, rng, -30.0, 30.0), 1);
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(z.at(i, j) >= 0.0);
            s += z.at(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("tensor: softmax along axis 0 normalizes columns") {
    Tensor x = Tensor::from_values({2, 2}, {0.0, 5.0, std::log(3.0), 5.0});
    Tensor y = softmax(x, 0);
    CHECK(std::abs(y.at(0, 0) - 0.25) < 1e-15);
    CHECK(std::abs(y.at(1, 0) - 0.75) < 1e-15);
    CHECK(std::abs(y.at(0, 1) - 0.5) < 1e-15);
}

TEST_CASE("tensor: softmax gives exact zeros under -inf masking") {
    Tensor x = Tensor::from_values({1, 3}, {1.0, -kInf, 2.0});
    Tensor y = softmax(x, 1);
    CHECK(y.at(0, 1) == 0.0);
    CHECK(std::abs(y.at(0, 0) + y.at(0, 2) - 1.0) < 1e-15);

    Tensor all_masked = Tensor::from_values({1, 2}, {-kInf, -kInf});
    CHECK_THROWS_AS(softmax(all_masked, 1), std::invalid_argument);
}

TEST_CASE("tensor: softmax is invariant to large shifts") {
    Tensor a = Tensor::from_values({1, 3}, {1.0, 2.0, 3.0});
    Tensor b = Tensor::from_values({1, 3}, {1001.0, 1002.0, 1003.0});
    check_close(softmax(a, 1).values(), softmax(b, 1).values(), 1e-15);
}

// ---- structural ops ---------------------------------------------------------------------

TEST_CASE("tensor: gather stack concat slice round trips") {
    Tensor m = Tensor::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor g = gather_rows(m, std::vector<std::size_t>{2, 0, 2});
    check_close(g.values(), {5, 6, 1, 2, 5, 6}, 0.0);
    CHECK_THROWS_AS(gather_rows(m, std::vector<std::size_t>{3}), std::invalid_argument);

    Tensor r1 = Tensor::from_values({2}, {7, 8});
    Tensor r2 = Tensor::from_values({1, 2}, {9, 10});
    Tensor st = stack_rows({r1, r2});
    CHECK(st.shape() == Shape{2, 2});
    check_close(st.values(), {7, 8, 9, 10}, 0.0);

    Tensor cr = concat_rows({m, g});
    CHECK(cr.shape() == Shape{6, 2});
    check_close(cr.values(), {1, 2, 3, 4, 5, 6, 5, 6, 1, 2, 5, 6}, 0.0);

    Tensor cc = concat_cols({m, m});
    CHECK(cc.shape() == Shape{3, 4});
    check_close(cc.values(), {1, 2, 1, 2, 3, 4, 3, 4, 5, 6, 5, 6}, 0.0);

    Tensor sl = slice_cols(cc, 1, 2);
    CHECK(sl.shape() == Shape{3, 2});
    check_close(sl.values(), {2, 1, 4, 3, 6, 5}, 0.0);
    CHECK_THROWS_AS(slice_cols(cc, 3, 2), std::invalid_argument);
}

// ---- layer norm and dropout ------------------------------------------------------------------

TEST_CASE("tensor: layer_norm standardizes each row") {
    Rng rng(23);
    Tensor x = random_tensor({4, 8}, rng, -5.0, 5.0);
    Tensor gamma = Tensor::full({8}, 1.0);
    Tensor beta = Tensor::zeros({8});
    Tensor y = layer_norm(x, gamma, beta, 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 8; ++j) mean += y.at(i, j);
        mean /= 8.0;
        for (std::size_t j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 8.0;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-10);
    }

    Tensor gamma2 = Tensor::full({8}, 2.0);
    Tensor beta2 = Tensor::full({8}, 0.5);
    Tensor y2 = layer_norm(x, gamma2, beta2, 1e-12);
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(std::abs(y2.at(0, j) - (2.0 * y.at(0, j) + 0.5)) < 1e-12);
    }
}

TEST_CASE("tensor: dropout semantics") {
    Rng rng(3);
    Tensor x = Tensor::full({100, 4}, 3.0);

    Tensor eval_out = dropout(x, 0.5, false, nullptr);
    CHECK(eval_out.values() == x.values());

    Tensor keep_all = dropout(x, 1.0, true, nullptr);
    CHECK(keep_all.values() == x.values());

    Tensor train_out = dropout(x, 0.5, true, &rng);
    std::size_t kept = 0;
    for (double v : train_out.values()) {
        const bool zero = v == 0.0;
        const bool scaled = std::abs(v - 6.0) < 1e-15;
        CHECK((zero || scaled));
        kept += scaled;
    }
    const double frac = static_cast<double>(kept) / 400.0;
    CHECK(frac > 0.35);
    CHECK(frac < 0.65);

    CHECK_THROWS_AS(dropout(x, 0.0, true, &rng), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, 0.5, true, nullptr), std::invalid_argument);
}

TEST_CASE("tensor: xavier_uniform respects the fan bound") {
    Rng rng(8);
    Tensor w = xavier_uniform(30, 50, {30, 50}, rng);
    const double limit = std::sqrt(6.0 / 80.0);
    CHECK(w.requires_grad());
    double lo = kInf, hi = -kInf;
    for (double v : w.values()) {
        CHECK(std::abs(v) <= limit);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < -0.6 * limit);
    CHECK(hi > 0.6 * limit);
}

// ---- reverse mode -----------------------------------------------------------------------------

TEST_CASE("autodiff: chain rule on a scalar composition") {
    Tensor x = Tensor::scalar(0.7).set_requires_grad(true);
    // y = exp(x) * x, dy/dx = exp(x) * (1 + x)
    Tensor y = sum(mul(gmlm::exp(x), x));
    backward(y);
    CHECK(std::abs(x.grad()[0] - std::exp(0.7) * 1.7) < 1e-12);
}

TEST_CASE("autodiff: grads accumulate over repeated backward calls") {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    Tensor y = sum(mul(x, x));
    backward(y);
    const double once = x.grad()[0];
    CHECK(std::abs(once - 4.0) < 1e-14);
    backward(y);
    CHECK(std::abs(x.grad()[0] - 2.0 * once) < 1e-14);
    x.zero_grad();
    backward(y);
    CHECK(std::abs(x.grad()[0] - once) < 1e-14);
}

TEST_CASE("autodiff: shared subexpressions accumulate fan-out") {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    Tensor h = mul(x, x);
    Tensor y = sum(add(h, h));
    backward(y);
    CHECK(std::abs(x.grad()[0] - 12.0) < 1e-14);
}

TEST_CASE("autodiff: backward rejects non-scalar losses") {
    Tensor x = Tensor::from_values({2}, {1, 2}).set_requires_grad(true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("autodiff: NoGradGuard suppresses recording") {
    Tensor x = Tensor::scalar(1.5).set_requires_grad(true);
    NoGradGuard ng;
    Tensor y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
    backward(y);
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("autodiff: constants receive no gradient buffers") {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    Tensor c = Tensor::scalar(5.0);
    Tensor y = sum(mul(x, c));
    backward(y);
    CHECK(x.grad()[0] == 5.0);
    CHECK_FALSE(c.has_grad());
}

// ---- finite difference checks ------------------------------------------------------------------

namespace {

void expect_gradcheck_ok(const std::function<Tensor()>& f,
                         const std::vector<std::pair<std::string, Tensor>>& params,
                         double tol = 1e-6) {
    auto report = grad_check(f, params, 1e-5, tol);
    INFO("max rel err ", report.max_rel_err);
    CHECK(report.passed);
    CHECK(report.per_parameter.size() == params.size());
}

}  // namespace

TEST_CASE("gradcheck: broadcast arithmetic") {
    Rng rng(101);
    Tensor a = random_param({3, 4}, rng);
    Tensor row = random_param({1, 4}, rng);
    Tensor col = random_param({3, 1}, rng);
    Tensor pos = random_param({3, 4}, rng, 0.5, 1.5);

    expect_gradcheck_ok([&] { return sum(add(mul(a, row), col)); },
                        {{"a", a}, {"row", row}, {"col", col}});
    expect_gradcheck_ok([&] { return sum(div(a, pos)); }, {{"a", a}, {"pos", pos}});
    expect_gradcheck_ok([&] { return sum(sub(row, col)); }, {{"row", row}, {"col", col}});
}

TEST_CASE("gradcheck: pointwise nonlinearities") {
    Rng rng(102);
    Tensor x = random_param({2, 5}, rng, -2.0, 2.0);
    Tensor p = random_param({2, 5}, rng, 0.5, 2.0);
    expect_gradcheck_ok([&] { return sum(gelu(x)); }, {{"x", x}});
    expect_gradcheck_ok([&] { return sum(gmlm::exp(x)); }, {{"x", x}});
    expect_gradcheck_ok([&] { return sum(gmlm::log(p)); }, {{"p", p}});
    expect_gradcheck_ok([&] { return sum(gmlm::sqrt(p)); }, {{"p", p}});
    expect_gradcheck_ok([&] { return sum(affine(x, -1.7, 0.3)); }, {{"x", x}});
}

TEST_CASE("gradcheck: matmul and transpose") {
    Rng rng(103);
    Tensor a = random_param({3, 4}, rng);
    Tensor b = random_param({4, 2}, rng);
    Tensor w = random_param({3, 2}, rng);
    expect_gradcheck_ok([&] { return sum(mul(matmul(a, b), w)); },
                        {{"a", a}, {"b", b}, {"w", w}});
    expect_gradcheck_ok([&] { return sum(matmul(transpose(b), transpose(a))); },
                        {{"a", a}, {"b", b}});
}

TEST_CASE("gradcheck: reductions and softmax") {
    Rng rng(104);
    Tensor x = random_param({3, 5}, rng, -2.0, 2.0);
    Tensor w = random_param({3, 5}, rng);
    Tensor w0 = random_param({1, 5}, rng);
    Tensor w1 = random_param({3, 1}, rng);
    expect_gradcheck_ok([&] { return sum(mul(sum_axis(x, 0), w0)); }, {{"x", x}, {"w0", w0}});
    expect_gradcheck_ok([&] { return sum(mul(mean_axis(x, 1), w1)); }, {{"x", x}, {"w1", w1}});
    expect_gradcheck_ok([&] { return sum(mul(softmax(x, 1), w)); }, {{"x", x}, {"w", w}});
    expect_gradcheck_ok([&] { return sum(mul(softmax(x, 0), w)); }, {{"x", x}, {"w", w}});
}

TEST_CASE("gradcheck: masked softmax keeps masked entries inert") {
    Tensor x = Tensor::from_values({2, 3}, {0.3, -0.1, 0.8, 1.0, 0.2, -0.5});
    x.set_requires_grad(true);
    Tensor mask = Tensor::from_values({2, 3}, {0.0, -kInf, 0.0, 0.0, 0.0, -kInf});
    Tensor w = Tensor::from_values({2, 3}, {0.4, 0.9, -0.3, 0.7, -0.6, 0.2});
    auto f = [&] { return sum(mul(softmax(add(x, mask), 1), w)); };
    expect_gradcheck_ok(f, {{"x", x}});

    x.zero_grad();
    backward(f());
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[5] == 0.0);
}

TEST_CASE("gradcheck: structural ops") {
    Rng rng(105);
    Tensor m = random_param({4, 3}, rng);
    Tensor r1 = random_param({3}, rng);
    Tensor r2 = random_param({1, 3}, rng);
    Tensor w6 = random_param({6, 3}, rng);
    Tensor w2 = random_param({2, 3}, rng);

    expect_gradcheck_ok(
        [&] {
            Tensor g = gather_rows(m, std::vector<std::size_t>{1, 1, 3, 0, 2, 1});
            return sum(mul(g, w6));
        },
        {{"m", m}, {"w6", w6}});

    expect_gradcheck_ok(
        [&] { return sum(mul(stack_rows({r1, r2}), w2)); },
        {{"r1", r1}, {"r2", r2}, {"w2", w2}});

    expect_gradcheck_ok(
        [&] { return sum(mul(concat_rows({m, w2}), w6)); },
        {{"m", m}, {"w2", w2}});

    expect_gradcheck_ok(
        [&] {
            Tensor cc = concat_cols({m, m});
            return sum(mul(slice_cols(cc, 1, 4), slice_cols(cc, 2, 4)));
        },
        {{"m", m}});
}

TEST_CASE("gradcheck: layer_norm composite") {
    Rng rng(106);
    Tensor x = random_param({3, 6}, rng, -2.0, 2.0);
    Tensor gamma = random_param({6}, rng, 0.5, 1.5);
    Tensor beta = random_param({6}, rng);
    Tensor w = random_param({3, 6}, rng);
    expect_gradcheck_ok([&] { return sum(mul(layer_norm(x, gamma, beta, 1e-5), w)); },
                        {{"x", x}, {"gamma", gamma}, {"beta", beta}, {"w", w}}, 1e-5);
}

TEST_CASE("gradcheck: harness rejects bad steps and nondeterministic functions") {
    Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
    auto f = [&] { return sum(mul(x, x)); };
    CHECK_THROWS_AS(grad_check(f, {{"x", x}}, 1e-7, 1e-6), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(f, {{"x", x}}, 1e-3, 1e-6), std::invalid_argument);

    Rng rng(1);
    auto noisy = [&] { return sum(mul(x, Tensor::scalar(rng.uniform()))); };
    CHECK_THROWS_AS(grad_check(noisy, {{"x", x}}, 1e-5, 1e-6), HarnessError);

    auto vec = [&] { return mul(x, Tensor::from_values({2}, {1, 2})); };
    CHECK_THROWS_AS(grad_check(vec, {{"x", x}}, 1e-5, 1e-6), std::invalid_argument);
}

TEST_CASE("gradcheck: report carries per-parameter errors and names") {
    Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
    Tensor unused = Tensor::scalar(4.0).set_requires_grad(true);
    auto report = grad_check([&] { return sum(mul(x, x)); },
                             {{"x", x}, {"unused", unused}}, 1e-5, 1e-6);
    CHECK(report.passed);
    REQUIRE(report.per_parameter.size() == 2);
    CHECK(report.per_parameter[0].name == "x");
    CHECK(report.per_parameter[1].name == "unused");
    CHECK(report.per_parameter[1].max_rel_err == 0.0);
    CHECK(report.max_rel_err >= report.per_parameter[0].max_rel_err);
}

TEST_CASE("autodiff: gelu adjoint agrees with quadrature finite differences") {
    Tensor x = Tensor::scalar(0.9).set_requires_grad(true);
    Tensor y = sum(gelu(x));
    backward(y);
    const double analytic = x.grad()[0];
    const double h = 1e-5;
    const double numeric =
        (0.9 + h) * normal_cdf_quadrature(0.9 + h) - (0.9 - h) * normal_cdf_quadrature(0.9 - h);
    CHECK(std::abs(analytic - numeric / (2.0 * h)) < 1e-8);
}
