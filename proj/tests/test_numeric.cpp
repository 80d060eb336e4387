#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "m3bat/adam.hpp"
#include "m3bat/error.hpp"
#include "m3bat/layers.hpp"
#include "m3bat/losses.hpp"
#include "m3bat/matrix.hpp"
#include "m3bat/rng.hpp"
#include "testutil.hpp"

using namespace m3bat;
using testutil::central_diff;
using testutil::max_rel_err;
using testutil::random_matrix;

TEST_CASE("matmul small known values") {
    Matrix a(2, 3);
    a.data = {1, 2, 3, 4, 5, 6};
    Matrix b(3, 2);
    b.data = {7, 8, 9, 10, 11, 12};
    Matrix c = matmul(a, b);
    CHECK(c.rows == 2);
    CHECK(c.cols == 2);
    CHECK(c(0, 0) == doctest::Approx(58));
    CHECK(c(0, 1) == doctest::Approx(64));
    CHECK(c(1, 0) == doctest::Approx(139));
    CHECK(c(1, 1) == doctest::Approx(154));

    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul_at and matmul_bt agree with explicit transposes") {
    Rng rng(7);
    Matrix a = random_matrix(rng, 4, 3);
    Matrix b = random_matrix(rng, 4, 5);
    Matrix at_b = matmul_at(a, b);
    Matrix ref = matmul(transpose(a), b);
    for (std::size_t i = 0; i < ref.data.size(); ++i)
        CHECK(at_b.data[i] == doctest::Approx(ref.data[i]));

    Matrix c = random_matrix(rng, 6, 3);
    Matrix a_ct = matmul_bt(a, c);
    Matrix ref2 = matmul(a, transpose(c));
    for (std::size_t i = 0; i < ref2.data.size(); ++i)
        CHECK(a_ct.data[i] == doctest::Approx(ref2.data[i]));
}

TEST_CASE("select and stack helpers") {
    Matrix a(2, 4);
    a.data = {0, 1, 2, 3, 10, 11, 12, 13};
    Matrix cols = select_columns(a, {3, 1});
    CHECK(cols(0, 0) == 3);
    CHECK(cols(0, 1) == 1);
    CHECK(cols(1, 0) == 13);

    Matrix rows = select_rows(a, {1});
    CHECK(rows.rows == 1);
    CHECK(rows(0, 2) == 12);

    Matrix st = vstack(rows, rows);
    CHECK(st.rows == 2);
    CHECK(st(1, 3) == 13);
}

TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    // derive does not disturb the parent stream
    Rng d(42);
    Rng e = d.derive(1);
    (void)e;
    Rng f(42);
    CHECK(d.next_u64() == f.next_u64());
}

TEST_CASE("dense forward identity, relu, sigmoid") {
    DenseLayer ident(2, 2, Activation::identity);
    ident.W.data = {1, 0, 0, 1};
    Matrix x(1, 2);
    x.data = {1, 2};
    Matrix y = ident.forward(x, Mode::infer, nullptr, nullptr, nullptr);
    CHECK(y(0, 0) == 1);
    CHECK(y(0, 1) == 2);

    DenseLayer relu(2, 2, Activation::relu);
    relu.W.data = {1, 0, 0, 1};
    Matrix pre(1, 2);
    pre.data = {-1, 3};
    Matrix r = relu.forward(pre, Mode::infer, nullptr, nullptr, nullptr);
    CHECK(r(0, 0) == 0);
    CHECK(r(0, 1) == 3);

    DenseLayer sig(1, 1, Activation::sigmoid);
    sig.W.data = {1};
    Matrix zero(1, 1);
    Matrix s = sig.forward(zero, Mode::infer, nullptr, nullptr, nullptr);
    CHECK(s(0, 0) == doctest::Approx(0.5));

    Matrix bad(1, 3);
    CHECK_THROWS_AS(ident.forward(bad, Mode::infer, nullptr, nullptr, nullptr), ShapeError);
}

TEST_CASE("dense backward identity and dead relu") {
    DenseLayer ident(2, 2, Activation::identity);
    ident.W.data = {1, 0, 0, 1};
    Matrix x(1, 2);
    x.data = {5, -3};
    DenseLayer::Cache cache;
    ident.forward(x, Mode::train, nullptr, nullptr, &cache);
    Matrix up(1, 2);
    up.data = {1, 0};
    Matrix dx = ident.backward(cache, up);
    CHECK(dx(0, 0) == 1);
    CHECK(dx(0, 1) == 0);

    DenseLayer relu(1, 1, Activation::relu);
    relu.W.data = {1};
    Matrix neg(1, 1);
    neg.data = {-1};
    DenseLayer::Cache rc;
    relu.forward(neg, Mode::train, nullptr, nullptr, &rc);
    Matrix u1(1, 1);
    u1.data = {1};
    Matrix g = relu.backward(rc, u1);
    CHECK(g(0, 0) == 0.0);
    CHECK(relu.dW.data[0] == 0.0);

    DenseLayer::Cache never;
    CHECK_THROWS_AS(ident.backward(never, up), StateError);
}

namespace {

// Scalar probe loss sum(out * r) so the upstream gradient is just r.
double probe_loss(const Matrix& out, const Matrix& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * r.data[i];
    return s;
}

void check_dense_gradients(Activation act, double dropout_rate) {
    Rng rng(static_cast<std::uint64_t>(static_cast<int>(act)) * 17 + 3);
    DenseLayer layer(3, 4, act);
    layer.init_glorot(rng);
    for (double& v : layer.b) v = 0.1 * rng.normal();
    Matrix x = random_matrix(rng, 5, 3);
    Matrix r = random_matrix(rng, 5, 4);
    DropoutSpec drop{dropout_rate};
    const DropoutSpec* drop_ptr = dropout_rate > 0.0 ? &drop : nullptr;

    // Fixed rng seed per evaluation replays identical dropout masks, so the
    // probed function is deterministic.
    auto forward_loss = [&]() {
        Rng mask_rng(99);
        Matrix out = layer.forward(x, Mode::train, drop_ptr, &mask_rng, nullptr);
        return probe_loss(out, r);
    };

    Rng mask_rng(99);
    DenseLayer::Cache cache;
    layer.forward(x, Mode::train, drop_ptr, &mask_rng, &cache);
    layer.zero_grads();
    Matrix dx = layer.backward(cache, r);

    auto fd_w = central_diff(forward_loss, layer.W.data.data(), layer.W.data.size());
    CHECK(max_rel_err(layer.dW.data, fd_w) < 1e-4);
    auto fd_b = central_diff(forward_loss, layer.b.data(), layer.b.size());
    CHECK(max_rel_err(layer.db, fd_b) < 1e-4);
    auto fd_x = central_diff(forward_loss, x.data.data(), x.data.size());
    CHECK(max_rel_err(dx.data, fd_x) < 1e-4);
}

}  // namespace

TEST_CASE("dense gradients match finite differences for every activation") {
    check_dense_gradients(Activation::identity, 0.0);
    check_dense_gradients(Activation::relu, 0.0);
    check_dense_gradients(Activation::sigmoid, 0.0);
}

TEST_CASE("dropout replay gradient matches finite differences") {
    check_dense_gradients(Activation::relu, 0.4);
    check_dense_gradients(Activation::identity, 0.25);
}

TEST_CASE("inverted dropout conventions") {
    Rng rng(5);
    DenseLayer layer(4, 6, Activation::relu);
    layer.init_glorot(rng);
    Matrix x = random_matrix(rng, 3, 4);

    // infer mode ignores the dropout spec entirely
    DropoutSpec heavy{0.9};
    Matrix a = layer.forward(x, Mode::infer, &heavy, nullptr, nullptr);
    Matrix b = layer.forward(x, Mode::infer, nullptr, nullptr, nullptr);
    CHECK(a.data == b.data);

    // rate 0 in train mode coincides with inference
    DropoutSpec none{0.0};
    Rng mask_rng(1);
    Matrix c = layer.forward(x, Mode::train, &none, &mask_rng, nullptr);
    CHECK(c.data == b.data);
}

TEST_CASE("grl backward definition and properties") {
    Matrix up(1, 2);
    up.data = {2, -4};
    Matrix half = grl_backward(GrlCoefficient(0.5), up);
    CHECK(half(0, 0) == doctest::Approx(-1));
    CHECK(half(0, 1) == doctest::Approx(2));

    Matrix zero = grl_backward(GrlCoefficient(0.0), up);
    CHECK(zero(0, 0) == 0.0);
    CHECK(zero(0, 1) == 0.0);

    Matrix full = grl_backward(GrlCoefficient(1.0), up);
    CHECK(full(0, 0) == -2.0);
    CHECK(full(0, 1) == 4.0);

    // grl_backward(lambda, g) + lambda * g == 0 for random lambda, g
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const double lambda = rng.uniform();
        Matrix g = random_matrix(rng, 2, 3);
        Matrix rev = grl_backward(GrlCoefficient(lambda), g);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            CHECK(rev.data[i] + lambda * g.data[i] == doctest::Approx(0.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS(GrlCoefficient(1.5), ValidationError);
    CHECK_THROWS_AS(GrlCoefficient(-0.1), ValidationError);
}

TEST_CASE("bce loss values and gradient") {
    Matrix p(1, 1);
    p.data = {0.5};
    auto res = bce_loss(p, {1.0});
    CHECK(res.value == doctest::Approx(std::log(2.0)));

    // perfect predictions stay below the clamp-floor bound
    Matrix perfect(2, 1);
    perfect.data = {1.0, 0.0};
    auto perfect_res = bce_loss(perfect, {1.0, 0.0});
    CHECK(perfect_res.value <= -std::log(1.0 - kProbClamp) + 1e-12);
    CHECK(std::fabs(perfect_res.grad.data[0]) * kProbClamp < 1e-3);

    Matrix bad(1, 1);
    bad.data = {0.7};
    CHECK_THROWS_AS(bce_loss(bad, {2.0}), ValidationError);

    Rng rng(3);
    Matrix pred(8, 1);
    std::vector<double> labels(8);
    for (std::size_t i = 0; i < 8; ++i) {
        pred.data[i] = rng.uniform(0.05, 0.95);
        labels[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    auto lr = bce_loss(pred, labels);
    auto fd = central_diff([&]() { return bce_loss(pred, labels).value; }, pred.data.data(),
                           pred.data.size());
    CHECK(max_rel_err(lr.grad.data, fd) < 1e-4);
}

TEST_CASE("mse loss values and gradient") {
    Matrix same(3, 1);
    same.data = {1, 2, 3};
    CHECK(mse_loss(same, {1, 2, 3}).value == 0.0);

    Matrix p(1, 1);
    p.data = {0.0};
    auto res = mse_loss(p, {3.0});
    CHECK(res.value == doctest::Approx(9.0));
    CHECK(res.grad.data[0] == doctest::Approx(-6.0));

    Matrix empty(0, 1);
    CHECK_THROWS_AS(mse_loss(empty, {}), ValidationError);

    Rng rng(9);
    Matrix pred = random_matrix(rng, 6, 1);
    std::vector<double> target(6);
    for (double& t : target) t = rng.normal();
    auto lr = mse_loss(pred, target);
    auto fd = central_diff([&]() { return mse_loss(pred, target).value; }, pred.data.data(),
                           pred.data.size());
    CHECK(max_rel_err(lr.grad.data, fd) < 1e-4);
}

TEST_CASE("adam update rules") {
    // zero gradient is a fixed point
    std::vector<double> theta{0.3, -0.7};
    std::vector<double> grad{0.0, 0.0};
    std::vector<ParamRef> params{{"theta", theta.data(), 2}};
    std::vector<ParamRef> grads{{"theta", grad.data(), 2}};
    AdamState adam(params);
    for (int i = 0; i < 5; ++i) adam.step(params, grads);
    CHECK(theta[0] == 0.3);
    CHECK(theta[1] == -0.7);

    // first step with g=1 moves theta by about -lr
    std::vector<double> x{0.0};
    std::vector<double> g{1.0};
    std::vector<ParamRef> p2{{"x", x.data(), 1}};
    std::vector<ParamRef> g2{{"x", g.data(), 1}};
    AdamState adam2(p2);
    adam2.step(p2, g2);
    CHECK(x[0] == doctest::Approx(-0.001).epsilon(1e-6));

    // repeated identical gradients keep decreasing theta
    const double after_one = x[0];
    adam2.step(p2, g2);
    CHECK(x[0] < after_one);

    std::vector<double> nan_grad{std::nan("")};
    std::vector<ParamRef> g3{{"x", nan_grad.data(), 1}};
    CHECK_THROWS_WITH_AS(adam2.step(p2, g3), doctest::Contains("x"), NumericError);
}

TEST_CASE("layer stack composed gradients match finite differences") {
    Rng rng(21);
    LayerStack stack;
    stack.push(DenseLayer(4, 6, Activation::relu), 0.3);
    stack.push(DenseLayer(6, 3, Activation::sigmoid), 0.0);
    stack.init(rng);
    Matrix x = random_matrix(rng, 5, 4);
    Matrix r = random_matrix(rng, 5, 3);

    auto loss = [&]() {
        Rng mask_rng(123);
        Matrix out = stack.forward(x, Mode::train, &mask_rng, nullptr);
        return probe_loss(out, r);
    };

    Rng mask_rng(123);
    StackCache cache;
    stack.forward(x, Mode::train, &mask_rng, &cache);
    stack.zero_grads();
    Matrix dx = stack.backward(cache, r);

    for (auto& layer : stack.layers) {
        auto fd_w = central_diff(loss, layer.W.data.data(), layer.W.data.size());
        CHECK(max_rel_err(layer.dW.data, fd_w) < 1e-4);
        auto fd_b = central_diff(loss, layer.b.data(), layer.b.size());
        CHECK(max_rel_err(layer.db, fd_b) < 1e-4);
    }
    auto fd_x = central_diff(loss, x.data.data(), x.data.size());
    CHECK(max_rel_err(dx.data, fd_x) < 1e-4);
}

TEST_CASE("forward is deterministic under a fixed seed") {
    Rng init(33);
    LayerStack stack;
    stack.push(DenseLayer(3, 5, Activation::relu), 0.5);
    stack.push(DenseLayer(5, 1, Activation::sigmoid), 0.0);
    stack.init(init);
    Rng data_rng(4);
    Matrix x = random_matrix(data_rng, 4, 3);

    Rng r1(77), r2(77);
    Matrix a = stack.forward(x, Mode::train, &r1, nullptr);
    Matrix b = stack.forward(x, Mode::train, &r2, nullptr);
    CHECK(a.data == b.data);
}
