#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include "icbir/error.hpp"
#include "icbir/nn.hpp"
#include "icbir/parallel.hpp"
#include "icbir/rng.hpp"
#include "icbir/tensor.hpp"

using namespace icbir;

namespace {

// True when the two gradients agree to 1e-3 relative error, with a 1e-5
// absolute floor for near-zero entries.
bool grad_close(double analytic, double reference) {
  const double diff = std::abs(analytic - reference);
  if (diff <= 1e-5) return true;
  return diff <= 1e-3 * std::max(std::abs(analytic), std::abs(reference));
}

// Double-precision re-implementation of the dense forward pass, used as the
// finite-difference reference.  Plain loops on purpose.
std::vector<double> ref_dense(const std::vector<double>& w, const std::vector<double>& b,
                              const std::vector<double>& x, std::size_t out,
                              std::size_t in, Activation act) {
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
    if (act == Activation::Relu) acc = acc > 0.0 ? acc : 0.0;
    if (act == Activation::Sigmoid) acc = 1.0 / (1.0 + std::exp(-acc));
    y[o] = acc;
  }
  return y;
}

}  // namespace

TEST_CASE("rng: identical seeds give identical streams, different seeds differ") {
  Rng a(42), b(42), c(43);
  bool all_equal = true;
  bool any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t va = a.next_u64();
    all_equal = all_equal && (va == b.next_u64());
    any_diff = any_diff || (va != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng: forked streams are reproducible and independent") {
  Rng a = Rng::fork(7, 2);
  Rng b = Rng::fork(7, 2);
  Rng c = Rng::fork(7, 3);
  bool fork_repeatable = true;
  bool streams_differ = false;
  for (int i = 0; i < 256; ++i) {
    const std::uint64_t va = a.next_u64();
    fork_repeatable = fork_repeatable && (va == b.next_u64());
    streams_differ = streams_differ || (va != c.next_u64());
  }
  CHECK(fork_repeatable);
  CHECK(streams_differ);
}

TEST_CASE("rng: normal draws have standard moments over 1e5 samples") {
  Rng rng(2024);
  const std::size_t n = 100000;
  std::vector<float> draws(n);
  rng.fill_normal(draws);
  double sum = 0.0;
  for (float d : draws) sum += d;
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (float d : draws) sq += (d - mean) * (d - mean);
  const double stdev = std::sqrt(sq / static_cast<double>(n));
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(stdev - 1.0) < 0.02);
}

TEST_CASE("rng: next_below stays in range and hits every residue") {
  Rng rng(5);
  std::array<int, 10> seen{};
  for (int i = 0; i < 2000; ++i) {
    const std::uint64_t v = rng.next_below(10);
    REQUIRE(v < 10);
    seen[static_cast<std::size_t>(v)] += 1;
  }
  for (int count : seen) CHECK(count > 0);
}

TEST_CASE("deterministic_log matches libm across magnitudes") {
  CHECK(deterministic_log(1.0) == 0.0);
  for (double x : {1e-12, 1e-6, 0.1, 0.5, 0.999, 1.0001, 2.0, 2.718281828459045,
                   10.0, 12345.678, 1e8, 1e16}) {
    const double got = deterministic_log(x);
    const double want = std::log(x);
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("tensor: shape bookkeeping and size mismatch errors") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.size() == 6);
  for (float v : t.v) CHECK(v == 0.0f);

  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0f, 2.0f, 3.0f}), Error);
  try {
    Tensor::from({2, 2}, {1.0f, 2.0f, 3.0f});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Dimension);
  }

  Tensor a = Tensor::zeros({2});
  Tensor b = Tensor::zeros({3});
  CHECK_THROWS_AS(require_same_shape(a, b, "test"), Error);
}

TEST_CASE("dense_forward: identity weights pass the input through") {
  DenseLayer layer = DenseLayer::make(2, 2, Activation::Identity);
  layer.weight.v = {1.0f, 0.0f, 0.0f, 1.0f};
  layer.bias.v = {0.0f, 0.0f};
  const Tensor y = dense_forward(layer, Tensor::from({2}, {3.0f, 4.0f}));
  CHECK(y.v[0] == 3.0f);
  CHECK(y.v[1] == 4.0f);
}

TEST_CASE("dense_forward: relu clips a negative pre-activation to zero") {
  DenseLayer layer = DenseLayer::make(2, 1, Activation::Relu);
  layer.weight.v = {1.0f, 1.0f};
  layer.bias.v = {-5.0f};
  const Tensor y = dense_forward(layer, Tensor::from({2}, {2.0f, 2.0f}));
  CHECK(y.v[0] == 0.0f);  // 2 + 2 - 5 = -1, relu -> 0
}

TEST_CASE("dense_forward: zero logits sigmoid to one half") {
  DenseLayer layer = DenseLayer::make(2, 1, Activation::Sigmoid);
  layer.weight.v = {0.0f, 0.0f};
  layer.bias.v = {0.0f};
  const Tensor y = dense_forward(layer, Tensor::from({2}, {9.0f, 9.0f}));
  CHECK(y.v[0] == 0.5f);
}

TEST_CASE("dense_forward: input length mismatch raises a dimension error") {
  DenseLayer layer = DenseLayer::make(3, 2, Activation::Identity);
  CHECK_THROWS_AS(dense_forward(layer, Tensor::from({2}, {1.0f, 2.0f})), Error);
}

TEST_CASE("dense_backward: hand-checked chain rule on a 1x1 layer") {
  DenseLayer layer = DenseLayer::make(1, 1, Activation::Identity);
  layer.weight.v = {2.0f};
  layer.bias.v = {0.0f};
  DenseCache cache;
  dense_forward(layer, Tensor::from({1}, {3.0f}), &cache);
  const DenseGradients g = dense_backward(layer, cache, Tensor::from({1}, {1.0f}));
  CHECK(g.grad_x.v[0] == 2.0f);
  CHECK(g.grad_w.v[0] == 3.0f);
  CHECK(g.grad_b.v[0] == 1.0f);
}

TEST_CASE("dense_backward: a dead relu unit produces all-zero gradients") {
  DenseLayer layer = DenseLayer::make(1, 1, Activation::Relu);
  layer.weight.v = {1.0f};
  layer.bias.v = {-5.0f};
  DenseCache cache;
  dense_forward(layer, Tensor::from({1}, {3.0f}), &cache);  // pre = -2
  const DenseGradients g = dense_backward(layer, cache, Tensor::from({1}, {1.0f}));
  CHECK(g.grad_x.v[0] == 0.0f);
  CHECK(g.grad_w.v[0] == 0.0f);
  CHECK(g.grad_b.v[0] == 0.0f);
}

TEST_CASE("dense_backward: backward before forward is a state error") {
  DenseLayer layer = DenseLayer::make(1, 1, Activation::Identity);
  DenseCache cache;  // never filled
  try {
    dense_backward(layer, cache, Tensor::from({1}, {1.0f}));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::State);
  }
}

TEST_CASE("dense_backward: finite differences confirm every gradient") {
  // One layer per activation; the loss is a fixed random projection of the
  // output so every gradient entry is exercised.
  for (Activation act : {Activation::Identity, Activation::Relu, Activation::Sigmoid}) {
    const std::size_t in = 5, out = 4;
    DenseLayer layer = DenseLayer::make(in, out, act);
    Rng rng(91 + static_cast<std::uint64_t>(act));
    std::vector<float> buf(in * out + out + in + out);
    rng.fill_normal(buf);
    std::size_t pos = 0;
    for (float& w : layer.weight.v) w = 0.5f * buf[pos++];
    for (float& b : layer.bias.v) b = 0.5f * buf[pos++];
    Tensor x = Tensor::zeros({in});
    for (float& v : x.v) v = buf[pos++];
    std::vector<double> proj(out);
    for (double& p : proj) p = buf[pos++];

    // Keep pre-activations safely away from the relu kink so the central
    // difference stays on one side of it.
    std::vector<double> wd(layer.weight.v.begin(), layer.weight.v.end());
    std::vector<double> bd(layer.bias.v.begin(), layer.bias.v.end());
    std::vector<double> xd(x.v.begin(), x.v.end());
    for (std::size_t o = 0; o < out; ++o) {
      double pre = bd[o];
      for (std::size_t i = 0; i < in; ++i) pre += wd[o * in + i] * xd[i];
      REQUIRE(std::abs(pre) > 0.05);
    }

    DenseCache cache;
    dense_forward(layer, x, &cache);
    Tensor grad_out = Tensor::zeros({out});
    for (std::size_t o = 0; o < out; ++o) grad_out.v[o] = static_cast<float>(proj[o]);
    const DenseGradients g = dense_backward(layer, cache, grad_out);

    auto loss_at = [&](const std::vector<double>& w, const std::vector<double>& b,
                       const std::vector<double>& xv) {
      const std::vector<double> y = ref_dense(w, b, xv, out, in, act);
      double loss = 0.0;
      for (std::size_t o = 0; o < out; ++o) loss += proj[o] * y[o];
      return loss;
    };
    const double h = 1e-3;
    auto fd = [&](std::vector<double>& target, std::size_t idx) {
      const double base = target[idx];
      target[idx] = base + h;
      const double up = loss_at(wd, bd, xd);
      target[idx] = base - h;
      const double down = loss_at(wd, bd, xd);
      target[idx] = base;
      return (up - down) / (2.0 * h);
    };

    for (std::size_t i = 0; i < wd.size(); ++i) CHECK(grad_close(g.grad_w.v[i], fd(wd, i)));
    for (std::size_t i = 0; i < bd.size(); ++i) CHECK(grad_close(g.grad_b.v[i], fd(bd, i)));
    for (std::size_t i = 0; i < xd.size(); ++i) CHECK(grad_close(g.grad_x.v[i], fd(xd, i)));
  }
}

TEST_CASE("dense_forward: identity activation is affine-linear in the input") {
  const std::size_t in = 6, out = 3;
  DenseLayer layer = DenseLayer::make(in, out, Activation::Identity);
  Rng rng(17);
  std::vector<float> buf(in * out + out + 2 * in);
  rng.fill_normal(buf);
  std::size_t pos = 0;
  for (float& w : layer.weight.v) w = buf[pos++];
  for (float& b : layer.bias.v) b = buf[pos++];
  Tensor x = Tensor::zeros({in}), y = Tensor::zeros({in});
  for (float& v : x.v) v = buf[pos++];
  for (float& v : y.v) v = buf[pos++];

  const float a = 1.7f, b = -0.6f;
  Tensor mix = Tensor::zeros({in});
  for (std::size_t i = 0; i < in; ++i) mix.v[i] = a * x.v[i] + b * y.v[i];

  const Tensor fx = dense_forward(layer, x);
  const Tensor fy = dense_forward(layer, y);
  const Tensor fmix = dense_forward(layer, mix);
  for (std::size_t o = 0; o < out; ++o) {
    const double expected = a * fx.v[o] + b * fy.v[o] - (a + b - 1.0) * layer.bias.v[o];
    CHECK(std::abs(fmix.v[o] - expected) < 1e-5);
  }
}

TEST_CASE("adam: zero gradients never move the parameters") {
  Tensor param = Tensor::from({3}, {0.5f, -1.25f, 2.0f});
  const Tensor before = param;
  AdamState state = AdamState::for_param(param, 1e-2f);
  const Tensor zero = Tensor::zeros({3});
  for (int step = 0; step < 5; ++step) adam_step(state, param, zero);
  CHECK(state.step == 5);
  CHECK(param.v == before.v);
}

TEST_CASE("adam: first step moves by roughly the learning rate") {
  Tensor param = Tensor::from({1}, {1.0f});
  AdamState state = AdamState::for_param(param, 0.1f);
  adam_step(state, param, Tensor::from({1}, {1.0f}));
  // Bias correction makes mhat = 1, vhat = 1 at step 1, so the update is
  // lr / (1 + eps) = 0.1 to within a hair.
  CHECK(std::abs(param.v[0] - 0.9f) < 1e-6);
}

TEST_CASE("adam: non-finite gradients are rejected") {
  Tensor param = Tensor::from({1}, {1.0f});
  AdamState state = AdamState::for_param(param, 0.1f);
  try {
    adam_step(state, param, Tensor::from({1}, {std::numeric_limits<float>::quiet_NaN()}));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Numeric);
  }
  CHECK_THROWS_AS(
      adam_step(state, param, Tensor::from({1}, {std::numeric_limits<float>::infinity()})),
      Error);
}

TEST_CASE("adam: identical gradient sequences give bit-identical parameters") {
  auto run = [] {
    Tensor param = Tensor::from({4}, {1.0f, -2.0f, 0.25f, 3.0f});
    AdamState state = AdamState::for_param(param, 5e-3f);
    Rng rng(321);
    for (int step = 0; step < 10; ++step) {
      Tensor grad = Tensor::zeros({4});
      rng.fill_normal(std::span<float>(grad.v));
      adam_step(state, param, grad);
    }
    return param;
  };
  CHECK(run().v == run().v);
}

TEST_CASE("sample_standard_normal: deterministic per seed") {
  std::vector<float> a(64), b(64), c(64);
  Rng r1(9), r2(9), r3(10);
  sample_standard_normal(r1, a);
  sample_standard_normal(r2, b);
  sample_standard_normal(r3, c);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("init_dense: reproducible weights, zero biases") {
  DenseLayer a = DenseLayer::make(8, 4, Activation::Relu);
  DenseLayer b = DenseLayer::make(8, 4, Activation::Relu);
  Rng ra(77), rb(77);
  init_dense(a, ra);
  init_dense(b, rb);
  CHECK(a.weight.v == b.weight.v);
  bool any_nonzero = false;
  for (float w : a.weight.v) any_nonzero = any_nonzero || w != 0.0f;
  CHECK(any_nonzero);
  for (float bias : a.bias.v) CHECK(bias == 0.0f);
}

TEST_CASE("parallel_for: chunks cover every index exactly once") {
  for (int threads : {1, 2, 8}) {
    for (std::size_t count : {std::size_t{0}, std::size_t{1}, std::size_t{5},
                              std::size_t{17}, std::size_t{64}}) {
      std::vector<int> hits(count, 0);
      parallel_for(count, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) hits[i] += 1;
      });
      for (std::size_t i = 0; i < count; ++i) CHECK(hits[i] == 1);
    }
  }
}

TEST_CASE("resolve_thread_count: explicit beats env var beats hardware") {
  setenv("ICBIR_THREADS", "3", 1);
  CHECK(resolve_thread_count(0) == 3);
  CHECK(resolve_thread_count(2) == 2);
  unsetenv("ICBIR_THREADS");
  CHECK(resolve_thread_count(0) >= 1);
}
