#include <doctest.h>

#include <cmath>

#include "geofuse/common.hpp"
#include "geofuse/ops.hpp"
#include "geofuse/tensor.hpp"

using namespace geofuse;

namespace {

std::vector<double> randv(int64_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("linear matches a scalar triple-loop oracle") {
  const int64_t R = 4, CIN = 5, COUT = 3;
  Tensor x = Tensor::constant({R, CIN}, randv(R * CIN, 1));
  Tensor W = Tensor::constant({COUT, CIN}, randv(COUT * CIN, 2));
  Tensor b = Tensor::constant({COUT}, randv(COUT, 3));
  const Tensor y = ops::linear(x, W, b);

  // independent naive oracle
  for (int64_t r = 0; r < R; ++r)
    for (int64_t o = 0; o < COUT; ++o) {
      double acc = b.values()[o];
      for (int64_t i = 0; i < CIN; ++i)
        acc += x.values()[r * CIN + i] * W.values()[o * CIN + i];
      CHECK(std::abs(y.values()[r * COUT + o] - acc) < 1e-12);
    }
}

TEST_CASE("linear identity and zero input") {
  Tensor x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor zero_b = Tensor::zeros({3});
  const Tensor y = ops::linear(x, eye, zero_b);
  for (int i = 0; i < 6; ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));

  Tensor xz = Tensor::zeros({2, 3});
  Tensor b = Tensor::constant({3}, {0.5, -1.0, 2.0});
  const Tensor yb = ops::linear(xz, eye, b);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) CHECK(yb.values()[r * 3 + c] == doctest::Approx(b.values()[c]));
}

TEST_CASE("linear rejects shape mismatch") {
  Tensor x = Tensor::zeros({2, 3});
  Tensor W = Tensor::zeros({4, 5});
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_AS(ops::linear(x, W, b), ValidationError);
}

TEST_CASE("backward of sum gives ones; of half squared norm gives x") {
  Tensor x = Tensor::param({7}, randv(7, 4));
  backward(ops::sum_all(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

  Tensor y = Tensor::param({5}, randv(5, 5));
  backward(ops::scale(ops::sum_all(ops::mul(y, y)), 0.5));
  for (int i = 0; i < 5; ++i) CHECK(y.grad()[i] == doctest::Approx(y.values()[i]).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar") {
  Tensor x = Tensor::param({3}, randv(3, 6));
  Tensor y = ops::relu(x);
  CHECK_THROWS_AS(backward(y), ValidationError);
}

TEST_CASE("softmax of equal logits is uniform; shift invariance") {
  Tensor x = Tensor::constant({1, 5}, std::vector<double>(5, 0.37));
  const Tensor y = ops::softmax_last(x);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

  const auto logits = randv(8, 7);
  Tensor a = Tensor::constant({1, 8}, logits);
  auto shifted = logits;
  for (auto& v : shifted) v += 123.456;
  Tensor b = Tensor::constant({1, 8}, shifted);
  const Tensor ya = ops::softmax_last(a);
  const Tensor yb = ops::softmax_last(b);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(ya.values()[i] - yb.values()[i]) < 1e-12);
}

TEST_CASE("softmax additive mask zeroes masked entries") {
  Tensor x = Tensor::constant({1, 4}, {1.0, 2.0, 3.0, 4.0});
  std::vector<double> mask{0.0, -std::numeric_limits<double>::infinity(), 0.0,
                           -std::numeric_limits<double>::infinity()};
  const Tensor y = ops::softmax_last(x, &mask);
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[3] == 0.0);
  CHECK(y.values()[0] + y.values()[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sigmoid(0) = 0.5, tanh odd") {
  Tensor z = Tensor::zeros({1});
  CHECK(ops::sigmoid(z).values()[0] == doctest::Approx(0.5));
  Tensor x = Tensor::constant({1}, {0.73});
  Tensor xn = Tensor::constant({1}, {-0.73});
  CHECK(ops::tanh_op(x).values()[0] == doctest::Approx(-ops::tanh_op(xn).values()[0]));
}

TEST_CASE("layer_norm normalizes rows") {
  const int64_t C = 6;
  Tensor x = Tensor::constant({3, C}, randv(3 * C, 8, -2, 2));
  Tensor gamma = Tensor::constant({C}, std::vector<double>(C, 1.0));
  Tensor beta = Tensor::zeros({C});
  const Tensor y = ops::layer_norm(x, gamma, beta);
  for (int r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (int c = 0; c < C; ++c) mu += y.values()[r * C + c];
    mu /= C;
    for (int c = 0; c < C; ++c) {
      const double d = y.values()[r * C + c] - mu;
      var += d * d;
    }
    CHECK(std::abs(mu) < 1e-9);
    CHECK(var / C == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("view-axis ops are bit-identical under view permutation") {
  const int64_t T = 5, N = 7, C = 8;
  const auto xs = randv(T * N * C, 9);
  ViewMask mask;
  mask.views = T;
  mask.voxels = N;
  mask.valid = [&] {
    Rng rng(10);
    std::vector<uint8_t> v(T * N, 1);
    for (auto& b : v) b = rng.uniform() < 0.25 ? 0 : 1;
    for (int64_t n = 0; n < N; ++n) v[n] = 1;
    return v;
  }();

  const std::vector<int64_t> perm{3, 0, 4, 1, 2};
  auto permute_x = [&](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (int64_t t = 0; t < T; ++t)
      for (int64_t i = 0; i < N * C; ++i) out[t * N * C + i] = v[perm[t] * N * C + i];
    return out;
  };
  ViewMask pmask = mask;
  for (int64_t t = 0; t < T; ++t)
    for (int64_t n = 0; n < N; ++n) pmask.valid[t * N + n] = mask.valid[perm[t] * N + n];

  auto fused_of = [&](const std::vector<double>& data, const ViewMask& m) {
    Tensor x = Tensor::constant({T, N, C}, data);
    Tensor s = ops::attention_scores(x, x, 2);
    Tensor w = ops::attention_softmax(s, m);
    Tensor o = ops::attention_apply(w, x, 2);
    Tensor A = ops::head_average(w);
    Tensor mu = ops::attention_row_mean(A, m);
    // uniform weights over valid views, then fuse
    std::vector<double> wv(N * T, 0.0);
    for (int64_t n = 0; n < N; ++n) {
      int count = 0;
      for (int64_t t = 0; t < T; ++t)
        if (m.valid[t * N + n]) ++count;
      for (int64_t t = 0; t < T; ++t)
        if (m.valid[t * N + n]) wv[n * T + t] = 1.0 / count;
    }
    Tensor fused = ops::weighted_view_sum(Tensor::constant({N, T}, wv), o);
    return std::make_pair(fused.values(), mu.values());
  };

  const auto [fused_a, mu_a] = fused_of(xs, mask);
  const auto [fused_b, mu_b] = fused_of(permute_x(xs), pmask);
  // fused volume bit-identical; row stats permuted rows bit-identical
  for (size_t i = 0; i < fused_a.size(); ++i) CHECK(fused_a[i] == fused_b[i]);
  for (int64_t t = 0; t < T; ++t)
    for (int64_t n = 0; n < N; ++n) CHECK(mu_a[perm[t] * N + n] == mu_b[t * N + n]);
}

TEST_CASE("attention row stats: uniform rows give exactly zero std") {
  const int64_t T = 4, N = 3;
  ViewMask mask;
  mask.views = T;
  mask.voxels = N;
  mask.valid.assign(T * N, 1);
  std::vector<double> a(T * T * N, 0.25);
  Tensor A = Tensor::constant({T, T, N}, a);
  const Tensor sd = ops::attention_row_std(A, mask);
  for (double v : sd.values()) CHECK(v == 0.0);
  const Tensor mu = ops::attention_row_mean(A, mask);
  for (double v : mu.values()) CHECK(v == 0.25);
}

TEST_CASE("row stats match a scalar population-statistics oracle") {
  const int64_t T = 6, N = 4;
  ViewMask mask;
  mask.views = T;
  mask.voxels = N;
  mask.valid.assign(T * N, 1);
  Rng rng(30);
  std::vector<double> a(T * T * N);
  for (auto& v : a) v = rng.uniform(0.0, 1.0);
  Tensor A = Tensor::constant({T, T, N}, a);
  const Tensor mu = ops::attention_row_mean(A, mask);
  const Tensor sd = ops::attention_row_std(A, mask);
  for (int64_t i = 0; i < T; ++i)
    for (int64_t n = 0; n < N; ++n) {
      double m = 0;
      for (int64_t j = 0; j < T; ++j) m += a[(i * T + j) * N + n];
      m /= T;
      double var = 0;
      for (int64_t j = 0; j < T; ++j) {
        const double d = a[(i * T + j) * N + n] - m;
        var += d * d;
      }
      CHECK(std::abs(mu.values()[i * N + n] - m) < 1e-12);
      CHECK(std::abs(sd.values()[i * N + n] - std::sqrt(var / T)) < 1e-12);
    }
}

TEST_CASE("determinism: same seed reproduces values and gradients bitwise") {
  auto run = [] {
    Rng rng(77);
    Tensor x = Tensor::param({4, 6}, randv(24, 78));
    Tensor W = Tensor::param({6, 6}, randv(36, 79));
    Tensor b = Tensor::param({6}, randv(6, 80));
    Tensor y = ops::relu(ops::linear(x, W, b));
    Tensor loss = ops::mean_all(ops::mul(y, y));
    backward(loss);
    std::vector<double> out = y.values();
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), W.grad().begin(), W.grad().end());
    out.push_back(loss.scalar_value());
    return out;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("repeated backward accumulates parameter gradients") {
  Tensor x = Tensor::param({3}, {1.0, 2.0, 3.0});
  backward(ops::sum_all(x));
  backward(ops::sum_all(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("conv3x3x3 keeps constant fields constant under sum-normalized kernels") {
  const Dims3 dims{5, 4, 6};
  const int64_t cin = 2, cout = 1;
  std::vector<double> x(dims.count() * cin);
  for (int64_t i = 0; i < dims.count(); ++i) {
    x[i * 2] = 0.7;
    x[i * 2 + 1] = -0.3;
  }
  // kernel normalized so each output channel sums input taps to 1 per channel pair
  std::vector<double> w(cout * 27 * cin, 1.0 / 27.0);
  Tensor y = ops::conv3x3x3(Tensor::constant({dims.count(), cin}, x),
                            Tensor::constant({cout, 27 * cin}, w), Tensor::zeros({cout}), dims);
  for (int64_t i = 0; i < dims.count(); ++i)
    CHECK(y.values()[i] == doctest::Approx(0.7 - 0.3).epsilon(1e-12));
}

TEST_CASE("weighted_view_sum and view_softmax match scalar oracles") {
  const int64_t T = 4, N = 5, C = 3;
  Rng rng(42);
  std::vector<double> logits(N * T), x(T * N * C);
  for (auto& v : logits) v = rng.uniform(-2, 2);
  for (auto& v : x) v = rng.uniform(-1, 1);
  ViewMask mask;
  mask.views = T;
  mask.voxels = N;
  mask.valid.assign(T * N, 1);
  mask.valid[1 * N + 2] = 0;
  mask.valid[3 * N + 2] = 0;

  const Tensor w = ops::view_softmax(Tensor::constant({N, T}, logits), mask);
  const Tensor fused = ops::weighted_view_sum(w, Tensor::constant({T, N, C}, x));

  for (int64_t n = 0; n < N; ++n) {
    // oracle softmax
    double mx = -1e300;
    for (int64_t t = 0; t < T; ++t)
      if (mask.valid[t * N + n]) mx = std::max(mx, logits[n * T + t]);
    double denom = 0;
    std::vector<double> ww(T, 0.0);
    for (int64_t t = 0; t < T; ++t)
      if (mask.valid[t * N + n]) {
        ww[t] = std::exp(logits[n * T + t] - mx);
        denom += ww[t];
      }
    for (int64_t t = 0; t < T; ++t) {
      ww[t] /= denom;
      if (!mask.valid[t * N + n]) ww[t] = 0.0;
      CHECK(std::abs(w.values()[n * T + t] - ww[t]) < 1e-12);
    }
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0;
      for (int64_t t = 0; t < T; ++t) acc += ww[t] * x[(t * N + n) * C + c];
      CHECK(std::abs(fused.values()[n * C + c] - acc) < 1e-12);
    }
  }
}
