#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "capgan/checkpoint.hpp"
#include "capgan/grad_check.hpp"
#include "capgan/lstm.hpp"
#include "capgan/math.hpp"
#include "capgan/param_store.hpp"
#include "capgan/rng.hpp"

using namespace capgan;

namespace {

Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST_CASE("affine computes Wx + b and rejects mismatched shapes") {
  const Matrix w = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const Vector x{1, -1};
  const Vector b{0.5, 0, -0.5};
  const Vector y = affine(x, w, b);
  REQUIRE(y.size() == 3);
  CHECK(y[0] == doctest::Approx(-0.5));
  CHECK(y[1] == doctest::Approx(-1.0));
  CHECK(y[2] == doctest::Approx(-1.5));

  const Vector x3{1, 2, 3};
  CHECK_THROWS_AS(affine(x3, w, b), ShapeError);
  CHECK_THROWS_WITH_AS(affine(x3, w, b), doctest::Contains("3"), ShapeError);
  const Vector b2{1, 2};
  CHECK_THROWS_AS(affine(x, w, b2), ShapeError);
}

TEST_CASE("softmax is a probability vector for finite logits") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector logits = random_vector(1 + rng.below(40), rng, std::pow(10.0, rng.uniform(-2, 4)));
    const Vector p = softmax(logits);
    double sum = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax gives exactly zero mass to -inf logits") {
  const double ninf = -std::numeric_limits<double>::infinity();
  const Vector p = softmax(Vector{0.0, ninf, 0.0});
  CHECK(p[1] == 0.0);
  CHECK(p[0] == doctest::Approx(0.5));
}

TEST_CASE("softmax_xent stays finite for logits of magnitude 1e4") {
  const Vector logits{1e4, -1e4, 0.0, 5e3};
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const XentResult r = softmax_xent(logits, t);
    CHECK(std::isfinite(r.loss));
    for (double g : r.grad_logits) CHECK(std::isfinite(g));
  }
  // -log softmax at the dominant logit is ~0, at the smallest ~2e4.
  CHECK(softmax_xent(logits, 0).loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(softmax_xent(logits, 1).loss == doctest::Approx(2e4));
  CHECK_THROWS_AS(softmax_xent(logits, 4), std::out_of_range);
}

TEST_CASE("softmax_xent matches -log of a directly computed softmax") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector logits = random_vector(6, rng, 3.0);
    const std::size_t target = rng.below(6);
    double z = 0.0;
    for (double v : logits) z += std::exp(v);
    const double expected = -std::log(std::exp(logits[target]) / z);
    CHECK(softmax_xent(logits, target).loss == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("sigmoid is stable at both tails and strictly increasing") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
  double prev = sigmoid(-30.0);
  for (double x = -29.5; x <= 30.0; x += 0.5) {
    const double s = sigmoid(x);
    CHECK(s > prev);
    prev = s;
  }
}

TEST_CASE("lstm_step with zero parameters halves the cell state exactly") {
  const std::size_t h = 5, in = 3;
  Matrix w(4 * h, in + h, 0.0);
  Vector b(4 * h, 0.0);
  Rng rng(2);
  LstmState s = LstmState::zeros(h);
  s.hidden = random_vector(h, rng);
  s.cell = random_vector(h, rng, 4.0);
  const LstmState next = lstm_step(s, random_vector(in, rng), w, b);
  for (std::size_t k = 0; k < h; ++k) CHECK(next.cell[k] == 0.5 * s.cell[k]);
  CHECK(next.step == s.step + 1);
}

TEST_CASE("lstm_step rejects wrongly shaped weights") {
  Matrix w(4 * 4, 3 + 5, 0.0);
  Vector b(16, 0.0);
  CHECK_THROWS_AS(lstm_step(LstmState::zeros(4), Vector(3, 0.0), w, b), ShapeError);
}

TEST_CASE("grad_check on a linear objective reports near-zero error") {
  ParamStore p(1);
  p.add("w", 2, 3);
  Rng rng(3);
  p.init_uniform(rng, 1.0);
  const Vector c{0.3, -1.2, 2.0, 0.7, -0.1, 1.5};
  ObjectiveFn f = [&](ParamStore& s, bool with_grad) {
    double v = 0.0;
    auto d = s.value(0).data();
    for (std::size_t i = 0; i < d.size(); ++i) v += c[i] * d[i];
    if (with_grad) {
      auto g = s.grad(0).data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c[i];
    }
    return v;
  };
  const GradCheckResult r = grad_check(f, p);
  CHECK(r.checked == 6);
  CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("grad_check detects a wrong gradient") {
  ParamStore p(1);
  p.add("w", 1, 2);
  p.value(0)(0, 0) = 1.0;
  p.value(0)(0, 1) = 2.0;
  ObjectiveFn f = [](ParamStore& s, bool with_grad) {
    const auto d = s.value(0).data();
    if (with_grad) {
      s.grad(0)(0, 0) += 2.0 * d[0];
      s.grad(0)(0, 1) += 3.0 * d[1];  // wrong: should be 2 * d[1]
    }
    return d[0] * d[0] + d[1] * d[1];
  };
  const GradCheckResult r = grad_check(f, p);
  CHECK(r.max_relative_error > 0.1);
  CHECK(r.worst_param == "w");
  CHECK(r.worst_index == 1);
}

TEST_CASE("relative_error uses the guarded denominator") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
}

// Three-step LSTM chain with an affine readout of every hidden state and
// the final cell; the gradient is assembled from lstm_step_backward.
TEST_CASE("LSTM backward passes grad_check on 5 seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const std::size_t h = 4 + seed % 3 * 4, in = 3, steps = 3;
    ParamStore p(seed);
    p.add("lstm.w", 4 * h, in + h);
    p.add("lstm.b", 4 * h, 1);
    p.add("read", 1, h);
    Rng rng(seed * 101);
    p.init_uniform(rng, 0.5);
    std::vector<Vector> inputs;
    for (std::size_t t = 0; t < steps; ++t) inputs.push_back(random_vector(in, rng));
    const Vector c_weight = random_vector(h, rng);
    LstmState s0 = LstmState::zeros(h);
    s0.hidden = random_vector(h, rng, 0.5);
    s0.cell = random_vector(h, rng, 0.5);

    ObjectiveFn f = [&](ParamStore& s, bool with_grad) {
      const Matrix& w = s.value(0);
      const auto b = s.value(1).data();
      const auto read = s.value(2).data();
      std::vector<LstmCache> caches(steps);
      std::vector<Vector> hs;
      LstmState st = s0;
      double obj = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        st = lstm_step(st, inputs[t], w, b, &caches[t]);
        obj += dot(read, st.hidden);
        hs.push_back(st.hidden);
      }
      obj += dot(c_weight, st.cell);
      if (!with_grad) return obj;
      Vector dh(h, 0.0), dc = c_weight;
      for (std::size_t t = steps; t-- > 0;) {
        for (std::size_t k = 0; k < h; ++k) {
          dh[k] += read[k];
          s.grad(2)(0, k) += hs[t][k];
        }
        LstmBackward back = lstm_step_backward(caches[t], dh, dc, w, s.grad(0), s.grad(1));
        dh = back.d_hidden;
        dc = back.d_cell;
      }
      return obj;
    };
    const GradCheckResult r = grad_check(f, p);
    INFO("seed " << seed << " worst " << r.worst_param << "[" << r.worst_index << "]");
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("softmax_xent gradient passes grad_check on 5 seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParamStore p(seed);
    p.add("w", 7, 5);
    p.add("b", 7, 1);
    Rng rng(seed);
    p.init_uniform(rng, 1.0);
    const Vector x = random_vector(5, rng);
    const std::size_t target = rng.below(7);
    ObjectiveFn f = [&](ParamStore& s, bool with_grad) {
      const Vector logits = affine(x, s.value(0), s.value(1).data());
      const XentResult r = softmax_xent(logits, target);
      if (with_grad) {
        outer_acc(s.grad(0), r.grad_logits, x);
        for (std::size_t i = 0; i < 7; ++i) s.grad(1)(i, 0) += r.grad_logits[i];
      }
      return r.loss;
    };
    CHECK(grad_check(f, p).max_relative_error < 1e-4);
  }
}

TEST_CASE("Rng streams are reproducible and derive() is independent of use") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng c = Rng::derive(42, {1, 2});
  Rng d = Rng::derive(42, {1, 2});
  Rng e = Rng::derive(42, {2, 1});
  const auto x = c.next();
  CHECK(x == d.next());
  CHECK(x != e.next());
}

TEST_CASE("Rng uniform, below and normal have the right ranges and moments") {
  Rng rng(9);
  double mean = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK_UNARY(u >= 0.0 && u < 1.0);
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("categorical draws follow the weights and never pick zero-weight entries") {
  Rng rng(4);
  const Vector w{0.0, 1.0, 3.0, 0.0};
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 40000; ++i) ++counts[rng.categorical(w)];
  CHECK(counts[0] == 0);
  CHECK(counts[3] == 0);
  CHECK(std::abs(counts[2] / 40000.0 - 0.75) < 0.01);
}

TEST_CASE("FNV-1a matches the published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("ParamStore rejects duplicate names and tracks slots") {
  ParamStore p(3);
  CHECK(p.add("a", 2, 2) == 0);
  CHECK(p.add("b", 1, 3) == 1);
  CHECK_THROWS(p.add("a", 1, 1));
  CHECK(p.slot("b") == 1);
  CHECK(p.scalar_count() == 7);
  CHECK_THROWS(p.slot("missing"));
}

TEST_CASE("checkpoints round-trip bit-exactly and detect corruption") {
  ParamStore p(77);
  p.add("w", 3, 4);
  p.add("b", 3, 1);
  Rng rng(1);
  p.init_uniform(rng, 1.0);
  Checkpoint ck{{{"seed", 77}, {"vocab_hash", "abc"}}, p};
  const std::string bytes = ck.to_bytes();
  CHECK(bytes == ck.to_bytes());
  const Checkpoint back = Checkpoint::from_bytes(bytes);
  CHECK(back.params == p);
  CHECK(back.header == ck.header);
  CHECK(back.content_hash() == ck.content_hash());

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Checkpoint::from_bytes(bad), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::from_bytes(bytes.substr(0, bytes.size() - 3)), CheckpointError);

  const auto path = std::filesystem::temp_directory_path() / "capgan_test_ck.bin";
  ck.save(path);
  CHECK(Checkpoint::load(path).params == p);
  std::filesystem::remove(path);
}
