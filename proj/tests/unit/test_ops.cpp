#include <doctest.h>

#include <cmath>
#include <numeric>

#include "spslu/errors.hpp"
#include "spslu/gradcheck.hpp"
#include "spslu/model.hpp"
#include "spslu/ops.hpp"

using namespace spslu;

namespace {

std::vector<double> values(Var<double> v) { return {v.value().begin(), v.value().end()}; }

std::vector<double> random_values(Prng& rng, std::size_t n, double lo = -1.0,
                                  double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_SUITE("softmax") {
  TEST_CASE("symmetric and analytic cases") {
    Tape<double> t;
    auto a = values(softmax_rows(t.constant(1, 2, {0.0, 0.0})));
    CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(a[1] == doctest::Approx(0.5).epsilon(1e-15));
    auto b = values(softmax_rows(t.constant(1, 2, {std::log(2.0), 0.0})));
    CHECK(b[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(b[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("large logits do not overflow") {
    Tape<float> t;
    auto p = softmax_rows(t.constant(1, 2, {1000.0f, 0.0f}));
    CHECK(p.value()[0] == doctest::Approx(1.0));
    CHECK(p.value()[1] == doctest::Approx(0.0));
    CHECK(all_finite<float>(p.value()));
  }

  TEST_CASE("empty or non-finite input is rejected") {
    Tape<double> t;
    CHECK_THROWS(softmax_rows(t.constant(1, 0, {})));
    CHECK_THROWS_AS(softmax_rows(t.constant(1, 2, {NAN, 0.0})), NumericError);
    CHECK_THROWS_AS(softmax_rows(t.constant(1, 2, {INFINITY, 0.0})), NumericError);
  }

  TEST_CASE("rows are distributions for random logits") {
    Prng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t r = 1 + rng.below(5), c = 1 + rng.below(9);
      Tape<float> t;
      std::vector<float> x(r * c);
      for (auto& v : x) v = static_cast<float>(rng.uniform(-50, 50));
      auto p = softmax_rows(t.constant(r, c, x));
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) {
          const float v = p.value()[i * c + j];
          REQUIRE(v >= 0.0f);
          REQUIRE(v <= 1.0f);
          s += v;
        }
        REQUIRE(std::abs(s - 1.0) < 1e-6);
      }
    }
  }

  TEST_CASE("masked entries get zero probability") {
    Tape<double> t;
    auto p = values(masked_softmax_rows(t.constant(1, 3, {5.0, 1.0, 1.0}), {0, 1, 1}));
    CHECK(p[0] < 1e-300);
    CHECK(p[1] == doctest::Approx(0.5));
  }
}

TEST_SUITE("cross_entropy") {
  TEST_CASE("certain and uniform predictions") {
    Tape<double> t;
    CHECK(cross_entropy(t.constant(1, 2, {1.0, 0.0}), {0}).item() == 0.0);
    CHECK(cross_entropy(t.constant(1, 2, {0.5, 0.5}), {1}).item() ==
          doctest::Approx(0.693147).epsilon(1e-6));
  }

  TEST_CASE("zero probability is clamped at 1e-12") {
    Tape<double> t;
    CHECK(cross_entropy(t.constant(1, 2, {1.0, 0.0}), {1}).item() ==
          doctest::Approx(-std::log(1e-12)));
  }

  TEST_CASE("gold index out of range") {
    Tape<double> t;
    CHECK_THROWS_AS(cross_entropy(t.constant(1, 2, {0.5, 0.5}), {2}), ShapeError);
    CHECK_THROWS_AS(cross_entropy(t.constant(1, 2, {0.5, 0.5}), {0, 1}), ShapeError);
  }

  TEST_CASE("three-token sum equals hand enumeration of the double sum") {
    // rows are y_i, gold one-hots yhat_i; L = -sum_i sum_j yhat_ij log y_ij
    const std::vector<double> y = {0.7, 0.2, 0.1, 0.1, 0.3, 0.6, 0.25, 0.25, 0.5};
    const std::vector<int> gold = {0, 2, 1};
    double expect = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double yhat = gold[i] == j ? 1.0 : 0.0;
        expect -= yhat * std::log(y[i * 3 + j]);
      }
    }
    Tape<double> t;
    CHECK(cross_entropy(t.constant(3, 3, y), gold).item() ==
          doctest::Approx(expect).epsilon(1e-14));
  }

  TEST_CASE("negative gold rows are skipped") {
    Tape<double> t;
    CHECK(cross_entropy(t.constant(2, 2, {0.5, 0.5, 0.9, 0.1}), {-1, 0}).item() ==
          doctest::Approx(-std::log(0.9)));
  }
}

TEST_SUITE("lstm_cell") {
  TEST_CASE("zero weights give the zero fixed point") {
    Tape<double> t;
    auto [h, c] = lstm_cell(t.constant(1, 2, {0.3, -0.4}), t.zeros(1, 1), t.zeros(1, 1),
                            t.zeros(2, 4), t.zeros(1, 4), t.zeros(1, 4));
    CHECK(h.item() == 0.0);
    CHECK(c.item() == 0.0);
  }

  TEST_CASE("zero weights with c_prev = 2") {
    Tape<double> t;
    auto [h, c] = lstm_cell(t.constant(1, 1, {0.7}), t.zeros(1, 1), t.constant(1, 1, {2.0}),
                            t.zeros(1, 4), t.zeros(1, 4), t.zeros(1, 4));
    CHECK(c.item() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(h.item() == doctest::Approx(0.380797).epsilon(1e-6));
  }

  TEST_CASE("random cell matches a scripted step") {
    Prng rng(21);
    const std::size_t in = 3, H = 4;
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = random_values(rng, in), hp = random_values(rng, H),
                 cp = random_values(rng, H), Wx = random_values(rng, in * 4 * H),
                 Wh = random_values(rng, H * 4 * H), b = random_values(rng, 4 * H);
      Tape<double> t;
      auto [h, c] = lstm_cell(t.constant(1, in, x), t.constant(1, H, hp),
                              t.constant(1, H, cp), t.constant(in, 4 * H, Wx),
                              t.constant(H, 4 * H, Wh), t.constant(1, 4 * H, b));
      auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
      for (std::size_t k = 0; k < H; ++k) {
        double pre[4];
        for (int g = 0; g < 4; ++g) {
          const std::size_t col = g * H + k;
          double s = b[col];
          for (std::size_t i = 0; i < in; ++i) s += x[i] * Wx[i * 4 * H + col];
          for (std::size_t i = 0; i < H; ++i) s += hp[i] * Wh[i * 4 * H + col];
          pre[g] = s;
        }
        const double ig = sig(pre[0]), fg = sig(pre[1]), gg = std::tanh(pre[2]),
                     og = sig(pre[3]);
        const double ck = fg * cp[k] + ig * gg;
        CHECK(std::abs(c.value()[k] - ck) < 1e-12);
        CHECK(std::abs(h.value()[k] - og * std::tanh(ck)) < 1e-12);
      }
    }
  }

  TEST_CASE("dimension mismatch") {
    Tape<double> t;
    CHECK_THROWS_AS(lstm_cell(t.zeros(1, 2), t.zeros(1, 1), t.zeros(1, 1), t.zeros(3, 4),
                              t.zeros(1, 4), t.zeros(1, 4)),
                    ShapeError);
  }
}

TEST_SUITE("primitives") {
  TEST_CASE("concat, identity matmul, lookup") {
    Tape<double> t;
    CHECK(values(concat_cols<double>({t.constant(1, 2, {1, 2}), t.constant(1, 1, {3})})) ==
          std::vector<double>{1, 2, 3});
    const std::vector<double> A = {1, 2, 3, 4, 5, 6};
    CHECK(values(matmul(t.constant(2, 2, {1, 0, 0, 1}), t.constant(2, 3, A))) == A);
    auto table = t.constant(3, 2, {0, 1, 10, 11, 20, 21});
    CHECK(values(embedding_lookup(table, {2, 0})) == std::vector<double>{20, 21, 0, 1});
    CHECK_THROWS_AS(embedding_lookup(table, {3}), ShapeError);
    CHECK_THROWS_AS(embedding_lookup(table, {-1}), ShapeError);
    CHECK_THROWS_AS(matmul(t.zeros(2, 3), t.zeros(2, 3)), ShapeError);
    CHECK_THROWS_AS(add(t.zeros(2, 3), t.zeros(3, 2)), ShapeError);
  }

  TEST_CASE("dropout in inference mode is exact identity") {
    Prng rng(1);
    Tape<float> t;
    std::vector<float> x = {0.1f, -2.5f, 3.75f, 1e-7f};
    auto y = dropout(t.constant(1, 4, x), 0.4, rng, false);
    CHECK(std::vector<float>(y.value().begin(), y.value().end()) == x);
  }

  TEST_CASE("dropout keeps the mean and uses inverted scaling") {
    Prng rng(99);
    const std::size_t n = 200000;
    Tape<double> t;
    auto y = dropout(t.constant(1, n, std::vector<double>(n, 1.0)), 0.4, rng, true);
    double mean = 0;
    for (double v : y.value()) {
      REQUIRE((v == 0.0 || std::abs(v - 1.0 / 0.6) < 1e-12));
      mean += v;
    }
    mean /= n;
    CHECK(std::abs(mean - 1.0) < 0.01);
  }

  TEST_CASE("dropout probability must be in [0, 1)") {
    Prng rng(1);
    Tape<double> t;
    CHECK_THROWS(dropout(t.zeros(1, 2), 1.0, rng, true));
    CHECK_THROWS(dropout(t.zeros(1, 2), -0.1, rng, true));
  }

  TEST_CASE("non-finite results abort with the op name") {
    Tape<double> t;
    auto big = t.constant(1, 1, {1e308});
    try {
      (void)scale(big, 10.0);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("scale") != std::string::npos);
    }
  }

  TEST_CASE("backward is scalar-only and single-use") {
    Tape<double> t;
    auto x = t.constant(1, 2, {1, 2});
    CHECK_THROWS(t.backward(x));
    auto s = sum(x);
    t.backward(s);
    CHECK_THROWS(t.backward(s));
    Tape<double> frozen(false);
    CHECK_THROWS(frozen.backward(sum(frozen.constant(1, 1, {1}))));
  }
}

// Every primitive's backward against central differences on random shapes.
TEST_CASE("primitive gradients match central differences") {
  Prng rng(2024);
  using Build = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;
  struct Case {
    const char* name;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    Build f;
  };
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t r = 1 + rng.below(3), c = 1 + rng.below(4), k = 1 + rng.below(3);
    std::vector<Case> cases = {
        {"matmul", {{r, k}, {k, c}}, [](auto&, auto& v) { return matmul(v[0], v[1]); }},
        {"add", {{r, c}, {r, c}}, [](auto&, auto& v) { return add(v[0], v[1]); }},
        {"add_bias", {{r, c}, {1, c}}, [](auto&, auto& v) { return add_bias(v[0], v[1]); }},
        {"mul", {{r, c}, {r, c}}, [](auto&, auto& v) { return mul(v[0], v[1]); }},
        {"scale", {{r, c}}, [](auto&, auto& v) { return scale(v[0], 1.7); }},
        {"sigmoid", {{r, c}}, [](auto&, auto& v) { return sigmoid(v[0]); }},
        {"tanh", {{r, c}}, [](auto&, auto& v) { return tanh(v[0]); }},
        {"softmax", {{r, c}}, [](auto&, auto& v) { return softmax_rows(v[0]); }},
        {"masked_softmax", {{r, 3}},
         [](auto&, auto& v) {
           std::vector<std::uint8_t> m(v[0].rows() * 3, 1);
           m[1] = 0;
           return masked_softmax_rows(v[0], m);
         }},
        {"concat_cols", {{r, c}, {r, k}},
         [](auto&, auto& v) { return concat_cols<double>({v[0], v[1]}); }},
        {"concat_rows", {{r, c}, {k, c}},
         [](auto&, auto& v) { return concat_rows<double>({v[0], v[1]}); }},
        {"slice_cols", {{r, c + 1}}, [c](auto&, auto& v) { return slice_cols(v[0], 1, c + 1); }},
        {"gather_rows", {{r, c}},
         [r](auto&, auto& v) { return gather_rows(v[0], {r - 1, 0, r - 1}); }},
        {"embedding", {{4, c}},
         [](auto&, auto& v) { return embedding_lookup(v[0], {3, 0, 3, 1}); }},
        {"where_rows", {{2, c}, {2, c}},
         [](auto&, auto& v) { return where_rows<double>({1, 0}, v[0], v[1]); }},
        {"block_matmul_nt", {{2 * r, c}, {2 * r, c}},
         [r](auto&, auto& v) { return block_matmul_nt(v[0], v[1], r); }},
        {"block_matmul", {{2 * r, r}, {2 * r, c}},
         [r](auto&, auto& v) { return block_matmul(v[0], v[1], r); }},
        {"cross_entropy", {{r, c + 1}},
         [](auto&, auto& v) {
           std::vector<int> gold(v[0].rows(), 0);
           return cross_entropy(softmax_rows(v[0]), gold);
         }},
    };
    for (auto& cs : cases) {
      CAPTURE(cs.name);
      ParameterSet<double> params;
      for (std::size_t i = 0; i < cs.shapes.size(); ++i) {
        auto& ten = params.add("in" + std::to_string(i), ParamKind::kWeight,
                               {cs.shapes[i].first, cs.shapes[i].second});
        ten.data = random_values(rng, ten.size(), 0.2, 1.2);
      }
      std::vector<double> weights;
      auto build = [&](Tape<double>& t) {
        std::vector<Var<double>> in;
        for (std::size_t i = 0; i < params.size(); ++i) in.push_back(t.param(params.at(i).tensor));
        auto y = cs.f(t, in);
        if (weights.size() != y.rows() * y.cols()) {
          Prng wr(7);
          weights = random_values(wr, y.rows() * y.cols(), 0.5, 1.5);
        }
        return sum(mul(y, t.constant(y.rows(), y.cols(), weights)));
      };
      GradCheckOptions opts;
      opts.epsilon = 1e-5;
      const auto res = gradient_check(build, params, opts);
      CHECK(res.max_relative_error < 1e-6);
    }
  }
}

TEST_SUITE("gradient_check") {
  TEST_CASE("theta squared at 3") {
    ParameterSet<double> p;
    p.add("theta", ParamKind::kWeight, {1, 1}).data = {3.0};
    GradCheckOptions opts;
    opts.epsilon = 1e-5;
    auto res = gradient_check(
        [&](Tape<double>& t) {
          auto th = t.param(p["theta"]);
          return mul(th, th);
        },
        p, opts);
    CHECK(res.worst_analytic == 6.0);
    CHECK(res.worst_numeric == doctest::Approx(6.0));
    CHECK(res.max_relative_error < 1e-9);
  }

  TEST_CASE("non-deterministic loss is detected") {
    ParameterSet<double> p;
    p.add("theta", ParamKind::kWeight, {1, 1}).data = {1.0};
    int calls = 0;
    CHECK_THROWS_AS(gradient_check(
                        [&](Tape<double>& t) {
                          auto th = t.param(p["theta"]);
                          return scale(th, 1.0 + 0.1 * calls++);
                        },
                        p),
                    std::runtime_error);
  }

  TEST_CASE("a corrupted gradient is reported") {
    ParameterSet<double> p;
    p.add("theta", ParamKind::kWeight, {1, 1}).data = {3.0};
    GradCheckOptions opts;
    opts.corrupt = [](ParameterSet<double>& ps) { ps.at(0).tensor.grad[0] += 1.0; };
    auto res = gradient_check(
        [&](Tape<double>& t) {
          auto th = t.param(p["theta"]);
          return mul(th, th);
        },
        p, opts);
    CHECK(res.max_relative_error > 0.1);
  }
}
