#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "spslu/errors.hpp"
#include "spslu/gradcheck_suite.hpp"
#include "spslu/model.hpp"

using namespace spslu;

namespace {

using Vec = std::vector<double>;

ModelConfig tiny_config(Variant v = Variant::kFull) {
  ModelConfig c;
  c.emb_dim = 3;
  c.lstm_hidden = 2;
  c.attn_dim = 2;
  c.intent_dec_hidden = 3;
  c.slot_dec_hidden = 2;
  c.dropout = 0.0;
  c.variant = v;
  c.seed = 11;
  return c;
}

const std::vector<Example> kSplit = {
    {{"watch", "action", "movie"}, {"O", "B-movie_name", "I-movie_name"}, "WatchMovie"},
    {{"play", "jazz"}, {"O", "B-genre"}, "PlayMusic"},
    {{"weather"}, {"O"}, "GetWeather"},
};

struct Fixture {
  Vocabularies vocabs;
  StackPropModel<double> net;
  explicit Fixture(ModelConfig cfg, double bound = 0.5)
      : vocabs(build_vocab(kSplit)),
        net(cfg, vocabs.words.size(), vocabs.num_intents(), vocabs.num_slot_classes()) {
    Prng rng(123);
    for (std::size_t i = 0; i < net.params().size(); ++i)
      for (auto& v : net.params().at(i).tensor.data) v = rng.uniform(-bound, bound);
  }
  Batch batch(std::vector<std::size_t> idx, std::size_t pad_to = 0) const {
    return make_batch(kSplit, idx, vocabs, pad_to);
  }
};

Vec vals(Var<double> v) { return {v.value().begin(), v.value().end()}; }

// --- scripted oracle: plain loops over one unpadded utterance ---------------

Vec vecmat(const Vec& x, const Tensor<double>& W) {
  const std::size_t r = W.shape[0], c = W.shape[1];
  REQUIRE(x.size() == r);
  Vec y(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += x[i] * W.data[i * c + j];
  return y;
}

Vec plus(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Vec cat(Vec a, const Vec& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void step(const Vec& pre, Vec& h, Vec& c) {
  const std::size_t H = pre.size() / 4;
  for (std::size_t k = 0; k < H; ++k) {
    const double i = sig(pre[k]), f = sig(pre[H + k]), g = std::tanh(pre[2 * H + k]),
                 o = sig(pre[3 * H + k]);
    c[k] = f * c[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

Vec softmax(const Vec& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  Vec p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

struct ScriptedEnc {
  std::vector<Vec> H, C, E;
};

ScriptedEnc scripted_encode(const ParameterSet<double>& P, const ModelConfig& cfg,
                            const std::vector<int>& ids) {
  const std::size_t T = ids.size(), Hd = cfg.lstm_hidden, D = cfg.emb_dim;
  std::vector<Vec> X(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& emb = P["enc.embedding"];
    X[t] = Vec(emb.data.begin() + ids[t] * D, emb.data.begin() + (ids[t] + 1) * D);
  }
  ScriptedEnc out;
  out.H.assign(T, Vec(2 * Hd));
  for (int dir = 0; dir < 2; ++dir) {
    const std::string p = dir == 0 ? "enc.fwd" : "enc.bwd";
    Vec h(Hd, 0.0), c(Hd, 0.0);
    for (std::size_t s = 0; s < T; ++s) {
      const std::size_t t = dir == 0 ? s : T - 1 - s;
      step(plus(plus(vecmat(X[t], P[p + ".W_x"]), P[p + ".b"].data), vecmat(h, P[p + ".W_h"])),
           h, c);
      for (std::size_t k = 0; k < Hd; ++k) out.H[t][dir * Hd + k] = h[k];
    }
  }
  if (!cfg.has_attention()) {
    out.E = out.H;
    return out;
  }
  std::vector<Vec> Q(T), K(T), V(T);
  for (std::size_t t = 0; t < T; ++t) {
    Q[t] = vecmat(X[t], P["enc.attn.W_q"]);
    K[t] = vecmat(X[t], P["enc.attn.W_k"]);
    V[t] = vecmat(X[t], P["enc.attn.W_v"]);
  }
  out.C.assign(T, Vec(cfg.attn_dim, 0.0));
  for (std::size_t i = 0; i < T; ++i) {
    Vec s(T);
    for (std::size_t j = 0; j < T; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < cfg.attn_dim; ++k) d += Q[i][k] * K[j][k];
      s[j] = d / std::sqrt(double(cfg.attn_dim));
    }
    const Vec a = softmax(s);
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t k = 0; k < cfg.attn_dim; ++k) out.C[i][k] += a[j] * V[j][k];
  }
  for (std::size_t t = 0; t < T; ++t) out.E.push_back(cat(out.H[t], out.C[t]));
  return out;
}

// One decoder over precomputed inputs; `gold` < 0 means feed back predictions.
std::vector<Vec> scripted_decode(const ParameterSet<double>& P, const std::string& dec,
                                 const std::string& out, const std::vector<Vec>& inputs,
                                 std::size_t n_out, const std::vector<int>& gold) {
  const std::size_t Hd = P[dec + ".W_h"].shape[0];
  Vec h(Hd, 0.0), c(Hd, 0.0), y_prev(n_out, 0.0);
  std::vector<Vec> ys;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Vec label = y_prev;
    if (!gold.empty() && t > 0) {
      label.assign(n_out, 0.0);
      label[gold[t - 1]] = 1.0;
    }
    const Vec pre = plus(plus(plus(vecmat(inputs[t], P[dec + ".W_in"]), P[dec + ".b"].data),
                              vecmat(label, P[dec + ".W_label"])),
                         vecmat(h, P[dec + ".W_h"]));
    step(pre, h, c);
    y_prev = softmax(vecmat(h, P[out]));
    ys.push_back(y_prev);
  }
  return ys;
}

void check_rows_close(const Vec& got, const std::vector<Vec>& want, double tol) {
  std::size_t k = 0;
  for (const auto& row : want)
    for (double v : row) {
      REQUIRE(k < got.size());
      CHECK(std::abs(got[k++] - v) < tol);
    }
  CHECK(k == got.size());
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("variant names") {
    CHECK(variant_names().size() == 7);
    for (const auto& n : variant_names()) CHECK(variant_name(parse_variant(n)) == n);
    try {
      parse_variant("transformer");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      for (const auto& n : variant_names())
        CHECK(std::string(e.what()).find(n) != std::string::npos);
    }
  }

  TEST_CASE("json round trip and validation") {
    ModelConfig c = tiny_config(Variant::kGateMechanism);
    c.teacher_forcing = false;
    CHECK(ModelConfig::from_json(c.to_json()) == c);
    ModelConfig bad;
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.attn_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_SUITE("encoder") {
  TEST_CASE("single token attends to itself") {
    Fixture f(tiny_config());
    Tape<double> t(false);
    const auto b = f.batch({2});
    auto enc = f.net.encode(t, b, Mode::kInfer, nullptr);
    const auto& emb = f.net.params()["enc.embedding"];
    const int id = b.word_ids[0];
    const Vec x(emb.data.begin() + id * 3, emb.data.begin() + id * 3 + 3);
    const Vec v = vecmat(x, f.net.params()["enc.attn.W_v"]);
    CHECK(vals(enc.C) == v);
  }

  TEST_CASE("zero parameters give zero encodings") {
    Fixture f(tiny_config());
    for (std::size_t i = 0; i < f.net.params().size(); ++i)
      for (auto& v : f.net.params().at(i).tensor.data) v = 0.0;
    Tape<double> t(false);
    auto enc = f.net.encode(t, f.batch({0}), Mode::kInfer, nullptr);
    for (double v : enc.E.value()) CHECK(v == 0.0);
    for (double v : enc.C.value()) CHECK(v == 0.0);
  }

  TEST_CASE("E rows are H rows followed by C rows") {
    Fixture f(tiny_config());
    Tape<double> t(false);
    auto enc = f.net.encode(t, f.batch({0, 1}), Mode::kInfer, nullptr);
    const std::size_t hw = enc.H.cols(), cw = enc.C.cols();
    REQUIRE(enc.E.cols() == hw + cw);
    for (std::size_t r = 0; r < enc.E.rows(); ++r) {
      for (std::size_t k = 0; k < hw; ++k) CHECK(enc.E.value()[r * (hw + cw) + k] == enc.H.value()[r * hw + k]);
      for (std::size_t k = 0; k < cw; ++k)
        CHECK(enc.E.value()[r * (hw + cw) + hw + k] == enc.C.value()[r * cw + k]);
    }
  }

  TEST_CASE("matches the scripted oracle") {
    for (std::size_t ex : {1u, 0u}) {
      Fixture f(tiny_config());
      Tape<double> t(false);
      const auto b = f.batch({ex});
      auto enc = f.net.encode(t, b, Mode::kInfer, nullptr);
      const auto ref = scripted_encode(f.net.params(), f.net.config(), b.word_ids);
      check_rows_close(vals(enc.H), ref.H, 1e-12);
      check_rows_close(vals(enc.C), ref.C, 1e-12);
      check_rows_close(vals(enc.E), ref.E, 1e-12);
    }
  }

  TEST_CASE("no_self_attention shares the BiLSTM with the full model") {
    const auto vocabs = build_vocab(kSplit);
    StackPropModel<float> full(tiny_config(), vocabs.words.size(), 3, vocabs.num_slot_classes());
    StackPropModel<float> plain(tiny_config(Variant::kNoSelfAttention), vocabs.words.size(), 3,
                                vocabs.num_slot_classes());
    const auto b = make_batch(kSplit, {0, 1, 2}, vocabs);
    Tape<float> t1(false), t2(false);
    auto a = full.encode(t1, b, Mode::kInfer, nullptr);
    auto c = plain.encode(t2, b, Mode::kInfer, nullptr);
    CHECK(std::equal(a.H.value().begin(), a.H.value().end(), c.H.value().begin(),
                     c.H.value().end()));
    CHECK(c.E.cols() == 2 * tiny_config().lstm_hidden);
  }
}

TEST_SUITE("decoders") {
  TEST_CASE("zero weights give uniform distributions") {
    Fixture f(tiny_config());
    for (std::size_t i = 0; i < f.net.params().size(); ++i)
      for (auto& v : f.net.params().at(i).tensor.data) v = 0.0;
    Tape<double> t(false);
    const auto b = f.batch({0});
    auto enc = f.net.encode(t, b, Mode::kInfer, nullptr);
    auto yi = f.net.decode_intent(t, enc.E, b, Mode::kInfer, nullptr);
    for (double v : yi.value()) CHECK(v == doctest::Approx(1.0 / 3.0));
    auto ys = f.net.decode_slots(t, enc.E, yi, b, Mode::kInfer, nullptr);
    const double n_s = double(f.vocabs.num_slot_classes());
    for (double v : ys.value()) CHECK(v == doctest::Approx(1.0 / n_s));
  }

  TEST_CASE("teacher forcing is irrelevant for a single token") {
    Fixture f(tiny_config());
    const auto b = f.batch({2});
    Tape<double> t1, t2(false);
    auto e1 = f.net.encode(t1, b, Mode::kTrain, nullptr);
    auto e2 = f.net.encode(t2, b, Mode::kInfer, nullptr);
    auto y1 = f.net.decode_intent(t1, e1.E, b, Mode::kTrain, nullptr);
    auto y2 = f.net.decode_intent(t2, e2.E, b, Mode::kInfer, nullptr);
    CHECK(vals(y1) == vals(y2));
    CHECK(vals(f.net.decode_slots(t1, e1.E, y1, b, Mode::kTrain, nullptr)) ==
          vals(f.net.decode_slots(t2, e2.E, y2, b, Mode::kInfer, nullptr)));
  }

  TEST_CASE("intent and slot decoders match the scripted oracle") {
    for (bool teacher : {true, false}) {
      CAPTURE(teacher);
      auto cfg = tiny_config();
      cfg.teacher_forcing = teacher;
      Fixture f(cfg);
      const auto b = f.batch({0});
      const auto& P = f.net.params();
      const auto ref_enc = scripted_encode(P, cfg, b.word_ids);
      const std::vector<int> gold_i(3, 0);
      const std::vector<int> gold_s = {f.vocabs.slot_class("O"),
                                       f.vocabs.slot_class("B-movie_name"),
                                       f.vocabs.slot_class("I-movie_name")};
      for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
        const bool tf = mode == Mode::kTrain && teacher;
        Tape<double> t(mode == Mode::kTrain);
        auto enc = f.net.encode(t, b, mode, nullptr);
        auto yi = f.net.decode_intent(t, enc.E, b, mode, nullptr);
        const auto ref_i = scripted_decode(P, "intent_dec", "intent_out.W", ref_enc.E, 3,
                                           tf ? gold_i : std::vector<int>{});
        check_rows_close(vals(yi), ref_i, 1e-12);
        std::vector<Vec> slot_in;
        for (std::size_t k = 0; k < 3; ++k) slot_in.push_back(cat(ref_i[k], ref_enc.E[k]));
        auto ys = f.net.decode_slots(t, enc.E, yi, b, mode, nullptr);
        const auto ref_s = scripted_decode(P, "slot_dec", "slot_out.W", slot_in,
                                           f.vocabs.num_slot_classes(),
                                           tf ? gold_s : std::vector<int>{});
        check_rows_close(vals(ys), ref_s, 1e-12);
      }
    }
  }

  TEST_CASE("misaligned intent rows") {
    Fixture f(tiny_config());
    Tape<double> t(false);
    const auto b = f.batch({0});
    auto enc = f.net.encode(t, b, Mode::kInfer, nullptr);
    CHECK_THROWS_AS(f.net.decode_slots(t, enc.E, t.zeros(2, 3), b, Mode::kInfer, nullptr),
                    ShapeError);
  }
}

TEST_SUITE("variants") {
  TEST_CASE("input widths") {
    const auto vocabs = build_vocab(kSplit);
    auto make = [&](Variant v) {
      return StackPropModel<float>(tiny_config(v), vocabs.words.size(), 3,
                                   vocabs.num_slot_classes());
    };
    const auto full = make(Variant::kFull);
    CHECK(full.encoding_width() == 2 * 2 + 2);
    CHECK(make(Variant::kNoSelfAttention).encoding_width() == 4);
    const auto oracle = make(Variant::kOracleIntent);
    CHECK(oracle.slot_input_width() == 3 + oracle.encoding_width());
    CHECK(make(Variant::kGateMechanism).slot_input_width() == full.slot_input_width() - 3);
    CHECK(make(Variant::kPipeline).params().contains("slot_enc.embedding"));
    const auto last = make(Variant::kIntentLastHidden);
    CHECK_FALSE(last.params().contains("slot_dec.W_in"));
    CHECK(last.params()["intent_out.W"].shape == std::vector<std::size_t>{4, 3});
  }

  TEST_CASE("every variant infers valid distributions") {
    for (const auto& name : variant_names()) {
      CAPTURE(name);
      Fixture f(tiny_config(parse_variant(name)));
      const auto outs = f.net.infer(f.batch({0, 1, 2}));
      REQUIRE(outs.size() == 3);
      for (const auto& o : outs) {
        const std::size_t rows = o.intent_dists.size() / o.num_intents;
        for (std::size_t r = 0; r < rows; ++r) {
          double s = 0;
          std::size_t arg = 0;
          for (std::size_t k = 0; k < o.num_intents; ++k) {
            s += o.intent_dists[r * o.num_intents + k];
            if (o.intent_dists[r * o.num_intents + k] > o.intent_dists[r * o.num_intents + arg])
              arg = k;
          }
          CHECK(std::abs(s - 1.0) < 1e-6);
          if (!o.intent_token_labels.empty()) CHECK(o.intent_token_labels[r] == int(arg));
        }
        for (std::size_t r = 0; r < o.slot_labels.size(); ++r) {
          double s = 0;
          std::size_t arg = 0;
          for (std::size_t k = 0; k < o.num_slots; ++k) {
            s += o.slot_dists[r * o.num_slots + k];
            if (o.slot_dists[r * o.num_slots + k] > o.slot_dists[r * o.num_slots + arg]) arg = k;
          }
          CHECK(std::abs(s - 1.0) < 1e-6);
          CHECK(o.slot_labels[r] == int(arg));
        }
        CHECK(o.voted_intent >= 0);
      }
    }
  }

  TEST_CASE("oracle slot decoder reads the gold one-hot") {
    Fixture f(tiny_config(Variant::kOracleIntent));
    auto b = f.batch({0});
    const auto a = f.net.infer(b);
    b.intent_ids[0] = 1;
    const auto c = f.net.infer(b);
    CHECK(a[0].slot_dists != c[0].slot_dists);
    CHECK(a[0].intent_dists == c[0].intent_dists);
  }
}

TEST_SUITE("vote") {
  TEST_CASE("examples") {
    CHECK(vote_intent({4, 4, 4}, {1, 1, 1}) == 4);
    CHECK(vote_intent({0, 0, 1}, {1, 1, 1}) == 0);
    CHECK(vote_intent({0, 1}, {1, 1}) == 0);
    CHECK(vote_intent({1, 0}, {1, 1}) == 0);
    CHECK(vote_intent({1, 0, 0}, {1, 1, 0}) == 0);
    CHECK(vote_intent({2, 2, 1}, {0, 0, 1}) == 1);
    CHECK_THROWS(vote_intent({1, 2}, {0, 0}));
  }

  TEST_CASE("equals brute-force counting") {
    Prng rng(606);
    for (int trial = 0; trial < 2000; ++trial) {
      const std::size_t n = 1 + rng.below(10);
      std::vector<int> labels(n);
      std::vector<std::uint8_t> mask(n);
      for (auto& l : labels) l = int(rng.below(4));
      for (auto& m : mask) m = rng.below(4) != 0;
      mask[rng.below(n)] = 1;
      REQUIRE(vote_intent(labels, mask) == oracle::brute_vote(labels, mask));
    }
  }
}

TEST_SUITE("loss") {
  TEST_CASE("perfect predictions cost nothing") {
    Tape<double> t;
    auto yi = t.constant(2, 2, {1, 0, 1, 0});
    auto ys = t.constant(2, 3, {0, 1, 0, 0, 0, 1});
    CHECK(joint_loss(yi, ys, {0, 0}, {1, 2}, {1, 1}).item() == 0.0);
  }

  TEST_CASE("uniform predictions cost T (ln nI + ln nS)") {
    Tape<double> t;
    const std::size_t T = 4, nI = 3, nS = 5;
    auto yi = t.constant(T, nI, Vec(T * nI, 1.0 / nI));
    auto ys = t.constant(T, nS, Vec(T * nS, 1.0 / nS));
    const auto l = joint_loss(yi, ys, {0, 1, 2, 0}, {4, 3, 2, 1}, {1, 1, 1, 1}).item();
    CHECK(l == doctest::Approx(T * (std::log(3.0) + std::log(5.0))).epsilon(1e-14));
    auto l3 = joint_loss(yi, ys, {0, 1, 2, 0}, {4, 3, 2, 1}, {1, 1, 1, 0}).item();
    CHECK(l3 == doctest::Approx(3 * (std::log(3.0) + std::log(5.0))).epsilon(1e-14));
  }

  TEST_CASE("batch loss is the sum of per-utterance losses") {
    for (const auto& name : variant_names()) {
      CAPTURE(name);
      Fixture f(tiny_config(parse_variant(name)));
      double parts = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        Tape<double> t(false);
        parts += f.net.loss(t, f.batch({i}), Mode::kTrain, nullptr).item();
      }
      Tape<double> t(false);
      const double whole = f.net.loss(t, f.batch({0, 1, 2}), Mode::kTrain, nullptr).item();
      CHECK(whole == doctest::Approx(parts).epsilon(1e-12));
    }
  }

  TEST_CASE("extra padding does not change the loss") {
    for (const auto& name : variant_names()) {
      CAPTURE(name);
      Fixture f(tiny_config(parse_variant(name)));
      Tape<double> t1(false), t2(false);
      const double a = f.net.loss(t1, f.batch({0, 1, 2}), Mode::kTrain, nullptr).item();
      const double b = f.net.loss(t2, f.batch({0, 1, 2}, 6), Mode::kTrain, nullptr).item();
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }

  TEST_CASE("train mode with dropout needs a stream") {
    auto cfg = tiny_config();
    cfg.dropout = 0.4;
    Fixture f(cfg);
    Tape<double> t;
    CHECK_THROWS(f.net.loss(t, f.batch({0}), Mode::kTrain, nullptr));
    Prng rng(1);
    CHECK_NOTHROW(f.net.loss(t, f.batch({0}), Mode::kTrain, &rng));
  }
}

TEST_SUITE("predict") {
  const auto vocabs = build_vocab(kSplit);

  TEST_CASE("single token, unknown words, determinism") {
    TrainedModel m(tiny_config(), vocabs);
    const auto one = m.predict({"tv"});
    REQUIRE(one.prediction.slots);
    CHECK(one.prediction.slots->size() == 1);
    const auto a = m.predict({"watch", "unknownword", "movie"});
    const auto b = m.predict({"watch", "unknownword", "movie"});
    CHECK(a.prediction.intent == b.prediction.intent);
    CHECK(a.prediction.slots == b.prediction.slots);
    CHECK(a.token_intents.size() == 3);
    CHECK_THROWS_AS(m.predict({}), ConfigError);
  }

  TEST_CASE("oracle models need the gold intent and report no intent metrics") {
    TrainedModel m(tiny_config(Variant::kOracleIntent), vocabs);
    CHECK_THROWS_AS(m.predict({"watch"}), ConfigError);
    CHECK_NOTHROW(m.predict({"watch"}, std::string("WatchMovie")));
    const auto r = m.evaluate(kSplit);
    CHECK(r.slot_f1.has_value());
    CHECK_FALSE(r.intent_acc.has_value());
    CHECK_FALSE(r.overall_acc.has_value());
  }

  TEST_CASE("intent_last_hidden reports intent only") {
    TrainedModel m(tiny_config(Variant::kIntentLastHidden), vocabs);
    const auto r = m.evaluate(kSplit);
    CHECK(r.intent_acc.has_value());
    CHECK_FALSE(r.slot_f1.has_value());
    CHECK_FALSE(m.predict({"play"}).prediction.slots.has_value());
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("single LSTM cell") {
    GradCheckOptions opts;
    opts.epsilon = kGradCheckEpsilon;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      CAPTURE(seed);
      CHECK(gradcheck_lstm_cell(opts, seed).max_relative_error < 1e-7);
    }
  }

  TEST_CASE("LSTM plus attention within the command threshold") {
    GradCheckOptions opts;
    opts.epsilon = kGradCheckEpsilon;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      CAPTURE(seed);
      CHECK(gradcheck_small(opts, seed).max_relative_error < 1e-5);
    }
  }

  TEST_CASE("LSTM plus attention reaches 1e-7" * doctest::may_fail()) {
    GradCheckOptions opts;
    opts.epsilon = kGradCheckEpsilon;
    const auto r = gradcheck_small(opts);
    MESSAGE("small gradcheck max relative error " << r.max_relative_error);
    CHECK(r.max_relative_error < 1e-7);
  }

  TEST_CASE("full model on a two-token utterance") {
    GradCheckOptions opts;
    opts.epsilon = kGradCheckEpsilon;
    CHECK(gradcheck_full(opts).max_relative_error < 1e-5);
  }

  // Independent oracle: fourth-order central stencil over every coordinate,
  // with a small absolute allowance for double roundoff.
  TEST_CASE("every variant agrees with a fourth-order stencil") {
    for (const auto& name : variant_names()) {
      for (bool teacher : {true, false}) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
          CAPTURE(name);
          CAPTURE(teacher);
          CAPTURE(seed);
          auto cfg = tiny_config(parse_variant(name));
          cfg.teacher_forcing = teacher;
          cfg.seed = seed;
          Fixture f(cfg, 1.0);
          const auto b = f.batch({0, 1});
          const bool pipeline = cfg.variant == Variant::kPipeline;
          for (LossPart part : pipeline ? std::vector<LossPart>{LossPart::kIntentOnly,
                                                                LossPart::kSlotOnly}
                                        : std::vector<LossPart>{LossPart::kJoint}) {
            auto& P = f.net.params();
            P.zero_grad();
            {
              Tape<double> t;
              auto l = f.net.loss(t, b, Mode::kTrain, nullptr, part);
              t.backward(l);
            }
            const auto frozen = f.net.frozen_mask(part);
            auto eval = [&] {
              Tape<double> t(false);
              return f.net.loss(t, b, Mode::kTrain, nullptr, part).item();
            };
            const double h = 1e-3;
            double worst = 0;
            for (std::size_t i = 0; i < P.size(); ++i) {
              if (frozen[i]) continue;
              auto& ten = P.at(i).tensor;
              for (std::size_t k = 0; k < ten.size(); ++k) {
                const double s = ten.data[k];
                auto at = [&](double d) {
                  ten.data[k] = s + d;
                  const double v = eval();
                  ten.data[k] = s;
                  return v;
                };
                const double num =
                    (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
                const double a = ten.grad[k];
                const double excess =
                    std::abs(a - num) - (1e-6 * std::max(std::abs(a), std::abs(num)) + 1e-10);
                worst = std::max(worst, excess);
              }
            }
            CHECK(worst <= 0.0);
          }
        }
      }
    }
  }
}
