#include "spslu/gradcheck_suite.hpp"

#include <cmath>
#include <tuple>

namespace spslu {

namespace {

void fill_uniform(ParameterSet<double>& params, std::uint64_t seed, double bound) {
  Prng rng = Prng::stream(seed, "gradcheck");
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto& v : params.at(i).tensor.data) v = rng.uniform(-bound, bound);
  }
}

GradCheckResult worse(GradCheckResult a, const GradCheckResult& b) {
  const std::size_t n = a.coordinates_checked + b.coordinates_checked;
  if (b.max_relative_error > a.max_relative_error) a = b;
  a.coordinates_checked = n;
  return a;
}

}  // namespace

GradCheckResult gradcheck_lstm_cell(const GradCheckOptions& opts, std::uint64_t seed) {
  constexpr std::size_t kIn = 3, kHidden = 3;
  ParameterSet<double> params;
  params.add("x", ParamKind::kEmbedding, {1, kIn});
  params.add("h_prev", ParamKind::kEmbedding, {1, kHidden});
  params.add("c_prev", ParamKind::kEmbedding, {1, kHidden});
  params.add("lstm.W_x", ParamKind::kWeight, {kIn, 4 * kHidden});
  params.add("lstm.W_h", ParamKind::kWeight, {kHidden, 4 * kHidden});
  params.add("lstm.b", ParamKind::kBias, {1, 4 * kHidden});
  params.add("out.W", ParamKind::kWeight, {2 * kHidden, 3});
  fill_uniform(params, seed, 1.0);

  auto build = [&](Tape<double>& tape) {
    auto [h, c] = lstm_cell(tape.param(params["x"]), tape.param(params["h_prev"]),
                            tape.param(params["c_prev"]), tape.param(params["lstm.W_x"]),
                            tape.param(params["lstm.W_h"]), tape.param(params["lstm.b"]));
    auto probs = softmax_rows(matmul(concat_cols<double>({h, c}),
                                     tape.param(params["out.W"])));
    return cross_entropy(probs, {1});
  };
  return gradient_check(build, params, opts);
}

GradCheckResult gradcheck_small(const GradCheckOptions& opts, std::uint64_t seed) {
  constexpr std::size_t kIn = 3, kHidden = 3, kSteps = 3, kAttn = 3;
  ParameterSet<double> params;
  params.add("x", ParamKind::kEmbedding, {kSteps, kIn});
  params.add("lstm.W_x", ParamKind::kWeight, {kIn, 4 * kHidden});
  params.add("lstm.W_h", ParamKind::kWeight, {kHidden, 4 * kHidden});
  params.add("lstm.b", ParamKind::kBias, {1, 4 * kHidden});
  params.add("attn.W_q", ParamKind::kWeight, {kHidden, kAttn});
  params.add("attn.W_k", ParamKind::kWeight, {kHidden, kAttn});
  params.add("attn.W_v", ParamKind::kWeight, {kHidden, kAttn});
  params.add("out.W", ParamKind::kWeight, {kHidden + kAttn, 3});
  fill_uniform(params, seed, 1.5);
  const std::vector<int> gold = {0, 2, 1};

  auto build = [&](Tape<double>& tape) {
    auto x = tape.param(params["x"]);
    auto W_x = tape.param(params["lstm.W_x"]);
    auto W_h = tape.param(params["lstm.W_h"]);
    auto b = tape.param(params["lstm.b"]);
    Var<double> h = tape.zeros(1, kHidden);
    Var<double> c;
    std::vector<Var<double>> hs;
    for (std::size_t t = 0; t < kSteps; ++t) {
      std::tie(h, c) = lstm_cell(gather_rows(x, {t}), h, c, W_x, W_h, b);
      hs.push_back(h);
    }
    auto H = concat_rows<double>(hs);
    auto Q = matmul(H, tape.param(params["attn.W_q"]));
    auto K = matmul(H, tape.param(params["attn.W_k"]));
    auto V = matmul(H, tape.param(params["attn.W_v"]));
    auto scores = scale(block_matmul_nt(Q, K, kSteps), 1.0 / std::sqrt(double(kAttn)));
    std::vector<std::uint8_t> allowed(kSteps * kSteps, 1);
    allowed[2] = 0;  // row 0 may not attend to row 2
    auto C = block_matmul(masked_softmax_rows(scores, std::move(allowed)), V, kSteps);
    auto probs = softmax_rows(matmul(concat_cols<double>({H, C}),
                                     tape.param(params["out.W"])));
    return cross_entropy(probs, gold);
  };
  return gradient_check(build, params, opts);
}

GradCheckResult gradcheck_full(const GradCheckOptions& opts, Variant variant,
                               bool teacher_forcing, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.emb_dim = 3;
  cfg.lstm_hidden = 2;
  cfg.attn_dim = 2;
  cfg.intent_dec_hidden = 2;
  cfg.slot_dec_hidden = 2;
  cfg.dropout = 0.0;
  cfg.variant = variant;
  cfg.seed = seed;
  cfg.teacher_forcing = teacher_forcing;

  const std::vector<Example> split = {
      {{"play", "jazz"}, {"O", "B-genre"}, "PlayMusic"},
      {{"book", "table"}, {"O", "B-thing"}, "Book"},
  };
  const Vocabularies vocabs = build_vocab(split);
  StackPropModel<double> net(cfg, vocabs.words.size(), vocabs.num_intents(),
                             vocabs.num_slot_classes());
  fill_uniform(net.params(), seed, 1.0);
  const Batch batch = make_batch(split, {0}, vocabs);

  auto check = [&](LossPart part, const GradCheckOptions& o) {
    return gradient_check(
        [&](Tape<double>& tape) { return net.loss(tape, batch, Mode::kTrain, nullptr, part); },
        net.params(), o);
  };
  if (variant != Variant::kPipeline) return check(LossPart::kJoint, opts);

  auto intent = check(LossPart::kIntentOnly, opts);
  GradCheckOptions slot_opts = opts;
  const auto frozen = net.frozen_mask(LossPart::kSlotOnly);
  std::vector<std::string> frozen_names;
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    if (frozen[i]) frozen_names.push_back(net.params().at(i).name);
  }
  slot_opts.include = [frozen_names, user = opts.include](const std::string& name) {
    if (std::find(frozen_names.begin(), frozen_names.end(), name) != frozen_names.end()) {
      return false;
    }
    return !user || user(name);
  };
  return worse(intent, check(LossPart::kSlotOnly, slot_opts));
}

}  // namespace spslu
