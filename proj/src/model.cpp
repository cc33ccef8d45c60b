#include "spslu/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "spslu/errors.hpp"

namespace spslu {

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {
      "full",     "gate_mechanism",     "pipeline",     "sentence_intent",
      "no_self_attention", "intent_last_hidden", "oracle_intent"};
  return names;
}

std::string_view variant_name(Variant v) {
  return variant_names().at(static_cast<std::size_t>(v));
}

Variant parse_variant(const std::string& name) {
  const auto& names = variant_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<Variant>(i);
  }
  std::string allowed;
  for (const auto& n : names) allowed += (allowed.empty() ? "" : ", ") + n;
  throw ConfigError("unknown variant '" + name + "'; allowed: " + allowed);
}

bool ModelConfig::has_attention() const {
  return variant != Variant::kNoSelfAttention &&
         variant != Variant::kIntentLastHidden;
}

void ModelConfig::validate() const {
  if (emb_dim < 1 || lstm_hidden < 1 || attn_dim < 1 || intent_dec_hidden < 1 ||
      slot_dec_hidden < 1) {
    throw ConfigError("all model dimensions must be at least 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must be in [0, 1)");
  }
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"emb-dim", emb_dim},
          {"lstm-hidden", lstm_hidden},
          {"attn-dim", attn_dim},
          {"intent-dec-hidden", intent_dec_hidden},
          {"slot-dec-hidden", slot_dec_hidden},
          {"dropout", dropout},
          {"l2", l2},
          {"variant", std::string(variant_name(variant))},
          {"seed", seed},
          {"teacher-forcing", teacher_forcing}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.emb_dim = j.at("emb-dim");
    c.lstm_hidden = j.at("lstm-hidden");
    c.attn_dim = j.at("attn-dim");
    c.intent_dec_hidden = j.at("intent-dec-hidden");
    c.slot_dec_hidden = j.at("slot-dec-hidden");
    c.dropout = j.at("dropout");
    c.l2 = j.at("l2");
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.seed = j.at("seed");
    c.teacher_forcing = j.at("teacher-forcing");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

int vote_intent(const std::vector<int>& token_labels,
                const std::vector<std::uint8_t>& mask) {
  if (mask.size() != token_labels.size()) {
    throw ShapeError("vote_intent: mask length differs from label count");
  }
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < token_labels.size(); ++i) {
    if (mask[i]) ++counts[token_labels[i]];
  }
  if (counts.empty()) throw ShapeError("vote_intent: every position is masked");
  int best = counts.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [label, n] : counts) {
    if (n > best_count) {
      best = label;
      best_count = n;
    }
  }
  return best;
}

namespace {

std::vector<int> masked_targets(const std::vector<int>& gold,
                                const std::vector<std::uint8_t>& mask) {
  if (gold.size() != mask.size()) throw ShapeError("joint_loss: mask length");
  std::vector<int> out(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) out[i] = mask[i] ? gold[i] : -1;
  return out;
}

/// Maps time-major row t * B + b to batch-major row b * T + t.
std::vector<std::size_t> time_to_batch_major(std::size_t B, std::size_t T) {
  std::vector<std::size_t> perm(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) perm[b * T + t] = t * B + b;
  return perm;
}

std::vector<std::size_t> rows_at(std::size_t B, std::size_t T, std::size_t t) {
  std::vector<std::size_t> rows(B);
  for (std::size_t b = 0; b < B; ++b) rows[b] = b * T + t;
  return rows;
}

template <class T>
Var<T> one_hot(Tape<T>& tape, const std::vector<int>& ids, std::size_t width) {
  std::vector<T> v(ids.size() * width, T(0));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < width) {
      v[i * width + ids[i]] = T(1);
    }
  }
  return tape.constant(ids.size(), width, std::move(v), "one_hot");
}

template <class T>
Var<T> maybe_dropout(Var<T> x, double p, Prng* rng, bool train) {
  if (!train || p == 0.0) return x;
  if (!rng) throw std::logic_error("train-mode dropout needs a dropout stream");
  return dropout(x, p, *rng, true);
}

int argmax_row(const double* row, std::size_t n) {
  return static_cast<int>(std::max_element(row, row + n) - row);
}

}  // namespace

template <class T>
Var<T> joint_loss(Var<T> intent_dists, Var<T> slot_dists,
                  const std::vector<int>& gold_intents,
                  const std::vector<int>& gold_slots,
                  const std::vector<std::uint8_t>& mask) {
  if (intent_dists.rows() != slot_dists.rows()) {
    throw ShapeError("joint_loss: intent and slot rows differ");
  }
  auto l1 = cross_entropy(intent_dists, masked_targets(gold_intents, mask));
  auto l2 = cross_entropy(slot_dists, masked_targets(gold_slots, mask));
  return add(l1, l2);
}

template <class T>
std::pair<Var<T>, Var<T>> lstm_gates(Var<T> pre, Var<T> c_prev) {
  if (pre.cols() % 4 != 0) throw ShapeError("lstm: pre-activation width not 4H");
  const std::size_t H = pre.cols() / 4;
  if (c_prev && (c_prev.cols() != H || c_prev.rows() != pre.rows())) {
    throw ShapeError("lstm: cell state shape mismatch");
  }
  auto i = sigmoid(slice_cols(pre, 0, H));
  auto f = sigmoid(slice_cols(pre, H, 2 * H));
  auto g = tanh(slice_cols(pre, 2 * H, 3 * H));
  auto o = sigmoid(slice_cols(pre, 3 * H, 4 * H));
  auto c = c_prev ? add(mul(f, c_prev), mul(i, g)) : mul(i, g);
  auto h = mul(o, tanh(c));
  return {h, c};
}

template <class T>
std::pair<Var<T>, Var<T>> lstm_cell(Var<T> x, Var<T> h_prev, Var<T> c_prev,
                                    Var<T> W_x, Var<T> W_h, Var<T> b) {
  if (W_x.cols() != W_h.cols() || W_h.rows() * 4 != W_h.cols()) {
    throw ShapeError("lstm_cell: weight shapes inconsistent");
  }
  auto pre = add_bias(matmul(x, W_x), b);
  if (h_prev) pre = add(pre, matmul(h_prev, W_h));
  return lstm_gates(pre, c_prev);
}

std::vector<int> row_intent_targets(const Batch& batch, std::size_t num_intents) {
  std::vector<int> out(batch.size * batch.max_len, -1);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const int id = batch.intent_ids[b];
    if (id < 0 || static_cast<std::size_t>(id) >= num_intents) continue;
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) out[b * batch.max_len + t] = id;
  }
  return out;
}

std::vector<int> row_slot_targets(const Batch& batch) {
  std::vector<int> out(batch.slot_ids.size(), -1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (batch.mask[k] && batch.slot_ids[k] != kPadId) out[k] = batch.slot_ids[k] - 1;
  }
  return out;
}

template <class T>
StackPropModel<T>::StackPropModel(ModelConfig cfg, std::size_t vocab_size,
                                  std::size_t num_intents, std::size_t num_slots)
    : cfg_(std::move(cfg)),
      vocab_size_(vocab_size),
      n_intents_(num_intents),
      n_slots_(num_slots) {
  cfg_.validate();
  if (vocab_size < 2 || num_intents < 1) {
    throw ConfigError("model needs a vocabulary and at least one intent");
  }
  if (cfg_.has_slot_decoder() && num_slots < 1) {
    throw ConfigError("model needs at least one slot class");
  }
  add_encoder("enc");
  if (cfg_.variant == Variant::kPipeline) add_encoder("slot_enc");
  if (cfg_.variant == Variant::kIntentLastHidden) {
    params_.add("intent_out.W", ParamKind::kWeight, {2 * cfg_.lstm_hidden, n_intents_});
  } else {
    add_decoder("intent_dec", n_intents_, encoding_width(), cfg_.intent_dec_hidden);
    params_.add("intent_out.W", ParamKind::kWeight, {cfg_.intent_dec_hidden, n_intents_});
    add_decoder("slot_dec", n_slots_, slot_input_width(), cfg_.slot_dec_hidden);
    params_.add("slot_out.W", ParamKind::kWeight, {cfg_.slot_dec_hidden, n_slots_});
    if (cfg_.variant == Variant::kGateMechanism) {
      params_.add("gate.W", ParamKind::kWeight,
                  {encoding_width() + n_intents_, encoding_width()});
      params_.add("gate.b", ParamKind::kBias, {1, encoding_width()});
    }
  }
  Prng init = Prng::stream(cfg_.seed, "init");
  init_uniform_fan_in(params_, init);
  // Forget-gate bias 1.0 on every LSTM.
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_.at(i);
    const auto& n = p.name;
    if (p.kind != ParamKind::kBias || n.size() < 2 || n.substr(n.size() - 2) != ".b" ||
        n.rfind("gate.", 0) == 0) {
      continue;
    }
    const std::size_t H = p.tensor.cols() / 4;
    for (std::size_t k = H; k < 2 * H; ++k) p.tensor.data[k] = T(1);
  }
}

template <class T>
void StackPropModel<T>::add_lstm(const std::string& prefix, std::size_t in,
                                 std::size_t hidden) {
  params_.add(prefix + ".W_x", ParamKind::kWeight, {in, 4 * hidden});
  params_.add(prefix + ".W_h", ParamKind::kWeight, {hidden, 4 * hidden});
  params_.add(prefix + ".b", ParamKind::kBias, {1, 4 * hidden});
}

template <class T>
void StackPropModel<T>::add_decoder(const std::string& prefix, std::size_t label_dim,
                                    std::size_t in, std::size_t hidden) {
  params_.add(prefix + ".W_label", ParamKind::kWeight, {label_dim, 4 * hidden});
  params_.add(prefix + ".W_in", ParamKind::kWeight, {in, 4 * hidden});
  params_.add(prefix + ".W_h", ParamKind::kWeight, {hidden, 4 * hidden});
  params_.add(prefix + ".b", ParamKind::kBias, {1, 4 * hidden});
}

template <class T>
void StackPropModel<T>::add_encoder(const std::string& prefix) {
  params_.add(prefix + ".embedding", ParamKind::kEmbedding, {vocab_size_, cfg_.emb_dim});
  add_lstm(prefix + ".fwd", cfg_.emb_dim, cfg_.lstm_hidden);
  add_lstm(prefix + ".bwd", cfg_.emb_dim, cfg_.lstm_hidden);
  if (cfg_.has_attention()) {
    for (const char* w : {".attn.W_q", ".attn.W_k", ".attn.W_v"}) {
      params_.add(prefix + w, ParamKind::kWeight, {cfg_.emb_dim, cfg_.attn_dim});
    }
  }
}

template <class T>
std::size_t StackPropModel<T>::encoding_width() const {
  return 2 * cfg_.lstm_hidden + (cfg_.has_attention() ? cfg_.attn_dim : 0);
}

template <class T>
std::size_t StackPropModel<T>::slot_input_width() const {
  if (cfg_.variant == Variant::kGateMechanism) return encoding_width();
  return n_intents_ + encoding_width();
}

template <class T>
Var<T> StackPropModel<T>::bind(Tape<T>& tape, const std::string& name) const {
  // Grad-disabled tapes only read the tensor.
  return tape.param(const_cast<Tensor<T>&>(params_[name]));
}

template <class T>
std::vector<bool> StackPropModel<T>::frozen_mask(LossPart part) const {
  std::vector<bool> frozen(params_.size(), false);
  if (cfg_.variant != Variant::kPipeline || part == LossPart::kJoint) return frozen;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& n = params_.at(i).name;
    const bool intent_side = n.rfind("enc.", 0) == 0 || n.rfind("intent_", 0) == 0;
    frozen[i] = part == LossPart::kIntentOnly ? !intent_side : intent_side;
  }
  return frozen;
}

template <class T>
Var<T> StackPropModel<T>::bilstm(Tape<T>& tape, Var<T> X, const Batch& batch,
                                 const std::string& prefix, Var<T>* last_hidden) const {
  const std::size_t B = batch.size, Tn = batch.max_len, H = cfg_.lstm_hidden;
  std::vector<Var<T>> outs[2];
  Var<T> finals[2];
  const char* dirs[2] = {".fwd", ".bwd"};
  for (int d = 0; d < 2; ++d) {
    const std::string p = prefix + dirs[d];
    auto W_h = bind(tape, p + ".W_h");
    auto XW = add_bias(matmul(X, bind(tape, p + ".W_x")), bind(tape, p + ".b"));
    outs[d].resize(Tn);
    Var<T> h, c;
    for (std::size_t step = 0; step < Tn; ++step) {
      const std::size_t t = d == 0 ? step : Tn - 1 - step;
      auto pre = gather_rows(XW, rows_at(B, Tn, t));
      if (h) pre = add(pre, matmul(h, W_h));
      auto [hn, cn] = lstm_gates(pre, c);
      std::vector<std::uint8_t> valid(B);
      bool all_valid = true;
      for (std::size_t b = 0; b < B; ++b) {
        valid[b] = batch.mask[b * Tn + t];
        all_valid = all_valid && valid[b];
      }
      if (!all_valid) {
        // Padded rows keep their previous state (zeros before the first token).
        hn = where_rows(valid, hn, h ? h : tape.zeros(B, H));
        cn = where_rows(valid, cn, c ? c : tape.zeros(B, H));
      }
      h = hn;
      c = cn;
      outs[d][t] = h;
    }
    finals[d] = h;
  }
  if (last_hidden) *last_hidden = concat_cols<T>({finals[0], finals[1]});
  std::vector<Var<T>> rows(Tn);
  for (std::size_t t = 0; t < Tn; ++t) rows[t] = concat_cols<T>({outs[0][t], outs[1][t]});
  return gather_rows(concat_rows(rows), time_to_batch_major(B, Tn));
}

template <class T>
EncoderOutputs<T> StackPropModel<T>::encode(Tape<T>& tape, const Batch& batch,
                                            Mode mode, Prng* dropout,
                                            const std::string& prefix) const {
  if (batch.size == 0 || batch.max_len == 0) throw ShapeError("encode: empty batch");
  const bool train = mode == Mode::kTrain;
  auto X = maybe_dropout(
      embedding_lookup(bind(tape, prefix + ".embedding"), batch.word_ids),
      cfg_.dropout, dropout, train);

  EncoderOutputs<T> out;
  out.H = bilstm(tape, X, batch, prefix, nullptr);
  if (!cfg_.has_attention()) {
    out.E = out.H;
    return out;
  }
  const std::size_t Tn = batch.max_len;
  auto Q = matmul(X, bind(tape, prefix + ".attn.W_q"));
  auto K = matmul(X, bind(tape, prefix + ".attn.W_k"));
  auto V = matmul(X, bind(tape, prefix + ".attn.W_v"));
  auto scores = scale(block_matmul_nt(Q, K, Tn),
                      T(1) / std::sqrt(static_cast<T>(cfg_.attn_dim)));
  std::vector<std::uint8_t> allowed(batch.size * Tn * Tn);
  for (std::size_t b = 0; b < batch.size; ++b)
    for (std::size_t i = 0; i < Tn; ++i)
      for (std::size_t j = 0; j < Tn; ++j)
        allowed[(b * Tn + i) * Tn + j] = batch.mask[b * Tn + j];
  auto weights = masked_softmax_rows(scores, std::move(allowed));
  out.C = block_matmul(weights, V, Tn);
  out.E = concat_cols<T>({out.H, out.C});
  return out;
}

template <class T>
Var<T> StackPropModel<T>::run_decoder(Tape<T>& tape, Var<T> inputs,
                                      const std::string& dec, const std::string& out,
                                      std::size_t n_out, const std::vector<int>& gold,
                                      const Batch& batch, bool teacher) const {
  const std::size_t B = batch.size, Tn = batch.max_len;
  auto W_label = bind(tape, dec + ".W_label");
  auto W_h = bind(tape, dec + ".W_h");
  auto W_out = bind(tape, out);
  auto XW = add_bias(matmul(inputs, bind(tape, dec + ".W_in")), bind(tape, dec + ".b"));
  std::vector<Var<T>> ys(Tn);
  Var<T> h, c, y_prev;
  for (std::size_t t = 0; t < Tn; ++t) {
    auto pre = gather_rows(XW, rows_at(B, Tn, t));
    if (t > 0) {
      Var<T> label_in;
      if (teacher) {
        std::vector<int> prev(B);
        for (std::size_t b = 0; b < B; ++b) prev[b] = gold[b * Tn + t - 1];
        label_in = one_hot(tape, prev, n_out);
      } else {
        label_in = y_prev;
      }
      pre = add(pre, matmul(label_in, W_label));
      pre = add(pre, matmul(h, W_h));
    }
    std::tie(h, c) = lstm_gates(pre, c);
    y_prev = softmax_rows(matmul(h, W_out));
    ys[t] = y_prev;
  }
  return gather_rows(concat_rows(ys), time_to_batch_major(B, Tn));
}

template <class T>
Var<T> StackPropModel<T>::decode_intent(Tape<T>& tape, Var<T> E, const Batch& batch,
                                        Mode mode, Prng* dropout) const {
  if (!cfg_.has_slot_decoder()) {
    throw std::logic_error("decode_intent: variant has no token-level intent decoder");
  }
  const bool train = mode == Mode::kTrain;
  auto in = maybe_dropout(E, cfg_.dropout, dropout, train);
  const auto gold = row_intent_targets(batch, n_intents_);
  return run_decoder(tape, in, "intent_dec", "intent_out.W", n_intents_, gold, batch,
                     train && cfg_.teacher_forcing);
}

template <class T>
Var<T> StackPropModel<T>::decode_slots(Tape<T>& tape, Var<T> E, Var<T> intent_dists,
                                       const Batch& batch, Mode mode,
                                       Prng* dropout) const {
  if (!cfg_.has_slot_decoder()) throw std::logic_error("decode_slots: no slot decoder");
  if (intent_dists.rows() != E.rows()) {
    throw ShapeError("decode_slots: intent distributions misaligned with encoder rows");
  }
  const bool train = mode == Mode::kTrain;
  auto Es = maybe_dropout(E, cfg_.dropout, dropout, train);
  Var<T> in;
  switch (cfg_.variant) {
    case Variant::kGateMechanism: {
      auto gate = sigmoid(add_bias(matmul(concat_cols<T>({Es, intent_dists}),
                                          bind(tape, "gate.W")),
                                   bind(tape, "gate.b")));
      in = mul(gate, Es);
      break;
    }
    case Variant::kSentenceIntent: {
      // Block-diagonal averaging over each utterance's unmasked rows.
      const std::size_t Tn = batch.max_len;
      std::vector<T> avg(batch.size * Tn * Tn, T(0));
      for (std::size_t b = 0; b < batch.size; ++b) {
        const T w = T(1) / static_cast<T>(batch.lengths[b]);
        for (std::size_t i = 0; i < Tn; ++i)
          for (std::size_t j = 0; j < batch.lengths[b]; ++j)
            avg[(b * Tn + i) * Tn + j] = w;
      }
      auto A = tape.constant(batch.size * Tn, Tn, std::move(avg), "utterance_mean");
      in = concat_cols<T>({block_matmul(A, intent_dists, Tn), Es});
      break;
    }
    default:
      in = concat_cols<T>({intent_dists, Es});
  }
  return run_decoder(tape, in, "slot_dec", "slot_out.W", n_slots_,
                     row_slot_targets(batch), batch, train && cfg_.teacher_forcing);
}

template <class T>
Var<T> StackPropModel<T>::intent_branch(Tape<T>& tape, const Batch& batch, Mode mode,
                                        Prng* dropout,
                                        EncoderOutputs<T>* enc_out) const {
  auto enc = encode(tape, batch, mode, dropout, "enc");
  if (enc_out) *enc_out = enc;
  return decode_intent(tape, enc.E, batch, mode, dropout);
}

template <class T>
Var<T> StackPropModel<T>::last_hidden_logits(Tape<T>& tape, const Batch& batch,
                                             Mode mode, Prng* dropout) const {
  const bool train = mode == Mode::kTrain;
  auto X = maybe_dropout(embedding_lookup(bind(tape, "enc.embedding"), batch.word_ids),
                         cfg_.dropout, dropout, train);
  Var<T> last;
  bilstm(tape, X, batch, "enc", &last);
  last = maybe_dropout(last, cfg_.dropout, dropout, train);
  return matmul(last, bind(tape, "intent_out.W"));
}

template <class T>
Var<T> StackPropModel<T>::loss(Tape<T>& tape, const Batch& batch, Mode mode,
                               Prng* dropout, LossPart part) const {
  if (cfg_.variant == Variant::kIntentLastHidden) {
    auto probs = softmax_rows(last_hidden_logits(tape, batch, mode, dropout));
    std::vector<int> gold(batch.size);
    for (std::size_t b = 0; b < batch.size; ++b) {
      const int id = batch.intent_ids[b];
      gold[b] = (id >= 0 && static_cast<std::size_t>(id) < n_intents_) ? id : -1;
    }
    return cross_entropy(probs, gold);
  }
  const auto gold_I = row_intent_targets(batch, n_intents_);
  const auto gold_S = row_slot_targets(batch);

  if (cfg_.variant == Variant::kPipeline) {
    Var<T> l1, l2;
    if (part != LossPart::kSlotOnly) {
      l1 = cross_entropy(intent_branch(tape, batch, mode, dropout, nullptr), gold_I);
    }
    if (part != LossPart::kIntentOnly) {
      // The slot model sees the intent model's inference-mode output as data.
      Tape<T> frozen(false);
      auto yi = intent_branch(frozen, batch, Mode::kInfer, nullptr, nullptr);
      auto yi_const = tape.constant(yi.rows(), yi.cols(),
                                    std::vector<T>(yi.value().begin(), yi.value().end()),
                                    "frozen_intent");
      auto enc = encode(tape, batch, mode, dropout, "slot_enc");
      l2 = cross_entropy(decode_slots(tape, enc.E, yi_const, batch, mode, dropout),
                         gold_S);
    }
    if (l1 && l2) return add(l1, l2);
    return l1 ? l1 : l2;
  }

  EncoderOutputs<T> enc;
  auto yi = intent_branch(tape, batch, mode, dropout, &enc);
  auto slot_in = cfg_.variant == Variant::kOracleIntent ? one_hot(tape, gold_I, n_intents_)
                                                        : yi;
  auto ys = decode_slots(tape, enc.E, slot_in, batch, mode, dropout);
  switch (part) {
    case LossPart::kIntentOnly: return cross_entropy(yi, gold_I);
    case LossPart::kSlotOnly: return cross_entropy(ys, gold_S);
    default: return joint_loss(yi, ys, gold_I, gold_S, batch.mask);
  }
}

template <class T>
std::vector<JointOutput> StackPropModel<T>::infer(const Batch& batch) const {
  Tape<T> tape(false);
  const std::size_t Tn = batch.max_len;
  std::vector<JointOutput> outs(batch.size);

  if (cfg_.variant == Variant::kIntentLastHidden) {
    auto probs = softmax_rows(last_hidden_logits(tape, batch, Mode::kInfer, nullptr));
    auto v = probs.value();
    for (std::size_t b = 0; b < batch.size; ++b) {
      auto& o = outs[b];
      o.length = batch.lengths[b];
      o.num_intents = n_intents_;
      o.intent_dists.assign(v.begin() + b * n_intents_, v.begin() + (b + 1) * n_intents_);
      o.voted_intent = argmax_row(o.intent_dists.data(), n_intents_);
    }
    return outs;
  }

  EncoderOutputs<T> enc;
  auto yi = intent_branch(tape, batch, Mode::kInfer, nullptr, &enc);
  Var<T> slot_E = enc.E;
  if (cfg_.variant == Variant::kPipeline) {
    slot_E = encode(tape, batch, Mode::kInfer, nullptr, "slot_enc").E;
  }
  auto slot_in = cfg_.variant == Variant::kOracleIntent
                     ? one_hot(tape, row_intent_targets(batch, n_intents_), n_intents_)
                     : yi;
  auto ys = decode_slots(tape, slot_E, slot_in, batch, Mode::kInfer, nullptr);
  auto iv = yi.value(), sv = ys.value();
  for (std::size_t b = 0; b < batch.size; ++b) {
    auto& o = outs[b];
    o.length = batch.lengths[b];
    o.num_intents = n_intents_;
    o.num_slots = n_slots_;
    for (std::size_t t = 0; t < o.length; ++t) {
      const std::size_t r = b * Tn + t;
      o.intent_dists.insert(o.intent_dists.end(), iv.begin() + r * n_intents_,
                            iv.begin() + (r + 1) * n_intents_);
      o.slot_dists.insert(o.slot_dists.end(), sv.begin() + r * n_slots_,
                          sv.begin() + (r + 1) * n_slots_);
      o.intent_token_labels.push_back(
          argmax_row(o.intent_dists.data() + t * n_intents_, n_intents_));
      o.slot_labels.push_back(argmax_row(o.slot_dists.data() + t * n_slots_, n_slots_));
    }
    o.voted_intent = vote_intent(o.intent_token_labels,
                                 std::vector<std::uint8_t>(o.length, 1));
  }
  return outs;
}

template class StackPropModel<float>;
template class StackPropModel<double>;
template Var<float> joint_loss(Var<float>, Var<float>, const std::vector<int>&,
                               const std::vector<int>&, const std::vector<std::uint8_t>&);
template Var<double> joint_loss(Var<double>, Var<double>, const std::vector<int>&,
                                const std::vector<int>&, const std::vector<std::uint8_t>&);
template std::pair<Var<float>, Var<float>> lstm_gates(Var<float>, Var<float>);
template std::pair<Var<double>, Var<double>> lstm_gates(Var<double>, Var<double>);
template std::pair<Var<float>, Var<float>> lstm_cell(Var<float>, Var<float>, Var<float>,
                                                     Var<float>, Var<float>, Var<float>);
template std::pair<Var<double>, Var<double>> lstm_cell(Var<double>, Var<double>,
                                                       Var<double>, Var<double>,
                                                       Var<double>, Var<double>);

TrainedModel::TrainedModel(ModelConfig cfg, Vocabularies v)
    : config(cfg),
      vocabs(std::move(v)),
      net(cfg, vocabs.words.size(), vocabs.num_intents(), vocabs.num_slot_classes()) {}

TrainedModel::Detail TrainedModel::predict(
    const std::vector<std::string>& tokens,
    const std::optional<std::string>& gold_intent) const {
  if (tokens.empty()) throw ConfigError("predict: empty input");
  if (config.variant == Variant::kOracleIntent && !gold_intent) {
    throw ConfigError("predict: oracle_intent models need the gold intent");
  }
  Example ex;
  ex.tokens = tokens;
  ex.slots.assign(tokens.size(), "O");
  ex.intent = gold_intent.value_or("");
  std::vector<Example> one{ex};
  const auto batch = make_batch(one, {0}, vocabs);
  const auto out = net.infer(batch).front();
  Detail d;
  if (out.voted_intent >= 0) d.prediction.intent = vocabs.intents.token(out.voted_intent);
  for (int l : out.intent_token_labels) d.token_intents.push_back(vocabs.intents.token(l));
  if (config.has_slot_decoder()) {
    std::vector<std::string> tags;
    for (int l : out.slot_labels) tags.push_back(vocabs.slot_tag(l));
    d.prediction.slots = std::move(tags);
  }
  return d;
}

std::vector<Prediction> TrainedModel::predict_split(const std::vector<Example>& split,
                                                    std::size_t batch_size) const {
  std::vector<Prediction> preds(split.size());
  for (const auto& batch : make_batches(split, vocabs, batch_size, nullptr)) {
    const auto outs = net.infer(batch);
    for (std::size_t b = 0; b < batch.size; ++b) {
      auto& p = preds[batch.example_index[b]];
      if (outs[b].voted_intent >= 0) p.intent = vocabs.intents.token(outs[b].voted_intent);
      if (config.has_slot_decoder()) {
        std::vector<std::string> tags;
        for (int l : outs[b].slot_labels) tags.push_back(vocabs.slot_tag(l));
        p.slots = std::move(tags);
      }
    }
  }
  return preds;
}

EvalReport TrainedModel::evaluate(const std::vector<Example>& split) const {
  return evaluate_predictions(split, predict_split(split), config.scores_intent(),
                              config.scores_slots());
}

}  // namespace spslu
