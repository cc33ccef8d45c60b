#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "spslu/corpus.hpp"
#include "spslu/metrics.hpp"
#include "spslu/ops.hpp"
#include "spslu/params.hpp"
#include "spslu/prng.hpp"
#include "spslu/tensor.hpp"

namespace spslu {

/// Model wiring. `kFull` is the stack-propagation network; the rest are the
/// ablations.
enum class Variant {
  kFull,
  kGateMechanism,     // slot input g * e with g = sigmoid(W [e ; y_I] + b)
  kPipeline,          // separate encoders, intent model trained then frozen
  kSentenceIntent,    // every token gets the utterance-mean intent distribution
  kNoSelfAttention,   // E = H
  kIntentLastHidden,  // intent-only classifier on the final BiLSTM state
  kOracleIntent,      // gold one-hot intent feeds the slot decoder
};

const std::vector<std::string>& variant_names();
std::string_view variant_name(Variant v);
/// Throws ConfigError listing the allowed names.
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::size_t emb_dim = 256;
  std::size_t lstm_hidden = 256;  // per direction
  std::size_t attn_dim = 128;
  std::size_t intent_dec_hidden = 64;
  std::size_t slot_dec_hidden = 64;
  double dropout = 0.4;
  double l2 = 1e-6;
  Variant variant = Variant::kFull;
  std::uint64_t seed = 42;
  /// Gold one-hot previous labels in train mode; predicted distributions
  /// otherwise. Inference always feeds predictions back.
  bool teacher_forcing = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;

  bool has_attention() const;
  bool has_slot_decoder() const { return variant != Variant::kIntentLastHidden; }
  bool scores_intent() const { return variant != Variant::kOracleIntent; }
  bool scores_slots() const { return has_slot_decoder(); }
};

enum class Mode { kTrain, kInfer };

/// Which loss terms `loss` builds. Pipeline training uses the single-task
/// parts; every other variant uses kJoint.
enum class LossPart { kJoint, kIntentOnly, kSlotOnly };

/// Batch-major encoder results; row b * max_len + t is token t of utterance b.
template <class T>
struct EncoderOutputs {
  Var<T> H;  // [(B*T) x 2*lstm_hidden]
  Var<T> C;  // [(B*T) x attn_dim]; empty without attention
  Var<T> E;  // H (+) C
};

/// Per-utterance inference result.
struct JointOutput {
  std::size_t length = 0;
  std::size_t num_intents = 0;
  std::size_t num_slots = 0;
  std::vector<double> intent_dists;   // length x num_intents (1 x n for last-hidden)
  std::vector<int> intent_token_labels;
  int voted_intent = -1;
  std::vector<double> slot_dists;     // length x num_slots; empty without slot decoder
  std::vector<int> slot_labels;
};

/// Majority vote over unmasked token labels; ties go to the lowest label id.
int vote_intent(const std::vector<int>& token_labels,
                const std::vector<std::uint8_t>& mask);

/// L1 + L2: summed cross-entropy of the token intent distributions against
/// the utterance intent plus that of the slot distributions against the gold
/// tags, over unmasked rows. Negative gold ids are skipped.
template <class T>
Var<T> joint_loss(Var<T> intent_dists, Var<T> slot_dists,
                  const std::vector<int>& gold_intents,
                  const std::vector<int>& gold_slots,
                  const std::vector<std::uint8_t>& mask);

/// (h, c) of one LSTM step from the pre-activation [B x 4H] laid out as
/// input, forget, candidate, output gates. `c_prev` may be empty (zeros).
template <class T>
std::pair<Var<T>, Var<T>> lstm_gates(Var<T> pre, Var<T> c_prev);

/// Full LSTM cell: pre = x W_x + h_prev W_h + b, then lstm_gates.
template <class T>
std::pair<Var<T>, Var<T>> lstm_cell(Var<T> x, Var<T> h_prev, Var<T> c_prev,
                                    Var<T> W_x, Var<T> W_h, Var<T> b);

/// The stack-propagation network. Parameters live in a ParameterSet with
/// stable names (see the constructor for the layout).
template <class T>
class StackPropModel {
 public:
  StackPropModel(ModelConfig cfg, std::size_t vocab_size, std::size_t num_intents,
                 std::size_t num_slots);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t num_intents() const { return n_intents_; }
  std::size_t num_slots() const { return n_slots_; }

  /// Width of one encoder row e_i.
  std::size_t encoding_width() const;
  /// Width of the non-label part of the slot decoder input.
  std::size_t slot_input_width() const;

  EncoderOutputs<T> encode(Tape<T>& tape, const Batch& batch, Mode mode,
                           Prng* dropout, const std::string& prefix = "enc") const;

  /// Token intent distributions [(B*T) x n_I].
  Var<T> decode_intent(Tape<T>& tape, Var<T> E, const Batch& batch, Mode mode,
                       Prng* dropout) const;

  /// Slot distributions [(B*T) x n_S] given the encoder rows and the intent
  /// distributions aligned with them.
  Var<T> decode_slots(Tape<T>& tape, Var<T> E, Var<T> intent_dists,
                      const Batch& batch, Mode mode, Prng* dropout) const;

  /// Summed (unnormalized) loss over the batch.
  Var<T> loss(Tape<T>& tape, const Batch& batch, Mode mode, Prng* dropout,
              LossPart part = LossPart::kJoint) const;

  /// Inference-mode forward pass (no dropout, predicted feedback). Oracle
  /// models read gold intents from the batch.
  std::vector<JointOutput> infer(const Batch& batch) const;

  /// Flags, by parameter position, the tensors a pipeline phase must not
  /// update.
  std::vector<bool> frozen_mask(LossPart part) const;

 private:
  Var<T> bind(Tape<T>& tape, const std::string& name) const;
  void add_lstm(const std::string& prefix, std::size_t in, std::size_t hidden);
  void add_decoder(const std::string& prefix, std::size_t label_dim,
                   std::size_t in, std::size_t hidden);
  void add_encoder(const std::string& prefix);
  Var<T> bilstm(Tape<T>& tape, Var<T> X, const Batch& batch,
                const std::string& prefix, Var<T>* last_hidden) const;
  Var<T> run_decoder(Tape<T>& tape, Var<T> inputs, const std::string& dec,
                     const std::string& out, std::size_t n_out,
                     const std::vector<int>& gold, const Batch& batch,
                     bool teacher) const;
  Var<T> intent_branch(Tape<T>& tape, const Batch& batch, Mode mode, Prng* dropout,
                       EncoderOutputs<T>* enc_out) const;
  Var<T> last_hidden_logits(Tape<T>& tape, const Batch& batch, Mode mode,
                            Prng* dropout) const;

  ModelConfig cfg_;
  std::size_t vocab_size_;
  std::size_t n_intents_;
  std::size_t n_slots_;
  ParameterSet<T> params_;
};

/// Gold intent class per batch row (utterance intent on unmasked rows; -1 on
/// padding or for an intent outside the model's classes).
std::vector<int> row_intent_targets(const Batch& batch, std::size_t num_intents);
/// Gold slot class per batch row (-1 on padding or unseen tags).
std::vector<int> row_slot_targets(const Batch& batch);

/// A float model with the vocabularies it was trained with.
struct TrainedModel {
  ModelConfig config;
  Vocabularies vocabs;
  StackPropModel<float> net;

  TrainedModel(ModelConfig cfg, Vocabularies v);
  TrainedModel(ModelConfig cfg, Vocabularies v, StackPropModel<float> n)
      : config(std::move(cfg)), vocabs(std::move(v)), net(std::move(n)) {}

  /// Per-token verbose output alongside the prediction.
  struct Detail {
    Prediction prediction;
    std::vector<std::string> token_intents;
  };

  /// Throws ConfigError on empty input. Oracle models need `gold_intent`.
  Detail predict(const std::vector<std::string>& tokens,
                 const std::optional<std::string>& gold_intent = std::nullopt) const;

  std::vector<Prediction> predict_split(const std::vector<Example>& split,
                                        std::size_t batch_size = 64) const;

  EvalReport evaluate(const std::vector<Example>& split) const;
};

}  // namespace spslu
