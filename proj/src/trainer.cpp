#include "spslu/trainer.hpp"

#include <tuple>

#include "spslu/errors.hpp"

namespace spslu {

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"phase", phase}, {"train_loss", train_loss},
          {"dev", dev.to_json()}};
}

namespace {

std::tuple<double, double, double> dev_key(const EvalReport& r) {
  // Intent accuracy only ranks reports that have neither overall nor slot scores.
  const bool intent_only = !r.overall_acc && !r.slot_f1;
  return {r.overall_acc.value_or(-1.0), r.slot_f1.value_or(-1.0),
          intent_only ? r.intent_acc.value_or(-1.0) : -1.0};
}

struct PhaseResult {
  std::size_t best_epoch = 0;
  EvalReport best_dev;
};

PhaseResult run_phase(TrainedModel& model, LossPart part, const std::string& phase,
                      const TrainOptions& opts, const Corpus& corpus, Prng& shuffle,
                      Prng& dropout, std::vector<EpochRecord>& log,
                      const std::function<void(const EpochRecord&)>& on_epoch) {
  auto& net = model.net;
  auto& params = net.params();
  const auto frozen = net.frozen_mask(part);
  Adam<float> adam(opts.adam);
  const bool intent_phase = part == LossPart::kIntentOnly;

  ParameterSet<float> best = params;
  PhaseResult result;
  bool have_best = false;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch :
         make_batches(corpus.train, model.vocabs, opts.batch_size, &shuffle)) {
      params.zero_grad();
      Tape<float> tape;
      auto loss = net.loss(tape, batch, Mode::kTrain, &dropout, part);
      total += loss.item();
      tape.backward(scale(loss, 1.0f / static_cast<float>(batch.size)));
      adam.step(params, model.config.l2, &frozen);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = phase;
    rec.train_loss = total / static_cast<double>(corpus.train.size());
    if (intent_phase) {
      rec.dev = evaluate_predictions(
          corpus.dev, model.predict_split(corpus.dev, opts.eval_batch_size), true, false);
    } else {
      rec.dev = evaluate_predictions(
          corpus.dev, model.predict_split(corpus.dev, opts.eval_batch_size),
          model.config.scores_intent(), model.config.scores_slots());
    }
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (!have_best || better_dev(rec.dev, result.best_dev)) {
      have_best = true;
      result.best_epoch = epoch;
      result.best_dev = rec.dev;
      best = params;
      stale = 0;
    } else if (++stale >= opts.patience) {
      break;
    }
  }
  params = best;
  return result;
}

}  // namespace

bool better_dev(const EvalReport& a, const EvalReport& b) {
  return dev_key(a) > dev_key(b);
}

std::size_t select_best_epoch(const std::vector<EpochRecord>& log) {
  if (log.empty()) throw std::invalid_argument("select_best_epoch: empty log");
  std::size_t best = 0;
  for (std::size_t i = 1; i < log.size(); ++i) {
    if (better_dev(log[i].dev, log[best].dev)) best = i;
  }
  return best;
}

TrainResult train(const ModelConfig& config, const TrainOptions& options,
                  const Corpus& corpus, const Vocabularies& vocabs,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (options.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (options.patience < 1) throw ConfigError("patience must be at least 1");
  if (options.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (corpus.train.empty() || corpus.dev.empty()) {
    throw DataError("training needs non-empty train and dev splits");
  }
  TrainResult result{TrainedModel(config, vocabs), {}, 0, {}};
  Prng shuffle = Prng::stream(config.seed, "shuffle");
  Prng dropout = Prng::stream(config.seed, "dropout");

  PhaseResult last;
  if (config.variant == Variant::kPipeline) {
    run_phase(result.model, LossPart::kIntentOnly, "intent", options, corpus, shuffle,
              dropout, result.log, on_epoch);
    last = run_phase(result.model, LossPart::kSlotOnly, "slot", options, corpus,
                     shuffle, dropout, result.log, on_epoch);
  } else {
    last = run_phase(result.model, LossPart::kJoint, "joint", options, corpus, shuffle,
                     dropout, result.log, on_epoch);
  }
  result.best_epoch = last.best_epoch;
  result.best_dev = last.best_dev;
  return result;
}

}  // namespace spslu
