#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spslu/adam.hpp"
#include "spslu/corpus.hpp"
#include "spslu/metrics.hpp"
#include "spslu/model.hpp"

namespace spslu {

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  /// Stop after this many epochs without a dev improvement.
  std::size_t patience = 20;
  AdamConfig adam;
  std::size_t eval_batch_size = 64;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string phase;         // "joint", or "intent"/"slot" for the pipeline
  double train_loss = 0.0;   // summed loss per training utterance
  EvalReport dev;

  nlohmann::json to_json() const;
};

struct TrainResult {
  TrainedModel model;  // best-dev snapshot
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;  // within the final phase
  EvalReport best_dev;
};

/// True when `a` is a strictly better dev result than `b`: higher overall
/// accuracy, then higher slot F1. Reports with neither (intent-only models)
/// compare by intent accuracy. Absent metrics rank below any present value.
bool better_dev(const EvalReport& a, const EvalReport& b);

/// Index of the best record (earliest among equals).
std::size_t select_best_epoch(const std::vector<EpochRecord>& log);

/// Mini-batch Adam training with per-epoch dev evaluation and best-dev
/// snapshotting. The batch loss is divided by the batch size before the
/// backward pass. Pipeline models train the intent side, freeze it, then
/// train the slot side.
TrainResult train(const ModelConfig& config, const TrainOptions& options,
                  const Corpus& corpus, const Vocabularies& vocabs,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace spslu
