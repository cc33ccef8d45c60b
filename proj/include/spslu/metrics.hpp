#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spslu/corpus.hpp"

namespace spslu {

/// Labelled span [start, end) of a BIO sequence.
struct Chunk {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const Chunk&) const = default;
};

/// B-x opens a chunk; I-x extends an open chunk of type x and otherwise
/// opens a new one; O or a type change closes the open chunk.
std::vector<Chunk> extract_chunks(const std::vector<std::string>& tags);

/// Inverse of extract_chunks for non-overlapping chunks.
std::vector<std::string> chunks_to_tags(const std::vector<Chunk>& chunks,
                                        std::size_t length);

struct ChunkCounts {
  std::size_t true_positives = 0;
  std::size_t pred_chunks = 0;
  std::size_t gold_chunks = 0;

  std::size_t false_positives() const { return pred_chunks - true_positives; }
  std::size_t false_negatives() const { return gold_chunks - true_positives; }
  double precision() const;
  double recall() const;
  double f1() const;
};

/// Micro-averaged exact-match chunk counts over aligned tag sequences.
ChunkCounts count_chunks(const std::vector<std::vector<std::string>>& gold,
                         const std::vector<std::vector<std::string>>& pred);

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PRF slot_f1(const std::vector<std::vector<std::string>>& gold,
            const std::vector<std::vector<std::string>>& pred);

/// Model output for one utterance. Either part may be absent for variants
/// that do not produce it.
struct Prediction {
  std::optional<std::string> intent;
  std::optional<std::vector<std::string>> slots;
};

struct EvalReport {
  std::optional<double> slot_f1;
  std::optional<double> slot_precision;
  std::optional<double> slot_recall;
  std::optional<double> intent_acc;
  std::optional<double> overall_acc;

  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t intent_correct = 0;
  std::size_t sentence_correct = 0;
  std::size_t total = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// Fixed-width table: Slot (F1) | Intent (Acc) | Overall (Acc), in percent.
  std::string to_table(const std::string& title = "") const;
};

/// Scores predictions against gold examples. Intent metrics are reported
/// only when `score_intent`, slot metrics only when `score_slots`, overall
/// accuracy only when both.
EvalReport evaluate_predictions(const std::vector<Example>& gold,
                                const std::vector<Prediction>& pred,
                                bool score_intent, bool score_slots);

}  // namespace spslu
