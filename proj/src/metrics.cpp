#include "spslu/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "spslu/errors.hpp"

namespace spslu {

std::vector<Chunk> extract_chunks(const std::vector<std::string>& tags) {
  std::vector<Chunk> chunks;
  bool open = false;
  Chunk cur;
  auto close = [&](std::size_t at) {
    if (open) {
      cur.end = at;
      chunks.push_back(cur);
      open = false;
    }
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    if (tag.size() < 2 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I')) {
      close(i);  // O, or anything that is not B-/I-
      continue;
    }
    const std::string type = tag.substr(2);
    if (tag[0] == 'I' && open && cur.type == type) continue;
    close(i);
    cur = Chunk{type, i, i};
    open = true;
  }
  close(tags.size());
  return chunks;
}

std::vector<std::string> chunks_to_tags(const std::vector<Chunk>& chunks,
                                        std::size_t length) {
  std::vector<std::string> tags(length, "O");
  for (const auto& c : chunks) {
    if (c.start >= c.end || c.end > length) {
      throw std::invalid_argument("chunks_to_tags: chunk outside sequence");
    }
    tags[c.start] = "B-" + c.type;
    for (std::size_t i = c.start + 1; i < c.end; ++i) tags[i] = "I-" + c.type;
  }
  return tags;
}

double ChunkCounts::precision() const {
  return pred_chunks == 0 ? 0.0 : double(true_positives) / double(pred_chunks);
}

double ChunkCounts::recall() const {
  return gold_chunks == 0 ? 0.0 : double(true_positives) / double(gold_chunks);
}

double ChunkCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

ChunkCounts count_chunks(const std::vector<std::vector<std::string>>& gold,
                         const std::vector<std::vector<std::string>>& pred) {
  if (gold.size() != pred.size()) {
    throw ShapeError("slot_f1: " + std::to_string(gold.size()) + " gold vs " +
                     std::to_string(pred.size()) + " predicted sequences");
  }
  ChunkCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != pred[i].size()) {
      throw ShapeError("slot_f1: length mismatch in sequence " + std::to_string(i));
    }
    auto g = extract_chunks(gold[i]);
    auto p = extract_chunks(pred[i]);
    c.gold_chunks += g.size();
    c.pred_chunks += p.size();
    // Both lists are ordered by start and non-overlapping.
    std::size_t a = 0, b = 0;
    while (a < g.size() && b < p.size()) {
      if (g[a] == p[b]) {
        ++c.true_positives;
        ++a;
        ++b;
      } else if (g[a].start < p[b].start ||
                 (g[a].start == p[b].start && g[a].end < p[b].end)) {
        ++a;
      } else {
        ++b;
      }
    }
  }
  return c;
}

PRF slot_f1(const std::vector<std::vector<std::string>>& gold,
            const std::vector<std::vector<std::string>>& pred) {
  const auto c = count_chunks(gold, pred);
  return {c.precision(), c.recall(), c.f1()};
}

nlohmann::json EvalReport::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {
      {"slot_f1", opt(slot_f1)},
      {"slot_precision", opt(slot_precision)},
      {"slot_recall", opt(slot_recall)},
      {"intent_acc", opt(intent_acc)},
      {"overall_acc", opt(overall_acc)},
      {"counts",
       {{"true_positives", true_positives},
        {"false_positives", false_positives},
        {"false_negatives", false_negatives},
        {"intent_correct", intent_correct},
        {"sentence_correct", sentence_correct},
        {"total", total}}},
  };
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  EvalReport r;
  r.slot_f1 = opt("slot_f1");
  r.slot_precision = opt("slot_precision");
  r.slot_recall = opt("slot_recall");
  r.intent_acc = opt("intent_acc");
  r.overall_acc = opt("overall_acc");
  const auto& c = j.at("counts");
  r.true_positives = c.at("true_positives");
  r.false_positives = c.at("false_positives");
  r.false_negatives = c.at("false_negatives");
  r.intent_correct = c.at("intent_correct");
  r.sentence_correct = c.at("sentence_correct");
  r.total = c.at("total");
  return r;
}

std::string EvalReport::to_table(const std::string& title) const {
  auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("-");
    std::snprintf(buf, sizeof(buf), "%.2f", *v * 100.0);
    return std::string(buf);
  };
  char line[160];
  std::ostringstream os;
  std::snprintf(line, sizeof(line), "%-24s %12s %14s %15s\n", "Model", "Slot (F1)",
                "Intent (Acc)", "Overall (Acc)");
  os << line;
  std::snprintf(line, sizeof(line), "%-24s %12s %14s %15s\n",
                title.empty() ? "-" : title.c_str(), cell(slot_f1).c_str(),
                cell(intent_acc).c_str(), cell(overall_acc).c_str());
  os << line;
  return os.str();
}

EvalReport evaluate_predictions(const std::vector<Example>& gold,
                                const std::vector<Prediction>& pred,
                                bool score_intent, bool score_slots) {
  if (gold.size() != pred.size()) {
    throw ShapeError("evaluate: prediction count does not match split size");
  }
  EvalReport r;
  r.total = gold.size();
  std::vector<std::vector<std::string>> gold_tags, pred_tags;
  std::size_t slots_exact = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    bool intent_ok = false, slots_ok = false;
    if (score_intent) {
      if (!pred[i].intent) throw ShapeError("evaluate: missing intent prediction");
      intent_ok = *pred[i].intent == gold[i].intent;
      r.intent_correct += intent_ok;
    }
    if (score_slots) {
      if (!pred[i].slots) throw ShapeError("evaluate: missing slot prediction");
      gold_tags.push_back(gold[i].slots);
      pred_tags.push_back(*pred[i].slots);
      slots_ok = *pred[i].slots == gold[i].slots;
      slots_exact += slots_ok;
    }
    if (score_intent && score_slots) r.sentence_correct += intent_ok && slots_ok;
  }
  const double n = r.total == 0 ? 1.0 : double(r.total);
  if (score_slots) {
    const auto c = count_chunks(gold_tags, pred_tags);
    r.true_positives = c.true_positives;
    r.false_positives = c.false_positives();
    r.false_negatives = c.false_negatives();
    r.slot_precision = c.precision();
    r.slot_recall = c.recall();
    r.slot_f1 = c.f1();
  }
  if (score_intent) r.intent_acc = r.total ? r.intent_correct / n : 0.0;
  if (score_intent && score_slots) {
    r.overall_acc = r.total ? r.sentence_correct / n : 0.0;
  }
  return r;
}

}  // namespace spslu
