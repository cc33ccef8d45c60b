#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "spslu/prng.hpp"

namespace spslu {

/// One utterance: tokens, one BIO tag per token, and the utterance intent.
struct Example {
  std::vector<std::string> tokens;
  std::vector<std::string> slots;
  std::string intent;

  bool operator==(const Example&) const = default;
};

struct Corpus {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;

  bool operator==(const Corpus&) const = default;

  const std::vector<Example>& split(const std::string& name) const;
};

/// True for "O", "B-x" and "I-x" with a non-empty type.
bool is_bio_tag(const std::string& tag);

/// Reads one split directory holding seq.in / seq.out / label.
std::vector<Example> load_split(const std::filesystem::path& dir);

/// Reads root/{train,dev|valid,test}. Throws DataError naming the offending
/// file and line.
Corpus load_dataset(const std::filesystem::path& root);

void write_split(const std::vector<Example>& examples,
                 const std::filesystem::path& dir);
void write_dataset(const Corpus& corpus, const std::filesystem::path& root);

/// Bidirectional string <-> id map. Ids follow first insertion.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> reserved);

  /// Returns the id, inserting the token if new.
  int add(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  int lookup(const std::string& token, int fallback) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline constexpr int kPadId = 0;
inline constexpr int kUnkWordId = 1;
inline const std::string kPadToken = "<pad>";
inline const std::string kUnkToken = "<unk>";

struct Vocabularies {
  Vocabulary words;      // 0 = <pad>, 1 = <unk>
  Vocabulary slot_tags;  // 0 = <pad>
  Vocabulary intents;    // no reserved entries

  bool operator==(const Vocabularies&) const = default;

  /// Intent classes the model predicts.
  std::size_t num_intents() const { return intents.size(); }
  /// Slot classes the model predicts: every tag except <pad>. Class c is
  /// slot tag id c + 1.
  std::size_t num_slot_classes() const { return slot_tags.size() - 1; }

  /// Reserved id for an intent never seen in training. It is outside the
  /// model's output range, so it is never predicted.
  int unknown_intent_id() const { return static_cast<int>(intents.size()); }

  int word_id(const std::string& w) const { return words.lookup(w, kUnkWordId); }
  int intent_id(const std::string& i) const {
    return intents.lookup(i, unknown_intent_id());
  }
  /// Slot class for a tag, or -1 for a tag never seen in training.
  int slot_class(const std::string& tag) const;
  const std::string& slot_tag(int cls) const { return slot_tags.token(cls + 1); }
};

/// Builds vocabularies from the training split only.
Vocabularies build_vocab(const Corpus& corpus);
Vocabularies build_vocab(const std::vector<Example>& train);

/// Padded mini-batch, batch-major: entry [b][t] lives at b * max_len + t.
struct Batch {
  std::size_t size = 0;
  std::size_t max_len = 0;
  std::vector<int> word_ids;        // PAD beyond each length
  std::vector<int> slot_ids;        // slot tag ids (PAD beyond each length)
  std::vector<int> intent_ids;      // one per utterance
  std::vector<std::uint8_t> mask;   // 1 iff t < lengths[b]
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> example_index;  // position in the source split
};

Batch make_batch(const std::vector<Example>& split,
                 const std::vector<std::size_t>& indices,
                 const Vocabularies& vocabs, std::size_t pad_to = 0);

/// Splits into batches of `batch_size`, last partial batch kept. With a
/// shuffle stream the order is a fresh Fisher-Yates permutation; without
/// one the split order is preserved.
std::vector<Batch> make_batches(const std::vector<Example>& split,
                                const Vocabularies& vocabs,
                                std::size_t batch_size, Prng* shuffle);

}  // namespace spslu
