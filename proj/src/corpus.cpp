#include "spslu/corpus.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "spslu/errors.hpp"

namespace spslu {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("missing file: " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  // A trailing blank line is a terminator, not an utterance.
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string field;
  while (ss >> field) out.push_back(std::move(field));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string where(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line + 1);
}

}  // namespace

const std::vector<Example>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev" || name == "valid") return dev;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (expected train, dev or test)");
}

bool is_bio_tag(const std::string& tag) {
  if (tag == "O") return true;
  return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

std::vector<Example> load_split(const fs::path& dir) {
  const fs::path in_file = dir / "seq.in";
  const fs::path out_file = dir / "seq.out";
  const fs::path label_file = dir / "label";
  const auto tokens = read_lines(in_file);
  const auto tags = read_lines(out_file);
  const auto labels = read_lines(label_file);
  if (tokens.size() != tags.size() || tokens.size() != labels.size()) {
    throw DataError("line count mismatch in " + dir.string() + ": seq.in=" +
                    std::to_string(tokens.size()) + " seq.out=" +
                    std::to_string(tags.size()) +
                    " label=" + std::to_string(labels.size()));
  }
  std::vector<Example> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Example ex;
    ex.tokens = split_fields(tokens[i]);
    ex.slots = split_fields(tags[i]);
    ex.intent = trim(labels[i]);
    if (ex.tokens.empty()) throw DataError("empty utterance at " + where(in_file, i));
    if (ex.tokens.size() != ex.slots.size()) {
      throw DataError("token/tag count mismatch at " + where(out_file, i) + ": " +
                      std::to_string(ex.tokens.size()) + " tokens, " +
                      std::to_string(ex.slots.size()) + " tags");
    }
    for (const auto& tag : ex.slots) {
      if (!is_bio_tag(tag)) {
        throw DataError("malformed BIO tag '" + tag + "' at " + where(out_file, i));
      }
    }
    if (ex.intent.empty()) throw DataError("empty intent at " + where(label_file, i));
    out.push_back(std::move(ex));
  }
  return out;
}

Corpus load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw DataError("dataset root is not a directory: " + root.string());
  }
  Corpus c;
  c.train = load_split(root / "train");
  const fs::path dev = fs::is_directory(root / "dev") ? root / "dev" : root / "valid";
  c.dev = load_split(dev);
  c.test = load_split(root / "test");
  if (c.train.empty() || c.dev.empty() || c.test.empty()) {
    throw DataError("every split must be non-empty: " + root.string());
  }
  return c;
}

void write_split(const std::vector<Example>& examples, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream in(dir / "seq.in", std::ios::binary);
  std::ofstream out(dir / "seq.out", std::ios::binary);
  std::ofstream label(dir / "label", std::ios::binary);
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ' ';
      s += v[i];
    }
    return s;
  };
  for (const auto& ex : examples) {
    in << join(ex.tokens) << '\n';
    out << join(ex.slots) << '\n';
    label << ex.intent << '\n';
  }
  if (!in || !out || !label) throw DataError("failed writing " + dir.string());
}

void write_dataset(const Corpus& corpus, const fs::path& root) {
  write_split(corpus.train, root / "train");
  write_split(corpus.dev, root / "dev");
  write_split(corpus.test, root / "test");
}

Vocabulary::Vocabulary(std::vector<std::string> reserved) {
  for (auto& r : reserved) add(r);
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::lookup(const std::string& token, int fallback) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? fallback : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

int Vocabularies::slot_class(const std::string& tag) const {
  auto id = slot_tags.find(tag);
  if (!id || *id == kPadId) return -1;
  return *id - 1;
}

Vocabularies build_vocab(const std::vector<Example>& train) {
  Vocabularies v;
  v.words = Vocabulary({kPadToken, kUnkToken});
  v.slot_tags = Vocabulary({kPadToken});
  for (const auto& ex : train) {
    for (const auto& w : ex.tokens) v.words.add(w);
    for (const auto& s : ex.slots) v.slot_tags.add(s);
    v.intents.add(ex.intent);
  }
  return v;
}

Vocabularies build_vocab(const Corpus& corpus) { return build_vocab(corpus.train); }

Batch make_batch(const std::vector<Example>& split,
                 const std::vector<std::size_t>& indices,
                 const Vocabularies& vocabs, std::size_t pad_to) {
  Batch b;
  b.size = indices.size();
  b.max_len = pad_to;
  for (auto i : indices) b.max_len = std::max(b.max_len, split.at(i).tokens.size());
  const std::size_t n = b.size * b.max_len;
  b.word_ids.assign(n, kPadId);
  b.slot_ids.assign(n, kPadId);
  b.mask.assign(n, 0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Example& ex = split[indices[r]];
    b.lengths.push_back(ex.tokens.size());
    b.intent_ids.push_back(vocabs.intent_id(ex.intent));
    b.example_index.push_back(indices[r]);
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      const std::size_t k = r * b.max_len + t;
      b.word_ids[k] = vocabs.word_id(ex.tokens[t]);
      const int cls = vocabs.slot_class(ex.slots[t]);
      b.slot_ids[k] = cls < 0 ? kPadId : cls + 1;
      b.mask[k] = 1;
    }
  }
  return b;
}

std::vector<Batch> make_batches(const std::vector<Example>& split,
                                const Vocabularies& vocabs,
                                std::size_t batch_size, Prng* shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle->below(i)]);
    }
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
    out.push_back(make_batch(split, idx, vocabs));
  }
  return out;
}

}  // namespace spslu
