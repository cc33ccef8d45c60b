#include "spslu/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "spslu/corpus.hpp"
#include "spslu/errors.hpp"
#include "spslu/gradcheck_suite.hpp"
#include "spslu/serialize.hpp"

namespace spslu {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "data",      "out",         "variant",     "seed",
      "epochs",    "batch-size",  "patience",    "lr",
      "emb-dim",   "lstm-hidden", "attn-dim",    "intent-dec-hidden",
      "slot-dec-hidden", "dropout", "l2",        "teacher-forcing",
      "train-limit"};
  return keys;
}

json RunConfig::to_json() const {
  json j = model.to_json();
  j["data"] = data_dir.string();
  j["out"] = out_dir.string();
  j["epochs"] = train.epochs;
  j["batch-size"] = train.batch_size;
  j["patience"] = train.patience;
  j["lr"] = train.adam.lr;
  j["train-limit"] = train_limit;
  return j;
}

RunConfig RunConfig::overlay(const RunConfig& base, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto& keys = run_config_keys();
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  json merged = base.to_json();
  for (const auto& [k, v] : j.items()) merged[k] = v;

  RunConfig rc;
  try {
    auto m = merged;
    for (const char* k : {"data", "out", "epochs", "batch-size", "patience", "lr",
                          "train-limit"}) {
      m.erase(k);
    }
    rc.model = ModelConfig::from_json(m);
    rc.data_dir = merged.at("data").get<std::string>();
    rc.out_dir = merged.at("out").get<std::string>();
    rc.train.epochs = merged.at("epochs").get<std::size_t>();
    rc.train.batch_size = merged.at("batch-size").get<std::size_t>();
    rc.train.patience = merged.at("patience").get<std::size_t>();
    rc.train.adam.lr = merged.at("lr").get<double>();
    rc.train_limit = merged.at("train-limit").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return rc;
}

void RunConfig::validate() const {
  model.validate();
  if (train.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (train.patience < 1) throw ConfigError("patience must be at least 1");
  if (train.batch_size < 1) throw ConfigError("batch-size must be at least 1");
  if (!(train.adam.lr > 0.0)) throw ConfigError("lr must be positive");
  if (data_dir.empty()) throw ConfigError("--data is required");
  if (out_dir.empty()) throw ConfigError("--out is required");
}

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  return words;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += ' ';
    s += parts[i];
  }
  return s;
}

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * *v;
  return os.str();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

std::uint64_t parse_seed_env(const char* text) {
  const std::string s(text);
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s.front() == '-') {
    throw ConfigError("SPSLU_SEED must be a non-negative integer, got '" + s + "'");
  }
  return v;
}

fs::path split_dir(const fs::path& root, const std::string& split) {
  if (fs::is_directory(root / split)) return root / split;
  if (split == "dev" && fs::is_directory(root / "valid")) return root / "valid";
  throw DataError("split directory not found: " + (root / split).string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  rc.validate();
  if (!fs::is_directory(rc.data_dir)) {
    throw DataError("data directory not found: " + rc.data_dir.string());
  }
  Corpus corpus = load_dataset(rc.data_dir);
  if (rc.train_limit > 0 && corpus.train.size() > rc.train_limit) {
    corpus.train.resize(rc.train_limit);
  }
  const Vocabularies vocabs = build_vocab(corpus.train);

  fs::create_directories(rc.out_dir);
  std::ofstream log(rc.out_dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw DataError("cannot write to " + rc.out_dir.string());
  log << json{{"type", "config"}, {"config", rc.to_json()}}.dump() << '\n';

  auto on_epoch = [&](const EpochRecord& rec) {
    json line = rec.to_json();
    line["type"] = "epoch";
    log << line.dump() << '\n';
    log.flush();
    err << "epoch " << rec.epoch << " [" << rec.phase << "] loss " << std::fixed
        << std::setprecision(4) << rec.train_loss << "  dev slot " << pct(rec.dev.slot_f1)
        << " intent " << pct(rec.dev.intent_acc) << " overall "
        << pct(rec.dev.overall_acc) << '\n';
    err.unsetf(std::ios::floatfield);
  };
  TrainResult result = train(rc.model, rc.train, corpus, vocabs, on_epoch);

  save_model(result.model, rc.out_dir / "model.spslu");
  const EvalReport test = result.model.evaluate(corpus.test);
  write_text(rc.out_dir / "test_report.json", test.to_json().dump(2) + "\n");
  const std::string table = test.to_table("test");
  write_text(rc.out_dir / "test_report.txt", table);
  log << json{{"type", "result"},
              {"best_epoch", result.best_epoch},
              {"best_dev", result.best_dev.to_json()},
              {"test", test.to_json()}}
             .dump()
      << '\n';
  out << table;
  return kExitOk;
}

int cmd_eval(const fs::path& model_path, const fs::path& data, const std::string& split,
             bool as_json, std::ostream& out) {
  const TrainedModel model = load_model(model_path);
  const auto examples = load_split(split_dir(data, split));
  const EvalReport report = model.evaluate(examples);
  if (as_json) {
    out << report.to_json().dump(2) << '\n';
  } else {
    out << report.to_table(split);
  }
  return kExitOk;
}

void print_prediction(const TrainedModel& model, const std::vector<std::string>& tokens,
                      const std::optional<std::string>& gold_intent, bool verbose,
                      std::ostream& out) {
  const auto d = model.predict(tokens, gold_intent);
  const bool show_intent = model.config.scores_intent() && d.prediction.intent;
  out << (show_intent ? *d.prediction.intent : std::string("-")) << '\t'
      << (d.prediction.slots ? join(*d.prediction.slots) : std::string("-")) << '\n';
  if (verbose && !d.token_intents.empty()) {
    out << "votes";
    for (std::size_t i = 0; i < d.token_intents.size(); ++i) {
      out << (i ? ' ' : '\t') << tokens[i] << ':' << d.token_intents[i];
    }
    out << '\n';
  }
}

int cmd_gradcheck(const std::string& size, double threshold, double epsilon,
                  const std::string& variant, std::uint64_t seed, bool inject_fault,
                  std::ostream& out) {
  GradCheckOptions opts;
  opts.epsilon = epsilon;
  if (inject_fault) {
    opts.corrupt = [](ParameterSet<double>& params) {
      auto& g = params.at(params.size() - 1).tensor.grad;
      if (!g.empty()) g[0] += 0.1 * (std::abs(g[0]) + 1.0);
    };
  }
  GradCheckResult r;
  if (size == "small") {
    r = gradcheck_small(opts, seed);
  } else {
    r = gradcheck_full(opts, parse_variant(variant), true, seed);
  }
  out << "gradcheck " << size << ": max relative error " << std::scientific
      << std::setprecision(3) << r.max_relative_error << " at " << r.worst_param << '['
      << r.worst_index << "] (analytic " << r.worst_analytic << ", numeric "
      << r.worst_numeric << "), " << r.coordinates_checked << " coordinates\n";
  const bool ok = r.max_relative_error < threshold;
  out << (ok ? "PASS" : "FAIL") << " (threshold " << threshold << ")\n";
  out.unsetf(std::ios::floatfield);
  return ok ? kExitOk : kExitGradCheck;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            std::istream& in) {
  CLI::App app{"Joint intent detection and slot filling", "spslu"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model and report on test");
  std::string config_path, data, out_dir, variant;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, batch = 0, patience = 0, train_limit = 0;
  std::size_t emb = 0, hidden = 0, attn = 0, idec = 0, sdec = 0;
  double dropout = 0, l2 = 0, lr = 0;
  bool teacher = true;
  train_cmd->add_option("--config", config_path, "JSON file with flat flag-name keys");
  std::vector<std::pair<std::string, CLI::Option*>> flags = {
      {"data", train_cmd->add_option("--data", data, "Dataset root with train/dev/test")},
      {"out", train_cmd->add_option("--out", out_dir, "Output directory")},
      {"variant", train_cmd->add_option("--variant", variant, "Model variant")},
      {"seed", train_cmd->add_option("--seed", seed, "Random seed")},
      {"epochs", train_cmd->add_option("--epochs", epochs)},
      {"batch-size", train_cmd->add_option("--batch-size", batch)},
      {"patience", train_cmd->add_option("--patience", patience)},
      {"lr", train_cmd->add_option("--lr", lr)},
      {"emb-dim", train_cmd->add_option("--emb-dim", emb)},
      {"lstm-hidden", train_cmd->add_option("--lstm-hidden", hidden)},
      {"attn-dim", train_cmd->add_option("--attn-dim", attn)},
      {"intent-dec-hidden", train_cmd->add_option("--intent-dec-hidden", idec)},
      {"slot-dec-hidden", train_cmd->add_option("--slot-dec-hidden", sdec)},
      {"dropout", train_cmd->add_option("--dropout", dropout)},
      {"l2", train_cmd->add_option("--l2", l2)},
      {"teacher-forcing", train_cmd->add_option("--teacher-forcing", teacher)},
      {"train-limit", train_cmd->add_option("--train-limit", train_limit,
                                            "Keep only the first N training utterances")},
  };

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model on a split");
  std::string model_path, split = "test";
  bool as_json = false;
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--data", data)->required();
  eval_cmd->add_option("--split", split);
  eval_cmd->add_flag("--json", as_json);

  // predict / demo
  auto* predict_cmd = app.add_subcommand("predict", "Tag one utterance");
  std::string text, gold_intent;
  bool verbose = false;
  predict_cmd->add_option("--model", model_path)->required();
  predict_cmd->add_option("--text", text)->required();
  auto* predict_intent = predict_cmd->add_option("--intent", gold_intent,
                                                 "Gold intent (oracle_intent models)");
  predict_cmd->add_flag("--verbose", verbose, "Print per-token intent votes");

  auto* demo_cmd = app.add_subcommand("demo", "Tag each line read from stdin");
  demo_cmd->add_option("--model", model_path)->required();
  auto* demo_intent = demo_cmd->add_option("--intent", gold_intent);
  demo_cmd->add_flag("--verbose", verbose);

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::string size = "full";
  double threshold = 1e-5, epsilon = kGradCheckEpsilon;
  std::uint64_t fixture_seed = 1;
  bool inject_fault = false;
  std::string grad_variant = "full";
  grad_cmd->add_option("--size", size)->check(CLI::IsMember({"small", "full"}));
  grad_cmd->add_option("--threshold", threshold);
  grad_cmd->add_option("--epsilon", epsilon);
  grad_cmd->add_option("--variant", grad_variant);
  grad_cmd->add_option("--seed", fixture_seed, "Seed of the random fixture");
  grad_cmd->add_flag("--inject-fault", inject_fault)->group("");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a model file header");
  inspect_cmd->add_option("--model", model_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitConfig;
    }

    if (*train_cmd) {
      RunConfig rc;
      if (!config_path.empty()) rc = RunConfig::overlay(rc, read_json_file(config_path));
      if (const char* env = std::getenv("SPSLU_SEED")) {
        rc.model.seed = parse_seed_env(env);
      }
      json given = json::object();
      for (const auto& [key, opt] : flags) {
        if (opt->count() == 0) continue;
        if (key == "data") given[key] = data;
        else if (key == "out") given[key] = out_dir;
        else if (key == "variant") given[key] = variant;
        else if (key == "seed") given[key] = seed;
        else if (key == "epochs") given[key] = epochs;
        else if (key == "batch-size") given[key] = batch;
        else if (key == "patience") given[key] = patience;
        else if (key == "lr") given[key] = lr;
        else if (key == "emb-dim") given[key] = emb;
        else if (key == "lstm-hidden") given[key] = hidden;
        else if (key == "attn-dim") given[key] = attn;
        else if (key == "intent-dec-hidden") given[key] = idec;
        else if (key == "slot-dec-hidden") given[key] = sdec;
        else if (key == "dropout") given[key] = dropout;
        else if (key == "l2") given[key] = l2;
        else if (key == "teacher-forcing") given[key] = teacher;
        else if (key == "train-limit") given[key] = train_limit;
      }
      rc = RunConfig::overlay(rc, given);
      return cmd_train(rc, out, err);
    }
    if (*eval_cmd) return cmd_eval(model_path, data, split, as_json, out);
    if (*predict_cmd) {
      const auto tokens = split_words(text);
      if (tokens.empty()) throw ConfigError("--text is empty");
      const TrainedModel model = load_model(model_path);
      std::optional<std::string> gold;
      if (predict_intent->count()) gold = gold_intent;
      print_prediction(model, tokens, gold, verbose, out);
      return kExitOk;
    }
    if (*demo_cmd) {
      const TrainedModel model = load_model(model_path);
      std::optional<std::string> gold;
      if (demo_intent->count()) gold = gold_intent;
      for (std::string line; std::getline(in, line);) {
        const auto tokens = split_words(line);
        if (tokens.empty()) {
          err << "warning: empty input line skipped\n";
          continue;
        }
        print_prediction(model, tokens, gold, verbose, out);
        out.flush();
      }
      return kExitOk;
    }
    if (*grad_cmd) {
      return cmd_gradcheck(size, threshold, epsilon, grad_variant, fixture_seed, inject_fault,
                           out);
    }
    if (*inspect_cmd) {
      out << read_model_header(model_path).dump(2) << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitConfig;
}

}  // namespace spslu
