#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spslu/model.hpp"
#include "spslu/trainer.hpp"

namespace spslu {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitData = 2,
  kExitNumeric = 3,
  kExitGradCheck = 4,
};

/// Everything a training run needs.
struct RunConfig {
  ModelConfig model;
  TrainOptions train;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  /// Keep only the first N training utterances (0 keeps all).
  std::size_t train_limit = 0;

  /// Flat object keyed by flag name.
  nlohmann::json to_json() const;
  /// Overlays the keys present in `j` onto `base`. Unknown keys and
  /// ill-typed values throw ConfigError.
  static RunConfig overlay(const RunConfig& base, const nlohmann::json& j);
  void validate() const;
};

/// Flag names accepted in a config file.
const std::vector<std::string>& run_config_keys();

/// Entry point behind the `spslu` executable; `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err, std::istream& in);

}  // namespace spslu
