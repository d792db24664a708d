#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sgac/bench.hpp"

namespace sgac {

/// Parameters shared by every command; each field is also a config-file key and a --flag.
struct RunConfig {
  // Model and training.
  double lambda = 0.01;
  bool bitsback = false;
  int steps = 5000;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  // Corpus: "synthetic" or a directory / comma list of PNG files cut into tiles.
  std::string corpus = "synthetic";
  Index corpus_count = 64;
  Index corpus_size = 32;
  std::uint64_t corpus_seed = 1;
  // Compression-time inference.
  std::string method = "round";
  int inference_steps = 2000;
  int bbvi_steps = 2000;
  double tau0 = 0.5;
  double tau_rate = 0.001;
  int tau_hold = 700;
  // Paths.
  std::string checkpoint;
  std::vector<std::string> checkpoints;
  std::string input;
  std::string output;
  std::string side_info;
  std::string side_info_out;
  std::string reference;
  // Ablation.
  std::vector<std::string> methods;
  std::size_t side_info_bytes = 512;

  bool operator==(const RunConfig&) const = default;
};

/// Flat "key = value" text; '#' starts a comment; lists are comma separated.
std::map<std::string, std::string> parse_config_text(std::string_view text);
/// Sets one field by key; ConfigError on unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);
/// Every key with its current value; parses back to an equal RunConfig.
std::string serialize_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

/// Synthetic corpus or PNG tiles, per the config.
std::vector<Tensor> load_corpus(const RunConfig& cfg);

/// Commands write human-readable progress to `log`. Errors propagate as sgac exceptions.
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_compress(const RunConfig& cfg, std::ostream& log);
void cmd_decompress(const RunConfig& cfg, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, std::ostream& log);
void cmd_report(const RunConfig& cfg, std::ostream& log);

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitProtocol = 3, kExitNumeric = 4 };

}  // namespace sgac
