#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "sgac/cli.hpp"
#include "sgac/errors.hpp"

using namespace sgac;

namespace {

const std::map<std::string, std::string> kHelp{
    {"lambda", "rate-distortion trade-off of a new model"},
    {"steps", "training steps"},
    {"batch", "training minibatch size"},
    {"lr", "training learning rate"},
    {"seed", "seed for initialization, training and compression-time sampling"},
    {"corpus", "'synthetic', a PNG directory, or a comma list of PNG files"},
    {"corpus_count", "maximum number of corpus images"},
    {"corpus_size", "corpus tile size in pixels"},
    {"corpus_seed", "synthetic corpus seed"},
    {"method", "round, M1/sga, A1/map, A2/ste, A3/uniform, A4/det_anneal, M2/bitsback, A5, A6"},
    {"inference_steps", "compression-time optimization steps"},
    {"bbvi_steps", "hyperlatent posterior refinement steps (bits-back)"},
    {"tau0", "initial annealing temperature"},
    {"tau_rate", "temperature decay rate"},
    {"tau_hold", "steps before the temperature decays"},
    {"checkpoint", "model checkpoint"},
    {"checkpoints", "comma list of checkpoints (ablate)"},
    {"input", "input image, bitstream, or results file"},
    {"output", "output checkpoint, bitstream, PNG, directory, or report"},
    {"side_info", "side-information file consumed by bits-back compression"},
    {"side_info_out", "where bits-back decompression writes recovered side information"},
    {"reference", "original image for PSNR at decompression"},
    {"methods", "comma list of methods (ablate); default all"},
    {"side_info_bytes", "random side information per image in bits-back ablations"},
};

std::string flag_name(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

struct Flags {
  std::string config_file;
  bool bitsback = false;
  std::map<std::string, std::string> values;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& about, Flags& flags) {
  CLI::App* sub = app.add_subcommand(name, about);
  sub->add_option("--config", flags.config_file, "key = value file; flags win on conflict");
  for (const std::string& key : config_keys()) {
    if (key == "bitsback") {
      sub->add_flag("--bitsback", flags.bitsback, "train a bits-back model (doubled hyper-analysis output)");
      continue;
    }
    sub->add_option(flag_name(key), flags.values[key], kHelp.at(key));
  }
  return sub;
}

RunConfig resolve(const CLI::App& sub, const Flags& flags) {
  RunConfig cfg;
  if (!flags.config_file.empty()) {
    std::ifstream in(flags.config_file);
    if (!in) throw ConfigError("cannot read config file " + flags.config_file);
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [key, value] : parse_config_text(ss.str())) apply_setting(cfg, key, value);
  }
  for (const auto& [key, value] : flags.values)
    if (sub.count(flag_name(key)) > 0) apply_setting(cfg, key, value);
  if (flags.bitsback) cfg.bitsback = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lossy image compression with stochastic Gumbel annealing and bits-back coding"};
  app.require_subcommand(1);
  Flags flags;
  const std::map<std::string, void (*)(const RunConfig&, std::ostream&)> commands{
      {"train", cmd_train}, {"compress", cmd_compress}, {"decompress", cmd_decompress},
      {"ablate", cmd_ablate}, {"report", cmd_report}};
  add_command(app, "train", "train a model on the corpus and write a checkpoint", flags);
  add_command(app, "compress", "encode a PNG into a bitstream", flags);
  add_command(app, "decompress", "decode a bitstream into a PNG", flags);
  add_command(app, "ablate", "run methods over a corpus and write results and a report", flags);
  add_command(app, "report", "summarize a results CSV or JSON file", flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    commands.at(sub->get_name())(resolve(*sub, flags), std::cout);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << '\n';
    return kExitProtocol;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
