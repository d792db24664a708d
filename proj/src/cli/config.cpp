#include <charconv>
#include <fmt/format.h>
#include <functional>
#include <sstream>

#include "sgac/cli.hpp"
#include "sgac/errors.hpp"

namespace sgac {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto s = trim(text);
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw ConfigError(fmt::format("{}: cannot parse '{}'", key, text));
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, text));
}

std::vector<std::string> parse_list(std::string_view text) {
  std::vector<std::string> out;
  std::stringstream ss{std::string(text)};
  for (std::string item; std::getline(ss, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

struct Field {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field number(std::string_view key, T RunConfig::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); },
          [=](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt::format("{:.17g}", c.*member);
            else return fmt::format("{}", c.*member);
          }};
}

Field text(std::string_view key, std::string RunConfig::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*member = trim(v); },
          [=](const RunConfig& c) { return c.*member; }};
}

Field list(std::string_view key, std::vector<std::string> RunConfig::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*member = parse_list(v); },
          [=](const RunConfig& c) { return join(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      number("lambda", &RunConfig::lambda),
      {"bitsback", [](RunConfig& c, std::string_view v) { c.bitsback = parse_bool("bitsback", v); },
       [](const RunConfig& c) { return std::string(c.bitsback ? "true" : "false"); }},
      number("steps", &RunConfig::steps),
      number("batch", &RunConfig::batch),
      number("lr", &RunConfig::lr),
      number("seed", &RunConfig::seed),
      text("corpus", &RunConfig::corpus),
      number("corpus_count", &RunConfig::corpus_count),
      number("corpus_size", &RunConfig::corpus_size),
      number("corpus_seed", &RunConfig::corpus_seed),
      text("method", &RunConfig::method),
      number("inference_steps", &RunConfig::inference_steps),
      number("bbvi_steps", &RunConfig::bbvi_steps),
      number("tau0", &RunConfig::tau0),
      number("tau_rate", &RunConfig::tau_rate),
      number("tau_hold", &RunConfig::tau_hold),
      text("checkpoint", &RunConfig::checkpoint),
      list("checkpoints", &RunConfig::checkpoints),
      text("input", &RunConfig::input),
      text("output", &RunConfig::output),
      text("side_info", &RunConfig::side_info),
      text("side_info_out", &RunConfig::side_info_out),
      text("reference", &RunConfig::reference),
      list("methods", &RunConfig::methods),
      number("side_info_bytes", &RunConfig::side_info_bytes),
  };
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::stringstream ss{std::string(text)};
  int line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected key = value", line_no));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("config line {}: empty key", line_no));
    out[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const Field& f : fields())
    if (f.key == key) return f.set(cfg, value);
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += fmt::format("{} = {}\n", f.key, f.get(cfg));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

}  // namespace sgac
