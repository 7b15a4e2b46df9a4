#include "cgnet/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cgnet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || text.empty())
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + text + "' as a number");
  return v;
}

int parse_int(const std::string& key, const std::string& text) { return parse_number<int>(key, text); }
double parse_double(const std::string& key, const std::string& text) { return parse_number<double>(key, text); }

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string join(const auto& values) {
  std::string s;
  for (const auto& v : values) s += (s.empty() ? "" : ",") + fmt(static_cast<double>(v));
  return s;
}

template <typename Field>
ConfigKey int_key(const std::string& name, const std::string& help, Field field, bool network) {
  return {name, help, [name, field](RunConfig& c, const std::string& v) { field(c) = parse_int(name, v); },
          [field](const RunConfig& c) { return std::to_string(field(c)); }, network};
}

template <typename Field>
ConfigKey double_key(const std::string& name, const std::string& help, Field field) {
  return {name, help, [name, field](RunConfig& c, const std::string& v) { field(c) = parse_double(name, v); },
          [field](const RunConfig& c) { return fmt(field(c)); }, false};
}

template <typename Field>
ConfigKey bool_key(const std::string& name, const std::string& help, Field field, bool network) {
  return {name, help, [name, field](RunConfig& c, const std::string& v) { field(c) = parse_bool(name, v); },
          [field](const RunConfig& c) { return std::string(field(c) ? "true" : "false"); }, network};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back(int_key("M", "CG blocks in stage 2", [](auto& c) -> auto& { return c.net.M; }, true));
  k.push_back(int_key("N", "CG blocks in stage 3", [](auto& c) -> auto& { return c.net.N; }, true));
  k.push_back(int_key("classes", "number of classes K", [](auto& c) -> auto& { return c.net.num_classes; }, true));
  k.push_back({"channels", "stage widths c1,c2,c3",
               [](RunConfig& c, const std::string& v) {
                 const auto items = split_list(v);
                 if (items.size() != 3) throw std::invalid_argument("config key 'channels': expected three comma-separated widths");
                 for (int i = 0; i < 3; ++i) c.net.channels[static_cast<std::size_t>(i)] = parse_int("channels", items[static_cast<std::size_t>(i)]);
               },
               [](const RunConfig& c) {
                 return std::to_string(c.net.channels[0]) + "," + std::to_string(c.net.channels[1]) + "," +
                        std::to_string(c.net.channels[2]);
               },
               true});
  k.push_back(int_key("dilation2", "surrounding-context dilation in stage 2", [](auto& c) -> auto& { return c.net.dilation2; }, true));
  k.push_back(int_key("dilation3", "surrounding-context dilation in stage 3", [](auto& c) -> auto& { return c.net.dilation3; }, true));
  k.push_back(bool_key("injection", "inject the downsampled image into stages 2 and 3",
                       [](auto& c) -> auto& { return c.net.input_injection; }, true));
  k.push_back({"sur_mode", "surrounding context: none, single (last block only) or full",
               [](RunConfig& c, const std::string& v) { c.net.sur_mode = parse_sur_mode(v); },
               [](const RunConfig& c) { return to_string(c.net.sur_mode); }, true});
  k.push_back(bool_key("glo", "global context gate", [](auto& c) -> auto& { return c.net.use_glo; }, true));
  k.push_back({"residual", "block residual: none, lrl or grl",
               [](RunConfig& c, const std::string& v) { c.net.residual = parse_residual(v); },
               [](const RunConfig& c) { return to_string(c.net.residual); }, true});
  k.push_back({"activation", "relu or prelu",
               [](RunConfig& c, const std::string& v) { c.net.activation = parse_activation(v); },
               [](const RunConfig& c) { return to_string(c.net.activation); }, true});
  k.push_back(bool_key("interchannel_1x1", "1x1 conv after the channel-wise pair",
                       [](auto& c) -> auto& { return c.net.interchannel_1x1; }, true));
  k.push_back(int_key("glo_reduction", "gate hidden width divisor", [](auto& c) -> auto& { return c.net.glo_reduction; }, true));

  k.push_back(double_key("base_lr", "initial learning rate", [](auto& c) -> auto& { return c.train.base_lr; }));
  k.push_back(double_key("power", "poly schedule exponent", [](auto& c) -> auto& { return c.train.power; }));
  k.push_back(int_key("max_iter", "training iterations", [](auto& c) -> auto& { return c.train.max_iter; }, false));
  k.push_back(int_key("batch_size", "images per iteration", [](auto& c) -> auto& { return c.train.batch_size; }, false));
  k.push_back(double_key("beta1", "ADAM beta1", [](auto& c) -> auto& { return c.train.beta1; }));
  k.push_back(double_key("beta2", "ADAM beta2", [](auto& c) -> auto& { return c.train.beta2; }));
  k.push_back(double_key("weight_decay", "L2 weight decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
  k.push_back(double_key("adam_eps", "ADAM epsilon", [](auto& c) -> auto& { return c.train.adam_eps; }));
  k.push_back({"seed", "random seed",
               [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
               [](const RunConfig& c) { return std::to_string(c.train.seed); }, false});
  k.push_back(int_key("crop", "training crop size", [](auto& c) -> auto& { return c.train.crop; }, false));
  k.push_back({"scales", "random scale set",
               [](RunConfig& c, const std::string& v) {
                 c.train.scales.clear();
                 for (const auto& s : split_list(v)) c.train.scales.push_back(parse_double("scales", s));
               },
               [](const RunConfig& c) { return join(c.train.scales); }, false});
  k.push_back(bool_key("mirror", "random horizontal mirror", [](auto& c) -> auto& { return c.train.mirror; }, false));
  k.push_back({"means", "per-channel RGB means, or auto to compute them from the training set",
               [](RunConfig& c, const std::string& v) {
                 if (v == "auto") {
                   c.means_given = false;
                   return;
                 }
                 const auto items = split_list(v);
                 if (items.size() != 3) throw std::invalid_argument("config key 'means': expected auto or three comma-separated values");
                 for (int i = 0; i < 3; ++i)
                   c.train.means[static_cast<std::size_t>(i)] = static_cast<float>(parse_double("means", items[static_cast<std::size_t>(i)]));
                 c.means_given = true;
               },
               [](const RunConfig& c) { return c.means_given ? join(c.train.means) : std::string("auto"); }, false});
  k.push_back(int_key("ignore_index", "label excluded from loss and metrics", [](auto& c) -> auto& { return c.train.ignore_index; }, false));
  k.push_back({"loss_reduction", "mean or sum over valid pixels",
               [](RunConfig& c, const std::string& v) {
                 if (v == "mean")
                   c.train.loss_reduction = LossReduction::kMean;
                 else if (v == "sum")
                   c.train.loss_reduction = LossReduction::kSum;
                 else
                   throw std::invalid_argument("config key 'loss_reduction': expected mean or sum, got '" + v + "'");
               },
               [](const RunConfig& c) { return std::string(c.train.loss_reduction == LossReduction::kMean ? "mean" : "sum"); }, false});
  k.push_back(int_key("checkpoint_interval", "iterations between checkpoints (0 = final only)",
                      [](auto& c) -> auto& { return c.train.checkpoint_interval; }, false));
  k.push_back({"manifest", "training manifest", [](RunConfig& c, const std::string& v) { c.manifest = v; },
               [](const RunConfig& c) { return c.manifest; }, false});
  k.push_back({"out_dir", "directory for checkpoints and the loss log", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
               [](const RunConfig& c) { return c.out_dir; }, false});
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey& config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw std::invalid_argument("unknown config key '" + name + "'");
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  config_key(key).set(cfg, trim(value));
  cfg.explicit_keys.insert(key);
}

void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected 'key = value'");
    try {
      apply_key(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  apply_config_text(cfg, in, path);
}

void write_run_config(std::ostream& os, const RunConfig& cfg, bool network_only) {
  for (const auto& k : config_keys()) {
    if (network_only && !k.network) continue;
    os << k.name << " = " << k.get(cfg);
    if (cfg.explicit_keys.count(k.name) == 0) os << "  # default";
    os << '\n';
  }
}

void validate(const RunConfig& cfg) {
  cfg.net.validate();
  cfg.train.validate();
  detail::require(cfg.train.ignore_index >= cfg.net.num_classes || cfg.train.ignore_index < 0,
                  "ignore_index " + std::to_string(cfg.train.ignore_index) + " collides with a class id");
}

}  // namespace cgnet
