// cgnet command-line driver: synth, train, eval, infer, info, gradcheck.

#include "cgnet/checkpoint.hpp"
#include "cgnet/errors.hpp"
#include "cgnet/gradcheck.hpp"
#include "cgnet/metrics.hpp"
#include "cgnet/parallel.hpp"
#include "cgnet/run_config.hpp"
#include "cgnet/trainer.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace cgnet;

namespace {

// Boolean keys are exposed as switches named after the non-default direction.
const std::map<std::string, std::pair<std::string, std::string>> kSwitches = {
    {"injection", {"--no-injection", "false"}},
    {"glo", {"--no-glo", "false"}},
    {"interchannel_1x1", {"--interchannel-1x1", "true"}},
    {"mirror", {"--no-mirror", "false"}},
};

struct KeyFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::string config_path;
};

void add_key_flags(CLI::App* app, KeyFlags& flags, bool network_only) {
  const RunConfig defaults;
  app->add_option("--config", flags.config_path, "key = value config file; flags override it");
  for (const auto& k : config_keys()) {
    if (network_only && !k.network) continue;
    if (auto sw = kSwitches.find(k.name); sw != kSwitches.end()) {
      flags.switches[k.name] = false;
      app->add_flag(sw->second.first, flags.switches[k.name], k.help + " (default " + k.get(defaults) + ")");
      continue;
    }
    std::string flag = "--" + k.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    app->add_option(flag, flags.values[k.name], k.help)->default_str(k.get(defaults));
  }
}

RunConfig resolve(const CLI::App* app, const KeyFlags& flags) {
  RunConfig cfg;
  if (!flags.config_path.empty()) apply_config_file(cfg, flags.config_path);
  for (const auto& [key, value] : flags.values) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (app->count(flag) > 0) apply_key(cfg, key, value);
  }
  for (const auto& [key, on] : flags.switches)
    if (on) apply_key(cfg, key, kSwitches.at(key).second);
  return cfg;
}

int cmd_synth(std::uint64_t seed, int count, int size, int classes, const std::string& out) {
  std::cout << gen_synthetic(seed, count, size, classes, out).string() << '\n';
  return 0;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

int cmd_train(const CLI::App* app, const KeyFlags& flags, const std::string& resume, int stop_at) {
  RunConfig cfg = resolve(app, flags);
  if (cfg.manifest.empty()) throw std::invalid_argument("train: no manifest given (--manifest or config key manifest)");

  std::optional<CGNet<float>> model;
  TrainState state;
  if (!resume.empty()) {
    const Checkpoint ckpt = read_checkpoint(resume);
    const NetworkConfig stored = checkpoint_config(ckpt);
    for (const auto& k : config_keys()) {
      if (!k.network || cfg.explicit_keys.count(k.name) == 0) continue;
      RunConfig probe = cfg;
      probe.net = stored;
      if (k.get(probe) != k.get(cfg))
        throw std::invalid_argument("train: --" + k.name + " differs from the resumed checkpoint (" + k.get(probe) + ")");
    }
    cfg.net = stored;
    state = checkpoint_state(ckpt);
    cfg.train.seed = state.seed;
    cfg.train.means = state.means;
    cfg.means_given = true;
    model.emplace(restore_model(ckpt));
  }
  validate(cfg);

  const Manifest manifest = read_manifest(cfg.manifest);
  if (manifest.num_classes != cfg.net.num_classes)
    throw std::invalid_argument("train: manifest has " + std::to_string(manifest.num_classes) + " classes, network " +
                                std::to_string(cfg.net.num_classes));
  const std::vector<Sample> data = load_samples(manifest);
  if (!cfg.means_given) {
    const auto m = compute_means(data);
    cfg.train.means = {static_cast<float>(m[0]), static_cast<float>(m[1]), static_cast<float>(m[2])};
    cfg.means_given = true;
  }
  state.seed = cfg.train.seed;
  state.means = cfg.train.means;
  if (!model) model.emplace(cfg.net, cfg.train.seed);

  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  std::cout << "# effective config\n";
  write_run_config(std::cout, cfg);
  {
    std::ofstream echo(out / "config.txt");
    write_run_config(echo, cfg);
  }
  std::cout << "# threads " << num_threads() << ", params " << model->count_params() << ", images " << data.size()
            << ", start iter " << state.iter << std::endl;

  // The loss log keeps the records before the resume point, so a resumed run
  // leaves the same file as an unbroken one.
  const fs::path log_path = out / "train.log";
  std::vector<std::string> kept;
  if (state.iter > 0)
    for (const auto& l : read_lines(log_path))
      if (!l.empty() && std::stoi(l) < state.iter) kept.push_back(l);
  std::ofstream log(log_path, std::ios::trunc);
  for (const auto& l : kept) log << l << '\n';

  const int every = std::max(1, cfg.train.max_iter / 20);
  TrainHooks hooks;
  hooks.stop_at = stop_at;
  hooks.on_record = [&](const LogRecord& r) {
    const std::string line = format_log_line(r);
    log << line << '\n';
    if (r.iter % every == 0 || r.iter + 1 == cfg.train.max_iter) std::cout << line << std::endl;
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%06d.cgn", s.iter);
    save_checkpoint((out / name).string(), *model, s);
    log.flush();
  };
  state = train_loop(*model, data, cfg.train, state, hooks);
  log.close();
  const std::string final_name = state.iter >= cfg.train.max_iter ? "final.cgn" : "stopped.cgn";
  save_checkpoint((out / final_name).string(), *model, state);
  std::cout << (out / final_name).string() << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path, const std::string& categories, bool csv,
             const std::string& out_path) {
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const CGNet<float> model = restore_model(ckpt);
  const TrainState state = checkpoint_state(ckpt);
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.num_classes != model.config().num_classes)
    throw std::invalid_argument("eval: checkpoint has " + std::to_string(model.config().num_classes) + " classes, manifest " +
                                std::to_string(manifest.num_classes));
  std::optional<std::vector<int>> map;
  if (!categories.empty()) map = read_category_map(categories, manifest.num_classes);
  const EvalReport report = evaluate(model, load_samples(manifest), state.means, map ? &*map : nullptr);
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot open '" + out_path + "' for writing");
  }
  std::ostream& os = out_path.empty() ? std::cout : file;
  if (csv)
    write_report_csv(os, report);
  else
    write_report_text(os, report);
  return 0;
}

/// Class i gets hue i/K at full saturation and value.
std::array<float, 3> palette(int cls, int K) {
  if (cls == kIgnoreLabel || cls < 0 || cls >= K) return {0, 0, 0};
  const double h = 6.0 * cls / K;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const float q = static_cast<float>(255 * (1 - f)), t = static_cast<float>(255 * f);
  switch (sector) {
    case 0: return {255, t, 0};
    case 1: return {q, 255, 0};
    case 2: return {0, 255, t};
    case 3: return {0, q, 255};
    case 4: return {t, 0, 255};
    default: return {255, 0, q};
  }
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path, const std::string& out_path,
              const std::string& color_path) {
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const CGNet<float> model = restore_model(ckpt);
  const Labels pred = predict(model, read_ppm(image_path), checkpoint_state(ckpt).means);
  write_pgm(out_path, pred);
  if (!color_path.empty()) {
    Tensor<float> img(Dims{1, 3, pred.h, pred.w});
    for (int i = 0; i < pred.h; ++i)
      for (int j = 0; j < pred.w; ++j) {
        const auto rgb = palette(pred.at(0, i, j), model.config().num_classes);
        for (int c = 0; c < 3; ++c) img.at(0, c, i, j) = rgb[static_cast<std::size_t>(c)];
      }
    write_ppm(color_path, img);
  }
  return 0;
}

int cmd_info(const CLI::App* app, const KeyFlags& flags, int height, int width) {
  RunConfig cfg = resolve(app, flags);
  cfg.net.validate();
  const CGNet<float> model(cfg.net, 0);
  write_run_config(std::cout, cfg, true);
  const std::size_t params = model.count_params();
  const std::uint64_t flops = model.estimate_flops(height, width);
  std::printf("params %zu (%.2f M)\n", params, params / 1e6);
  std::printf("flops %llu (%.2f G) at 3x%dx%d\n", static_cast<unsigned long long>(flops), flops / 1e9, height, width);
  return 0;
}

int cmd_gradcheck(double tol, double net_tol, std::uint64_t seed, bool kernels_only) {
  const GradReport k = gradcheck_kernels(tol, seed);
  std::cout << "# kernels\n";
  write_grad_report(std::cout, k);
  bool ok = k.passed();
  if (!kernels_only) {
    const GradReport n = gradcheck_network(net_tol, seed);
    std::cout << "# micro network\n";
    write_grad_report(std::cout, n);
    ok = ok && n.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CGNet semantic segmentation: synthesize data, train, evaluate, infer"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic shapes dataset and its manifest");
  std::uint64_t synth_seed = 7;
  int synth_count = 20, synth_size = 64, synth_classes = 4;
  std::string synth_out = "synthetic";
  synth->add_option("--seed", synth_seed, "dataset seed")->capture_default_str();
  synth->add_option("--count", synth_count, "number of image/label pairs")->capture_default_str();
  synth->add_option("--size", synth_size, "square image side, multiple of 8")->capture_default_str();
  synth->add_option("--classes", synth_classes, "number of classes K (3..8)")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and train.log into out_dir");
  KeyFlags train_flags;
  add_key_flags(train, train_flags, false);
  std::string resume;
  int stop_at = -1;
  train->add_option("--resume", resume, "continue from a checkpoint");
  train->add_option("--stop-at", stop_at, "stop after this many completed iterations and write stopped.cgn");

  auto* eval = app.add_subcommand("eval", "single-scale evaluation of a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest, eval_categories, eval_out;
  bool eval_csv = false;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "evaluation manifest")->required();
  eval->add_option("--categories", eval_categories, "class-to-category map for mIoU_cat");
  eval->add_flag("--csv", eval_csv, "write CSV instead of text");
  eval->add_option("--out", eval_out, "report path (default stdout)");

  auto* infer = app.add_subcommand("infer", "predict a label map for one PPM image");
  std::string infer_ckpt, infer_image, infer_out, infer_color;
  infer->add_option("--checkpoint", infer_ckpt, "model checkpoint")->required();
  infer->add_option("--image", infer_image, "input PPM image")->required();
  infer->add_option("--out", infer_out, "output PGM label map")->required();
  infer->add_option("--color", infer_color, "optional color-coded PPM");

  auto* info = app.add_subcommand("info", "parameter count and FLOPs for a network configuration");
  KeyFlags info_flags;
  add_key_flags(info, info_flags, true);
  int info_h = 360, info_w = 640;
  info->add_option("--height", info_h, "input height for FLOPs")->capture_default_str();
  info->add_option("--width", info_w, "input width for FLOPs")->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every kernel and a micro network (f64)");
  double tol = 1e-4, net_tol = 1e-3;
  std::uint64_t grad_seed = 1;
  bool kernels_only = false;
  grad->add_option("--tol", tol, "max relative error for kernels")->capture_default_str();
  grad->add_option("--net-tol", net_tol, "max relative error for the micro network")->capture_default_str();
  grad->add_option("--seed", grad_seed, "seed for inputs and weights")->capture_default_str();
  grad->add_flag("--kernels-only", kernels_only, "skip the network check");

  CLI11_PARSE(app, argc, argv);

  try {
    init_threads_from_env();
    if (*synth) return cmd_synth(synth_seed, synth_count, synth_size, synth_classes, synth_out);
    if (*train) return cmd_train(train, train_flags, resume, stop_at);
    if (*eval) return cmd_eval(eval_ckpt, eval_manifest, eval_categories, eval_csv, eval_out);
    if (*infer) return cmd_infer(infer_ckpt, infer_image, infer_out, infer_color);
    if (*info) return cmd_info(info, info_flags, info_h, info_w);
    if (*grad) return cmd_gradcheck(tol, net_tol, grad_seed, kernels_only);
  } catch (const std::exception& e) {
    std::cerr << "cgnet: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
