#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fpba/archive.hpp"
#include "fpba/attacks.hpp"
#include "fpba/bayes.hpp"
#include "fpba/checkpoint.hpp"
#include "fpba/config.hpp"
#include "fpba/data.hpp"
#include "fpba/error.hpp"
#include "fpba/eval.hpp"
#include "fpba/frequency.hpp"
#include "fpba/image_io.hpp"
#include "fpba/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fpba::cli {

namespace {

class MissingInput : public Error {
 public:
  using Error::Error;
};

class ArtifactExists : public Error {
 public:
  using Error::Error;
};

fs::path require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InvalidParameter("no " + what + " given");
  if (!fs::exists(path)) throw MissingInput(what + " '" + path + "' not found");
  return path;
}

// Artifact directories are write-once.
fs::path stage_dir(const RunConfig& cfg, const std::string& stage) {
  const fs::path dir = fs::path(cfg.out_dir) / stage / cfg.name;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    throw ArtifactExists("artifact directory '" + dir.string() + "' already exists; choose another --name or --out");
  }
  fs::create_directories(dir);
  save_run_config(dir / "run_config.json", cfg);
  return dir;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw InvalidParameter("unknown split '" + s + "'");
}

std::string input(const RunConfig& cfg, const std::string& key, const std::string& fallback = "") {
  const auto it = cfg.inputs.find(key);
  return it == cfg.inputs.end() ? fallback : it->second;
}

std::vector<std::pair<std::string, std::string>> inputs_with_prefix(const RunConfig& cfg, const std::string& prefix) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, v] : cfg.inputs) {
    if (k.rfind(prefix, 0) == 0) out.emplace_back(k.substr(prefix.size()), v);
  }
  return out;
}

std::string default_data(const RunConfig& cfg) {
  return (fs::path(cfg.out_dir) / "data" / "default" / "dataset.npz").string();
}

LabeledDataset load_dataset(const RunConfig& cfg) {
  return LabeledDataset::load(require_file(input(cfg, "data", default_data(cfg)), "dataset"));
}

Detector load_checkpoint(const std::string& path) { return load_detector(require_file(path, "detector checkpoint")); }

// Splits "name=path".
std::pair<std::string, std::string> named_path(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw InvalidParameter("expected NAME=PATH, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Stages

int run_gen_data(RunConfig cfg) {
  if (cfg.name.empty()) cfg.name = "default";
  const std::string real_dir = input(cfg, "real_dir");
  const std::string fake_dir = input(cfg, "fake_dir");
  LabeledDataset d;
  json extra = json::object();
  if (!real_dir.empty() || !fake_dir.empty()) {
    if (real_dir.empty() || fake_dir.empty()) throw InvalidParameter("--real-dir and --fake-dir go together");
    require_file(real_dir, "real image folder");
    require_file(fake_dir, "fake image folder");
    auto real = load_image_folder(real_dir, 0, cfg.data.split, cfg.data.image_size, cfg.data.channels);
    auto fake = load_image_folder(fake_dir, 1, cfg.data.split, cfg.data.image_size, cfg.data.channels);
    d = concat({real.dataset, fake.dataset});
    extra = {{"skipped", real.skipped + fake.skipped}, {"duplicates", real.duplicates + fake.duplicates}};
  } else {
    d = synth_dataset(cfg.data);
  }
  d.validate();
  const fs::path dir = stage_dir(cfg, "data");
  d.save(dir / "dataset.npz");
  json manifest = d.manifest();
  if (!extra.empty()) manifest["import"] = extra;
  write_json(dir / "dataset_manifest.json", manifest);
  std::cout << "dataset: " << d.size() << " images -> " << (dir / "dataset.npz").string() << "\n";
  return kOk;
}

int run_train(RunConfig cfg) {
  if (cfg.name.empty()) cfg.name = cfg.arch;
  const LabeledDataset d = load_dataset(cfg);
  const fs::path dir = stage_dir(cfg, "detectors");
  std::ostringstream history;
  history << "epoch,train_loss,train_accuracy,val_accuracy\n";
  TrainConfig tc = cfg.train;
  tc.on_epoch = [&](const EpochStats& s) {
    history << s.epoch << ',' << s.train_loss << ',' << s.train_accuracy << ',' << s.val_accuracy << '\n';
    std::cerr << "epoch " << s.epoch << " loss " << s.train_loss << " val " << s.val_accuracy << "\n";
  };
  Detector det = train_detector(parse_arch(cfg.arch), d, cfg.augment, tc);
  det.set_name(cfg.name);
  save_detector(dir / "detector.npz", det);
  write_text(dir / "history.csv", history.str());
  std::cout << "detector " << cfg.name << ": val accuracy " << det.record.val_accuracy << "\n";
  return kOk;
}

int run_bayes_train(RunConfig cfg) {
  if (cfg.name.empty()) cfg.name = "default";
  const Detector base = load_checkpoint(input(cfg, "detector"));
  const LabeledDataset d = load_dataset(cfg);
  const fs::path dir = stage_dir(cfg, "ensembles");
  std::ostringstream chains;
  chains << "iteration,head,loss\n";
  PostTrainConfig pc = cfg.bayes;
  pc.on_step = [&](std::size_t j, std::size_t k, double loss) { chains << j << ',' << k << ',' << loss << '\n'; };
  const BayesEnsemble e = post_train(base, d, pc);
  e.save(dir / "ensemble.npz");
  write_text(dir / "chains.csv", chains.str());
  const auto val = d.view(Split::Val);
  json summary = {{"base_checksum", hex64(e.base_checksum())}, {"heads", e.size()}, {"sampler", e.sampler_manifest()}};
  if (val.images.shape().n > 0) {
    const auto p = e.bma_predict(val.images);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < p.size(); ++i) ok += (p[i] > 0.5 ? 1 : 0) == val.labels[i];
    summary["bma_val_accuracy"] = static_cast<double>(ok) / static_cast<double>(p.size());
    summary["base_val_accuracy"] = accuracy(e.base(), val.images, val.labels);
  }
  write_json(dir / "summary.json", summary);
  std::cout << "ensemble: " << e.size() << " heads -> " << (dir / "ensemble.npz").string() << "\n";
  return kOk;
}

int run_attack_stage(RunConfig cfg) {
  const Method method = parse_method(cfg.method);
  if (cfg.name.empty()) cfg.name = cfg.method;
  const LabeledDataset d = load_dataset(cfg);
  const Detector det = load_checkpoint(input(cfg, "detector"));
  std::optional<BayesEnsemble> ens;
  std::vector<Detector> members;
  AttackTargets targets;
  targets.model = &det;
  if (method == Method::Fpba) {
    ens.emplace(BayesEnsemble::load(require_file(input(cfg, "ensemble"), "ensemble checkpoint"), det));
    targets.bayes = &*ens;
  }
  if (method == Method::Ensemble) {
    members.push_back(det);
    for (const auto& [_, path] : inputs_with_prefix(cfg, "member:")) members.push_back(load_checkpoint(path));
    for (const auto& m : members) targets.ensemble_members.push_back(&m);
  }

  // Only inputs the attacked model gets right are attacked.
  const auto split_idx = d.indices(parse_split(cfg.eval.split));
  const auto pool = d.view(split_idx);
  const auto correct = correctly_classified(det, pool.images, pool.labels);
  const auto chosen = balanced_subset(correct, pool.labels, cfg.eval.max_images);
  if (chosen.empty()) throw InvalidDataset("attack: no correctly classified inputs in the " + cfg.eval.split + " split");
  const Tensor x = pool.images.gather(chosen);
  Labels y;
  std::vector<std::int32_t> idx;
  for (std::size_t i : chosen) {
    y.push_back(pool.labels[i]);
    idx.push_back(static_cast<std::int32_t>(split_idx[i]));
  }

  const fs::path dir = stage_dir(cfg, "attacks");
  const AttackResult r = run_attack(method, targets, x, y, cfg.attack);
  const QualityReport q = image_quality(x, r.adversarial);

  Archive ar;
  const std::vector<std::size_t> shape = {x.shape().n, x.shape().c, x.shape().h, x.shape().w};
  ar.put("clean", make_array(x.values(), shape));
  ar.put("adversarial", make_array(r.adversarial.values(), shape));
  std::vector<std::int32_t> yl(y.begin(), y.end());
  ar.put("labels", make_array(std::span<const std::int32_t>(yl), {yl.size()}));
  ar.put("indices", make_array(std::span<const std::int32_t>(idx), {idx.size()}));
  ar.put("success", make_array(std::span<const std::uint8_t>(r.success), {r.success.size()}));
  ar.put("linf", make_array(r.linf, {r.linf.size()}));
  const json summary = {{"method", cfg.method},
                        {"attack", cfg.attack},
                        {"model", det.name()},
                        {"model_checksum", hex64(det.checksum())},
                        {"ensemble_checksum_base", ens ? hex64(ens->base_checksum()) : ""},
                        {"samples", x.shape().n},
                        {"iterations", r.iterations},
                        {"white_box_asr", 100.0 * r.success_fraction()},
                        {"max_linf", r.linf.empty() ? 0.0 : *std::max_element(r.linf.begin(), r.linf.end())},
                        {"quality", to_json(q)},
                        {"psnr_floor", cfg.attack.epsilon > 0 ? json(psnr_floor(cfg.attack.epsilon)) : json("inf")}};
  ar.put_text("manifest.json", summary.dump(2));
  ar.save(dir / "adversarial.npz");
  write_json(dir / "summary.json", summary);
  if (input(cfg, "png") == "1") {
    fs::create_directories(dir / "png");
    for (std::size_t n = 0; n < x.shape().n; ++n) {
      write_png(dir / "png" / (std::to_string(idx[n]) + "_adv.png"), to_image8(r.adversarial, n));
    }
  }
  std::cout << cfg.method << ": white-box ASR " << 100.0 * r.success_fraction() << "% on " << x.shape().n
            << " images, PSNR " << q.psnr << " dB\n";
  return kOk;
}

int run_eval_matrix(RunConfig& cfg) {
  const LabeledDataset d = load_dataset(cfg);
  const auto surr_paths = inputs_with_prefix(cfg, "surrogate:");
  const auto vict_paths = inputs_with_prefix(cfg, "victim:");
  if (surr_paths.empty() || vict_paths.empty()) throw InvalidParameter("eval --matrix needs --surrogate and --victim");
  std::vector<Method> methods;
  for (const auto& m : cfg.eval.methods) methods.push_back(parse_method(m));

  std::vector<Detector> surrogate_models;
  surrogate_models.reserve(surr_paths.size());
  for (const auto& [_, path] : surr_paths) surrogate_models.push_back(load_checkpoint(path));
  std::vector<std::optional<BayesEnsemble>> ensembles(surr_paths.size());
  for (std::size_t s = 0; s < surr_paths.size(); ++s) {
    const std::string p = input(cfg, "surrogate_ensemble:" + surr_paths[s].first);
    if (!p.empty()) ensembles[s].emplace(BayesEnsemble::load(require_file(p, "ensemble checkpoint"), surrogate_models[s]));
  }
  std::vector<Detector> victim_models;
  victim_models.reserve(vict_paths.size());
  for (const auto& [_, path] : vict_paths) victim_models.push_back(load_checkpoint(path));

  std::vector<Surrogate> surrogates;
  for (std::size_t s = 0; s < surr_paths.size(); ++s) {
    Surrogate sg{surr_paths[s].first, {}};
    sg.targets.model = &surrogate_models[s];
    for (const auto& m : surrogate_models) sg.targets.ensemble_members.push_back(&m);
    if (ensembles[s]) sg.targets.bayes = &*ensembles[s];
    for (Method m : methods) {
      if (m == Method::Fpba && !ensembles[s]) {
        throw MissingInput("fpba needs --surrogate-ensemble " + sg.name + "=PATH");
      }
    }
    surrogates.push_back(sg);
  }
  std::vector<Victim> victims;
  for (std::size_t v = 0; v < vict_paths.size(); ++v) victims.push_back({vict_paths[v].first, &victim_models[v]});

  const auto split_idx = d.indices(parse_split(cfg.eval.split));
  const auto chosen = balanced_subset(split_idx, d.labels, cfg.eval.max_images);
  const auto pool = d.view(chosen);

  const fs::path dir = stage_dir(cfg, "eval");
  TransferConfig tc{cfg.attack, cfg.eval.min_valid};
  const TransferMatrix m = transfer_eval(surrogates, victims, methods, pool.images, pool.labels, tc);
  write_text(dir / "matrix.csv", m.to_csv());
  json j = m.to_json();
  json sums = json::object();
  for (std::size_t s = 0; s < surrogate_models.size(); ++s) sums[surr_paths[s].first] = hex64(surrogate_models[s].checksum());
  for (std::size_t v = 0; v < victim_models.size(); ++v) sums[vict_paths[v].first] = hex64(victim_models[v].checksum());
  j["checksums"] = sums;
  j["attack"] = cfg.attack;
  j["seed"] = cfg.seed;
  write_json(dir / "matrix.json", j);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::cout << m.surrogates[r] << "/" << m.attacks[r] << ": average transfer ASR " << m.average(r) << "%\n";
  }
  return kOk;
}

int run_eval_diagnostic(RunConfig& cfg) {
  const Detector det = load_checkpoint(input(cfg, "detector"));
  const fs::path attack_dir = require_file(input(cfg, "attack"), "attack artifact directory");
  const Archive ar = Archive::load(require_file((attack_dir / "adversarial.npz").string(), "attack artifact"));
  const NpyArray& a = ar.array("adversarial");
  if (a.shape.size() != 4) throw FormatError("attack artifact: adversarial array must be 4-D");
  Tensor adv(Shape{a.shape[0], a.shape[1], a.shape[2], a.shape[3]}, a.to_doubles());
  Labels y;
  for (auto v : ar.array("labels").to_ints()) y.push_back(static_cast<int>(v));
  const std::size_t n = std::min(cfg.eval.diagnostic_images, adv.shape().n);
  std::vector<std::size_t> first(n);
  std::iota(first.begin(), first.end(), 0);
  adv = adv.gather(first);
  y.resize(n);
  const fs::path dir = stage_dir(cfg, "eval");
  const GradientDiagnostic g =
      gradient_diagnostic(det, adv, y, cfg.eval.coords_per_image, cfg.eval.near_zero_threshold, cfg.seed);
  Archive out;
  out.put("components", make_array(g.samples, {g.images, g.coords_per_image}));
  out.put_text("manifest.json", to_json(g).dump(2));
  out.save(dir / "diagnostic.npz");
  json j = to_json(g);
  j["model_checksum"] = hex64(det.checksum());
  j["source_attack"] = json::parse(ar.text("manifest.json")).value("method", "");
  write_json(dir / "diagnostic.json", j);
  std::cout << "gradient diagnostic: " << g.samples.size() << " components, near-zero fraction "
            << g.near_zero_fraction << "\n";
  return kOk;
}

int run_eval(RunConfig cfg) {
  if (cfg.name.empty()) cfg.name = cfg.eval.mode;
  return cfg.eval.mode == "matrix" ? run_eval_matrix(cfg) : run_eval_diagnostic(cfg);
}

int run_saliency(RunConfig cfg) {
  if (cfg.name.empty()) cfg.name = "default";
  const Detector det = load_checkpoint(input(cfg, "detector"));
  const LabeledDataset d = load_dataset(cfg);
  const auto split_idx = d.indices(parse_split(cfg.eval.split));
  const auto pool = d.view(balanced_subset(split_idx, d.labels, cfg.eval.max_images));
  const fs::path dir = stage_dir(cfg, "saliency");
  const SaliencyMap s = spectrum_saliency(det, pool.images, pool.labels);
  const auto mean = s.channel_mean();
  Archive ar;
  ar.put("saliency", make_array(s.values, {s.channels, s.height, s.width}));
  ar.put("channel_mean", make_array(mean, {s.height, s.width}));
  // Share of saliency mass below / above half the maximal frequency radius.
  double low = 0.0, high = 0.0;
  for (std::size_t i = 0; i < s.height; ++i)
    for (std::size_t j = 0; j < s.width; ++j) {
      const double r = static_cast<double>(i + j) / static_cast<double>(s.height + s.width - 2);
      (r < 0.5 ? low : high) += mean[i * s.width + j];
    }
  const json summary = {{"model", det.name()},
                        {"model_checksum", hex64(det.checksum())},
                        {"images", pool.images.shape().n},
                        {"low_frequency_mass", low / std::max(low + high, 1e-300)},
                        {"high_frequency_mass", high / std::max(low + high, 1e-300)}};
  ar.put_text("manifest.json", summary.dump(2));
  ar.save(dir / "saliency.npz");
  write_heatmap_png(dir / "saliency.png", mean, s.height, s.width);
  write_json(dir / "summary.json", summary);
  std::cout << "saliency: high-frequency mass " << summary["high_frequency_mass"] << "\n";
  return kOk;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

std::vector<fs::path> sorted_subdirs(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int run_report(RunConfig cfg) {
  if (cfg.name.empty()) cfg.name = "default";
  const fs::path root = cfg.out_dir;
  json attacks = json::array(), matrices = json::array(), diagnostics = json::array(), saliency = json::array();
  std::ostringstream csv;
  csv << "attack_run,method,samples,white_box_asr,mse,psnr,ssim,psnr_floor\n";
  for (const auto& p : sorted_subdirs(root / "attacks")) {
    if (!fs::exists(p / "summary.json")) continue;
    json s = read_json(p / "summary.json");
    s["run"] = p.filename().string();
    const auto& q = s["quality"];
    csv << p.filename().string() << ',' << s["method"].get<std::string>() << ',' << s["samples"] << ','
        << s["white_box_asr"] << ',' << q["mse"] << ',' << q["psnr"] << ',' << q["ssim"] << ',' << s["psnr_floor"]
        << '\n';
    attacks.push_back(s);
  }
  for (const auto& p : sorted_subdirs(root / "eval")) {
    if (fs::exists(p / "matrix.json")) {
      json m = read_json(p / "matrix.json");
      m["run"] = p.filename().string();
      matrices.push_back(m);
    }
    if (fs::exists(p / "diagnostic.json")) {
      json g = read_json(p / "diagnostic.json");
      g["run"] = p.filename().string();
      diagnostics.push_back(g);
    }
  }
  for (const auto& p : sorted_subdirs(root / "saliency")) {
    if (!fs::exists(p / "summary.json")) continue;
    json s = read_json(p / "summary.json");
    s["run"] = p.filename().string();
    saliency.push_back(s);
  }
  // Full-scale reference magnitudes, shown next to desk-scale results.
  const json reference = {{"pgd", {{"mse", 30.00}, {"psnr", 33.51}, {"ssim", 0.88}}},
                          {"fpba", {{"mse", 16.08}, {"psnr", 36.26}, {"ssim", 0.94}}}};
  const json report = {{"attacks", attacks},
                       {"transfer_matrices", matrices},
                       {"gradient_diagnostics", diagnostics},
                       {"saliency", saliency},
                       {"quality_reference", reference}};
  const fs::path dir = stage_dir(cfg, "reports");
  write_json(dir / "report.json", report);
  write_text(dir / "quality.csv", csv.str());
  std::cout << "report: " << attacks.size() << " attack runs, " << matrices.size() << " matrices, "
            << diagnostics.size() << " diagnostics\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Argument plumbing

// Flag values are collected here and applied over the config file.
struct Overrides {
  std::string config, out, name;
  std::uint64_t seed = 0;
  // data
  std::size_t n_per_class = 0, size = 0, channels = 0;
  std::vector<std::string> families;
  std::string real_dir, fake_dir;
  // train
  std::string data, arch, augment_preset, schedule;
  std::size_t epochs = 0, batch = 0;
  double lr = 0, p_blur = 0, p_jpeg = 0;
  // bayes
  std::string detector;
  std::size_t heads = 0, iters = 0, inner = 0, bayes_batch = 0;
  double step = 0, friction = 0, prior = 0;
  bool scale_step = false, sequential = false;
  // attack
  std::string method, ensemble, split;
  std::vector<std::string> members;
  double eps = 0, alpha = 0, rho = 0, sigma = 0, momentum = 0;
  std::size_t attack_iters = 0, samples = 0, attack_heads = 0, max_images = 0;
  bool no_random_start = false, sequential_spectrum = false, png = false;
  // eval
  bool matrix = false, diagnostic = false;
  std::vector<std::string> surrogates, surrogate_ensembles, victims, methods;
  std::string attack_dir;
  std::size_t coords = 0, min_valid = 0, diag_images = 0;
  double threshold = 0;
};

template <typename T>
void set_if(const CLI::Option* o, T& target, const T& value) {
  if (o != nullptr && o->count() > 0) target = value;
}

RunConfig resolve(const CLI::App& sub, const Overrides& ov) {
  RunConfig cfg;
  if (!ov.config.empty()) cfg = load_run_config(require_file(ov.config, "config file"));
  auto opt = [&](const char* name) -> const CLI::Option* {
    try {
      return sub.get_option(name);
    } catch (const CLI::OptionNotFound&) {
      return nullptr;
    }
  };
  auto given = [&](const char* name) {
    const CLI::Option* o = opt(name);
    return o != nullptr && o->count() > 0;
  };
  if (given("--seed")) cfg.apply_seed(ov.seed);
  if (given("--out")) {
    cfg.out_dir = ov.out;
  } else if (cfg.out_dir.empty()) {
    const char* env = std::getenv(kOutRootEnv);
    cfg.out_dir = env != nullptr && *env != '\0' ? env : "runs";
  }
  if (given("--name")) cfg.name = ov.name;

  set_if(opt("--n-per-class"), cfg.data.n_per_class, ov.n_per_class);
  set_if(opt("--size"), cfg.data.image_size, ov.size);
  set_if(opt("--channels"), cfg.data.channels, ov.channels);
  set_if(opt("--families"), cfg.data.families, ov.families);
  if (given("--real-dir")) cfg.inputs["real_dir"] = ov.real_dir;
  if (given("--fake-dir")) cfg.inputs["fake_dir"] = ov.fake_dir;

  if (given("--data")) cfg.inputs["data"] = ov.data;
  set_if(opt("--arch"), cfg.arch, ov.arch);
  set_if(opt("--epochs"), cfg.train.epochs, ov.epochs);
  set_if(opt("--batch"), cfg.train.batch_size, ov.batch);
  set_if(opt("--lr"), cfg.train.learning_rate, ov.lr);
  set_if(opt("--lr-schedule"), cfg.train.schedule, ov.schedule);
  if (given("--augment")) {
    if (ov.augment_preset == "none") cfg.augment = AugmentConfig::none();
    else if (ov.augment_preset == "baseline") cfg.augment = AugmentConfig::baseline();
    else if (ov.augment_preset == "defense") cfg.augment = AugmentConfig::defense();
    else throw InvalidParameter("--augment must be none, baseline or defense");
  }
  set_if(opt("--p-blur"), cfg.augment.p_blur, ov.p_blur);
  set_if(opt("--p-jpeg"), cfg.augment.p_jpeg, ov.p_jpeg);

  if (given("--detector")) cfg.inputs["detector"] = ov.detector;
  set_if(opt("--heads"), cfg.bayes.heads, ov.heads);
  set_if(opt("--iters-bayes"), cfg.bayes.outer_iterations, ov.iters);
  set_if(opt("--inner-steps"), cfg.bayes.inner_steps, ov.inner);
  set_if(opt("--bayes-batch"), cfg.bayes.batch_size, ov.bayes_batch);
  set_if(opt("--step-size"), cfg.bayes.sampler.step_size, ov.step);
  set_if(opt("--friction"), cfg.bayes.sampler.friction, ov.friction);
  set_if(opt("--prior-precision"), cfg.bayes.sampler.prior_precision, ov.prior);
  if (given("--scale-step")) cfg.bayes.sampler.scale_step_by_batch = true;
  if (given("--sequential-heads")) cfg.bayes.interleaved = false;

  set_if(opt("--method"), cfg.method, ov.method);
  if (given("--ensemble")) cfg.inputs["ensemble"] = ov.ensemble;
  for (std::size_t i = 0; i < ov.members.size(); ++i) cfg.inputs["member:" + std::to_string(i)] = ov.members[i];
  if (given("--eps")) cfg.attack.epsilon = ov.eps / 255.0;
  if (given("--alpha")) cfg.attack.alpha = ov.alpha / 255.0;
  if (given("--sigma")) cfg.attack.spectrum.sigma_noise = ov.sigma / 255.0;
  set_if(opt("--rho"), cfg.attack.spectrum.rho, ov.rho);
  set_if(opt("--momentum"), cfg.attack.momentum, ov.momentum);
  set_if(opt("--iters"), cfg.attack.iterations, ov.attack_iters);
  set_if(opt("--samples"), cfg.attack.spectrum_samples, ov.samples);
  set_if(opt("--attack-heads"), cfg.attack.heads, ov.attack_heads);
  if (given("--no-random-start")) cfg.attack.random_start = false;
  if (given("--sequential-spectrum")) cfg.attack.sequential_spectrum = true;
  if (given("--png")) cfg.inputs["png"] = "1";

  set_if(opt("--split"), cfg.eval.split, ov.split);
  set_if(opt("--max-images"), cfg.eval.max_images, ov.max_images);
  if (given("--matrix")) cfg.eval.mode = "matrix";
  if (given("--diagnostic")) cfg.eval.mode = "diagnostic";
  for (const auto& s : ov.surrogates) {
    const auto [n, p] = named_path(s);
    cfg.inputs["surrogate:" + n] = p;
  }
  for (const auto& s : ov.surrogate_ensembles) {
    const auto [n, p] = named_path(s);
    cfg.inputs["surrogate_ensemble:" + n] = p;
  }
  for (const auto& s : ov.victims) {
    const auto [n, p] = named_path(s);
    cfg.inputs["victim:" + n] = p;
  }
  set_if(opt("--methods"), cfg.eval.methods, ov.methods);
  if (given("--attack-dir")) cfg.inputs["attack"] = ov.attack_dir;
  set_if(opt("--coords"), cfg.eval.coords_per_image, ov.coords);
  set_if(opt("--diagnostic-images"), cfg.eval.diagnostic_images, ov.diag_images);
  set_if(opt("--threshold"), cfg.eval.near_zero_threshold, ov.threshold);
  set_if(opt("--min-valid"), cfg.eval.min_valid, ov.min_valid);
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* s, Overrides& ov) {
  s->add_option("--config", ov.config, "JSON run config; flags override its values");
  s->add_option("--out", ov.out, std::string("output root (default $") + kOutRootEnv + " or ./runs)");
  s->add_option("--name", ov.name, "artifact directory name for this stage");
  s->add_option("--seed", ov.seed, "global seed copied into every stage");
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Frequency-based post-train Bayesian attacks on AI-generated image detectors", "fpba"};
  app.require_subcommand(1);
  Overrides ov;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset or import image folders");
  add_common(gen, ov);
  gen->add_option("--n-per-class", ov.n_per_class, "images per class");
  gen->add_option("--size", ov.size, "image side in pixels");
  gen->add_option("--channels", ov.channels, "1 or 3");
  gen->add_option("--families", ov.families, "fake families (gan, diffusion, ringing)");
  gen->add_option("--real-dir", ov.real_dir, "import real images from a folder");
  gen->add_option("--fake-dir", ov.fake_dir, "import fake images from a folder");

  auto* train = app.add_subcommand("train", "train a detector");
  add_common(train, ov);
  train->add_option("--data", ov.data, "dataset .npz");
  train->add_option("--arch", ov.arch, "spatial-cnn or frequency-mlp");
  train->add_option("--epochs", ov.epochs);
  train->add_option("--batch", ov.batch);
  train->add_option("--lr", ov.lr, "initial learning rate");
  train->add_option("--lr-schedule", ov.schedule, "constant or cosine");
  train->add_option("--augment", ov.augment_preset, "none, baseline (blur+jpeg 0.1) or defense (0.5)");
  train->add_option("--p-blur", ov.p_blur);
  train->add_option("--p-jpeg", ov.p_jpeg);

  auto* bayes = app.add_subcommand("bayes-train", "post-train Bayesian heads on a frozen detector");
  add_common(bayes, ov);
  bayes->add_option("--detector", ov.detector, "detector checkpoint");
  bayes->add_option("--data", ov.data, "dataset .npz");
  bayes->add_option("--heads", ov.heads, "K");
  bayes->add_option("--iters-bayes", ov.iters, "outer iterations");
  bayes->add_option("--inner-steps", ov.inner, "sampler steps per mini-batch");
  bayes->add_option("--bayes-batch", ov.bayes_batch, "mini-batch size");
  bayes->add_option("--step-size", ov.step, "sampler step size");
  bayes->add_option("--friction", ov.friction);
  bayes->add_option("--prior-precision", ov.prior);
  bayes->add_flag("--scale-step", ov.scale_step, "scale step size by sqrt(batch / dataset)");
  bayes->add_flag("--sequential-heads", ov.sequential, "run each chain to completion in turn");

  auto* attack = app.add_subcommand("attack", "craft adversarial examples");
  add_common(attack, ov);
  attack->add_option("--method", ov.method, "ifgsm, mifgsm, pgd, spectrum, ensemble or fpba");
  attack->add_option("--detector", ov.detector, "attacked detector checkpoint");
  attack->add_option("--ensemble", ov.ensemble, "Bayesian ensemble checkpoint (fpba)");
  attack->add_option("--member", ov.members, "extra detector checkpoints (ensemble)");
  attack->add_option("--data", ov.data, "dataset .npz");
  attack->add_option("--split", ov.split);
  attack->add_option("--max-images", ov.max_images);
  attack->add_option("--eps", ov.eps, "budget in 1/255 units");
  attack->add_option("--alpha", ov.alpha, "step in 1/255 units");
  attack->add_option("--iters", ov.attack_iters);
  attack->add_option("--samples", ov.samples, "spectrum transforms per step (N)");
  attack->add_option("--rho", ov.rho);
  attack->add_option("--sigma", ov.sigma, "spectrum noise in 1/255 units");
  attack->add_option("--momentum", ov.momentum);
  attack->add_option("--attack-heads", ov.attack_heads, "heads used by fpba");
  attack->add_flag("--no-random-start", ov.no_random_start);
  attack->add_flag("--sequential-spectrum", ov.sequential_spectrum);
  attack->add_flag("--png", ov.png, "also export 8-bit PNGs");

  auto* eval = app.add_subcommand("eval", "transfer matrix or gradient diagnostic");
  add_common(eval, ov);
  eval->add_flag("--matrix", ov.matrix, "surrogate x attack x victim transfer matrix");
  eval->add_flag("--diagnostic", ov.diagnostic, "loss-gradient components at attack endpoints");
  eval->add_option("--data", ov.data, "dataset .npz");
  eval->add_option("--split", ov.split);
  eval->add_option("--max-images", ov.max_images);
  eval->add_option("--surrogate", ov.surrogates, "NAME=detector.npz");
  eval->add_option("--surrogate-ensemble", ov.surrogate_ensembles, "NAME=ensemble.npz");
  eval->add_option("--victim", ov.victims, "NAME=detector.npz");
  eval->add_option("--methods", ov.methods);
  eval->add_option("--min-valid", ov.min_valid);
  eval->add_option("--eps", ov.eps, "budget in 1/255 units");
  eval->add_option("--alpha", ov.alpha, "step in 1/255 units");
  eval->add_option("--iters", ov.attack_iters);
  eval->add_option("--samples", ov.samples);
  eval->add_option("--attack-heads", ov.attack_heads);
  eval->add_option("--detector", ov.detector, "model whose gradients are sampled");
  eval->add_option("--attack-dir", ov.attack_dir, "attack artifact directory");
  eval->add_option("--coords", ov.coords, "coordinates per image");
  eval->add_option("--diagnostic-images", ov.diag_images);
  eval->add_option("--threshold", ov.threshold, "near-zero threshold");
  eval->get_option("--matrix")->excludes("--diagnostic");

  auto* sal = app.add_subcommand("saliency", "spectrum saliency map of a detector");
  add_common(sal, ov);
  sal->add_option("--detector", ov.detector);
  sal->add_option("--data", ov.data);
  sal->add_option("--split", ov.split);
  sal->add_option("--max-images", ov.max_images);

  auto* rep = app.add_subcommand("report", "collect attack, eval and saliency outputs");
  add_common(rep, ov);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    RunConfig cfg = resolve(*sub, ov);
    const std::string name = sub->get_name();
    // Pin the default dataset path so the persisted config does not depend on --out.
    if (name != "gen-data" && name != "report") cfg.inputs.try_emplace("data", default_data(cfg));
    if (name == "gen-data") return run_gen_data(cfg);
    if (name == "train") return run_train(cfg);
    if (name == "bayes-train") return run_bayes_train(cfg);
    if (name == "attack") return run_attack_stage(cfg);
    if (name == "eval") return run_eval(cfg);
    if (name == "saliency") return run_saliency(cfg);
    return run_report(cfg);
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n" << e.diagnostics() << "\n";
    return kDivergence;
  } catch (const InvalidParameter& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace fpba::cli
