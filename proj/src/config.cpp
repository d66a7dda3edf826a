#include "fpba/config.hpp"

#include <algorithm>
#include <fstream>

#include "fpba/error.hpp"

namespace fpba {

void EvalConfig::validate() const {
  if (mode != "matrix" && mode != "diagnostic") throw InvalidParameter("eval: mode must be matrix or diagnostic");
  if (methods.empty()) throw InvalidParameter("eval: at least one attack method");
  for (const auto& m : methods) parse_method(m);
  if (split != "train" && split != "val" && split != "test") throw InvalidParameter("eval: unknown split '" + split + "'");
  if (min_valid == 0) throw InvalidParameter("eval: min_valid must be >= 1");
  if (max_images == 0) throw InvalidParameter("eval: max_images must be >= 1");
  if (coords_per_image == 0) throw InvalidParameter("eval: coords_per_image must be >= 1");
  if (!(near_zero_threshold >= 0.0)) throw InvalidParameter("eval: near_zero_threshold must be >= 0");
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"mode", c.mode},
       {"methods", c.methods},
       {"split", c.split},
       {"min_valid", c.min_valid},
       {"max_images", c.max_images},
       {"diagnostic_images", c.diagnostic_images},
       {"coords_per_image", c.coords_per_image},
       {"near_zero_threshold", c.near_zero_threshold}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  const EvalConfig d;
  c.mode = j.value("mode", d.mode);
  c.methods = j.value("methods", d.methods);
  c.split = j.value("split", d.split);
  c.min_valid = j.value("min_valid", d.min_valid);
  c.max_images = j.value("max_images", d.max_images);
  c.diagnostic_images = j.value("diagnostic_images", d.diagnostic_images);
  c.coords_per_image = j.value("coords_per_image", d.coords_per_image);
  c.near_zero_threshold = j.value("near_zero_threshold", d.near_zero_threshold);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"schedule", c.schedule},
       {"seed", c.seed},
       {"preprocess", c.preprocess}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.schedule = j.value("schedule", d.schedule);
  c.seed = j.value("seed", d.seed);
  c.preprocess = j.value("preprocess", d.preprocess);
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  train.seed = s;
  bayes.sampler.seed = s;
  attack.seed = s;
  attack.spectrum.rng_seed = s;
}

void RunConfig::validate() const {
  parse_arch(arch);
  parse_method(method);
  data.split.validate();
  if (data.n_per_class == 0) throw InvalidParameter("data: n_per_class must be >= 1");
  if (train.batch_size == 0) throw InvalidParameter("train: batch_size must be >= 1");
  if (!(train.learning_rate > 0.0)) throw InvalidParameter("train: learning_rate must be > 0");
  if (train.schedule != "constant" && train.schedule != "cosine") {
    throw InvalidParameter("train: schedule must be constant or cosine");
  }
  augment.validate();
  bayes.validate();
  attack.validate();
  eval.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},   {"out_dir", c.out_dir},     {"name", c.name},     {"inputs", c.inputs},     {"data", c.data},     {"arch", c.arch},     {"method", c.method},
       {"train", c.train}, {"augment", c.augment},     {"bayes", c.bayes},   {"attack", c.attack},
       {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  static const char* kKeys[] = {"seed", "out_dir", "name", "inputs", "data", "arch", "method", "train", "augment", "bayes", "attack", "eval"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw InvalidParameter("run config: unknown key '" + key + "'");
    }
  }
  RunConfig d;
  if (j.contains("seed")) d.apply_seed(j.at("seed").get<std::uint64_t>());
  c = d;
  c.out_dir = j.value("out_dir", d.out_dir);
  c.name = j.value("name", d.name);
  c.inputs = j.value("inputs", d.inputs);
  c.data = j.value("data", d.data);
  c.arch = j.value("arch", d.arch);
  c.method = j.value("method", d.method);
  c.train = j.value("train", d.train);
  c.augment = j.value("augment", d.augment);
  c.bayes = j.value("bayes", d.bayes);
  c.attack = j.value("attack", d.attack);
  c.eval = j.value("eval", d.eval);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config '" + path.string() + "'");
  try {
    return nlohmann::json::parse(is).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config '" + path.string() + "': " + e.what());
  }
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config '" + path.string() + "'");
  os << nlohmann::json(c).dump(2) << '\n';
}

}  // namespace fpba
