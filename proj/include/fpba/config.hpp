#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fpba/attacks.hpp"
#include "fpba/augment.hpp"
#include "fpba/bayes.hpp"
#include "fpba/data.hpp"
#include "fpba/train.hpp"
#include "json.hpp"

namespace fpba {

struct EvalConfig {
  std::string mode = "matrix";  // matrix | diagnostic
  std::vector<std::string> methods = {"pgd", "fpba"};
  std::string split = "test";
  std::size_t min_valid = 50;
  std::size_t max_images = 200;       // attack pool drawn from the test split
  std::size_t diagnostic_images = 500;
  std::size_t coords_per_image = 150;
  double near_zero_threshold = 1e-6;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Everything a pipeline stage needs. Persisted next to every artifact so a
/// run can be repeated from the file alone.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string name;                            // artifact directory name of the stage
  std::map<std::string, std::string> inputs;  // upstream artifact paths by role
  SynthConfig data;
  std::string arch = "spatial-cnn";
  std::string method = "fpba";
  TrainConfig train;
  AugmentConfig augment;
  PostTrainConfig bayes;
  AttackConfig attack;
  EvalConfig eval;

  /// Copies the global seed into every stage's seed.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace fpba
