#pragma once

#include <cstdint>
#include <cmath>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fpba/attacks.hpp"
#include "fpba/classifier.hpp"
#include "fpba/tensor.hpp"
#include "json.hpp"

namespace fpba {

/// Indices of images the model classifies correctly.
std::vector<std::size_t> correctly_classified(const Classifier& model, const Tensor& x, std::span<const int> labels);

/// Up to `max` entries of `indices` alternating real and fake (labels are
/// indexed by the entries) while both classes remain.
std::vector<std::size_t> balanced_subset(std::span<const std::size_t> indices, std::span<const int> labels,
                                         std::size_t max);

/// 100 * fraction of adversarial images the victim labels wrongly. Callers
/// pass only inputs the victim got right before the attack.
double attack_success_rate(const Classifier& victim, const Tensor& adversarial, std::span<const int> labels);

struct TransferCell {
  double asr = 0.0;       // percent over valid samples
  double asr_real = 0.0;  // percent over valid real samples (NaN if none)
  double asr_fake = 0.0;
  std::size_t valid = 0;  // victim classified the clean image correctly
  std::size_t valid_real = 0;
  std::size_t valid_fake = 0;
  bool white_box = false;  // victim is the surrogate
  bool flagged = false;    // fewer valid samples than the configured minimum
};

/// Rows are (surrogate, attack) pairs, columns are victims. The average of a
/// row skips its white-box cell.
struct TransferMatrix {
  std::vector<std::string> surrogates;  // per row
  std::vector<std::string> attacks;     // per row
  std::vector<std::string> victims;
  std::vector<std::vector<TransferCell>> cells;
  std::size_t min_valid = 50;

  std::size_t rows() const { return cells.size(); }
  /// Mean ASR over non-white-box cells of `row`; NaN when there are none.
  double average(std::size_t row) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct Surrogate {
  std::string name;
  AttackTargets targets;
};

struct Victim {
  std::string name;
  const Classifier* model = nullptr;
};

struct TransferConfig {
  AttackConfig attack;
  std::size_t min_valid = 50;
};

/// Crafts every (surrogate, attack) batch once on the full pool, then scores
/// each victim on the images it classified correctly before the attack.
/// A victim whose name equals the surrogate's gives the white-box cell.
TransferMatrix transfer_eval(const std::vector<Surrogate>& surrogates, const std::vector<Victim>& victims,
                             const std::vector<Method>& attacks, const Tensor& x, std::span<const int> labels,
                             const TransferConfig& cfg);

/// Scores already-crafted batches; adversarial[r] belongs to row r.
TransferMatrix score_transfer(const std::vector<std::string>& row_surrogates, const std::vector<std::string>& row_attacks,
                              const std::vector<Tensor>& adversarial, const std::vector<Victim>& victims,
                              const Tensor& x, std::span<const int> labels, std::size_t min_valid);

struct GradientDiagnostic {
  std::vector<double> samples;  // images x coords_per_image components
  std::size_t images = 0;
  std::size_t coords_per_image = 0;
  double threshold = 1e-6;
  double near_zero_fraction = 0.0;
  double mean_abs = 0.0;
};

/// Loss gradients at `points`, `coords_per_image` coordinates per image drawn
/// uniformly without replacement.
GradientDiagnostic gradient_diagnostic(const Classifier& model, const Tensor& points, std::span<const int> labels,
                                       std::size_t coords_per_image, double threshold = 1e-6,
                                       std::uint64_t seed = 0);

struct QualityReport {
  double mse = 0.0;   // 8-bit scale, mean over all values
  double psnr = 0.0;  // +inf when mse is 0
  double ssim = 1.0;  // mean over images and channels
};

/// Mean MSE / PSNR / SSIM between clean and adversarial batches. SSIM uses an
/// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 255, valid
/// region only, so images must be at least 11 pixels on a side.
QualityReport image_quality(const Tensor& x, const Tensor& x_adv);
double psnr_from_mse(double mse);
double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t h, std::size_t w);
/// Lowest PSNR any perturbation with |delta| <= epsilon can reach.
inline double psnr_floor(double epsilon) { return -20.0 * std::log10(epsilon); }

nlohmann::json to_json(const QualityReport& q);
nlohmann::json to_json(const GradientDiagnostic& g, bool include_samples = false);

/// Per-family clean accuracy and success rate over correctly classified
/// inputs, for the cross-generator scatter.
struct FamilyScore {
  std::string family;
  std::size_t count = 0;
  double clean_accuracy = 0.0;
  double asr = 0.0;
};
std::vector<FamilyScore> family_breakdown(const Classifier& victim, const Tensor& x, const Tensor& x_adv,
                                          std::span<const int> labels, const std::vector<std::string>& families);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fpba
