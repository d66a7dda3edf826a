#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpba/tensor.hpp"
#include "json.hpp"

namespace fpba {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

std::string to_string(Split s);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  void validate() const;
};

/// Images in [0,1] with labels (0 real, 1 fake), split tags and the family
/// that produced each image ("real" for the real class).
struct LabeledDataset {
  Tensor images;
  Labels labels;
  std::vector<Split> splits;
  std::vector<std::string> families;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> indices(Split split, const std::string& family) const;

  struct View {
    Tensor images;
    Labels labels;
    std::vector<std::string> families;
  };
  View view(std::span<const std::size_t> indices) const;
  View view(Split split) const;

  std::vector<std::uint64_t> content_hashes() const;

  /// Throws InvalidDataset when labels/splits/families disagree in length or
  /// the same image content appears in more than one split.
  void validate() const;
  /// Largest |fraction fake - 0.5| over non-empty splits.
  double max_class_imbalance() const;

  nlohmann::json manifest() const;
  void save(const std::filesystem::path& path) const;
  static LabeledDataset load(const std::filesystem::path& path);
};

/// Known procedural artifact families.
///  gan       - checkerboard / grid harmonics left by transposed-conv upsampling
///  diffusion - band-limited attenuation of high frequencies
///  ringing   - periodic mid/high-frequency ringing
const std::vector<std::string>& known_families();

struct SynthConfig {
  std::size_t n_per_class = 2000;
  std::vector<std::string> families = {"gan", "diffusion", "ringing"};
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::uint64_t seed = 0;
  SplitSpec split;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// `n_per_class` real images and `n_per_class` fakes (families assigned round
/// robin). Splits are stratified per class.
LabeledDataset synth_dataset(const SynthConfig& cfg);

/// One natural-looking texture with a ~1/f amplitude spectrum, CHW.
std::vector<double> synth_texture(std::size_t size, std::size_t channels, std::uint64_t seed);
/// Adds the family's artifact to a CHW texture in place and clamps to [0,1].
void apply_artifact(std::vector<double>& image, std::size_t size, std::size_t channels, const std::string& family,
                    std::uint64_t seed);

struct FolderLoadResult {
  LabeledDataset dataset;
  std::size_t skipped = 0;      // undecodable files
  std::size_t duplicates = 0;   // removed by content hash
};

/// Decodes every PNG/JPEG in `folder` (non-recursive), resizes to
/// `image_size` (bilinear), drops duplicates and splits by hash order.
FolderLoadResult load_image_folder(const std::filesystem::path& folder, int label, const SplitSpec& split,
                                   std::size_t image_size, std::size_t channels = 3);

/// Concatenates datasets (e.g. a real folder and a fake folder).
LabeledDataset concat(const std::vector<LabeledDataset>& parts);

}  // namespace fpba
