#include "fpba/checkpoint.hpp"

#include "fpba/error.hpp"

namespace fpba {

void put_params(Archive& ar, const std::string& prefix, const nn::Sequential& net) {
  for (const auto& [info, offset] : net.named_params()) {
    ar.put(prefix + info.name, make_array(net.params().subspan(offset, info.count()), info.dims));
  }
}

void get_params(const Archive& ar, const std::string& prefix, nn::Sequential& net) {
  for (const auto& [info, offset] : net.named_params()) {
    const NpyArray& a = ar.array(prefix + info.name);
    if (a.shape != info.dims) throw FormatError("checkpoint: shape mismatch for '" + prefix + info.name + "'");
    const auto values = a.to_doubles();
    std::copy(values.begin(), values.end(), net.params().begin() + static_cast<std::ptrdiff_t>(offset));
  }
}

void save_detector(const std::filesystem::path& path, const Detector& det) {
  Archive ar;
  put_params(ar, "backbone.", det.backbone());
  put_params(ar, "head.", det.head());
  const nlohmann::json manifest = {{"format", "fpba-detector/1"},
                                   {"arch", det.arch_tag()},
                                   {"name", det.name()},
                                   {"preprocess", det.preprocess()},
                                   {"body", det.body_architecture()},
                                   {"head", det.head().architecture()},
                                   {"feature_dim", det.feature_dim()},
                                   {"training", det.record},
                                   {"checksum", hex64(det.checksum())}};
  ar.put_text("manifest.json", manifest.dump(2));
  ar.save(path);
}

Detector load_detector(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint '" + path.string() + "' not found");
  const Archive ar = Archive::load(path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(ar.text("manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  if (m.value("format", "") != "fpba-detector/1") throw FormatError("checkpoint: not a detector checkpoint");
  try {
    Detector det(m.at("arch").get<std::string>(), m.at("preprocess").get<PreprocessSpec>(),
                 nn::Sequential::from_architecture(m.at("body")), nn::Sequential::from_architecture(m.at("head")));
    get_params(ar, "backbone.", det.backbone());
    get_params(ar, "head.", det.head());
    if (det.feature_dim() != m.at("feature_dim").get<std::size_t>()) {
      throw FormatError("checkpoint: feature dimension disagrees with manifest");
    }
    if (hex64(det.checksum()) != m.at("checksum").get<std::string>()) {
      throw FormatError("checkpoint: parameter checksum mismatch");
    }
    det.record = m.value("training", TrainingRecord{});
    det.set_name(m.value("name", det.arch_tag()));
    return det;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

}  // namespace fpba
