#include "fpba/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "fpba/archive.hpp"
#include "fpba/error.hpp"
#include "fpba/frequency.hpp"
#include "fpba/image_io.hpp"
#include "fpba/nn.hpp"
#include "fpba/rng.hpp"

namespace fpba {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

void SplitSpec::validate() const {
  if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
    throw InvalidParameter("split fractions must be non-negative and sum to 1");
  }
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::indices(Split split, const std::string& family) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split && families[i] == family) out.push_back(i);
  }
  return out;
}

LabeledDataset::View LabeledDataset::view(std::span<const std::size_t> idx) const {
  View v{images.gather(idx), {}, {}};
  for (std::size_t i : idx) {
    v.labels.push_back(labels[i]);
    v.families.push_back(families[i]);
  }
  return v;
}

LabeledDataset::View LabeledDataset::view(Split split) const {
  const auto idx = indices(split);
  return view(idx);
}

std::vector<std::uint64_t> LabeledDataset::content_hashes() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    auto img = images.image(i);
    out.push_back(fnv1a(img.data(), img.size_bytes()));
  }
  return out;
}

void LabeledDataset::validate() const {
  const std::size_t n = images.shape().n;
  if (labels.size() != n || splits.size() != n || families.size() != n) {
    throw InvalidDataset("dataset: images, labels, splits and families differ in length");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidDataset("dataset: labels must be 0 or 1");
  }
  std::map<std::uint64_t, Split> seen;
  const auto hashes = content_hashes();
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = seen.emplace(hashes[i], splits[i]);
    if (!inserted && it->second != splits[i]) {
      throw InvalidDataset("dataset: image " + std::to_string(i) + " appears in more than one split");
    }
  }
}

double LabeledDataset::max_class_imbalance() const {
  double worst = 0.0;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto idx = indices(s);
    if (idx.empty()) continue;
    double fake = 0.0;
    for (std::size_t i : idx) fake += labels[i];
    worst = std::max(worst, std::abs(fake / static_cast<double>(idx.size()) - 0.5));
  }
  return worst;
}

nlohmann::json LabeledDataset::manifest() const {
  std::vector<std::string> hashes;
  for (auto h : content_hashes()) hashes.push_back(hex64(h));
  std::set<std::string> fams(families.begin(), families.end());
  nlohmann::json counts = nlohmann::json::object();
  for (Split s : {Split::Train, Split::Val, Split::Test}) counts[to_string(s)] = indices(s).size();
  const auto& sh = images.shape();
  return {{"format", "fpba-dataset/1"},
          {"count", size()},
          {"shape", {sh.n, sh.c, sh.h, sh.w}},
          {"families", std::vector<std::string>(fams.begin(), fams.end())},
          {"split_counts", counts},
          {"hashes", hashes},
          {"provenance", provenance}};
}

void LabeledDataset::save(const std::filesystem::path& path) const {
  validate();
  std::vector<std::string> table;
  std::vector<std::int32_t> family_index, label_values;
  for (const auto& f : families) {
    auto it = std::find(table.begin(), table.end(), f);
    if (it == table.end()) it = table.insert(table.end(), f);
    family_index.push_back(static_cast<std::int32_t>(it - table.begin()));
  }
  for (int y : labels) label_values.push_back(y);
  std::vector<std::uint8_t> split_values;
  for (Split s : splits) split_values.push_back(static_cast<std::uint8_t>(s));

  const auto& sh = images.shape();
  Archive ar;
  ar.put("images", make_array(images.values(), {sh.n, sh.c, sh.h, sh.w}));
  ar.put("labels", make_array(std::span<const std::int32_t>(label_values), {size()}));
  ar.put("splits", make_array(std::span<const std::uint8_t>(split_values), {size()}));
  ar.put("family_index", make_array(std::span<const std::int32_t>(family_index), {size()}));
  nlohmann::json m = manifest();
  m["family_table"] = table;
  ar.put_text("manifest.json", m.dump(2));
  ar.save(path);
}

LabeledDataset LabeledDataset::load(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path);
  const auto m = nlohmann::json::parse(ar.text("manifest.json"));
  if (m.value("format", "") != "fpba-dataset/1") throw FormatError("dataset: unrecognised manifest format");
  const auto shape = m.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 4) throw FormatError("dataset: bad shape in manifest");

  LabeledDataset ds;
  ds.images = Tensor(Shape{shape[0], shape[1], shape[2], shape[3]}, ar.array("images").to_doubles());
  for (auto v : ar.array("labels").to_ints()) ds.labels.push_back(static_cast<int>(v));
  for (auto v : ar.array("splits").to_ints()) {
    if (v < 0 || v > 2) throw FormatError("dataset: bad split tag");
    ds.splits.push_back(static_cast<Split>(v));
  }
  const auto table = m.at("family_table").get<std::vector<std::string>>();
  for (auto v : ar.array("family_index").to_ints()) {
    if (v < 0 || static_cast<std::size_t>(v) >= table.size()) throw FormatError("dataset: bad family index");
    ds.families.push_back(table[static_cast<std::size_t>(v)]);
  }
  ds.provenance = m.value("provenance", nlohmann::json::object());
  ds.validate();
  const auto hashes = ds.content_hashes();
  const auto recorded = m.at("hashes").get<std::vector<std::string>>();
  if (recorded.size() != hashes.size()) throw FormatError("dataset: manifest hash count mismatch");
  for (std::size_t i = 0; i < hashes.size(); ++i) {
    if (hex64(hashes[i]) != recorded[i]) throw FormatError("dataset: content hash mismatch at image " + std::to_string(i));
  }
  return ds;
}

const std::vector<std::string>& known_families() {
  static const std::vector<std::string> families = {"gan", "diffusion", "ringing"};
  return families;
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_per_class", c.n_per_class}, {"families", c.families}, {"image_size", c.image_size},
       {"channels", c.channels},       {"seed", c.seed},         {"split", {c.split.train, c.split.val, c.split.test}}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.n_per_class = j.value("n_per_class", c.n_per_class);
  c.families = j.value("families", c.families);
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.seed = j.value("seed", c.seed);
  if (j.contains("split")) {
    c.split.train = j["split"].at(0);
    c.split.val = j["split"].at(1);
    c.split.test = j["split"].at(2);
  }
}

namespace {

// Zero-mean, unit-variance field with amplitude spectrum ~ 1/(1+f)^slope.
std::vector<double> power_law_field(std::size_t size, double slope, Rng& rng) {
  std::vector<double> coeffs(size * size), plane(size * size);
  for (std::size_t u = 0; u < size; ++u) {
    for (std::size_t v = 0; v < size; ++v) {
      if (u == 0 && v == 0) continue;
      const double f = std::hypot(static_cast<double>(u), static_cast<double>(v));
      coeffs[u * size + v] = normal(rng) / std::pow(1.0 + f, slope);
    }
  }
  idct2_plane<double>(coeffs, plane, size, size);
  double mean = 0.0, sq = 0.0;
  for (double p : plane) mean += p;
  mean /= static_cast<double>(plane.size());
  for (double p : plane) sq += (p - mean) * (p - mean);
  const double sd = std::sqrt(sq / static_cast<double>(plane.size()));
  for (double& p : plane) p = (p - mean) / (sd > 0 ? sd : 1.0);
  return plane;
}

void clamp_unit(std::vector<double>& v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

void split_class(std::span<const std::size_t> members, const SplitSpec& spec, std::vector<Split>& splits) {
  const std::size_t n = members.size();
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(n))));
  for (std::size_t k = 0; k < n; ++k) {
    splits[members[k]] = k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
  }
}

}  // namespace

std::vector<double> synth_texture(std::size_t size, std::size_t channels, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const double slope = uniform(rng, 1.1, 1.5);
  const double contrast = uniform(rng, 0.10, 0.18);
  const double level = uniform(rng, 0.35, 0.65);
  const auto luminance = power_law_field(size, slope, rng);
  const std::size_t plane = size * size;
  std::vector<double> img(channels * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    const double tint = uniform(rng, -0.06, 0.06);
    const auto chroma = power_law_field(size, slope + 0.3, rng);
    for (std::size_t i = 0; i < plane; ++i) {
      img[c * plane + i] = level + tint + contrast * (luminance[i] + 0.25 * chroma[i]);
    }
  }
  clamp_unit(img);
  return img;
}

void apply_artifact(std::vector<double>& img, std::size_t size, std::size_t channels, const std::string& family,
                    std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const std::size_t plane = size * size;
  if (family == "gan") {
    // Grid harmonics of a stride-2 upsampler, modulated by local brightness.
    const double amp = uniform(rng, 0.025, 0.045);
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const double si = (i % 2) ? -1.0 : 1.0, sj = (j % 2) ? -1.0 : 1.0;
        const double pattern = 0.6 * si * sj + 0.2 * si + 0.2 * sj;
        double lum = 0.0;
        for (std::size_t c = 0; c < channels; ++c) lum += img[c * plane + i * size + j];
        lum /= static_cast<double>(channels);
        for (std::size_t c = 0; c < channels; ++c) img[c * plane + i * size + j] += amp * pattern * (0.5 + lum);
      }
    }
  } else if (family == "diffusion") {
    const double cutoff = uniform(rng, 0.35, 0.5) * static_cast<double>(size);
    const double attenuation = uniform(rng, 0.05, 0.2);
    std::vector<double> spec(plane);
    for (std::size_t c = 0; c < channels; ++c) {
      std::span<double> p(img.data() + c * plane, plane);
      dct2_plane<double>(p, spec, size, size);
      for (std::size_t u = 0; u < size; ++u) {
        for (std::size_t v = 0; v < size; ++v) {
          if (std::hypot(static_cast<double>(u), static_cast<double>(v)) > cutoff) spec[u * size + v] *= attenuation;
        }
      }
      idct2_plane<double>(spec, p, size, size);
    }
  } else if (family == "ringing") {
    const double amp = uniform(rng, 0.035, 0.055);
    const double phase_i = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double phase_j = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double freq = 2.0 * std::numbers::pi / 4.0;
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const double r = amp * std::cos(freq * static_cast<double>(i) + phase_i) *
                         std::cos(freq * static_cast<double>(j) + phase_j);
        for (std::size_t c = 0; c < channels; ++c) img[c * plane + i * size + j] += r;
      }
    }
  } else {
    throw InvalidParameter("unknown artifact family '" + family + "'");
  }
  clamp_unit(img);
}

LabeledDataset synth_dataset(const SynthConfig& cfg) {
  cfg.split.validate();
  if (cfg.image_size < 32) throw InvalidParameter("synth_dataset: image_size must be >= 32");
  if (cfg.channels == 0) throw InvalidParameter("synth_dataset: channels must be positive");
  for (const auto& f : cfg.families) {
    if (std::find(known_families().begin(), known_families().end(), f) == known_families().end()) {
      throw InvalidParameter("unknown artifact family '" + f + "'");
    }
  }
  if (cfg.families.empty() && cfg.n_per_class > 0) throw InvalidParameter("synth_dataset: no fake families given");

  const std::size_t n = cfg.n_per_class;
  const std::size_t size = cfg.image_size;
  LabeledDataset ds;
  ds.images = Tensor(Shape{2 * n, cfg.channels, size, size});
  ds.labels.resize(2 * n);
  ds.splits.resize(2 * n);
  ds.families.resize(2 * n);

  std::vector<std::size_t> real_members, fake_members;
  for (std::size_t i = 0; i < n; ++i) {
    const auto img = synth_texture(size, cfg.channels, splitmix64(cfg.seed ^ splitmix64(2 * i)));
    std::copy(img.begin(), img.end(), ds.images.image(i).begin());
    ds.labels[i] = 0;
    ds.families[i] = "real";
    real_members.push_back(i);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = n + i;
    auto img = synth_texture(size, cfg.channels, splitmix64(cfg.seed ^ splitmix64(2 * i + 1)));
    const std::string& family = cfg.families[i % cfg.families.size()];
    apply_artifact(img, size, cfg.channels, family, splitmix64(cfg.seed + 0x5bd1e995ULL * (i + 1)));
    std::copy(img.begin(), img.end(), ds.images.image(idx).begin());
    ds.labels[idx] = 1;
    ds.families[idx] = family;
    fake_members.push_back(idx);
  }
  split_class(real_members, cfg.split, ds.splits);
  split_class(fake_members, cfg.split, ds.splits);
  nlohmann::json prov;
  to_json(prov, cfg);
  ds.provenance = {{"generator", "synth_dataset"}, {"config", prov}};
  return ds;
}

namespace {

Tensor conform(const Image8& img, std::size_t size, std::size_t channels) {
  Tensor t = from_image8(img);
  if (t.shape().c != channels) {
    Tensor conv(Shape{1, channels, t.shape().h, t.shape().w});
    const std::size_t plane = t.shape().plane();
    for (std::size_t i = 0; i < plane; ++i) {
      double mean = 0.0;
      for (std::size_t c = 0; c < t.shape().c; ++c) mean += t[c * plane + i];
      mean /= static_cast<double>(t.shape().c);
      for (std::size_t c = 0; c < channels; ++c) {
        conv[c * plane + i] = (t.shape().c == 1 || channels == 1) ? mean : t[std::min(c, t.shape().c - 1) * plane + i];
      }
    }
    t = std::move(conv);
  }
  if (t.shape().h == size && t.shape().w == size) return t;
  const auto resize = nn::resize_bilinear(size, size);
  Tensor out(Shape{1, channels, size, size});
  resize->forward({}, {channels, t.shape().h, t.shape().w}, t.values(), out.values());
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace

FolderLoadResult load_image_folder(const std::filesystem::path& folder, int label, const SplitSpec& split,
                                   std::size_t image_size, std::size_t channels) {
  split.validate();
  if (label != 0 && label != 1) throw InvalidParameter("load_image_folder: label must be 0 or 1");
  if (!std::filesystem::is_directory(folder)) throw IoError("'" + folder.string() + "' is not a directory");

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(folder)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  FolderLoadResult result;
  std::map<std::uint64_t, Tensor> unique;  // ordered by hash
  for (const auto& path : files) {
    Tensor img;
    try {
      img = conform(read_image(path), image_size, channels);
    } catch (const FormatError&) {
      ++result.skipped;
      continue;
    } catch (const IoError&) {
      ++result.skipped;
      continue;
    }
    const auto h = fnv1a(img.values().data(), img.values().size_bytes());
    if (!unique.emplace(h, std::move(img)).second) ++result.duplicates;
  }
  if (unique.empty()) throw InvalidDataset("'" + folder.string() + "' contains no decodable images");

  LabeledDataset& ds = result.dataset;
  ds.images = Tensor(Shape{unique.size(), channels, image_size, image_size});
  std::vector<std::size_t> members;
  std::size_t i = 0;
  for (const auto& [hash, img] : unique) {
    std::copy(img.values().begin(), img.values().end(), ds.images.image(i).begin());
    ds.labels.push_back(label);
    ds.families.push_back(label == 0 ? "real" : "external");
    members.push_back(i++);
  }
  ds.splits.resize(members.size());
  split_class(members, split, ds.splits);
  ds.provenance = {{"generator", "load_image_folder"}, {"folder", folder.string()}, {"label", label},
                   {"skipped", result.skipped}, {"duplicates", result.duplicates}};
  return result;
}

LabeledDataset concat(const std::vector<LabeledDataset>& parts) {
  LabeledDataset out;
  if (parts.empty()) return out;
  Shape s = parts.front().images.shape();
  s.n = 0;
  for (const auto& p : parts) {
    const auto& ps = p.images.shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) throw InvalidDataset("concat: image shapes differ");
    s.n += ps.n;
  }
  std::vector<double> values;
  values.reserve(s.numel());
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& p : parts) {
    values.insert(values.end(), p.images.values().begin(), p.images.values().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.splits.insert(out.splits.end(), p.splits.begin(), p.splits.end());
    out.families.insert(out.families.end(), p.families.begin(), p.families.end());
    sources.push_back(p.provenance);
  }
  out.images = Tensor(s, std::move(values));
  out.provenance = {{"generator", "concat"}, {"sources", sources}};
  return out;
}

}  // namespace fpba
