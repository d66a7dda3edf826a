#include "fpba/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "fpba/error.hpp"

namespace fpba {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

nlohmann::json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

std::vector<double> gaussian_window() {
  constexpr int kSize = 11;
  constexpr double kSigma = 1.5;
  std::vector<double> g(kSize);
  double s = 0.0;
  for (int i = 0; i < kSize; ++i) {
    const double d = i - kSize / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

// Valid-region separable filtering of a row-major plane.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t r = k.size();
  const std::size_t ow = w - r + 1;
  const std::size_t oh = h - r + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < r; ++t) s += k[t] * in[i * w + j + t];
      tmp[i * ow + j] = s;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < r; ++t) s += k[t] * tmp[(i + t) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

std::vector<std::size_t> correctly_classified(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  check_labels(x, labels, "correctly_classified");
  const auto z = model.logits(x);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (predict_label(z[i]) == labels[i]) idx.push_back(i);
  }
  return idx;
}

std::vector<std::size_t> balanced_subset(std::span<const std::size_t> indices, std::span<const int> labels,
                                         std::size_t max) {
  std::vector<std::size_t> real, fake;
  for (std::size_t i : indices) (labels[i] == 0 ? real : fake).push_back(i);
  std::vector<std::size_t> out;
  std::size_t r = 0, f = 0;
  while (out.size() < max && (r < real.size() || f < fake.size())) {
    if (r < real.size()) out.push_back(real[r++]);
    if (out.size() < max && f < fake.size()) out.push_back(fake[f++]);
  }
  return out;
}

double attack_success_rate(const Classifier& victim, const Tensor& adversarial, std::span<const int> labels) {
  if (adversarial.shape().n == 0 || labels.empty()) throw InvalidInput("attack_success_rate: empty batch");
  check_labels(adversarial, labels, "attack_success_rate");
  const auto z = victim.logits(adversarial);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < z.size(); ++i) wrong += predict_label(z[i]) != labels[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(z.size());
}

// ---------------------------------------------------------------------------
// Transfer matrix

double TransferMatrix::average(std::size_t row) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells.at(row)) {
    if (c.white_box || c.valid == 0) continue;
    s += c.asr;
    ++n;
  }
  return n == 0 ? kNaN : s / static_cast<double>(n);
}

std::string TransferMatrix::to_csv() const {
  std::ostringstream os;
  os << "surrogate,attack,victim,asr,asr_real,asr_fake,valid,valid_real,valid_fake,white_box,flagged,average\n";
  for (std::size_t r = 0; r < rows(); ++r) {
    const double avg = average(r);
    for (std::size_t v = 0; v < victims.size(); ++v) {
      const TransferCell& c = cells[r][v];
      os << surrogates[r] << ',' << attacks[r] << ',' << victims[v] << ',' << fmt(c.valid ? c.asr : kNaN) << ','
         << fmt(c.asr_real) << ',' << fmt(c.asr_fake) << ',' << c.valid << ',' << c.valid_real << ','
         << c.valid_fake << ',' << (c.white_box ? 1 : 0) << ',' << (c.flagged ? 1 : 0) << ',' << fmt(avg) << '\n';
    }
  }
  return os.str();
}

nlohmann::json TransferMatrix::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (std::size_t r = 0; r < rows(); ++r) {
    nlohmann::json cj = nlohmann::json::array();
    for (std::size_t v = 0; v < victims.size(); ++v) {
      const TransferCell& c = cells[r][v];
      cj.push_back({{"victim", victims[v]},
                    {"asr", num(c.valid ? c.asr : kNaN)},
                    {"asr_real", num(c.asr_real)},
                    {"asr_fake", num(c.asr_fake)},
                    {"valid", c.valid},
                    {"valid_real", c.valid_real},
                    {"valid_fake", c.valid_fake},
                    {"white_box", c.white_box},
                    {"flagged", c.flagged}});
    }
    rows_json.push_back(
        {{"surrogate", surrogates[r]}, {"attack", attacks[r]}, {"cells", cj}, {"average", num(average(r))}});
  }
  return {{"victims", victims}, {"min_valid", min_valid}, {"rows", rows_json}};
}

TransferMatrix score_transfer(const std::vector<std::string>& row_surrogates, const std::vector<std::string>& row_attacks,
                              const std::vector<Tensor>& adversarial, const std::vector<Victim>& victims,
                              const Tensor& x, std::span<const int> labels, std::size_t min_valid) {
  if (row_surrogates.size() != adversarial.size() || row_attacks.size() != adversarial.size()) {
    throw InvalidInput("score_transfer: one surrogate name and attack name per adversarial batch");
  }
  check_labels(x, labels, "score_transfer");
  TransferMatrix m;
  m.surrogates = row_surrogates;
  m.attacks = row_attacks;
  m.min_valid = min_valid;
  for (const auto& v : victims) {
    if (v.model == nullptr) throw InvalidParameter("score_transfer: null victim '" + v.name + "'");
    m.victims.push_back(v.name);
  }
  std::vector<std::vector<std::size_t>> valid;
  for (const auto& v : victims) valid.push_back(correctly_classified(*v.model, x, labels));
  for (std::size_t r = 0; r < adversarial.size(); ++r) {
    if (adversarial[r].shape() != x.shape()) throw InvalidInput("score_transfer: adversarial batch shape mismatch");
    std::vector<TransferCell> row;
    for (std::size_t v = 0; v < victims.size(); ++v) {
      TransferCell c;
      c.white_box = victims[v].name == row_surrogates[r];
      const auto& idx = valid[v];
      c.valid = idx.size();
      c.flagged = c.valid < min_valid;
      if (!idx.empty()) {
        const auto z = victims[v].model->logits(adversarial[r].gather(idx));
        std::size_t fooled = 0, fooled_real = 0, fooled_fake = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const int y = labels[idx[i]];
          const bool f = predict_label(z[i]) != y;
          fooled += f;
          if (y == 0) {
            ++c.valid_real;
            fooled_real += f;
          } else {
            ++c.valid_fake;
            fooled_fake += f;
          }
        }
        c.asr = 100.0 * static_cast<double>(fooled) / static_cast<double>(c.valid);
        c.asr_real = c.valid_real ? 100.0 * static_cast<double>(fooled_real) / static_cast<double>(c.valid_real) : kNaN;
        c.asr_fake = c.valid_fake ? 100.0 * static_cast<double>(fooled_fake) / static_cast<double>(c.valid_fake) : kNaN;
      } else {
        c.asr_real = c.asr_fake = kNaN;
      }
      row.push_back(c);
    }
    m.cells.push_back(std::move(row));
  }
  return m;
}

TransferMatrix transfer_eval(const std::vector<Surrogate>& surrogates, const std::vector<Victim>& victims,
                             const std::vector<Method>& attacks, const Tensor& x, std::span<const int> labels,
                             const TransferConfig& cfg) {
  if (surrogates.empty() || victims.empty() || attacks.empty()) {
    throw InvalidParameter("transfer_eval: need at least one surrogate, victim and attack");
  }
  std::vector<std::string> rs, ra;
  std::vector<Tensor> adv;
  for (const auto& s : surrogates) {
    for (Method m : attacks) {
      rs.push_back(s.name);
      ra.push_back(to_string(m));
      adv.push_back(run_attack(m, s.targets, x, labels, cfg.attack).adversarial);
    }
  }
  return score_transfer(rs, ra, adv, victims, x, labels, cfg.min_valid);
}

// ---------------------------------------------------------------------------
// Gradient diagnostic

GradientDiagnostic gradient_diagnostic(const Classifier& model, const Tensor& points, std::span<const int> labels,
                                       std::size_t coords_per_image, double threshold, std::uint64_t seed) {
  check_batch(points, "gradient_diagnostic");
  check_labels(points, labels, "gradient_diagnostic");
  const std::size_t per = points.shape().per_image();
  if (coords_per_image == 0 || coords_per_image > per) {
    throw InvalidParameter("gradient_diagnostic: coords_per_image must lie in [1, " + std::to_string(per) + "]");
  }
  if (!(threshold >= 0.0)) throw InvalidParameter("gradient_diagnostic: threshold must be >= 0");
  const Tensor g = input_gradient(model, points, labels);
  GradientDiagnostic d;
  d.images = points.shape().n;
  d.coords_per_image = coords_per_image;
  d.threshold = threshold;
  d.samples.reserve(d.images * coords_per_image);
  Rng rng = make_rng(seed, 21);
  std::vector<std::size_t> order(per);
  std::size_t near_zero = 0;
  double abs_sum = 0.0;
  for (std::size_t n = 0; n < d.images; ++n) {
    std::iota(order.begin(), order.end(), 0);
    const auto gi = g.image(n);
    for (std::size_t i = 0; i < coords_per_image; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, per - 1);
      std::swap(order[i], order[pick(rng)]);
      const double v = gi[order[i]];
      d.samples.push_back(v);
      near_zero += std::abs(v) < threshold;
      abs_sum += std::abs(v);
    }
  }
  d.near_zero_fraction = static_cast<double>(near_zero) / static_cast<double>(d.samples.size());
  d.mean_abs = abs_sum / static_cast<double>(d.samples.size());
  return d;
}

// ---------------------------------------------------------------------------
// Image quality

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t h, std::size_t w) {
  static const std::vector<double> k = gaussian_window();
  if (h < k.size() || w < k.size()) throw InvalidInput("ssim: images must be at least 11x11");
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const std::size_t n = h * w;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a[i] * 255.0;
    y[i] = b[i] * 255.0;
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k);
  const auto my = filter_valid(y, h, w, k);
  const auto sxx = filter_valid(xx, h, w, k);
  const auto syy = filter_valid(yy, h, w, k);
  const auto sxy = filter_valid(xy, h, w, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

QualityReport image_quality(const Tensor& x, const Tensor& x_adv) {
  if (x.shape() != x_adv.shape()) throw InvalidInput("image_quality: shapes differ");
  check_batch(x, "image_quality");
  if (!x.in_unit_range() || !x_adv.in_unit_range()) throw InvalidInput("image_quality: images must lie in [0,1]");
  QualityReport q;
  double se = 0.0;
  const auto a = x.values();
  const auto b = x_adv.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = 255.0 * (a[i] - b[i]);
    se += d * d;
  }
  q.mse = se / static_cast<double>(a.size());
  q.psnr = psnr_from_mse(q.mse);
  const Shape s = x.shape();
  double ssim = 0.0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t off = (n * s.c + c) * s.plane();
      ssim += ssim_plane(a.subspan(off, s.plane()), b.subspan(off, s.plane()), s.h, s.w);
    }
  q.ssim = ssim / static_cast<double>(s.n * s.c);
  return q;
}

nlohmann::json to_json(const QualityReport& q) {
  return {{"mse", q.mse}, {"psnr", num(q.psnr)}, {"ssim", q.ssim}};
}

nlohmann::json to_json(const GradientDiagnostic& g, bool include_samples) {
  nlohmann::json j = {{"images", g.images},
                      {"coords_per_image", g.coords_per_image},
                      {"samples", g.samples.size()},
                      {"threshold", g.threshold},
                      {"near_zero_fraction", g.near_zero_fraction},
                      {"mean_abs", g.mean_abs}};
  if (include_samples) j["values"] = g.samples;
  return j;
}

std::vector<FamilyScore> family_breakdown(const Classifier& victim, const Tensor& x, const Tensor& x_adv,
                                          std::span<const int> labels, const std::vector<std::string>& families) {
  if (families.size() != labels.size() || x.shape() != x_adv.shape()) {
    throw InvalidInput("family_breakdown: inputs disagree in size");
  }
  const auto zc = victim.logits(x);
  const auto za = victim.logits(x_adv);
  std::vector<std::string> names = families;
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::vector<FamilyScore> out;
  for (const auto& f : names) {
    FamilyScore s;
    s.family = f;
    std::size_t correct = 0, fooled = 0;
    for (std::size_t i = 0; i < families.size(); ++i) {
      if (families[i] != f) continue;
      ++s.count;
      if (predict_label(zc[i]) == labels[i]) {
        ++correct;
        fooled += predict_label(za[i]) != labels[i];
      }
    }
    s.clean_accuracy = static_cast<double>(correct) / static_cast<double>(s.count);
    s.asr = correct ? 100.0 * static_cast<double>(fooled) / static_cast<double>(correct) : kNaN;
    out.push_back(s);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace fpba
