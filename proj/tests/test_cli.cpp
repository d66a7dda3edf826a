#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "fpba/archive.hpp"
#include "fpba/config.hpp"
#include "json.hpp"
#include "support.hpp"

using fpba::cli::dispatch;
using fpba::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::size_t line_count(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

// Small data set and detectors shared by the pipeline tests.
struct Pipeline {
  TempDir dir{"cli"};
  std::string out = dir.path().string();

  Pipeline() {
    REQUIRE(dispatch({"gen-data", "--out", out, "--n-per-class", "24", "--size", "32", "--seed", "3"}) == 0);
    REQUIRE(dispatch({"train", "--out", out, "--arch", "frequency-mlp", "--epochs", "2", "--lr", "3e-3", "--augment",
                      "none", "--name", "mlp"}) == 0);
    REQUIRE(dispatch({"train", "--out", out, "--arch", "frequency-mlp", "--epochs", "1", "--augment", "none",
                      "--seed", "9", "--name", "mlp2"}) == 0);
  }
  std::string detector(const std::string& name) const { return (dir.path() / "detectors" / name / "detector.npz").string(); }
};

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(dispatch({}) == fpba::cli::kUsage);
  CHECK(dispatch({"frobnicate"}) == fpba::cli::kUsage);
  CHECK(dispatch({"train", "--epochs", "many"}) == fpba::cli::kUsage);
  CHECK(dispatch({"train", "--no-such-flag"}) == fpba::cli::kUsage);
  TempDir dir("usage");
  CHECK(dispatch({"train", "--out", dir.path().string(), "--augment", "heavy"}) == fpba::cli::kUsage);
  CHECK(dispatch({"attack", "--out", dir.path().string(), "--method", "cw"}) == fpba::cli::kUsage);
  CHECK(dispatch({"--help"}) == fpba::cli::kOk);
}

TEST_CASE("missing inputs exit with code 3") {
  TempDir dir("missing");
  const std::string out = dir.path().string();
  CHECK(dispatch({"train", "--out", out}) == fpba::cli::kMissingInput);
  CHECK(dispatch({"attack", "--out", out, "--detector", out + "/nope.npz"}) == fpba::cli::kMissingInput);
  CHECK(dispatch({"bayes-train", "--out", out, "--detector", out + "/nope.npz"}) == fpba::cli::kMissingInput);
  CHECK(dispatch({"train", "--config", out + "/absent.json"}) == fpba::cli::kMissingInput);
}

TEST_CASE("default output root comes from the environment") {
  TempDir dir("env");
  ::setenv(fpba::cli::kOutRootEnv, dir.path().c_str(), 1);
  const int rc = dispatch({"gen-data", "--n-per-class", "6", "--size", "32"});
  ::unsetenv(fpba::cli::kOutRootEnv);
  CHECK(rc == 0);
  CHECK(fs::exists(dir / "data/default/dataset.npz"));
  CHECK(fs::exists(dir / "data/default/dataset_manifest.json"));
  CHECK(fs::exists(dir / "data/default/run_config.json"));
  // Artifact directories are never overwritten.
  CHECK(dispatch({"gen-data", "--out", dir.path().string(), "--n-per-class", "6", "--size", "32"}) ==
        fpba::cli::kFailure);
}

TEST_CASE("training divergence exits with code 4") {
  TempDir dir("diverge");
  const std::string out = dir.path().string();
  REQUIRE(dispatch({"gen-data", "--out", out, "--n-per-class", "8", "--size", "32"}) == 0);
  CHECK(dispatch({"train", "--out", out, "--arch", "frequency-mlp", "--epochs", "2", "--lr", "1e300"}) ==
        fpba::cli::kDivergence);
}

TEST_CASE("full pipeline writes every artifact") {
  Pipeline p;
  const std::string& out = p.out;
  CHECK(line_count(p.dir / "detectors/mlp/history.csv") == 3);

  REQUIRE(dispatch({"bayes-train", "--out", out, "--detector", p.detector("mlp"), "--iters-bayes", "4",
                    "--bayes-batch", "8", "--name", "ens"}) == 0);
  const fs::path ens = p.dir / "ensembles/ens";
  CHECK(fs::exists(ens / "ensemble.npz"));
  CHECK(line_count(ens / "chains.csv") == 1 + 3 * 4);
  const auto summary = nlohmann::json::parse(slurp(ens / "summary.json"));
  CHECK(summary.contains("bma_val_accuracy"));

  REQUIRE(dispatch({"attack", "--out", out, "--method", "fpba", "--detector", p.detector("mlp"), "--ensemble",
                    (ens / "ensemble.npz").string(), "--max-images", "4", "--iters", "2", "--samples", "2", "--png",
                    "--name", "fpba"}) == 0);
  const fs::path atk = p.dir / "attacks/fpba";
  const auto adv = fpba::Archive::load(atk / "adversarial.npz");
  CHECK(adv.contains("adversarial"));
  CHECK(adv.contains("clean"));
  const auto clean = adv.array("clean").to_doubles(), crafted = adv.array("adversarial").to_doubles();
  double linf = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) linf = std::max(linf, std::abs(clean[i] - crafted[i]));
  CHECK(linf <= 8.0 / 255.0 + 1e-12);
  CHECK(fs::exists(atk / "summary.json"));
  CHECK(fs::exists(atk / "png"));

  REQUIRE(dispatch({"eval", "--out", out, "--matrix", "--surrogate", "mlp=" + p.detector("mlp"), "--surrogate",
                    "mlp2=" + p.detector("mlp2"), "--victim", "mlp=" + p.detector("mlp"), "--victim",
                    "mlp2=" + p.detector("mlp2"), "--victim", "again=" + p.detector("mlp2"), "--methods", "ifgsm",
                    "--methods", "pgd", "--max-images", "6", "--iters", "2", "--min-valid", "1"}) == 0);
  CHECK(line_count(p.dir / "eval/matrix/matrix.csv") == 1 + 2 * 2 * 3);
  CHECK(fs::exists(p.dir / "eval/matrix/matrix.json"));

  REQUIRE(dispatch({"eval", "--out", out, "--diagnostic", "--detector", p.detector("mlp"), "--attack-dir",
                    atk.string(), "--coords", "10", "--name", "diag"}) == 0);
  const auto diag = nlohmann::json::parse(slurp(p.dir / "eval/diag/diagnostic.json"));
  CHECK(diag.at("coords_per_image") == 10);

  REQUIRE(dispatch({"saliency", "--out", out, "--detector", p.detector("mlp"), "--max-images", "4"}) == 0);
  CHECK(fs::exists(p.dir / "saliency/default/saliency.png"));

  REQUIRE(dispatch({"report", "--out", out}) == 0);
  const auto report = nlohmann::json::parse(slurp(p.dir / "reports/default/report.json"));
  CHECK(report.at("attacks").size() == 1);
  CHECK(report.contains("quality_reference"));
}

TEST_CASE("rerunning a persisted config reproduces the artifact") {
  Pipeline p;
  REQUIRE(dispatch({"attack", "--out", p.out, "--method", "pgd", "--detector", p.detector("mlp"), "--max-images", "6",
                    "--iters", "3", "--name", "first"}) == 0);
  const fs::path first = p.dir / "attacks/first";
  TempDir other("rerun");
  REQUIRE(dispatch({"attack", "--config", (first / "run_config.json").string(), "--out", other.path().string()}) == 0);
  const fs::path second = other / "attacks/first";
  CHECK(slurp(first / "adversarial.npz") == slurp(second / "adversarial.npz"));
  CHECK(slurp(first / "summary.json") == slurp(second / "summary.json"));
}
