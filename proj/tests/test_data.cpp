#include <algorithm>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fpba/archive.hpp"
#include "fpba/data.hpp"
#include "fpba/error.hpp"
#include "fpba/frequency.hpp"
#include "fpba/image_io.hpp"
#include "support.hpp"

using namespace fpba;
using fpba::testing::TempDir;

namespace {

SynthConfig small_synth(std::size_t n = 30) {
  SynthConfig sc;
  sc.n_per_class = n;
  sc.image_size = 32;
  return sc;
}

Image8 solid(std::size_t size, std::uint8_t v, std::size_t channels = 3) {
  Image8 img{size, size, channels, std::vector<std::uint8_t>(size * size * channels, v)};
  img.pixels[0] = static_cast<std::uint8_t>(v ^ 0x55);
  return img;
}

}  // namespace

TEST_CASE("synthetic dataset is balanced, stratified and deterministic") {
  const auto a = synth_dataset(small_synth());
  const auto b = synth_dataset(small_synth());
  CHECK(a.images.storage() == b.images.storage());
  CHECK(a.size() == 60);
  CHECK(a.images.in_unit_range());
  CHECK_NOTHROW(a.validate());
  CHECK(a.max_class_imbalance() == 0.0);
  CHECK(a.indices(Split::Train).size() == 48);
  CHECK(a.indices(Split::Val).size() == 6);
  CHECK(a.indices(Split::Test).size() == 6);
  std::set<std::string> fams(a.families.begin(), a.families.end());
  CHECK(fams == std::set<std::string>{"real", "gan", "diffusion", "ringing"});
  CHECK(a.indices(Split::Train, "gan").size() == 8);

  auto other = small_synth();
  other.seed = 1;
  CHECK(synth_dataset(other).images.storage() != a.images.storage());

  const auto hashes = a.content_hashes();
  CHECK(std::set<std::uint64_t>(hashes.begin(), hashes.end()).size() == hashes.size());
}

TEST_CASE("artifact families leave their spectral signature") {
  const auto tex = synth_texture(32, 1, 5);
  auto high_energy = [](const std::vector<double>& img) {
    Tensor t(Shape{1, 1, 32, 32}, img);
    const Tensor s = dct2(t);
    double e = 0.0;
    for (std::size_t u = 16; u < 32; ++u)
      for (std::size_t v = 16; v < 32; ++v) e += s.at(0, 0, u, v) * s.at(0, 0, u, v);
    return e;
  };
  auto gan = tex;
  apply_artifact(gan, 32, 1, "gan", 1);
  CHECK(high_energy(gan) > 3.0 * high_energy(tex));
  auto diff = tex;
  apply_artifact(diff, 32, 1, "diffusion", 1);
  CHECK(high_energy(diff) < high_energy(tex));
  CHECK_THROWS_AS(apply_artifact(diff, 32, 1, "vae", 1), InvalidParameter);
}

TEST_CASE("synthetic dataset validates its configuration") {
  auto sc = small_synth();
  sc.families = {"nope"};
  CHECK_THROWS_AS(synth_dataset(sc), InvalidParameter);
  sc = small_synth();
  sc.image_size = 16;
  CHECK_THROWS_AS(synth_dataset(sc), InvalidParameter);
  sc = small_synth();
  sc.split = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(synth_dataset(sc), InvalidParameter);
}

TEST_CASE("dataset validation catches leaks across splits") {
  auto ds = synth_dataset(small_synth(10));
  const auto train = ds.indices(Split::Train);
  const auto test = ds.indices(Split::Test);
  std::copy(ds.images.image(train[0]).begin(), ds.images.image(train[0]).end(), ds.images.image(test[0]).begin());
  CHECK_THROWS_AS(ds.validate(), InvalidDataset);
  ds.labels.pop_back();
  CHECK_THROWS_AS(ds.validate(), InvalidDataset);
}

TEST_CASE("dataset round trips through npz with its manifest") {
  TempDir dir("ds");
  const auto ds = synth_dataset(small_synth(12));
  ds.save(dir / "d.npz");
  const auto back = LabeledDataset::load(dir / "d.npz");
  CHECK(back.images.storage() == ds.images.storage());
  CHECK(back.labels == ds.labels);
  CHECK(back.splits == ds.splits);
  CHECK(back.families == ds.families);
  const auto m = ds.manifest();
  CHECK(m.at("hashes").size() == ds.size());
  CHECK(m.at("families").size() == 4);
}

TEST_CASE("npy encoding round trips each dtype") {
  const std::vector<double> d = {1.5, -2.0, 3.25, 0.0, 1e-300, 7.0};
  const auto a = decode_npy(encode_npy(make_array(std::span<const double>(d), {2, 3})));
  CHECK(a.dtype == "<f8");
  CHECK(a.shape == std::vector<std::size_t>{2, 3});
  CHECK(a.to_doubles() == d);
  const std::vector<std::int32_t> i = {-1, 2, 3};
  CHECK(decode_npy(encode_npy(make_array(std::span<const std::int32_t>(i), {3}))).to_ints() ==
        std::vector<std::int64_t>{-1, 2, 3});
  const std::vector<std::uint8_t> u = {0, 255};
  CHECK(decode_npy(encode_npy(make_array(std::span<const std::uint8_t>(u), {2}))).to_ints() ==
        std::vector<std::int64_t>{0, 255});
  CHECK_THROWS_AS(make_array(std::span<const double>(d), {4}), FormatError);
}

TEST_CASE("archive keeps arrays and text members") {
  TempDir dir("ar");
  Archive ar;
  const std::vector<double> v = {1, 2, 3};
  ar.put("x", make_array(std::span<const double>(v), {3}));
  ar.put_text("manifest.json", "{\"k\": 1}");
  ar.save(dir / "a.npz");
  const auto back = Archive::load(dir / "a.npz");
  CHECK(back.contains("x"));
  CHECK(back.array("x").to_doubles() == v);
  CHECK(back.text("manifest.json") == "{\"k\": 1}");
  CHECK_THROWS(back.array("y"));
}

TEST_CASE("png and jpeg codecs") {
  TempDir dir("img");
  const Tensor x = fpba::testing::random_batch(1, 3, 9, 7, 4);
  const Image8 img = to_image8(x, 0);
  CHECK(img.width == 7);
  CHECK(img.height == 9);
  write_png(dir / "a.png", img);
  const Image8 back = read_png(dir / "a.png");
  CHECK(back.pixels == img.pixels);
  CHECK(max_abs_diff(from_image8(back), x) <= 0.5 / 255.0 + 1e-12);

  const auto bytes = encode_jpeg(solid(16, 128), 95);
  const Image8 j = decode_jpeg(bytes);
  CHECK(j.width == 16);
  double mean = 0.0;
  for (auto p : j.pixels) mean += p;
  CHECK(std::abs(mean / static_cast<double>(j.pixels.size()) - 128.0) < 1.0);

  std::ofstream(dir / "bad.png") << "garbage";
  CHECK_THROWS_AS(read_image(dir / "bad.png"), FormatError);
}

TEST_CASE("folder loader resizes, deduplicates and skips undecodable files") {
  TempDir dir("folder");
  for (int k = 0; k < 12; ++k) write_png(dir / ("img" + std::to_string(k) + ".png"), solid(40, std::uint8_t(10 * k)));
  write_png(dir / "copy.png", solid(40, 30));  // same content as img3
  std::ofstream(dir / "broken.jpg") << "not an image";
  const auto res = load_image_folder(dir.path(), 1, SplitSpec{}, 32);
  CHECK(res.skipped == 1);
  CHECK(res.duplicates == 1);
  const auto& ds = res.dataset;
  CHECK(ds.size() == 12);
  CHECK(ds.images.shape() == Shape{12, 3, 32, 32});
  CHECK(std::all_of(ds.labels.begin(), ds.labels.end(), [](int l) { return l == 1; }));
  CHECK_NOTHROW(ds.validate());

  // Split assignment follows content-hash order, so it ignores file names.
  const auto hashes = ds.content_hashes();
  CHECK(std::is_sorted(hashes.begin(), hashes.end()));
  CHECK(ds.indices(Split::Train).size() == 10);

  CHECK_THROWS_AS(load_image_folder(dir / "missing", 0, SplitSpec{}, 32), IoError);
  TempDir empty("empty");
  CHECK_THROWS_AS(load_image_folder(empty.path(), 0, SplitSpec{}, 32), InvalidDataset);
}

TEST_CASE("concat joins real and fake folders") {
  const auto a = synth_dataset(small_synth(4));
  const auto b = synth_dataset(small_synth(6));
  const auto c = concat({a, b});
  CHECK(c.size() == 20);
  CHECK(c.labels.size() == 20);
  auto sc = small_synth(2);
  sc.image_size = 40;
  CHECK_THROWS_AS(concat({a, synth_dataset(sc)}), InvalidDataset);
}
