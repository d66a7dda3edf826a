#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fpba {

/// One array in NumPy .npy layout (little-endian, C order).
struct NpyArray {
  std::string dtype;  // "<f8", "<f4", "<i4", "<i8", "|u1"
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;

  std::size_t count() const;
  std::vector<double> to_doubles() const;
  std::vector<std::int64_t> to_ints() const;
};

NpyArray make_array(std::span<const double> values, std::vector<std::size_t> shape);
NpyArray make_array(std::span<const float> values, std::vector<std::size_t> shape);
NpyArray make_array(std::span<const std::int32_t> values, std::vector<std::size_t> shape);
NpyArray make_array(std::span<const std::uint8_t> values, std::vector<std::size_t> shape);

std::vector<std::uint8_t> encode_npy(const NpyArray& array);
NpyArray decode_npy(std::span<const std::uint8_t> bytes);
void write_npy(const std::filesystem::path& path, const NpyArray& array);
NpyArray read_npy(const std::filesystem::path& path);

/// A ZIP container of .npy members plus raw text members, i.e. an .npz file
/// that `numpy.load` opens directly. Text members (e.g. "manifest.json")
/// come back from NumPy as bytes.
class Archive {
 public:
  void put(const std::string& name, NpyArray array);
  void put_text(const std::string& name, std::string text);

  bool contains(const std::string& name) const;
  const NpyArray& array(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  std::vector<std::string> array_names() const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, NpyArray> arrays_;
  std::map<std::string, std::string> texts_;
};

}  // namespace fpba
