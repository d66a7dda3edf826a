#include "fpba/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>

#include "fpba/error.hpp"

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

namespace fpba {
namespace {

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "<f8" || dtype == "<i8") return 8;
  if (dtype == "<f4" || dtype == "<i4") return 4;
  if (dtype == "|u1") return 1;
  throw FormatError("npy: unsupported dtype '" + dtype + "'");
}

template <typename T>
NpyArray pack(std::span<const T> values, std::vector<std::size_t> shape, std::string dtype) {
  NpyArray a{std::move(dtype), std::move(shape), {}};
  if (a.count() != values.size()) throw FormatError("npy: shape does not match value count");
  a.bytes.resize(values.size_bytes());
  if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), values.size_bytes());
  return a;
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> inflate_raw(std::span<const std::uint8_t> in, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw FormatError("zip: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw FormatError("zip: corrupt deflate stream");
  return out;
}

}  // namespace

std::size_t NpyArray::count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double> NpyArray::to_doubles() const {
  const std::size_t n = count();
  if (bytes.size() != n * dtype_size(dtype)) throw FormatError("npy: payload size mismatch");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = bytes.data() + i * dtype_size(dtype);
    if (dtype == "<f8") out[i] = load_le<double>(p);
    else if (dtype == "<f4") out[i] = load_le<float>(p);
    else if (dtype == "<i4") out[i] = load_le<std::int32_t>(p);
    else if (dtype == "<i8") out[i] = static_cast<double>(load_le<std::int64_t>(p));
    else out[i] = *p;
  }
  return out;
}

std::vector<std::int64_t> NpyArray::to_ints() const {
  if (dtype == "<f8" || dtype == "<f4") throw FormatError("npy: expected an integer array");
  const std::size_t n = count();
  if (bytes.size() != n * dtype_size(dtype)) throw FormatError("npy: payload size mismatch");
  std::vector<std::int64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = bytes.data() + i * dtype_size(dtype);
    if (dtype == "<i4") out[i] = load_le<std::int32_t>(p);
    else if (dtype == "<i8") out[i] = load_le<std::int64_t>(p);
    else out[i] = *p;
  }
  return out;
}

NpyArray make_array(std::span<const double> v, std::vector<std::size_t> shape) { return pack(v, std::move(shape), "<f8"); }
NpyArray make_array(std::span<const float> v, std::vector<std::size_t> shape) { return pack(v, std::move(shape), "<f4"); }
NpyArray make_array(std::span<const std::int32_t> v, std::vector<std::size_t> shape) {
  return pack(v, std::move(shape), "<i4");
}
NpyArray make_array(std::span<const std::uint8_t> v, std::vector<std::size_t> shape) {
  return pack(v, std::move(shape), "|u1");
}

std::vector<std::uint8_t> encode_npy(const NpyArray& a) {
  std::string shape = "(";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    if (i > 0) shape += ", ";
    shape += std::to_string(a.shape[i]);
  }
  shape += a.shape.size() == 1 ? ",)" : ")";
  std::string header = "{'descr': '" + a.dtype + "', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::vector<std::uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put_u16(out, static_cast<std::uint16_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  return out;
}

NpyArray decode_npy(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (bytes.size() < 10 || !std::equal(magic, magic + 6, bytes.begin())) throw FormatError("npy: bad magic");
  std::size_t header_len = 0, offset = 0;
  if (bytes[6] == 1) {
    header_len = load_le<std::uint16_t>(bytes.data() + 8);
    offset = 10;
  } else {
    if (bytes.size() < 12) throw FormatError("npy: truncated header");
    header_len = load_le<std::uint32_t>(bytes.data() + 8);
    offset = 12;
  }
  if (offset + header_len > bytes.size()) throw FormatError("npy: truncated header");
  const std::string header(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                           bytes.begin() + static_cast<std::ptrdiff_t>(offset + header_len));

  std::smatch m;
  NpyArray a;
  if (!std::regex_search(header, m, std::regex(R"('descr':\s*'([^']+)')"))) throw FormatError("npy: no descr");
  a.dtype = m[1];
  if (a.dtype == "<u1") a.dtype = "|u1";
  if (std::regex_search(header, std::regex(R"('fortran_order':\s*True)"))) {
    throw FormatError("npy: fortran order not supported");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape':\s*\(([^)]*)\))"))) throw FormatError("npy: no shape");
  const std::string dims = m[1];
  std::regex num(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it) {
    a.shape.push_back(std::stoull(it->str()));
  }
  const std::size_t payload = a.count() * dtype_size(a.dtype);
  if (offset + header_len + payload > bytes.size()) throw FormatError("npy: truncated payload");
  a.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset + header_len),
                 bytes.begin() + static_cast<std::ptrdiff_t>(offset + header_len + payload));
  return a;
}

void write_npy(const std::filesystem::path& path, const NpyArray& array) {
  const auto bytes = encode_npy(array);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

NpyArray read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_npy(bytes);
}

void Archive::put(const std::string& name, NpyArray array) { arrays_[name] = std::move(array); }

void Archive::put_text(const std::string& name, std::string text) { texts_[name] = std::move(text); }

bool Archive::contains(const std::string& name) const { return arrays_.count(name) || texts_.count(name); }

const NpyArray& Archive::array(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw FormatError("archive: missing array '" + name + "'");
  return it->second;
}

const std::string& Archive::text(const std::string& name) const {
  auto it = texts_.find(name);
  if (it == texts_.end()) throw FormatError("archive: missing member '" + name + "'");
  return it->second;
}

std::vector<std::string> Archive::array_names() const {
  std::vector<std::string> names;
  for (const auto& [k, _] : arrays_) names.push_back(k);
  return names;
}

void Archive::save(const std::filesystem::path& path) const {
  struct Entry {
    std::string name;
    std::vector<std::uint8_t> data;
  };
  std::vector<Entry> entries;
  for (const auto& [name, text] : texts_) entries.push_back({name, {text.begin(), text.end()}});
  for (const auto& [name, arr] : arrays_) entries.push_back({name + ".npy", encode_npy(arr)});

  std::vector<std::uint8_t> out, central;
  // Fixed DOS timestamp (1980-01-01) so identical content gives identical bytes.
  const std::uint16_t dos_time = 0, dos_date = (0 << 9) | (1 << 5) | 1;
  for (const auto& e : entries) {
    if (e.data.size() > 0xffffffffULL) throw IoError("archive: member too large");
    const auto crc = static_cast<std::uint32_t>(crc32(0L, e.data.data(), static_cast<uInt>(e.data.size())));
    const auto size = static_cast<std::uint32_t>(e.data.size());
    const auto offset = static_cast<std::uint32_t>(out.size());
    put_u32(out, 0x04034b50);
    put_u16(out, 20);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, dos_time);
    put_u16(out, dos_date);
    put_u32(out, crc);
    put_u32(out, size);
    put_u32(out, size);
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    put_u16(out, 0);
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.insert(out.end(), e.data.begin(), e.data.end());

    put_u32(central, 0x02014b50);
    put_u16(central, 20);
    put_u16(central, 20);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, dos_time);
    put_u16(central, dos_date);
    put_u32(central, crc);
    put_u32(central, size);
    put_u32(central, size);
    put_u16(central, static_cast<std::uint16_t>(e.name.size()));
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u32(central, 0);
    put_u32(central, offset);
    central.insert(central.end(), e.name.begin(), e.name.end());
  }
  const auto central_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put_u32(out, 0x06054b50);
  put_u16(out, 0);
  put_u16(out, 0);
  put_u16(out, static_cast<std::uint16_t>(entries.size()));
  put_u16(out, static_cast<std::uint16_t>(entries.size()));
  put_u32(out, static_cast<std::uint32_t>(central.size()));
  put_u32(out, central_offset);
  put_u16(out, 0);

  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write '" + path.string() + "'");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing '" + path.string() + "'");
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 22) throw FormatError("'" + path.string() + "' is not a zip container");

  std::size_t eocd = buf.size() - 22;
  while (load_le<std::uint32_t>(buf.data() + eocd) != 0x06054b50) {
    if (eocd == 0 || buf.size() - eocd > 22 + 0xffff) throw FormatError("zip: end record not found");
    --eocd;
  }
  const std::size_t count = load_le<std::uint16_t>(buf.data() + eocd + 10);
  std::size_t p = load_le<std::uint32_t>(buf.data() + eocd + 16);

  Archive archive;
  for (std::size_t i = 0; i < count; ++i) {
    if (p + 46 > buf.size() || load_le<std::uint32_t>(buf.data() + p) != 0x02014b50) {
      throw FormatError("zip: bad central directory");
    }
    const auto method = load_le<std::uint16_t>(buf.data() + p + 10);
    const std::size_t comp = load_le<std::uint32_t>(buf.data() + p + 20);
    const std::size_t size = load_le<std::uint32_t>(buf.data() + p + 24);
    const std::size_t name_len = load_le<std::uint16_t>(buf.data() + p + 28);
    const std::size_t extra_len = load_le<std::uint16_t>(buf.data() + p + 30);
    const std::size_t comment_len = load_le<std::uint16_t>(buf.data() + p + 32);
    const std::size_t local = load_le<std::uint32_t>(buf.data() + p + 42);
    const std::string name(buf.begin() + static_cast<std::ptrdiff_t>(p + 46),
                           buf.begin() + static_cast<std::ptrdiff_t>(p + 46 + name_len));
    p += 46 + name_len + extra_len + comment_len;

    if (local + 30 > buf.size()) throw FormatError("zip: bad local header");
    const std::size_t data_at = local + 30 + load_le<std::uint16_t>(buf.data() + local + 26) +
                                load_le<std::uint16_t>(buf.data() + local + 28);
    if (data_at + comp > buf.size()) throw FormatError("zip: truncated member '" + name + "'");
    std::span<const std::uint8_t> raw(buf.data() + data_at, comp);
    std::vector<std::uint8_t> data;
    if (method == 0) {
      data.assign(raw.begin(), raw.end());
    } else if (method == 8) {
      data = inflate_raw(raw, size);
    } else {
      throw FormatError("zip: unsupported compression for '" + name + "'");
    }

    if (name.size() > 4 && name.ends_with(".npy")) {
      archive.arrays_[name.substr(0, name.size() - 4)] = decode_npy(data);
    } else {
      archive.texts_[name] = std::string(data.begin(), data.end());
    }
  }
  return archive;
}

}  // namespace fpba
