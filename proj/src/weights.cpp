#include "esres/weights.hpp"

#include <cstring>
#include <fstream>

namespace esres::nn {

namespace {

constexpr char kMagic[4] = {'E', 'S', 'R', 'W'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const uint8_t* p;
  size_t n;
  size_t at = 0;

  void need(size_t k, const char* what) {
    if (at + k > n) throw FormatError(std::string("weights: truncated ") + what);
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(p[at]) | static_cast<uint16_t>(p[at + 1]) << 8;
    at += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return p[at++];
  }
};

}  // namespace

void save_weights(const WeightStore& store, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    if (name.size() > 0xffff) throw FormatError("weights: tensor name too long");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    if (t.shape.size() > 0xff) throw FormatError("weights: tensor rank too large");
    out.push_back(static_cast<char>(t.shape.size()));
    int64_t count = 1;
    for (int d : t.shape) {
      if (d < 0) throw FormatError("weights: negative dimension in " + name);
      put_u32(out, static_cast<uint32_t>(d));
      count *= d;
    }
    if (count != static_cast<int64_t>(t.values.size()))
      throw FormatError("weights: value count does not match shape of " + name);
    for (float v : t.values) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("weights: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("weights: short write to " + path);
}

WeightStore load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("weights: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("weights: bad magic in " + path);
  r.at = 4;
  const uint16_t version = r.u16("version");
  if (version != kVersion)
    throw FormatError("weights: unsupported version " + std::to_string(version));
  const uint32_t count = r.u32("tensor count");

  WeightStore store;
  store.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16("name length");
    r.need(name_len, "name");
    std::string name(bytes.data() + r.at, name_len);
    r.at += name_len;
    const uint8_t rank = r.u8("rank");
    StoredTensor t;
    int64_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const uint32_t dim = r.u32("dimension");
      t.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    if (n < 0 || n > (1ll << 31)) throw FormatError("weights: implausible size for " + name);
    t.values.resize(static_cast<size_t>(n));
    r.need(static_cast<size_t>(n) * 4, "values");
    for (int64_t j = 0; j < n; ++j) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(r.p[r.at + b]) << (8 * b);
      std::memcpy(&t.values[static_cast<size_t>(j)], &bits, 4);
      r.at += 4;
    }
    store.emplace_back(std::move(name), std::move(t));
  }
  return store;
}

}  // namespace esres::nn
