// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/tensor_pack.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "trpts/error.hpp"

namespace trpts {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'P', 'T'};

// Copies `count` elements of `width` bytes, swapping to little-endian order
// on big-endian hosts.
void copy_le(const void* src, std::byte* dst, std::size_t count, std::size_t width) {
  std::memcpy(dst, src, count * width);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) std::reverse(dst + i * width, dst + (i + 1) * width);
  }
}

template <typename T>
void put(std::vector<std::byte>& out, T value) {
  std::byte buf[sizeof(T)];
  copy_le(&value, buf, 1, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    auto raw = take(sizeof(T));
    copy_le(raw.data(), reinterpret_cast<std::byte*>(&value), 1, sizeof(T));
    return value;
  }

  std::span<const std::byte> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw InputError("tensor pack truncated");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kI64: return 8;
  }
  throw InputError("unknown dtype code");
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU8: return "u8";
    case DType::kI64: return "i64";
  }
  return "?";
}

std::uint64_t PackEntry::count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void TensorPack::add_raw(std::string name, DType dtype, std::vector<std::uint64_t> dims,
                         const void* data, std::size_t count) {
  if (contains(name)) throw UsageError("duplicate tensor pack entry '" + name + "'");
  if (dims.size() > 255) throw UsageError("tensor pack entries support rank <= 255");
  PackEntry entry{std::move(name), dtype, std::move(dims), {}};
  if (entry.count() != count) {
    throw DimensionError("tensor pack entry '" + entry.name + "': dims hold " +
                         std::to_string(entry.count()) + " values, got " + std::to_string(count));
  }
  entry.payload.resize(count * dtype_size(dtype));
  copy_le(data, entry.payload.data(), count, dtype_size(dtype));
  entries_.push_back(std::move(entry));
}

void TensorPack::add_f32(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values) {
  add_raw(std::move(name), DType::kF32, std::move(dims), values.data(), values.size());
}
void TensorPack::add_f64(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values) {
  add_raw(std::move(name), DType::kF64, std::move(dims), values.data(), values.size());
}
void TensorPack::add_u8(std::string name, std::vector<std::uint64_t> dims,
                        std::span<const std::uint8_t> values) {
  add_raw(std::move(name), DType::kU8, std::move(dims), values.data(), values.size());
}
void TensorPack::add_i64(std::string name, std::vector<std::uint64_t> dims,
                         std::span<const std::int64_t> values) {
  add_raw(std::move(name), DType::kI64, std::move(dims), values.data(), values.size());
}

bool TensorPack::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

const PackEntry& TensorPack::entry(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw InputError("tensor pack has no entry '" + name + "'");
}

template <typename T>
std::vector<T> TensorPack::typed(const std::string& name, DType dtype) const {
  const auto& e = entry(name);
  if (e.dtype != dtype) {
    throw InputError("tensor pack entry '" + name + "' is " + dtype_name(e.dtype) + ", expected " +
                     dtype_name(dtype));
  }
  std::vector<T> out(static_cast<std::size_t>(e.count()));
  copy_le(e.payload.data(), reinterpret_cast<std::byte*>(out.data()), out.size(), sizeof(T));
  return out;
}

std::vector<float> TensorPack::f32(const std::string& name) const { return typed<float>(name, DType::kF32); }
std::vector<double> TensorPack::f64(const std::string& name) const { return typed<double>(name, DType::kF64); }
std::vector<std::uint8_t> TensorPack::u8(const std::string& name) const {
  return typed<std::uint8_t>(name, DType::kU8);
}
std::vector<std::int64_t> TensorPack::i64(const std::string& name) const {
  return typed<std::int64_t>(name, DType::kI64);
}

std::vector<std::byte> TensorPack::serialize() const {
  std::vector<std::byte> out;
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put<std::uint32_t>(out, kTensorPackVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    for (char c : e.name) out.push_back(static_cast<std::byte>(c));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put<std::uint64_t>(out, d);
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return out;
}

TensorPack TensorPack::parse(std::span<const std::byte> bytes) {
  Reader in(bytes);
  auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic,
                  [](std::byte b, char c) { return b == static_cast<std::byte>(c); })) {
    throw InputError("not a tensor pack (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kTensorPackVersion) {
    throw InputError("unsupported tensor pack version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  TensorPack pack;
  for (std::uint32_t i = 0; i < count; ++i) {
    PackEntry e;
    const auto name_len = in.get<std::uint32_t>();
    auto name = in.take(name_len);
    e.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    const auto code = in.get<std::uint8_t>();
    if (code > 3) throw InputError("tensor pack entry '" + e.name + "' has unknown dtype " + std::to_string(code));
    e.dtype = static_cast<DType>(code);
    const auto rank = in.get<std::uint8_t>();
    for (int r = 0; r < rank; ++r) e.dims.push_back(in.get<std::uint64_t>());
    const auto payload = in.take(static_cast<std::size_t>(e.count()) * dtype_size(e.dtype));
    e.payload.assign(payload.begin(), payload.end());
    if (pack.contains(e.name)) throw InputError("tensor pack repeats entry '" + e.name + "'");
    pack.entries_.push_back(std::move(e));
  }
  if (!in.done()) throw InputError("trailing bytes after tensor pack entries");
  return pack;
}

void TensorPack::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

TensorPack TensorPack::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace trpts
