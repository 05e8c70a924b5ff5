// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// TensorPack: the binary container used for datasets, checkpoints, Fisher
// scores and masks.
//
//   magic "TRPT" | version u32 | entry count u32 |
//   per entry: name length u32, UTF-8 name, dtype u8, rank u8,
//              dims u64 x rank, raw payload
//
// All integers and payloads are little-endian.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace trpts {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2, kI64 = 3 };

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

inline constexpr std::uint32_t kTensorPackVersion = 1;

struct PackEntry {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> dims;
  std::vector<std::byte> payload;  // little-endian

  std::uint64_t count() const;
};

class TensorPack {
 public:
  void add_f32(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values);
  void add_f64(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values);
  void add_u8(std::string name, std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values);
  void add_i64(std::string name, std::vector<std::uint64_t> dims, std::span<const std::int64_t> values);

  bool contains(const std::string& name) const;
  const PackEntry& entry(const std::string& name) const;
  const std::vector<PackEntry>& entries() const { return entries_; }

  // Typed reads; the stored dtype must match.
  std::vector<float> f32(const std::string& name) const;
  std::vector<double> f64(const std::string& name) const;
  std::vector<std::uint8_t> u8(const std::string& name) const;
  std::vector<std::int64_t> i64(const std::string& name) const;

  std::vector<std::byte> serialize() const;
  static TensorPack parse(std::span<const std::byte> bytes);

  void write(const std::filesystem::path& path) const;
  static TensorPack read(const std::filesystem::path& path);

 private:
  void add_raw(std::string name, DType dtype, std::vector<std::uint64_t> dims, const void* data,
               std::size_t count);
  template <typename T>
  std::vector<T> typed(const std::string& name, DType dtype) const;

  std::vector<PackEntry> entries_;
};

}  // namespace trpts
