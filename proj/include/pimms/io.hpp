#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pimms/params.hpp"
#include "pimms/tensor.hpp"

namespace pimms::io {

using Metadata = std::map<std::string, std::string>;

inline constexpr std::string_view kCheckpointMagic = "PIMMSCKPT1";

/// Little-endian byte sink.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  /// u32 length + UTF-8 bytes.
  void str(std::string_view s);
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}
  std::string bytes(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  bool at_end() const { return pos_ == data_.size(); }
  std::string rest();

 private:
  void need(std::size_t n) const;
  std::string data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// UTF-8 key=value lines, keys in sorted order.
std::string format_metadata(const Metadata& meta);
Metadata parse_metadata(std::string_view text);

/// Checkpoint layout:
///   "PIMMSCKPT1"
///   per parameter: u32 name length, name bytes, u32 rank, u32 extents..., f32 data...
///   u32 0 (end-of-parameters marker; names are never empty)
///   metadata block to end of file (key=value lines)
void save_checkpoint(const std::filesystem::path& path, const ad::ParamSet& params, const Metadata& meta);

struct Checkpoint {
  ad::ParamSet params;
  Metadata meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const ad::ParamSet& params, const Metadata& meta);
Checkpoint decode_checkpoint(std::string data);

/// Raw tensor container used for scans and masks: u32 rank, u32 extents...,
/// f32 data..., all little-endian.
void write_raw_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_raw_tensor(const std::filesystem::path& path);

/// Rounds every element to the nearest float32.
void round_to_f32(std::span<double> values);

}  // namespace pimms::io
