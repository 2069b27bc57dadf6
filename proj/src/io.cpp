#include "pimms/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pimms::io {

namespace fs = std::filesystem;

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw std::runtime_error("truncated binary data");
}

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() { return bytes(u32()); }

std::string ByteReader::rest() {
  std::string s = data_.substr(pos_);
  pos_ = data_.size();
  return s;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string format_metadata(const Metadata& meta) {
  std::string out;
  for (const auto& [k, v] : meta) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
      throw std::invalid_argument("metadata entry cannot contain '=' in key or newlines: " + k);
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

Metadata parse_metadata(std::string_view text) {
  Metadata meta;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw std::runtime_error("malformed metadata line: " + std::string(line));
    meta[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  return meta;
}

std::string encode_checkpoint(const ad::ParamSet& params, const Metadata& meta) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  for (const auto& e : params) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data()) w.f32(static_cast<float>(v));
  }
  w.u32(0);
  w.bytes(format_metadata(meta));
  return w.buffer();
}

Checkpoint decode_checkpoint(std::string data) {
  ByteReader r(std::move(data));
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw std::runtime_error("not a PIMMS checkpoint");
  Checkpoint ck;
  for (;;) {
    const std::string name = r.bytes(r.u32());
    if (name.empty()) break;
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    for (auto& v : t.data()) v = r.f32();
    ck.params.add(name, std::move(t));
  }
  ck.meta = parse_metadata(r.rest());
  return ck;
}

void save_checkpoint(const fs::path& path, const ad::ParamSet& params, const Metadata& meta) {
  write_file_atomic(path, encode_checkpoint(params, meta));
}

Checkpoint load_checkpoint(const fs::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error("unreadable checkpoint " + path.string() + ": " + e.what());
  }
}

void write_raw_tensor(const fs::path& path, const Tensor& t) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f32(static_cast<float>(v));
  write_file_atomic(path, w.buffer());
}

Tensor read_raw_tensor(const fs::path& path) {
  ByteReader r(read_file(path));
  Shape shape(r.u32());
  if (shape.empty()) throw std::runtime_error("raw tensor with rank 0: " + path.string());
  for (auto& d : shape) d = r.u32();
  Tensor t(shape);
  for (auto& v : t.data()) v = r.f32();
  if (!r.at_end()) throw std::runtime_error("trailing bytes in raw tensor " + path.string());
  return t;
}

void round_to_f32(std::span<double> values) {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace pimms::io
