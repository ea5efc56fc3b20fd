#include "sono/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sono::nn {
namespace {

constexpr char kMagic[4] = {'S', 'N', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) {
  std::uint64_t v = get_u64(in);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (int i = 0; i < t->data.size(); ++i) put_f64(out, t->data[i]);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  if (get_u32(in) != kVersion) throw std::runtime_error("unsupported checkpoint version: " + path);
  std::uint32_t count = get_u32(in);
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("checkpoint: truncated name");
    std::uint32_t rank = get_u32(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u64(in));
    Tensor t(shape);
    for (int k = 0; k < t.data.size(); ++k) t.data[k] = get_f64(in);
    if (!out.emplace(name, std::move(t)).second)
      throw std::runtime_error("checkpoint: duplicate tensor name " + name);
  }
  return out;
}

void save_params(const std::string& path, const ParamSet& params,
                 const std::vector<std::pair<std::string, const Tensor*>>& extras) {
  std::vector<std::pair<std::string, const Tensor*>> all;
  for (const auto& p : params.items) all.emplace_back(p.name, p.value);
  for (const auto& e : extras) all.push_back(e);
  write_checkpoint(path, all);
}

void load_params(const std::string& path, ParamSet& params) {
  auto stored = read_checkpoint(path);
  for (auto& p : params.items) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw std::runtime_error("checkpoint missing parameter: " + p.name);
    if (it->second.shape != p.value->shape)
      throw std::runtime_error("checkpoint shape mismatch for: " + p.name);
    p.value->data = it->second.data;
  }
}

}  // namespace sono::nn
