#include "dbl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dbl {
namespace {

constexpr char kMagic[4] = {'E', 'L', 'J', 'H'};

void write_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  write_u16(out, kCheckpointVersion);
  const std::string m = meta.dump();
  write_u32(out, static_cast<std::uint32_t>(m.size()));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const std::uint16_t version = read_u16(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t meta_len = read_u32(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  LoadedCheckpoint ck;
  ck.meta = nlohmann::json::parse(meta_str);
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(in);
    Shape shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(read_u32(in));
      numel *= shape[d];
    }
    std::vector<float> data(static_cast<size_t>(numel));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated tensor " + name);
    ck.tensors.emplace_back(std::move(name), Tensor::from(std::move(data), shape));
  }
  return ck;
}

const Tensor& LoadedCheckpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint has no tensor named " + name);
}

void save_model(const std::string& path, const NoisePredictor& m, nlohmann::json meta) {
  meta["arch"] = {{"channels", m.in_channels()}, {"height", m.height()},
                  {"width", m.width()},         {"base", m.base()},
                  {"time_dim", m.time_dim()}};
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [name, t] : m.params().items()) tensors.emplace_back(name, t);
  save_checkpoint(path, meta, tensors);
}

NoisePredictor load_model(const std::string& path, nlohmann::json* meta_out) {
  LoadedCheckpoint ck = load_checkpoint(path);
  const auto& a = ck.meta.at("arch");
  NoisePredictor m(a.at("channels").get<int>(), a.at("height").get<int>(),
                   a.at("width").get<int>(), 0, a.at("base").get<int>(),
                   a.at("time_dim").get<int>());
  for (auto& [name, p] : m.params().items()) {
    const Tensor& src = ck.find(name);
    if (src.shape() != p.shape())
      throw std::runtime_error("load_model: shape mismatch for " + name);
    p.impl()->data = src.data();
  }
  if (meta_out) *meta_out = std::move(ck.meta);
  return m;
}

}  // namespace dbl
