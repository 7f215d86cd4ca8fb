#include "adan/network.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace adan {

std::vector<LayerSpec> lenet_backbone(std::size_t label_count) {
  return {
      LayerSpec::conv(6, 5),    LayerSpec::relu(), LayerSpec::maxpool(),   // 0..2   32 -> 28 -> 14
      LayerSpec::conv(16, 5),   LayerSpec::relu(), LayerSpec::maxpool(),   // 3..5   14 -> 10 -> 5
      LayerSpec::conv(120, 5),  LayerSpec::relu(), LayerSpec::flatten(),   // 6..8   5 -> 1
      LayerSpec::dense(84),     LayerSpec::relu(),                         // 9..10
      LayerSpec::dense(label_count),                                       // 11
  };
}

std::vector<ExitSpec> lenet_exits(std::size_t label_count) {
  // Exit 1 path: backbone 0..2, then branch layers at path positions 3..6.
  ExitSpec early{2,
                 {LayerSpec::conv(16, 5, 2), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(label_count)},
                 {5, 6}};
  ExitSpec head{11, {}, {10, 11}};
  return {early, head};
}

Network build_lenet_adan(std::size_t label_count) { return build_lenet_adan_as<float>(label_count); }

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void floats(float* dst, std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n * 4) {
      throw CorruptionError("checkpoint payload for " + what + " truncated: need " + std::to_string(n * 4) +
                            " bytes, have " + std::to_string(bytes_.size() - pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CorruptionError(std::string("checkpoint truncated while reading ") + what);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Network& net) {
  const auto params = net.parameters();
  std::vector<std::uint8_t> out{'A', 'D', 'A', 'N'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.tensor->rank()));
    for (std::size_t e : p.tensor->shape()) put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (const auto& p : params) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p.tensor->data());
    out.insert(out.end(), raw, raw + p.tensor->size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "ADAN", 4) != 0) {
    throw FormatError("checkpoint magic: expected \"ADAN\"");
  }
  Reader r(bytes.subspan(4));
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(ckpt.version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.u32("name length"), "name");
    const std::uint32_t rank = r.u32("rank");
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32("extent"));
    ckpt.entries.push_back(std::move(e));
  }
  for (auto& e : ckpt.entries) {
    e.data.resize(shape_volume(e.shape));
    r.floats(e.data.data(), e.data.size(), e.name);
  }
  if (r.remaining() != 0) {
    throw CorruptionError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes beyond its manifest");
  }
  return ckpt;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArgumentError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void apply_checkpoint(Network& net, const Checkpoint& ckpt) {
  auto params = net.parameters();
  std::ostringstream diff;
  const std::size_t n = std::max(params.size(), ckpt.entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string want = i < params.size() ? params[i].name + " " + shape_string(params[i].tensor->shape()) : "(none)";
    const std::string have =
        i < ckpt.entries.size() ? ckpt.entries[i].name + " " + shape_string(ckpt.entries[i].shape) : "(none)";
    if (want != have) diff << "\n  #" << i << ": expected " << want << ", found " << have;
  }
  if (!diff.str().empty()) throw ConfigError("checkpoint does not match the network architecture:" + diff.str());
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor->storage() = ckpt.entries[i].data;
}

Network load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.entries.empty() || ckpt.entries.back().shape.empty()) {
    throw CorruptionError("checkpoint " + path.string() + " has no tensors");
  }
  // The last backbone tensor is the head bias, sized by the label count.
  std::size_t labels = 0;
  for (const auto& e : ckpt.entries)
    if (e.name == "backbone.11.bias" && e.shape.size() == 1) labels = e.shape[0];
  if (labels < 2) throw ConfigError("checkpoint " + path.string() + " is not a LeNet-ADAN checkpoint");
  Network net = build_lenet_adan(labels);
  apply_checkpoint(net, ckpt);
  return net;
}

}  // namespace adan
