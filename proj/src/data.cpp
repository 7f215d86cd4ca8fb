#include "adan/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "adan/error.hpp"
#include "adan/layers.hpp"

namespace adan {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

void check_magic(std::span<const std::uint8_t> bytes, std::uint32_t expected, std::size_t header_bytes,
                 const char* what) {
  if (bytes.size() < 4) {
    throw LengthError(std::string("IDX ") + what + " file is " + std::to_string(bytes.size()) +
                      " bytes, too short for a header");
  }
  const std::uint32_t found = read_be32(bytes, 0);
  if (found != expected) {
    throw FormatError(std::string("IDX ") + what + " magic: expected " + hex32(expected) + ", found " + hex32(found));
  }
  if (bytes.size() < header_bytes) {
    throw LengthError(std::string("IDX ") + what + " header truncated: need " + std::to_string(header_bytes) +
                      " bytes, have " + std::to_string(bytes.size()));
  }
}

}  // namespace

Tensor Dataset::image(std::size_t i) const {
  const std::size_t plane = images.size() / images.dim(0);
  Shape s = images.shape();
  s[0] = 1;
  return Tensor(std::move(s), std::vector<float>(images.data() + i * plane, images.data() + (i + 1) * plane));
}

void Dataset::validate(std::size_t class_count) const {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("dataset images must be [N,1,H,W], got " + shape_string(images.shape()));
  }
  if (labels) {
    if (labels->size() != size()) {
      throw DimensionError("dataset has " + std::to_string(size()) + " images but " + std::to_string(labels->size()) +
                           " labels");
    }
    for (std::size_t i = 0; i < labels->size(); ++i) {
      const int l = (*labels)[i];
      if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
        throw RangeError("label " + std::to_string(l) + " at index " + std::to_string(i) + " outside [0," +
                         std::to_string(class_count) + ")");
      }
    }
  }
  if (!images.all_finite()) throw RangeError("dataset contains non-finite pixel values");
}

Tensor decode_idx_images(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kIdxImageMagic, 16, "images");
  const std::size_t n = read_be32(bytes, 4), h = read_be32(bytes, 8), w = read_be32(bytes, 12);
  const std::size_t payload = n * h * w;
  if (bytes.size() - 16 < payload) {
    throw LengthError("IDX images payload truncated: header declares " + std::to_string(payload) + " bytes, found " +
                      std::to_string(bytes.size() - 16));
  }
  Tensor out({n, 1, h, w});
  for (std::size_t i = 0; i < payload; ++i) out[i] = static_cast<float>(bytes[16 + i]) / 255.0f;
  return out;
}

std::vector<int> decode_idx_labels(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kIdxLabelMagic, 8, "labels");
  const std::size_t n = read_be32(bytes, 4);
  if (bytes.size() - 8 < n) {
    throw LengthError("IDX labels payload truncated: header declares " + std::to_string(n) + " bytes, found " +
                      std::to_string(bytes.size() - 8));
  }
  return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

std::vector<std::uint8_t> encode_idx_images(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("encode_idx_images expects [N,1,H,W], got " + shape_string(images.shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.size());
  append_be32(out, kIdxImageMagic);
  append_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  append_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  append_be32(out, static_cast<std::uint32_t>(images.dim(3)));
  for (float v : images.values()) {
    const float b = std::clamp(std::round(v * 255.0f), 0.0f, 255.0f);
    out.push_back(static_cast<std::uint8_t>(b));
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  append_be32(out, kIdxLabelMagic);
  append_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) out.push_back(static_cast<std::uint8_t>(l));
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::optional<std::filesystem::path>& labels_path,
                 Domain domain) {
  Dataset d;
  d.domain = domain;
  d.images = decode_idx_images(read_file(images_path));
  if (labels_path) {
    d.labels = decode_idx_labels(read_file(*labels_path));
    if (d.labels->size() != d.size()) {
      throw FormatError("IDX label count " + std::to_string(d.labels->size()) + " differs from image count " +
                        std::to_string(d.size()));
    }
  }
  d.validate();
  return d;
}

void save_idx(const Dataset& d, const std::filesystem::path& images_path,
              const std::optional<std::filesystem::path>& labels_path) {
  write_file(images_path, encode_idx_images(d.images));
  if (labels_path) {
    if (!d.labels) throw ArgumentError("save_idx: dataset has no labels to write");
    write_file(*labels_path, encode_idx_labels(*d.labels));
  }
}

Dataset parse_usps(const std::string& text, Domain domain) {
  constexpr std::size_t kSide = 16, kValues = kSide * kSide;
  std::vector<int> labels;
  std::vector<float> raw;
  std::istringstream lines(text);
  std::string line;
  std::size_t record = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::vector<std::string> tokens{std::istream_iterator<std::string>(fields), std::istream_iterator<std::string>()};
    if (tokens.empty()) continue;
    if (tokens.size() != kValues + 1) {
      throw FormatError("USPS record " + std::to_string(record) + " has " + std::to_string(tokens.size()) +
                        " fields, expected " + std::to_string(kValues + 1));
    }
    auto parse_real = [&](const std::string& tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw FormatError("USPS record " + std::to_string(record) + ": cannot parse '" + tok + "'");
      }
      return v;
    };
    const double label = parse_real(tokens[0]);
    if (label != std::floor(label) || label < 0 || label > 9) {
      throw RangeError("USPS record " + std::to_string(record) + ": label " + tokens[0] + " outside 0..9");
    }
    labels.push_back(static_cast<int>(label));
    for (std::size_t i = 1; i <= kValues; ++i) {
      const double v = parse_real(tokens[i]);
      if (!(v >= -1.0 - 1e-6 && v <= 1.0 + 1e-6)) {
        throw RangeError("USPS record " + std::to_string(record) + ": value " + tokens[i] + " outside [-1,1]");
      }
      raw.push_back(static_cast<float>(v));
    }
    ++record;
  }
  if (record == 0) throw FormatError("USPS file contains no records");
  const bool signed_range = std::any_of(raw.begin(), raw.end(), [](float v) { return v < 0.0f; });
  for (float& v : raw) {
    if (signed_range) v = (v + 1.0f) * 0.5f;
    v = std::clamp(v, 0.0f, 1.0f);
  }
  Dataset d;
  d.domain = domain;
  d.images = Tensor({record, 1, kSide, kSide}, std::move(raw));
  d.labels = std::move(labels);
  return d;
}

Dataset load_usps(const std::filesystem::path& path, Domain domain) {
  const auto bytes = read_file(path);
  return parse_usps(std::string(bytes.begin(), bytes.end()), domain);
}

Dataset resize_bilinear(const Dataset& d, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ArgumentError("resize_bilinear: output extents must be positive");
  const std::size_t n = d.size(), h = d.height(), w = d.width();
  auto source_coord = [](std::size_t i, std::size_t out, std::size_t in) {
    if (out == 1) return 0.5 * static_cast<double>(in - 1);
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };
  Dataset out;
  out.domain = d.domain;
  out.labels = d.labels;
  out.images = Tensor({n, 1, out_h, out_w});
  for (std::size_t s = 0; s < n; ++s) {
    const float* src = d.images.data() + s * h * w;
    float* dst = out.images.data() + s * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const double y = source_coord(i, out_h, h);
      const std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(y)), h - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = y - static_cast<double>(y0);
      for (std::size_t j = 0; j < out_w; ++j) {
        const double x = source_coord(j, out_w, w);
        const std::size_t x0 = std::min(static_cast<std::size_t>(std::floor(x)), w - 1);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = x - static_cast<double>(x0);
        const double top = (1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
        const double bottom = (1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
        dst[i * out_w + j] = static_cast<float>((1 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

std::pair<Dataset, Moments> standardize(const Dataset& d) {
  if (d.size() == 0) throw ArgumentError("standardize: empty dataset");
  double sum = 0.0;
  for (float v : d.images.values()) sum += v;
  const double count = static_cast<double>(d.images.size());
  const double mean = sum / count;
  double sq = 0.0;
  for (float v : d.images.values()) sq += (v - mean) * (v - mean);
  double std = std::sqrt(sq / count);
  if (std < 1e-8) std = 1.0;
  Dataset out = d;
  for (float& v : out.images.storage()) v = static_cast<float>((v - mean) / std);
  return {std::move(out), Moments{mean, std}};
}

Dataset pad_dataset(const Dataset& d, std::size_t amount) {
  Dataset out;
  out.domain = d.domain;
  out.labels = d.labels;
  out.images = pad_spatial(d.images, amount);
  return out;
}

Dataset prepare_for_lenet(const Dataset& raw) {
  Dataset d = (raw.height() == 28 && raw.width() == 28) ? raw : resize_bilinear(raw, 28, 28);
  d = pad_dataset(d, 2);
  return standardize(d).first;
}

Dataset take_first(const Dataset& d, std::size_t n) {
  n = std::min(n, d.size());
  Dataset out;
  out.domain = d.domain;
  out.images = d.images.slice_rows(0, n);
  if (d.labels) out.labels = std::vector<int>(d.labels->begin(), d.labels->begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

Tensor gather_images(const Tensor& images, std::span<const std::size_t> rows) {
  const std::size_t plane = images.size() / images.dim(0);
  Shape s = images.shape();
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(images.data() + rows[r] * plane, plane, out.data() + r * plane);
  return out;
}

PairedBatches::PairedBatches(const Dataset& source, const Dataset& target, std::size_t batch_size,
                             std::uint64_t seed)
    : source_(&source), target_(&target), batch_size_(batch_size), rng_(seed) {
  if (batch_size == 0 || batch_size % 2 != 0) {
    throw ConfigError("batch_size must be even and positive (" + std::to_string(batch_size) +
                      " given): the linear-time MMD estimator pairs consecutive samples");
  }
  if (source.size() == 0 || target.size() == 0) throw ArgumentError("paired batches need non-empty domains");
  if (!source.labeled()) throw ArgumentError("source domain must be labeled");
  if (source.images.shape().size() != 4 ||
      !std::equal(source.images.shape().begin() + 1, source.images.shape().end(), target.images.shape().begin() + 1)) {
    throw DimensionError("source and target image shapes differ: " + shape_string(source.images.shape()) + " vs " +
                         shape_string(target.images.shape()));
  }
  start_epoch();
}

void PairedBatches::start_epoch() {
  source_order_ = shuffled_indices(source_->size(), rng_);
  target_order_ = shuffled_indices(target_->size(), rng_);
  cursor_ = 0;
  target_cursor_ = 0;
}

std::optional<DomainBatch> PairedBatches::next() {
  if (cursor_ + batch_size_ > source_order_.size()) return std::nullopt;
  std::span<const std::size_t> src(source_order_.data() + cursor_, batch_size_);
  std::vector<std::size_t> tgt(batch_size_);
  for (auto& t : tgt) {
    if (target_cursor_ == target_order_.size()) {
      target_order_ = shuffled_indices(target_->size(), rng_);
      target_cursor_ = 0;
    }
    t = target_order_[target_cursor_++];
  }
  DomainBatch b;
  b.source_images = gather_images(source_->images, src);
  b.target_images = gather_images(target_->images, tgt);
  b.source_labels.reserve(batch_size_);
  for (std::size_t i : src) b.source_labels.push_back((*source_->labels)[i]);
  cursor_ += batch_size_;
  return b;
}

}  // namespace adan
