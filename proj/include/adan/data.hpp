#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adan/random.hpp"
#include "adan/tensor.hpp"

namespace adan {

enum class Domain { Source, Target };

inline constexpr std::size_t kDigitClasses = 10;

/// Images [N,1,H,W] with optional labels in [0, class_count).
struct Dataset {
  Tensor images;
  std::optional<std::vector<int>> labels;
  Domain domain = Domain::Source;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  bool labeled() const { return labels.has_value(); }

  /// Image i as a [1,1,H,W] tensor.
  Tensor image(std::size_t i) const;

  /// Throws RangeError / DimensionError when the invariants do not hold.
  void validate(std::size_t class_count = kDigitClasses) const;
};

struct Moments {
  double mean = 0.0;
  double std = 1.0;
};

// IDX files: big-endian 32-bit header words, then unsigned bytes.
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Decodes IDX image bytes into [N,1,H,W] values in [0,1] (byte / 255).
Tensor decode_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> decode_idx_labels(std::span<const std::uint8_t> bytes);

/// Inverse of the decoders; pixels are rounded back to bytes.
std::vector<std::uint8_t> encode_idx_images(const Tensor& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels);

Dataset load_idx(const std::filesystem::path& images_path, const std::optional<std::filesystem::path>& labels_path,
                 Domain domain = Domain::Source);
void save_idx(const Dataset& d, const std::filesystem::path& images_path,
              const std::optional<std::filesystem::path>& labels_path);

/// USPS text records: "label v1 ... v256" per line, 16x16 gray values in
/// [0,1] or [-1,1] (range detected over the whole file, mapped to [0,1]).
Dataset parse_usps(const std::string& text, Domain domain = Domain::Target);
Dataset load_usps(const std::filesystem::path& path, Domain domain = Domain::Target);

/// Corner-aligned bilinear resampling of every image.
Dataset resize_bilinear(const Dataset& d, std::size_t out_h, std::size_t out_w);

/// One scalar mean/std per dataset; std below 1e-8 is replaced by 1.
std::pair<Dataset, Moments> standardize(const Dataset& d);

/// Zero border of `amount` pixels around every image.
Dataset pad_dataset(const Dataset& d, std::size_t amount);

/// Resize to 28x28 if needed, pad to 32x32, standardize.
Dataset prepare_for_lenet(const Dataset& raw);

/// First `n` samples (or all, when n exceeds the size).
Dataset take_first(const Dataset& d, std::size_t n);

/// Copies the listed samples into a new [k,1,H,W] tensor.
Tensor gather_images(const Tensor& images, std::span<const std::size_t> rows);

struct DomainBatch {
  Tensor source_images;
  std::vector<int> source_labels;
  Tensor target_images;

  std::size_t size() const { return source_labels.size(); }
};

/// Seeded stream of equal-size source/target batches. Each epoch draws fresh
/// independent permutations of both domains. Target draws continue through
/// a fresh permutation whenever the current one runs out, so pairs do not
/// repeat cycle after cycle. The trailing partial source batch is dropped.
class PairedBatches {
 public:
  PairedBatches(const Dataset& source, const Dataset& target, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return source_->size() / batch_size_; }

  /// Reshuffles both domains and rewinds to the first batch.
  void start_epoch();

  /// Next batch of the current epoch, or nullopt once exhausted.
  std::optional<DomainBatch> next();

 private:
  const Dataset* source_;
  const Dataset* target_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> source_order_;
  std::vector<std::size_t> target_order_;
  std::size_t cursor_ = 0;
  std::size_t target_cursor_ = 0;
};

}  // namespace adan
