#pragma once

// Small on-disk datasets (IDX source, USPS-format target) and configs for
// exercising the command layer end to end.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "adan/data.hpp"

namespace fixture {

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline float stroke(int label, std::size_t y, std::size_t x, std::size_t side) {
  const std::size_t band = side / 4;
  const bool on = (y / band) == static_cast<std::size_t>(label % 4) && (x * 3 / side) == static_cast<std::size_t>(label / 4);
  return on ? 0.9f : 0.05f;
}

inline adan::Dataset digits(std::size_t n, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> jitter(0.0f, 0.1f);
  adan::Dataset d;
  d.images = adan::Tensor({n, 1, side, side});
  d.labels.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>((i * 7) % 10);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) d.images.at(i, 0, y, x) = stroke(label, y, x, side) + jitter(rng);
    d.labels->push_back(label);
  }
  return d;
}

inline void write_usps(const adan::Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << (*d.labels)[i];
    for (std::size_t p = 0; p < 256; ++p) out << ' ' << d.images[i * 256 + p] * 2.0f - 1.0f;
    out << '\n';
  }
}

struct Files {
  std::filesystem::path dir;
  std::filesystem::path mnist_images, mnist_labels, usps_train, usps_test;
};

inline Files write_datasets(const std::string& name, std::size_t source_n = 48, std::size_t target_n = 32) {
  Files f;
  f.dir = fresh_dir(name);
  f.mnist_images = f.dir / "src-images.idx";
  f.mnist_labels = f.dir / "src-labels.idx";
  f.usps_train = f.dir / "tgt.train";
  f.usps_test = f.dir / "tgt.test";
  adan::save_idx(digits(source_n, 28, 1), f.mnist_images, f.mnist_labels);
  write_usps(digits(target_n, 16, 2), f.usps_train);
  write_usps(digits(target_n / 2, 16, 3), f.usps_test);
  return f;
}

inline std::string config_json(const Files& f, const std::string& out_dir, const std::string& seeds = "[1]",
                               double lambda = 1.0) {
  std::ostringstream s;
  s << R"({"source": {"format": "idx", "images": ")" << f.mnist_images.string() << R"(", "labels": ")"
    << f.mnist_labels.string() << R"("},
  "target": {"format": "usps", "path": ")" << f.usps_train.string() << R"("},
  "eval": {"format": "usps", "path": ")" << f.usps_test.string() << R"("},
  "train": {"epochs": 2, "batch_size": 16, "learning_rate": 0.01, "lambda": )" << lambda << R"(},
  "seeds": )" << seeds << R"(, "repeats": 3, "thresholds": [0.1, 1.0],
  "output_dir": ")" << out_dir << R"(", "deterministic": true})";
  return s.str();
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream b;
  b << in.rdbuf();
  return b.str();
}

}  // namespace fixture
