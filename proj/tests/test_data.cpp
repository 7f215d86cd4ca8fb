#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "adan/data.hpp"
#include "adan/error.hpp"

using namespace adan;

namespace {

Dataset constant_images(std::size_t n, std::size_t side, bool labeled) {
  Dataset d;
  d.images = Tensor({n, 1, side, side});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < side * side; ++p) d.images[i * side * side + p] = static_cast<float>(i);
  if (labeled) {
    d.labels.emplace();
    for (std::size_t i = 0; i < n; ++i) d.labels->push_back(static_cast<int>(i % 10));
  }
  return d;
}

std::string usps_line(int label, float first, float rest) {
  std::ostringstream s;
  s << label;
  for (int i = 0; i < 256; ++i) s << ' ' << (i == 0 ? first : rest);
  s << '\n';
  return s.str();
}

}  // namespace

TEST_CASE("IDX images round trip through bytes") {
  Tensor img({2, 1, 3, 2});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i * 20) / 255.0f;
  const auto bytes = encode_idx_images(img);
  REQUIRE(bytes.size() == 16 + 12);
  CHECK(bytes[0] == 0);
  CHECK(bytes[2] == 8);
  CHECK(bytes[3] == 3);
  CHECK(bytes[7] == 2);   // count, big-endian
  CHECK(bytes[11] == 3);  // rows
  CHECK(bytes[15] == 2);  // cols
  CHECK(bytes[16 + 5] == 100);
  const Tensor back = decode_idx_images(bytes);
  CHECK(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]));

  const std::vector<int> labels{3, 1, 4, 1, 5, 9};
  CHECK(decode_idx_labels(encode_idx_labels(labels)) == labels);
}

TEST_CASE("IDX decoding rejects bad magic and truncation") {
  Tensor img({1, 1, 2, 2}, 0.5f);
  auto bytes = encode_idx_images(img);
  auto bad = bytes;
  bad[3] = 1;
  CHECK_THROWS_AS(decode_idx_images(bad), FormatError);
  CHECK_THROWS_AS(decode_idx_labels(bytes), FormatError);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(decode_idx_images(cut), LengthError);
  cut.resize(10);
  CHECK_THROWS_AS(decode_idx_images(cut), LengthError);
  auto lab = encode_idx_labels(std::vector<int>{1, 2, 3});
  lab.pop_back();
  CHECK_THROWS_AS(decode_idx_labels(lab), LengthError);
}

TEST_CASE("USPS records") {
  SUBCASE("signed range is mapped to [0,1]") {
    const Dataset d = parse_usps(usps_line(3, 1.0f, -1.0f) + "\n" + usps_line(7, 0.0f, -1.0f));
    REQUIRE(d.size() == 2);
    CHECK(d.images.shape() == Shape{2, 1, 16, 16});
    CHECK(*d.labels == std::vector<int>{3, 7});
    CHECK(d.images[0] == 1.0f);
    CHECK(d.images[1] == 0.0f);
    CHECK(d.images[256] == 0.5f);
    CHECK(d.domain == Domain::Target);
  }
  SUBCASE("unsigned range is kept") {
    const Dataset d = parse_usps(usps_line(0, 0.25f, 0.75f));
    CHECK(d.images[0] == 0.25f);
    CHECK(d.images[1] == 0.75f);
  }
  SUBCASE("malformed records") {
    CHECK_THROWS_AS(parse_usps("1 0.5 0.5\n"), FormatError);
    CHECK_THROWS_AS(parse_usps(usps_line(12, 0.0f, 0.0f)), RangeError);
    CHECK_THROWS_AS(parse_usps(usps_line(1, 2.0f, 0.0f)), RangeError);
    CHECK_THROWS_AS(parse_usps(""), FormatError);
    std::string garbled = usps_line(1, 0.0f, 0.0f);
    garbled.replace(2, 1, "x");
    CHECK_THROWS_AS(parse_usps(garbled), FormatError);
  }
}

TEST_CASE("bilinear resize is exact on a linear ramp") {
  Dataset d;
  d.images = Tensor({1, 1, 2, 2}, {0, 1, 2, 3});  // f(y, x) = x + 2y
  const Dataset r = resize_bilinear(d, 4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(r.images.at(0, 0, i, j) == doctest::Approx(j / 3.0 + 2.0 * i / 3.0).epsilon(1e-6));
  CHECK_THROWS_AS(resize_bilinear(d, 0, 4), ArgumentError);
}

TEST_CASE("standardization and LeNet preparation") {
  Dataset d;
  d.images = Tensor({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto [s, m] = standardize(d);
  CHECK(m.mean == doctest::Approx(4.5));
  CHECK(m.std == doctest::Approx(std::sqrt(5.25)));
  double mean = 0, sq = 0;
  for (float v : s.images.values()) mean += v;
  mean /= 8;
  for (float v : s.images.values()) sq += (v - mean) * (v - mean);
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
  CHECK(sq / 8 == doctest::Approx(1.0).epsilon(1e-6));

  Dataset flat;
  flat.images = Tensor({1, 1, 2, 2}, 3.0f);
  const auto [f, fm] = standardize(flat);
  CHECK(fm.std == 1.0);
  for (float v : f.images.values()) CHECK(v == 0.0f);

  const Dataset usps_like = constant_images(3, 16, true);
  const Dataset p = prepare_for_lenet(usps_like);
  CHECK(p.images.shape() == Shape{3, 1, 32, 32});
  CHECK(*p.labels == *usps_like.labels);
  const Dataset mnist_like = constant_images(2, 28, false);
  CHECK(prepare_for_lenet(mnist_like).images.shape() == Shape{2, 1, 32, 32});
}

TEST_CASE("dataset validation") {
  Dataset d = constant_images(3, 4, true);
  CHECK_NOTHROW(d.validate());
  (*d.labels)[1] = 10;
  CHECK_THROWS_AS(d.validate(), RangeError);
  d.labels->pop_back();
  CHECK_THROWS_AS(d.validate(), DimensionError);
  CHECK(take_first(constant_images(5, 4, true), 2).size() == 2);
  CHECK(take_first(constant_images(5, 4, true), 20).size() == 5);
}

TEST_CASE("paired batches") {
  const Dataset source = constant_images(10, 4, true);
  const Dataset target = constant_images(3, 4, false);

  CHECK_THROWS_AS(PairedBatches(source, target, 3, 1), ConfigError);
  CHECK_THROWS_AS(PairedBatches(source, target, 0, 1), ConfigError);
  CHECK_THROWS_AS(PairedBatches(source, constant_images(3, 5, false), 4, 1), DimensionError);
  CHECK_THROWS_AS(PairedBatches(target, source, 4, 1), ArgumentError);

  PairedBatches a(source, target, 4, 9), b(source, target, 4, 9);
  CHECK(a.batches_per_epoch() == 2);
  std::set<float> seen_source;
  std::vector<float> target_draws;
  for (int k = 0; k < 2; ++k) {
    const auto x = a.next(), y = b.next();
    REQUIRE(x);
    REQUIRE(y);
    CHECK(x->size() == 4);
    CHECK(x->source_images.storage() == y->source_images.storage());
    CHECK(x->target_images.storage() == y->target_images.storage());
    CHECK(x->source_labels == y->source_labels);
    for (std::size_t i = 0; i < 4; ++i) {
      seen_source.insert(x->source_images.at(i, 0, 0, 0));
      CHECK(x->source_labels[i] == static_cast<int>(x->source_images.at(i, 0, 0, 0)) % 10);
    }
    for (std::size_t i = 0; i < 4; ++i) target_draws.push_back(x->target_images.at(i, 0, 0, 0));
  }
  CHECK(seen_source.size() == 8);
  // Target draws run through whole permutations of the 3 samples.
  CHECK(std::set<float>(target_draws.begin(), target_draws.begin() + 3).size() == 3);
  CHECK(std::set<float>(target_draws.begin() + 3, target_draws.begin() + 6).size() == 3);
  CHECK_FALSE(a.next());  // the partial batch of 2 is dropped

  a.start_epoch();
  CHECK(a.next());
  PairedBatches c(source, target, 4, 10);
  PairedBatches d(source, target, 4, 9);
  bool differs = false;
  for (int k = 0; k < 2; ++k) differs |= c.next()->source_labels != d.next()->source_labels;
  CHECK(differs);
}
