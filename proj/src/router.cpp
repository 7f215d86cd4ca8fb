#include "adan/router.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "adan/losses.hpp"
#include "adan/trainer.hpp"

namespace adan {

ThresholdPolicy ThresholdPolicy::uniform(double t, std::size_t exit_count) {
  if (exit_count < 1) throw ArgumentError("threshold policy needs at least one exit");
  return {std::vector<double>(exit_count - 1, t)};
}

ThresholdPolicy ThresholdPolicy::from_values(const std::vector<double>& values, std::size_t exit_count) {
  if (values.size() == 1) return uniform(values[0], exit_count);
  ThresholdPolicy p{values};
  p.validate(exit_count);
  return p;
}

void ThresholdPolicy::validate(std::size_t exit_count) const {
  if (exit_count < 1 || thresholds.size() != exit_count - 1) {
    throw ArgumentError("threshold policy has " + std::to_string(thresholds.size()) + " thresholds for " +
                        std::to_string(exit_count) + " exits (expected " + std::to_string(exit_count - 1) + ")");
  }
  for (double t : thresholds)
    if (std::isnan(t)) throw ArgumentError("threshold is NaN");
}

double gate_entropy(const Tensor& logits) {
  const Tensor64 probs = softmax(logits.cast<double>());
  const double h = entropy<double>(probs.values());
  return std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
}

RouteDecision route_sample(const Network& net, const Tensor& image, const ThresholdPolicy& policy, OpCounts* counts) {
  const std::size_t m = net.exit_count();
  policy.validate(m);
  StagedState<float> state;
  RouteDecision d;
  auto finish = [&](std::size_t exit, const Tensor& logits) {
    d.exit = exit;
    d.predicted = static_cast<int>(argmax(logits.values()));
    if (counts) *counts = state.counts;
    return d;
  };
  for (std::size_t e = 1; e < m; ++e) {
    const Tensor logits = net.forward_staged(image, e, state);
    const double h = gate_entropy(logits);
    d.entropies.push_back(h);
    if (h <= policy.thresholds[e - 1]) return finish(e, logits);
  }
  return finish(m, net.forward_staged(image, m, state));
}

int predict_final(const Network& net, const Tensor& image) {
  StagedState<float> state;
  return static_cast<int>(argmax(net.forward_staged(image, net.exit_count(), state).values()));
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<Tensor> split_images(const Dataset& data) {
  std::vector<Tensor> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(data.image(i));
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double clock_resolution() {
  return static_cast<double>(Clock::period::num) / static_cast<double>(Clock::period::den);
}

volatile int g_sink = 0;

double baseline_pass(const Network& net, const std::vector<Tensor>& images) {
  const auto t0 = Clock::now();
  int acc = 0;
  for (const auto& img : images) acc += predict_final(net, img);
  const double s = seconds_since(t0);
  g_sink = g_sink + acc;
  return s;
}

double routed_pass(const Network& net, const std::vector<Tensor>& images, const ThresholdPolicy& policy) {
  const auto t0 = Clock::now();
  int acc = 0;
  for (const auto& img : images) acc += route_sample(net, img, policy).predicted;
  const double s = seconds_since(t0);
  g_sink = g_sink + acc;
  return s;
}

std::optional<std::string> resolution_warning(double shortest_span) {
  const double res = clock_resolution();
  if (res > 0.01 * shortest_span) {
    std::ostringstream w;
    w << "timer resolution " << res << " s is coarser than 1% of the shortest measured span (" << shortest_span
      << " s)";
    return w.str();
  }
  return std::nullopt;
}

void check_repeats(int repeats) {
  if (repeats < 3) throw ArgumentError("benchmark repeats must be at least 3, got " + std::to_string(repeats));
}

}  // namespace

RoutingReport route_batch(const Network& net, const Dataset& data, const ThresholdPolicy& policy) {
  if (data.size() == 0) throw ArgumentError("route_batch: empty dataset");
  policy.validate(net.exit_count());
  const auto images = split_images(data);
  RoutingReport report;
  report.exit_ratios.assign(net.exit_count(), 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    SampleRecord rec;
    const auto t0 = Clock::now();
    rec.decision = route_sample(net, images[i], policy);
    rec.seconds = seconds_since(t0);
    report.total_seconds += rec.seconds;
    report.exit_ratios[rec.decision.exit - 1] += 1.0;
    if (data.labeled()) {
      rec.correct = rec.decision.predicted == (*data.labels)[i];
      correct += *rec.correct;
    }
    report.samples.push_back(std::move(rec));
  }
  const double n = static_cast<double>(images.size());
  for (auto& r : report.exit_ratios) r /= n;
  if (data.labeled()) report.accuracy = static_cast<double>(correct) / n;
  report.seconds_per_sample = report.total_seconds / n;
  return report;
}

SpeedupReport benchmark_speedup(const Network& net, const Dataset& data, const ThresholdPolicy& policy, int repeats) {
  check_repeats(repeats);
  if (data.size() == 0) throw ArgumentError("benchmark_speedup: empty dataset");
  policy.validate(net.exit_count());
  const auto images = split_images(data);
  baseline_pass(net, images);
  routed_pass(net, images, policy);
  std::vector<double> base, routed;
  for (int r = 0; r < repeats; ++r) {
    base.push_back(baseline_pass(net, images));
    routed.push_back(routed_pass(net, images, policy));
  }
  const double n = static_cast<double>(images.size());
  SpeedupReport out;
  out.baseline_ms_per_sample = median(base) / n * 1e3;
  out.routed_ms_per_sample = median(routed) / n * 1e3;
  out.speedup = out.baseline_ms_per_sample / out.routed_ms_per_sample;
  out.warning = resolution_warning(std::min(*std::min_element(base.begin(), base.end()),
                                            *std::min_element(routed.begin(), routed.end())));
  return out;
}

SweepReport sweep_thresholds(const Network& net, const Dataset& data, const std::vector<double>& thresholds,
                             int repeats) {
  if (thresholds.empty()) throw ArgumentError("sweep_thresholds: empty threshold list");
  check_repeats(repeats);
  if (data.size() == 0) throw ArgumentError("sweep_thresholds: empty dataset");
  if (!data.labeled()) throw ArgumentError("sweep_thresholds: dataset has no labels");
  const auto images = split_images(data);
  const auto& labels = *data.labels;
  const double n = static_cast<double>(images.size());
  const std::size_t m = net.exit_count();

  SweepReport report;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) correct += predict_final(net, images[i]) == labels[i];
  baseline_pass(net, images);
  std::vector<double> base;
  for (int r = 0; r < repeats; ++r) base.push_back(baseline_pass(net, images));
  double shortest = *std::min_element(base.begin(), base.end());
  report.baseline.accuracy = static_cast<double>(correct) / n;
  report.baseline.exit_ratios.assign(m, 0.0);
  report.baseline.exit_ratios.back() = 1.0;
  report.baseline.time_ms_per_sample = median(base) / n * 1e3;
  report.baseline.speedup = 1.0;

  for (double t : thresholds) {
    const ThresholdPolicy policy = ThresholdPolicy::uniform(t, m);
    SweepRow row;
    row.threshold = t;
    row.exit_ratios.assign(m, 0.0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const RouteDecision d = route_sample(net, images[i], policy);
      row.exit_ratios[d.exit - 1] += 1.0;
      hits += d.predicted == labels[i];
    }
    for (auto& r : row.exit_ratios) r /= n;
    row.accuracy = static_cast<double>(hits) / n;
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) times.push_back(routed_pass(net, images, policy));
    shortest = std::min(shortest, *std::min_element(times.begin(), times.end()));
    row.time_ms_per_sample = median(times) / n * 1e3;
    row.speedup = report.baseline.time_ms_per_sample / row.time_ms_per_sample;
    report.rows.push_back(std::move(row));
  }
  report.warning = resolution_warning(shortest);
  return report;
}

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_num(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("sweep csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string csv_row(const SweepRow& r) {
  std::string s = r.threshold ? num(*r.threshold) : "baseline";
  s += "," + num(r.accuracy);
  for (double v : r.exit_ratios) s += "," + num(v);
  s += "," + num(r.time_ms_per_sample) + "," + num(r.speedup) + "\n";
  return s;
}

nlohmann::json row_json(const SweepRow& r) {
  return {{"threshold", r.threshold ? nlohmann::json(*r.threshold) : nlohmann::json("baseline")},
          {"accuracy", r.accuracy},
          {"exit_ratios", r.exit_ratios},
          {"time_ms_per_sample", r.time_ms_per_sample},
          {"speedup", r.speedup}};
}

}  // namespace

std::string sweep_to_csv(const SweepReport& report) {
  std::string s = "threshold,accuracy";
  for (std::size_t e = 1; e <= report.baseline.exit_ratios.size(); ++e) s += ",exit" + std::to_string(e) + "_ratio";
  s += ",time_ms_per_sample,speedup\n";
  s += csv_row(report.baseline);
  for (const auto& r : report.rows) s += csv_row(r);
  return s;
}

SweepReport sweep_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("sweep csv is empty");
  const auto header = split(line, ',');
  if (header.size() < 5 || header.front() != "threshold" || header[1] != "accuracy" ||
      header[header.size() - 2] != "time_ms_per_sample" || header.back() != "speedup") {
    throw FormatError("sweep csv header not recognized: " + line);
  }
  const std::size_t exits = header.size() - 4;
  SweepReport report;
  bool have_baseline = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) {
      throw FormatError("sweep csv line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(f.size()));
    }
    SweepRow r;
    if (f[0] != "baseline") r.threshold = parse_num(f[0], lineno);
    r.accuracy = parse_num(f[1], lineno);
    for (std::size_t e = 0; e < exits; ++e) r.exit_ratios.push_back(parse_num(f[2 + e], lineno));
    r.time_ms_per_sample = parse_num(f[2 + exits], lineno);
    r.speedup = parse_num(f[3 + exits], lineno);
    if (!r.threshold) {
      report.baseline = std::move(r);
      have_baseline = true;
    } else {
      report.rows.push_back(std::move(r));
    }
  }
  if (!have_baseline) throw FormatError("sweep csv has no baseline row");
  return report;
}

std::string sweep_to_json(const SweepReport& report) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["baseline"] = row_json(report.baseline);
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) j["rows"].push_back(row_json(r));
  j["warning"] = report.warning ? nlohmann::json(*report.warning) : nlohmann::json(nullptr);
  return j.dump(2);
}

}  // namespace adan
