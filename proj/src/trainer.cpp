#include "adan/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "adan/router.hpp"

namespace adan {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0 || batch_size % 2 != 0) {
    throw ConfigError("batch_size must be positive and even (linear MMD pairs consecutive samples)");
  }
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (loss.lambda < 0.0 || !std::isfinite(loss.lambda)) throw ConfigError("lambda must be non-negative");
  if (loss.bandwidth_multipliers.empty()) throw ConfigError("bandwidth_multipliers must not be empty");
  for (double m : loss.bandwidth_multipliers)
    if (!(m > 0.0)) throw ConfigError("bandwidth_multipliers must be positive");
}

namespace {

Tensor stacked_input(const DomainBatch& batch, const LossConfig& cfg) {
  if (cfg.lambda > 0.0) return concat_rows(batch.source_images, batch.target_images);
  return batch.source_images;
}

}  // namespace

TotalLossValue batch_loss(const Network& net, const DomainBatch& batch, const LossConfig& cfg) {
  const auto trace = net.forward_full(stacked_input(batch, cfg));
  return total_loss<float>(trace.exits, batch.source_labels, cfg);
}

TotalLossValue train_step(Network& net, const DomainBatch& batch, const TrainConfig& cfg, OptimizerState& state) {
  ForwardCache<float> cache;
  const auto trace = net.forward_full(stacked_input(batch, cfg.loss), &cache);
  std::vector<ExitActivations<float>> grads;
  const TotalLossValue loss = total_loss<float>(trace.exits, batch.source_labels, cfg.loss, &grads);
  if (!std::isfinite(loss.total)) return loss;
  const auto param_grads = net.backward(cache, grads);
  sgd_step(net, param_grads, state);
  return loss;
}

std::vector<EpochRecord> train(Network& net, const Dataset& source, const Dataset& target, const TrainConfig& cfg,
                               const Dataset* eval, const EpochCallback& on_epoch) {
  cfg.validate();
  if (!source.labeled()) throw ArgumentError("train: source dataset must be labeled");
  source.validate(net.label_count());
  target.validate(net.label_count());
  if (source.size() < cfg.batch_size) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " + std::to_string(source.size()) +
                      " source samples");
  }
  if (target.size() == 0) throw ArgumentError("train: target dataset is empty");

  OptimizerState state{cfg.learning_rate, cfg.momentum, cfg.weight_decay, {}};
  PairedBatches stream(source, target, cfg.batch_size, derive_seed(cfg.seed, 0x5eed));
  const std::size_t exits = net.exit_count();
  const bool transfer = cfg.loss.lambda > 0.0;
  std::vector<EpochRecord> history;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    stream.start_epoch();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.seed = cfg.seed;
    rec.cross_entropy.assign(exits, 0.0);
    std::vector<double> mmd(exits, 0.0);
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      if (cfg.max_steps_per_epoch && steps >= *cfg.max_steps_per_epoch) break;
      const TotalLossValue loss = train_step(net, *batch, cfg, state);
      if (!std::isfinite(loss.total)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(steps + 1),
                              epoch, static_cast<int>(steps + 1));
      }
      rec.total_loss += loss.total;
      for (std::size_t e = 0; e < exits; ++e) {
        rec.cross_entropy[e] += loss.exits[e].supervised;
        mmd[e] += loss.exits[e].transfer;
      }
      ++steps;
    }
    if (steps == 0) throw ConfigError("an epoch produced no batches");
    const double inv = 1.0 / static_cast<double>(steps);
    rec.total_loss *= inv;
    for (auto& v : rec.cross_entropy) v *= inv;
    if (transfer) {
      for (auto& v : mmd) v *= inv;
      rec.mmd = std::move(mmd);
    }
    if (eval && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const AccuracyReport acc = evaluate_accuracy(net, *eval);
      rec.eval_accuracy = acc.accuracy;
      rec.eval_exit_accuracy = acc.exit_accuracy;
    }
    if (on_epoch) on_epoch(rec);
    history.push_back(std::move(rec));
  }
  return history;
}

AccuracyReport evaluate_accuracy(const Network& net, const Dataset& data, const ThresholdPolicy* policy) {
  if (data.size() == 0) throw ArgumentError("evaluate_accuracy: empty dataset");
  if (!data.labeled()) throw ArgumentError("evaluate_accuracy: dataset has no labels");
  const auto& labels = *data.labels;
  const std::size_t exits = net.exit_count(), n = data.size();
  AccuracyReport report;
  std::vector<std::size_t> correct(exits, 0);
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    const Tensor chunk = data.images.slice_rows(start, end);
    const auto trace = net.forward_full(chunk);
    for (std::size_t e = 0; e < exits; ++e) {
      const Tensor& z = trace.exits[e].logits;
      const std::size_t c = z.dim(1);
      for (std::size_t i = 0; i < end - start; ++i) {
        const std::span<const float> row(z.data() + i * c, c);
        if (static_cast<int>(argmax(row)) == labels[start + i]) ++correct[e];
      }
    }
  }
  for (std::size_t e = 0; e < exits; ++e) report.exit_accuracy.push_back(static_cast<double>(correct[e]) / n);
  report.accuracy = report.exit_accuracy.back();
  if (policy) {
    const RoutingReport routed = route_batch(net, data, *policy);
    report.accuracy = *routed.accuracy;
    report.exit_ratios = routed.exit_ratios;
  }
  return report;
}

namespace {

nlohmann::json record_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["seed"] = r.seed;
  j["total_loss"] = r.total_loss;
  j["cross_entropy"] = r.cross_entropy;
  j["mmd"] = r.mmd ? nlohmann::json(*r.mmd) : nlohmann::json(nullptr);
  j["eval_accuracy"] = r.eval_accuracy ? nlohmann::json(*r.eval_accuracy) : nlohmann::json(nullptr);
  j["eval_exit_accuracy"] = r.eval_exit_accuracy ? nlohmann::json(*r.eval_exit_accuracy) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

std::string history_to_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) {
    out += record_json(r).dump();
    out += '\n';
  }
  return out;
}

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write history " + path.string());
  out << history_to_jsonl(history);
}

std::vector<EpochRecord> read_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open history " + path.string());
  std::vector<EpochRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EpochRecord r;
      r.epoch = j.at("epoch").get<int>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.total_loss = j.at("total_loss").get<double>();
      r.cross_entropy = j.at("cross_entropy").get<std::vector<double>>();
      if (!j.at("mmd").is_null()) r.mmd = j.at("mmd").get<std::vector<double>>();
      if (!j.at("eval_accuracy").is_null()) r.eval_accuracy = j.at("eval_accuracy").get<double>();
      if (!j.at("eval_exit_accuracy").is_null()) r.eval_exit_accuracy = j.at("eval_exit_accuracy").get<std::vector<double>>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace adan
