#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adan/data.hpp"
#include "adan/losses.hpp"
#include "adan/network.hpp"

namespace adan {

struct ThresholdPolicy;

/// Classical momentum SGD with L2 weight decay:
///   g' = g + wd * theta;  v = mu * v + g';  theta -= lr * v
struct OptimizerState {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::vector<Tensor> velocity;  // lazily shaped like the parameters
};

template <class Real>
void sgd_step(const std::vector<ParameterRef<BasicTensor<Real>>>& params, const std::vector<BasicTensor<Real>>& grads,
              std::vector<BasicTensor<Real>>& velocity, double learning_rate, double momentum, double weight_decay) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                         " parameters");
  }
  if (velocity.empty()) {
    for (const auto& p : params) velocity.emplace_back(p.tensor->shape());
  }
  const Real lr = static_cast<Real>(learning_rate), mu = static_cast<Real>(momentum), wd = static_cast<Real>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    BasicTensor<Real>& theta = *params[i].tensor;
    if (grads[i].shape() != theta.shape() || velocity[i].shape() != theta.shape()) {
      throw DimensionError("sgd_step: gradient shape " + shape_string(grads[i].shape()) + " for parameter " +
                           params[i].name + " " + shape_string(theta.shape()));
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const Real g = grads[i][j] + wd * theta[j];
      velocity[i][j] = mu * velocity[i][j] + g;
      theta[j] -= lr * velocity[i][j];
    }
  }
}

inline void sgd_step(Network& net, const std::vector<Tensor>& grads, OptimizerState& state) {
  sgd_step(net.parameters(), grads, state.velocity, state.learning_rate, state.momentum, state.weight_decay);
}

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  LossConfig loss;
  int eval_every = 1;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::optional<std::size_t> max_steps_per_epoch;  // for quick runs

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::uint64_t seed = 0;
  double total_loss = 0.0;
  std::vector<double> cross_entropy;        // per exit, mean over steps
  std::optional<std::vector<double>> mmd;   // per exit; absent when lambda == 0
  std::optional<double> eval_accuracy;      // final exit on the evaluation set
  std::optional<std::vector<double>> eval_exit_accuracy;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Joint optimization of all exits. Parameters are not re-initialized; call
/// init_params first. `eval` (labeled) is scored every eval_every epochs.
std::vector<EpochRecord> train(Network& net, const Dataset& source, const Dataset& target, const TrainConfig& cfg,
                               const Dataset* eval = nullptr, const EpochCallback& on_epoch = {});

/// One training step on a fixed batch; returns the loss before the update.
TotalLossValue train_step(Network& net, const DomainBatch& batch, const TrainConfig& cfg, OptimizerState& state);

/// Loss of a fixed batch without updating anything.
TotalLossValue batch_loss(const Network& net, const DomainBatch& batch, const LossConfig& cfg);

struct AccuracyReport {
  double accuracy = 0.0;                // final exit, or routed when a policy is given
  std::vector<double> exit_accuracy;    // every exit evaluated on every sample
  std::vector<double> exit_ratios;      // routed only
};

/// Index of the largest value; ties go to the smaller index.
template <class Range>
std::size_t argmax(const Range& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

AccuracyReport evaluate_accuracy(const Network& net, const Dataset& data, const ThresholdPolicy* policy = nullptr);

/// One JSON object per line: epoch, seed, total_loss, cross_entropy[],
/// mmd[] (or null), eval_accuracy (or null), eval_exit_accuracy[] (or null).
std::string history_to_jsonl(const std::vector<EpochRecord>& history);
void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history(const std::filesystem::path& path);

}  // namespace adan
