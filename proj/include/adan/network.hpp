#pragma once

// Multi-exit convolutional network: a backbone layer sequence plus exit
// branches attached after chosen backbone layers. The final exit is the
// backbone head itself.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "adan/error.hpp"
#include "adan/layers.hpp"
#include "adan/losses.hpp"
#include "adan/random.hpp"
#include "adan/tensor.hpp"

namespace adan {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Linear };

struct LayerSpec {
  LayerKind kind;
  std::size_t outputs = 0;  // channels for Conv, features for Linear
  std::size_t kernel = 0;
  std::size_t stride = 1;

  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride = 1) {
    return {LayerKind::Conv, channels, kernel, stride};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec maxpool() { return {LayerKind::MaxPool}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }
  static LayerSpec dense(std::size_t features) { return {LayerKind::Linear, features}; }

  bool has_parameters() const { return kind == LayerKind::Conv || kind == LayerKind::Linear; }
};

/// Exit description before shapes are resolved. `taps` index the exit's path:
/// positions 0..attach_after are backbone layer outputs, position
/// attach_after + 1 + j is the output of branch layer j.
struct ExitSpec {
  std::size_t attach_after = 0;
  std::vector<LayerSpec> branch;
  std::vector<std::size_t> taps;
};

template <class Real>
struct Layer {
  LayerSpec spec;
  Shape input_shape;   // per sample, without the batch axis
  Shape output_shape;  // per sample
  BasicTensor<Real> weight;
  BasicTensor<Real> bias;
};

template <class Real>
struct ExitBranch {
  std::size_t attach_after = 0;
  std::vector<Layer<Real>> layers;
  std::vector<std::size_t> taps;
};

/// Primitive layer executions, per backbone layer and per branch layer.
struct OpCounts {
  std::vector<std::uint64_t> backbone;
  std::vector<std::vector<std::uint64_t>> branches;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : backbone) t += v;
    for (const auto& b : branches)
      for (auto v : b) t += v;
    return t;
  }
};

template <class Real>
struct ForwardTrace {
  std::vector<ExitActivations<Real>> exits;
};

/// Intermediate activations kept by forward_full for the backward pass.
template <class Real>
struct ForwardCache {
  BasicTensor<Real> input;
  std::vector<BasicTensor<Real>> backbone;
  std::vector<std::vector<BasicTensor<Real>>> branches;
};

template <class Real>
class BasicNetwork;

/// Resumable per-sample state for staged inference: the latest backbone
/// activation and how far the backbone has been evaluated.
template <class Real>
struct StagedState {
  const BasicNetwork<Real>* network = nullptr;
  BasicTensor<Real> input;
  BasicTensor<Real> activation;
  std::ptrdiff_t backbone_done = -1;
  OpCounts counts;
};

namespace detail {

template <class Real>
BasicTensor<Real> apply_layer(const Layer<Real>& layer, const BasicTensor<Real>& x) {
  switch (layer.spec.kind) {
    case LayerKind::Conv:
      return conv2d(x, layer.weight, layer.bias, layer.spec.stride);
    case LayerKind::Relu:
      return relu(x);
    case LayerKind::MaxPool:
      return maxpool2(x);
    case LayerKind::Flatten:
      return x.reshaped({x.dim(0), x.size() / x.dim(0)});
    case LayerKind::Linear:
      return linear(x, layer.weight, layer.bias);
  }
  throw Error("unknown layer kind");
}

template <class Real>
LayerGradients<Real> layer_backward(const Layer<Real>& layer, const BasicTensor<Real>& x,
                                    const BasicTensor<Real>& d_out) {
  switch (layer.spec.kind) {
    case LayerKind::Conv:
      return conv2d_backward(x, layer.weight, layer.spec.stride, d_out);
    case LayerKind::Relu:
      return {relu_backward(x, d_out), std::nullopt, std::nullopt};
    case LayerKind::MaxPool:
      return {maxpool2_backward(x, d_out), std::nullopt, std::nullopt};
    case LayerKind::Flatten:
      return {d_out.reshaped(x.shape()), std::nullopt, std::nullopt};
    case LayerKind::Linear:
      return linear_backward(x, layer.weight, d_out);
  }
  throw Error("unknown layer kind");
}

template <class Real>
void accumulate(std::optional<BasicTensor<Real>>& slot, const BasicTensor<Real>& g) {
  if (!slot) {
    slot = g;
    return;
  }
  if (slot->size() != g.size()) throw DimensionError("gradient accumulation size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

// Resolves output shapes and allocates parameters for one layer.
template <class Real>
Layer<Real> make_layer(const LayerSpec& spec, const Shape& in) {
  Layer<Real> layer{spec, in, {}, {}, {}};
  switch (spec.kind) {
    case LayerKind::Conv: {
      if (in.size() != 3) throw ConfigError("conv layer needs a [C,H,W] input, got " + shape_string(in));
      if (spec.kernel == 0 || spec.kernel > in[1] || spec.kernel > in[2] || spec.stride == 0) {
        throw ConfigError("conv kernel " + std::to_string(spec.kernel) + " does not fit input " + shape_string(in));
      }
      layer.output_shape = {spec.outputs, (in[1] - spec.kernel) / spec.stride + 1,
                            (in[2] - spec.kernel) / spec.stride + 1};
      layer.weight = BasicTensor<Real>({spec.outputs, in[0], spec.kernel, spec.kernel});
      layer.bias = BasicTensor<Real>({spec.outputs});
      break;
    }
    case LayerKind::Relu:
      layer.output_shape = in;
      break;
    case LayerKind::MaxPool:
      if (in.size() != 3 || in[1] % 2 || in[2] % 2) throw ConfigError("maxpool needs even spatial extents, got " + shape_string(in));
      layer.output_shape = {in[0], in[1] / 2, in[2] / 2};
      break;
    case LayerKind::Flatten:
      layer.output_shape = {shape_volume(in)};
      break;
    case LayerKind::Linear:
      if (in.size() != 1) throw ConfigError("linear layer needs a flat input, got " + shape_string(in));
      layer.output_shape = {spec.outputs};
      layer.weight = BasicTensor<Real>({spec.outputs, in[0]});
      layer.bias = BasicTensor<Real>({spec.outputs});
      break;
  }
  return layer;
}

}  // namespace detail

template <class TensorType>
struct ParameterRef {
  std::string name;
  TensorType* tensor;
  std::size_t fan_in;  // 0 for biases
};

template <class Real>
class BasicNetwork {
 public:
  BasicNetwork() = default;

  /// `input` is the per-sample shape [C,H,W]; `exits` must end with the
  /// backbone head (attach_after == last backbone index, empty branch).
  BasicNetwork(Shape input, const std::vector<LayerSpec>& backbone, const std::vector<ExitSpec>& exits,
               std::size_t label_count)
      : input_shape_(std::move(input)), label_count_(label_count) {
    if (backbone.empty()) throw ConfigError("network needs a backbone");
    if (exits.empty()) throw ConfigError("network needs at least one exit");
    Shape shape = input_shape_;
    for (const auto& spec : backbone) {
      backbone_.push_back(detail::make_layer<Real>(spec, shape));
      shape = backbone_.back().output_shape;
    }
    std::ptrdiff_t previous = -1;
    for (std::size_t e = 0; e < exits.size(); ++e) {
      const auto& def = exits[e];
      if (static_cast<std::ptrdiff_t>(def.attach_after) <= previous || def.attach_after >= backbone_.size()) {
        throw ConfigError("exit " + std::to_string(e + 1) + ": attach points must strictly increase within the backbone");
      }
      previous = static_cast<std::ptrdiff_t>(def.attach_after);
      ExitBranch<Real> branch{def.attach_after, {}, def.taps};
      Shape s = backbone_[def.attach_after].output_shape;
      for (const auto& spec : def.branch) {
        branch.layers.push_back(detail::make_layer<Real>(spec, s));
        s = branch.layers.back().output_shape;
      }
      const std::size_t path_len = def.attach_after + 1 + branch.layers.size();
      for (std::size_t t : def.taps)
        if (t >= path_len) throw ConfigError("exit " + std::to_string(e + 1) + ": tap index out of range");
      const Layer<Real>& last = branch.layers.empty() ? backbone_[def.attach_after] : branch.layers.back();
      if (last.spec.kind != LayerKind::Linear || last.output_shape != Shape{label_count}) {
        throw ConfigError("exit " + std::to_string(e + 1) + " must end in a linear layer with " +
                          std::to_string(label_count) + " outputs");
      }
      exits_.push_back(std::move(branch));
    }
    if (exits_.back().attach_after != backbone_.size() - 1 || !exits_.back().layers.empty()) {
      throw ConfigError("the final exit must be the backbone head itself");
    }
  }

  std::size_t exit_count() const { return exits_.size(); }
  std::size_t label_count() const { return label_count_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer<Real>>& backbone() const { return backbone_; }
  const std::vector<ExitBranch<Real>>& exits() const { return exits_; }

  /// Parameters in canonical order: backbone layers, then each exit branch.
  std::vector<ParameterRef<BasicTensor<Real>>> parameters() {
    std::vector<ParameterRef<BasicTensor<Real>>> out;
    auto add = [&](Layer<Real>& l, const std::string& prefix) {
      if (!l.spec.has_parameters()) return;
      const std::size_t fan_in = l.weight.size() / l.weight.dim(0);
      out.push_back({prefix + ".weight", &l.weight, fan_in});
      out.push_back({prefix + ".bias", &l.bias, 0});
    };
    for (std::size_t i = 0; i < backbone_.size(); ++i) add(backbone_[i], "backbone." + std::to_string(i));
    for (std::size_t e = 0; e < exits_.size(); ++e)
      for (std::size_t j = 0; j < exits_[e].layers.size(); ++j)
        add(exits_[e].layers[j], "exit" + std::to_string(e + 1) + "." + std::to_string(j));
    return out;
  }

  std::vector<ParameterRef<const BasicTensor<Real>>> parameters() const {
    std::vector<ParameterRef<const BasicTensor<Real>>> out;
    for (auto& p : const_cast<BasicNetwork*>(this)->parameters()) out.push_back({p.name, p.tensor, p.fan_in});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->size();
    return n;
  }

  /// Weights ~ Normal(0, 2 / fan_in), biases zero; deterministic in `seed`.
  void init_params(std::uint64_t seed) {
    std::size_t stream = 0;
    for (auto& p : parameters()) {
      if (p.fan_in == 0) {
        p.tensor->fill(Real(0));
      } else {
        Rng rng(derive_seed(seed, stream));
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(p.fan_in)));
        for (auto& v : p.tensor->storage()) v = static_cast<Real>(normal(rng));
      }
      ++stream;
    }
  }

  template <class Other>
  BasicNetwork<Other> cast() const {
    BasicNetwork<Other> out;
    out.input_shape_ = input_shape_;
    out.label_count_ = label_count_;
    auto convert = [](const Layer<Real>& l) {
      return Layer<Other>{l.spec, l.input_shape, l.output_shape, l.weight.template cast<Other>(),
                          l.bias.template cast<Other>()};
    };
    for (const auto& l : backbone_) out.backbone_.push_back(convert(l));
    for (const auto& e : exits_) {
      ExitBranch<Other> b{e.attach_after, {}, e.taps};
      for (const auto& l : e.layers) b.layers.push_back(convert(l));
      out.exits_.push_back(std::move(b));
    }
    return out;
  }

  OpCounts empty_counts() const {
    OpCounts c;
    c.backbone.assign(backbone_.size(), 0);
    for (const auto& e : exits_) c.branches.emplace_back(e.layers.size(), 0);
    return c;
  }

  /// All exits on a batch [B,C,H,W]. Optionally keeps activations for
  /// backward() and counts layer executions.
  ForwardTrace<Real> forward_full(const BasicTensor<Real>& images, ForwardCache<Real>* cache = nullptr,
                                  OpCounts* counts = nullptr) const {
    check_input(images);
    ForwardCache<Real> local;
    ForwardCache<Real>& c = cache ? *cache : local;
    c.input = images;
    c.backbone.clear();
    c.branches.assign(exits_.size(), {});
    if (counts && counts->backbone.size() != backbone_.size()) *counts = empty_counts();
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      const BasicTensor<Real>& x = i == 0 ? images : c.backbone[i - 1];
      c.backbone.push_back(detail::apply_layer(backbone_[i], x));
      if (counts) ++counts->backbone[i];
    }
    ForwardTrace<Real> trace;
    for (std::size_t e = 0; e < exits_.size(); ++e) {
      const auto& ex = exits_[e];
      for (std::size_t j = 0; j < ex.layers.size(); ++j) {
        const BasicTensor<Real>& x = j == 0 ? c.backbone[ex.attach_after] : c.branches[e][j - 1];
        c.branches[e].push_back(detail::apply_layer(ex.layers[j], x));
        if (counts) ++counts->branches[e][j];
      }
      ExitActivations<Real> act;
      act.logits = path_output(c, e, path_length(e) - 1);
      for (std::size_t t : ex.taps) {
        const auto& a = path_output(c, e, t);
        act.taps.push_back(a.reshaped({a.dim(0), a.size() / a.dim(0)}));
      }
      trace.exits.push_back(std::move(act));
    }
    return trace;
  }

  /// Parameter gradients (canonical order) given per-exit gradients of the
  /// loss with respect to logits and taps.
  std::vector<BasicTensor<Real>> backward(const ForwardCache<Real>& cache,
                                          const std::vector<ExitActivations<Real>>& grads) const {
    if (grads.size() != exits_.size()) throw DimensionError("backward: one gradient entry per exit required");
    std::vector<std::optional<BasicTensor<Real>>> d_backbone(backbone_.size());
    std::vector<std::optional<BasicTensor<Real>>> backbone_params(backbone_.size() * 2);
    std::vector<std::vector<std::optional<BasicTensor<Real>>>> branch_params(exits_.size());

    for (std::size_t e = 0; e < exits_.size(); ++e) {
      const auto& ex = exits_[e];
      const std::size_t len = path_length(e);
      std::vector<std::optional<BasicTensor<Real>>> d_path(len);
      auto inject = [&](std::size_t pos, const BasicTensor<Real>& g) {
        if (g.empty()) return;
        const auto& a = path_output(cache, e, pos);
        detail::accumulate(d_path[pos], g.reshaped(a.shape()));
      };
      inject(len - 1, grads[e].logits);
      if (!grads[e].taps.empty() && grads[e].taps.size() != ex.taps.size()) {
        throw DimensionError("backward: tap gradient count mismatch at exit " + std::to_string(e + 1));
      }
      for (std::size_t t = 0; t < grads[e].taps.size(); ++t) inject(ex.taps[t], grads[e].taps[t]);

      branch_params[e].resize(ex.layers.size() * 2);
      for (std::size_t j = ex.layers.size(); j-- > 0;) {
        auto& slot = d_path[ex.attach_after + 1 + j];
        if (!slot) continue;
        const BasicTensor<Real>& x = j == 0 ? cache.backbone[ex.attach_after] : cache.branches[e][j - 1];
        auto g = detail::layer_backward(ex.layers[j], x, *slot);
        if (g.d_weights) detail::accumulate(branch_params[e][2 * j], *g.d_weights);
        if (g.d_bias) detail::accumulate(branch_params[e][2 * j + 1], *g.d_bias);
        detail::accumulate(d_path[ex.attach_after + j], g.d_input);
      }
      for (std::size_t i = 0; i <= ex.attach_after; ++i)
        if (d_path[i]) detail::accumulate(d_backbone[i], *d_path[i]);
    }

    for (std::size_t i = backbone_.size(); i-- > 0;) {
      if (!d_backbone[i]) continue;
      const BasicTensor<Real>& x = i == 0 ? cache.input : cache.backbone[i - 1];
      auto g = detail::layer_backward(backbone_[i], x, *d_backbone[i]);
      if (g.d_weights) detail::accumulate(backbone_params[2 * i], *g.d_weights);
      if (g.d_bias) detail::accumulate(backbone_params[2 * i + 1], *g.d_bias);
      if (i > 0) detail::accumulate(d_backbone[i - 1], g.d_input);
    }

    std::vector<BasicTensor<Real>> out;
    auto emit = [&](const Layer<Real>& l, std::optional<BasicTensor<Real>>& w, std::optional<BasicTensor<Real>>& b) {
      if (!l.spec.has_parameters()) return;
      out.push_back(w ? std::move(*w) : BasicTensor<Real>(l.weight.shape()));
      out.push_back(b ? std::move(*b) : BasicTensor<Real>(l.bias.shape()));
    };
    for (std::size_t i = 0; i < backbone_.size(); ++i) emit(backbone_[i], backbone_params[2 * i], backbone_params[2 * i + 1]);
    for (std::size_t e = 0; e < exits_.size(); ++e)
      for (std::size_t j = 0; j < exits_[e].layers.size(); ++j)
        emit(exits_[e].layers[j], branch_params[e][2 * j], branch_params[e][2 * j + 1]);
    return out;
  }

  /// Logits of one sample at exit `exit_index` (1-based), evaluating only the
  /// backbone layers not already held by `state`. The same state may be
  /// resumed for later exits of the same sample.
  BasicTensor<Real> forward_staged(const BasicTensor<Real>& image, std::size_t exit_index,
                                   StagedState<Real>& state) const {
    if (exit_index < 1 || exit_index > exits_.size()) {
      throw ArgumentError("forward_staged: exit index " + std::to_string(exit_index) + " outside 1.." +
                          std::to_string(exits_.size()));
    }
    if (state.network == nullptr) {
      check_input(image);
      if (image.dim(0) != 1) throw DimensionError("forward_staged expects a single sample [1,C,H,W]");
      state.network = this;
      state.input = image;
      state.activation = BasicTensor<Real>();
      state.backbone_done = -1;
      state.counts = empty_counts();
    } else if (state.network != this) {
      throw StateError("forward_staged: state belongs to a different network");
    } else if (state.input.shape() != image.shape() || state.input.storage() != image.storage()) {
      throw StateError("forward_staged: state belongs to a different sample");
    }
    const auto& ex = exits_[exit_index - 1];
    if (static_cast<std::ptrdiff_t>(ex.attach_after) < state.backbone_done) {
      throw StateError("forward_staged: exit " + std::to_string(exit_index) +
                       " attaches before the backbone layers already evaluated");
    }
    for (auto i = static_cast<std::size_t>(state.backbone_done + 1); i <= ex.attach_after; ++i) {
      state.activation = detail::apply_layer(backbone_[i], i == 0 ? state.input : state.activation);
      ++state.counts.backbone[i];
      state.backbone_done = static_cast<std::ptrdiff_t>(i);
    }
    if (ex.layers.empty()) return state.activation;
    BasicTensor<Real> x = detail::apply_layer(ex.layers[0], state.activation);
    ++state.counts.branches[exit_index - 1][0];
    for (std::size_t j = 1; j < ex.layers.size(); ++j) {
      x = detail::apply_layer(ex.layers[j], x);
      ++state.counts.branches[exit_index - 1][j];
    }
    return x;
  }

 private:
  template <class>
  friend class BasicNetwork;

  void check_input(const BasicTensor<Real>& images) const {
    if (images.rank() != 4 || !std::equal(input_shape_.begin(), input_shape_.end(), images.shape().begin() + 1)) {
      throw DimensionError("network input must be [B," + shape_string(input_shape_).substr(1) + ", got " +
                           shape_string(images.shape()));
    }
  }

  std::size_t path_length(std::size_t e) const { return exits_[e].attach_after + 1 + exits_[e].layers.size(); }

  const BasicTensor<Real>& path_output(const ForwardCache<Real>& c, std::size_t e, std::size_t pos) const {
    const auto& ex = exits_[e];
    return pos <= ex.attach_after ? c.backbone[pos] : c.branches[e][pos - ex.attach_after - 1];
  }

  Shape input_shape_;
  std::size_t label_count_ = 0;
  std::vector<Layer<Real>> backbone_;
  std::vector<ExitBranch<Real>> exits_;
};

using Network = BasicNetwork<float>;

/// Backbone and exits of the LeNet-5 style model (input 1x32x32):
///   conv6@5 relu pool | conv16@5 relu pool conv120@5 relu flatten fc84 relu fc|C|
/// exit 1 branches after the first pool: conv16@5/2 relu flatten fc|C|.
std::vector<LayerSpec> lenet_backbone(std::size_t label_count);
std::vector<ExitSpec> lenet_exits(std::size_t label_count);

template <class Real = float>
BasicNetwork<Real> build_lenet_adan_as(std::size_t label_count) {
  if (label_count < 2) throw ConfigError("label_count must be at least 2");
  return BasicNetwork<Real>({1, 32, 32}, lenet_backbone(label_count), lenet_exits(label_count), label_count);
}

Network build_lenet_adan(std::size_t label_count);

// Checkpoint layout (little-endian): "ADAN", u32 version, u32 tensor count,
// per tensor {u32 name length, name bytes, u32 rank, u32 extents...}, then
// the f32 payloads in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;
};

std::vector<std::uint8_t> encode_checkpoint(const Network& net);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into `net`; throws ConfigError listing every
/// manifest difference when the architectures disagree.
void apply_checkpoint(Network& net, const Checkpoint& ckpt);

/// Rebuilds a LeNet-ADAN sized from the checkpoint and loads it.
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace adan
