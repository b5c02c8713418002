// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The atbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "atbench/common.hpp"
#include "atbench/featurespace.hpp"

namespace atbench {

enum class ModelKind { kLinearMargin, kMlp, kSoftTree };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kLinearMargin: return "linear-margin";
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kSoftTree: return "soft-tree";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "linear-margin" || s == "linear" || s == "svm") return ModelKind::kLinearMargin;
  if (s == "mlp" || s == "dnn") return ModelKind::kMlp;
  if (s == "soft-tree" || s == "dt") return ModelKind::kSoftTree;
  fail(ErrorCode::kConfig, "unknown model kind '" + std::string(s) + "'");
}

/// Architecture knobs. `hidden` applies to mlp; `max_depth`/`lmbda` to
/// soft-tree (lmbda weighs the routing-balance penalty during training).
struct ModelOptions {
  std::vector<std::size_t> hidden{200, 200};
  std::size_t max_depth = 5;
  double lmbda = 0.47;

  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

struct Scores {
  double benign = 0.0;   // g0
  double malware = 0.0;  // g1
  double margin() const { return malware - benign; }
};

struct Prediction {
  Label label = Label::kBenign;
  Scores scores;
};

/// Parameter layouts (all weight matrices are stored input-major, so row j
/// of the first layer holds the fan-out of feature j):
///
///   linear-margin  w[d], b                      margin m = w.x + b, scores (-m, m)
///   mlp            per layer: W[in][out], b[out], ReLU between layers,
///                  final layer has two outputs (the scores are the logits)
///   soft-tree      gates W[d][I], gate bias[I], leaf logits[L][2]
///                  with I = 2^depth - 1 inner nodes in heap order and
///                  L = 2^depth leaves; scores are log class probabilities of
///                  the path-probability mixture of leaf distributions.
class Model {
 public:
  static std::size_t parameter_count(ModelKind kind, std::size_t d, const ModelOptions& opts) {
    switch (kind) {
      case ModelKind::kLinearMargin:
        return d + 1;
      case ModelKind::kMlp: {
        std::size_t total = 0, in = d;
        for (auto h : opts.hidden) {
          total += in * h + h;
          in = h;
        }
        return total + in * 2 + 2;
      }
      case ModelKind::kSoftTree: {
        const std::size_t inner = (std::size_t{1} << opts.max_depth) - 1;
        const std::size_t leaves = std::size_t{1} << opts.max_depth;
        return d * inner + inner + 2 * leaves;
      }
    }
    return 0;
  }

  /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer. Leaf
  /// logits of the soft tree use fan_in = 2.
  static Model create(ModelKind kind, const FeatureSpaceSpec& space, ModelOptions opts,
                      std::uint64_t seed) {
    Model m(kind, space, std::move(opts));
    Rng rng(seed);
    const std::size_t d = space.dimension;
    auto fill = [&](std::size_t offset, std::size_t count, double fan_in) {
      const double bound = 1.0 / std::sqrt(fan_in);
      for (std::size_t i = 0; i < count; ++i) m.params_[offset + i] = rng.uniform(-bound, bound);
    };
    switch (kind) {
      case ModelKind::kLinearMargin:
        fill(0, d + 1, static_cast<double>(d));
        break;
      case ModelKind::kMlp: {
        std::size_t offset = 0, in = d;
        auto sizes = m.options_.hidden;
        sizes.push_back(2);
        for (auto out : sizes) {
          fill(offset, in * out + out, static_cast<double>(in));
          offset += in * out + out;
          in = out;
        }
        break;
      }
      case ModelKind::kSoftTree: {
        const std::size_t inner = m.inner_nodes();
        fill(0, d * inner + inner, static_cast<double>(d));
        fill(d * inner + inner, 2 * m.leaves(), 2.0);
        break;
      }
    }
    return m;
  }

  static Model from_parameters(ModelKind kind, const FeatureSpaceSpec& space, ModelOptions opts,
                               std::vector<double> params) {
    Model m(kind, space, std::move(opts));
    if (params.size() != m.params_.size()) {
      fail(ErrorCode::kConfig, "parameter vector has length " + std::to_string(params.size()) +
                                   ", layout expects " + std::to_string(m.params_.size()));
    }
    for (double v : params) {
      if (!std::isfinite(v)) fail(ErrorCode::kNumeric, "non-finite model parameter");
    }
    m.params_ = std::move(params);
    return m;
  }

  static Model linear(const FeatureSpaceSpec& space, std::vector<double> weights, double bias) {
    weights.push_back(bias);
    return from_parameters(ModelKind::kLinearMargin, space, ModelOptions{}, std::move(weights));
  }

  ModelKind kind() const { return kind_; }
  const FeatureSpaceSpec& space() const { return space_; }
  std::size_t dimension() const { return space_.dimension; }
  const ModelOptions& options() const { return options_; }
  std::span<const double> parameters() const { return params_; }
  std::vector<double>& mutable_parameters() { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::size_t inner_nodes() const { return (std::size_t{1} << options_.max_depth) - 1; }
  std::size_t leaves() const { return std::size_t{1} << options_.max_depth; }

  friend bool operator==(const Model&, const Model&) = default;

 private:
  Model(ModelKind kind, const FeatureSpaceSpec& space, ModelOptions opts)
      : kind_(kind), space_(space), options_(std::move(opts)) {
    space_.validate();
    if (kind_ == ModelKind::kSoftTree && (options_.max_depth < 1 || options_.max_depth > 16)) {
      fail(ErrorCode::kConfig, "soft-tree max_depth must lie in [1, 16]");
    }
    if (kind_ == ModelKind::kMlp) {
      for (auto h : options_.hidden) {
        if (h == 0) fail(ErrorCode::kConfig, "mlp hidden widths must be positive");
      }
    }
    params_.assign(parameter_count(kind_, space_.dimension, options_), 0.0);
  }

  ModelKind kind_;
  FeatureSpaceSpec space_;
  ModelOptions options_;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Forward/backward kernel shared by the sparse (binary) and dense (real)
// input paths.

namespace detail {

struct SparseInput {
  std::span<const FeatureIndex> active;
  template <class F>
  void each(F&& f) const {
    for (auto j : active) f(static_cast<std::size_t>(j), 1.0);
  }
};

struct DenseInput {
  std::span<const double> x;
  template <class F>
  void each(F&& f) const {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] != 0.0) f(j, x[j]);
    }
  }
};

struct ForwardState {
  Scores scores;
  double linear_margin = 0.0;
  // mlp: activations per layer (post-ReLU for hidden, logits for the last)
  // and pre-activations for hidden layers.
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> act;
  // soft-tree
  std::vector<double> gate;    // probability of routing right, per inner node
  std::vector<double> path;    // path probability per node (inner then leaves)
  std::vector<double> leaf_q;  // leaf class distributions, [L][2]
  double mix[2] = {0.0, 0.0};
};

inline double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <class In>
ForwardState forward(const Model& model, const In& in) {
  ForwardState st;
  const auto params = model.parameters();
  const std::size_t d = model.dimension();
  switch (model.kind()) {
    case ModelKind::kLinearMargin: {
      double m = params[d];
      in.each([&](std::size_t j, double v) { m += params[j] * v; });
      st.linear_margin = m;
      st.scores = {-m, m};
      break;
    }
    case ModelKind::kMlp: {
      auto sizes = model.options().hidden;
      sizes.push_back(2);
      std::size_t offset = 0, in_size = d;
      for (std::size_t layer = 0; layer < sizes.size(); ++layer) {
        const std::size_t out = sizes[layer];
        const double* W = params.data() + offset;
        const double* b = W + in_size * out;
        std::vector<double> z(b, b + out);
        if (layer == 0) {
          in.each([&](std::size_t j, double v) {
            const double* row = W + j * out;
            for (std::size_t o = 0; o < out; ++o) z[o] += v * row[o];
          });
        } else {
          const auto& a = st.act.back();
          for (std::size_t i = 0; i < in_size; ++i) {
            if (a[i] == 0.0) continue;
            const double* row = W + i * out;
            for (std::size_t o = 0; o < out; ++o) z[o] += a[i] * row[o];
          }
        }
        if (layer + 1 < sizes.size()) {
          std::vector<double> a(out);
          for (std::size_t o = 0; o < out; ++o) a[o] = z[o] > 0.0 ? z[o] : 0.0;
          st.pre.push_back(std::move(z));
          st.act.push_back(std::move(a));
        } else {
          st.scores = {z[0], z[1]};
          st.act.push_back(std::move(z));
        }
        offset += in_size * out + out;
        in_size = out;
      }
      break;
    }
    case ModelKind::kSoftTree: {
      const std::size_t inner = model.inner_nodes();
      const std::size_t leaves = model.leaves();
      const double* W = params.data();
      const double* b = W + d * inner;
      const double* phi = b + inner;
      std::vector<double> z(b, b + inner);
      in.each([&](std::size_t j, double v) {
        const double* row = W + j * inner;
        for (std::size_t i = 0; i < inner; ++i) z[i] += v * row[i];
      });
      st.gate.resize(inner);
      for (std::size_t i = 0; i < inner; ++i) st.gate[i] = sigmoid(z[i]);
      st.path.assign(inner + leaves, 0.0);
      st.path[0] = 1.0;
      for (std::size_t i = 0; i < inner; ++i) {
        st.path[2 * i + 1] = st.path[i] * (1.0 - st.gate[i]);
        st.path[2 * i + 2] = st.path[i] * st.gate[i];
      }
      st.leaf_q.resize(2 * leaves);
      for (std::size_t l = 0; l < leaves; ++l) {
        const double lse = log_sum_exp2(phi[2 * l], phi[2 * l + 1]);
        st.leaf_q[2 * l] = std::exp(phi[2 * l] - lse);
        st.leaf_q[2 * l + 1] = std::exp(phi[2 * l + 1] - lse);
        const double p = st.path[inner + l];
        st.mix[0] += p * st.leaf_q[2 * l];
        st.mix[1] += p * st.leaf_q[2 * l + 1];
      }
      st.scores = {std::log(st.mix[0]), std::log(st.mix[1])};
      break;
    }
  }
  return st;
}

/// Classification loss (hinge with margin 1, or cross-entropy).
inline double class_loss(const Model& model, const ForwardState& st, Label y) {
  switch (model.kind()) {
    case ModelKind::kLinearMargin: {
      const double s = y == Label::kMalware ? 1.0 : -1.0;
      return std::max(0.0, 1.0 - s * st.linear_margin);
    }
    case ModelKind::kMlp: {
      const double lse = log_sum_exp2(st.scores.benign, st.scores.malware);
      return lse - (y == Label::kMalware ? st.scores.malware : st.scores.benign);
    }
    case ModelKind::kSoftTree:
      return -std::log(st.mix[to_int(y)]);
  }
  return 0.0;
}

/// Accumulates scale * d(loss)/d(params) into param_grad and
/// scale * d(loss)/d(x) into input_grad (either may be null). For the soft
/// tree, `path_upstream` adds extra gradient on node path probabilities
/// (used by the routing penalty).
template <class In>
void backward(const Model& model, const In& in, const ForwardState& st, Label y, double scale,
              double* param_grad, double* input_grad,
              const double* path_upstream = nullptr) {
  const auto params = model.parameters();
  const std::size_t d = model.dimension();
  switch (model.kind()) {
    case ModelKind::kLinearMargin: {
      const double s = y == Label::kMalware ? 1.0 : -1.0;
      const double dm = (1.0 - s * st.linear_margin > 0.0 ? -s : 0.0) * scale;
      if (dm == 0.0) return;
      if (param_grad) {
        in.each([&](std::size_t j, double v) { param_grad[j] += dm * v; });
        param_grad[d] += dm;
      }
      if (input_grad) {
        for (std::size_t j = 0; j < d; ++j) input_grad[j] += dm * params[j];
      }
      break;
    }
    case ModelKind::kMlp: {
      auto sizes = model.options().hidden;
      sizes.push_back(2);
      const std::size_t layers = sizes.size();
      std::vector<std::size_t> offsets(layers), ins(layers);
      std::size_t offset = 0, in_size = d;
      for (std::size_t l = 0; l < layers; ++l) {
        offsets[l] = offset;
        ins[l] = in_size;
        offset += in_size * sizes[l] + sizes[l];
        in_size = sizes[l];
      }
      // d(CE)/d(logits) = softmax - onehot
      const double lse = log_sum_exp2(st.scores.benign, st.scores.malware);
      std::vector<double> dz = {std::exp(st.scores.benign - lse) * scale,
                                std::exp(st.scores.malware - lse) * scale};
      dz[to_int(y)] -= scale;
      for (std::size_t l = layers; l-- > 0;) {
        const std::size_t out = sizes[l], nin = ins[l];
        const double* W = params.data() + offsets[l];
        if (param_grad) {
          double* gW = param_grad + offsets[l];
          double* gb = gW + nin * out;
          for (std::size_t o = 0; o < out; ++o) gb[o] += dz[o];
          if (l == 0) {
            in.each([&](std::size_t j, double v) {
              double* row = gW + j * out;
              for (std::size_t o = 0; o < out; ++o) row[o] += v * dz[o];
            });
          } else {
            const auto& a = st.act[l - 1];
            for (std::size_t i = 0; i < nin; ++i) {
              if (a[i] == 0.0) continue;
              double* row = gW + i * out;
              for (std::size_t o = 0; o < out; ++o) row[o] += a[i] * dz[o];
            }
          }
        }
        if (l == 0) {
          if (input_grad) {
            for (std::size_t j = 0; j < nin; ++j) {
              const double* row = W + j * out;
              double acc = 0.0;
              for (std::size_t o = 0; o < out; ++o) acc += row[o] * dz[o];
              input_grad[j] += acc;
            }
          }
        } else {
          std::vector<double> da(nin, 0.0);
          const auto& pre = st.pre[l - 1];
          for (std::size_t i = 0; i < nin; ++i) {
            if (pre[i] <= 0.0) continue;
            const double* row = W + i * out;
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) acc += row[o] * dz[o];
            da[i] = acc;
          }
          dz = std::move(da);
        }
      }
      break;
    }
    case ModelKind::kSoftTree: {
      const std::size_t inner = model.inner_nodes();
      const std::size_t leaves = model.leaves();
      const double* W = params.data();
      const int yi = to_int(y);
      // Upstream on path probabilities and the leaf-logit gradient.
      std::vector<double> g(inner + leaves, 0.0);
      if (path_upstream) {
        for (std::size_t n = 0; n < inner + leaves; ++n) g[n] = path_upstream[n];
      }
      const double my = st.mix[yi];
      double* g_phi = param_grad ? param_grad + d * inner + inner : nullptr;
      for (std::size_t l = 0; l < leaves; ++l) {
        const double qy = st.leaf_q[2 * l + yi];
        g[inner + l] += -scale * qy / my;
        if (g_phi) {
          const double p = st.path[inner + l];
          for (int k = 0; k < 2; ++k) {
            const double delta = (k == yi ? 1.0 : 0.0) - st.leaf_q[2 * l + k];
            g_phi[2 * l + k] += -scale * (p / my) * qy * delta;
          }
        }
      }
      std::vector<double> dz(inner, 0.0);
      for (std::size_t i = inner; i-- > 0;) {
        const double p = st.gate[i];
        const double gl = g[2 * i + 1], gr = g[2 * i + 2];
        g[i] += gl * (1.0 - p) + gr * p;
        dz[i] = st.path[i] * (gr - gl) * p * (1.0 - p);
      }
      if (param_grad) {
        double* gW = param_grad;
        double* gb = gW + d * inner;
        for (std::size_t i = 0; i < inner; ++i) gb[i] += dz[i];
        in.each([&](std::size_t j, double v) {
          double* row = gW + j * inner;
          for (std::size_t i = 0; i < inner; ++i) row[i] += v * dz[i];
        });
      }
      if (input_grad) {
        for (std::size_t j = 0; j < d; ++j) {
          const double* row = W + j * inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) acc += row[i] * dz[i];
          input_grad[j] += acc;
        }
      }
      break;
    }
  }
}

inline void check_sample(const Model& model, const BinarySample& x) {
  if (!x.is_consistent(model.dimension())) {
    fail(ErrorCode::kDimension, "sample is inconsistent with model dimension " +
                                    std::to_string(model.dimension()));
  }
}

}  // namespace detail

/// label = argmax of (g0, g1); an exact tie goes to benign.
inline Prediction predict(const Model& model, const BinarySample& x) {
  detail::check_sample(model, x);
  const auto st = detail::forward(model, detail::SparseInput{x.active});
  if (!std::isfinite(st.scores.benign) || !std::isfinite(st.scores.malware)) {
    fail(ErrorCode::kNumeric, "non-finite score");
  }
  return {st.scores.malware > st.scores.benign ? Label::kMalware : Label::kBenign, st.scores};
}

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Classification loss of x under label y and its gradient with respect to
/// x treated as a real vector. Never includes training-only penalties.
inline LossAndGrad loss_and_grad_input(const Model& model, const BinarySample& x, Label y) {
  detail::check_sample(model, x);
  const detail::SparseInput in{x.active};
  const auto st = detail::forward(model, in);
  LossAndGrad out;
  out.loss = detail::class_loss(model, st, y);
  if (!std::isfinite(out.loss)) fail(ErrorCode::kNumeric, "non-finite loss");
  out.grad.assign(model.dimension(), 0.0);
  detail::backward(model, in, st, y, 1.0, nullptr, out.grad.data());
  return out;
}

/// Same as loss_and_grad_input for an arbitrary real-valued input.
inline LossAndGrad loss_and_grad_input_dense(const Model& model, std::span<const double> x,
                                             Label y) {
  if (x.size() != model.dimension()) fail(ErrorCode::kDimension, "input length mismatch");
  const detail::DenseInput in{x};
  const auto st = detail::forward(model, in);
  LossAndGrad out;
  out.loss = detail::class_loss(model, st, y);
  out.grad.assign(model.dimension(), 0.0);
  detail::backward(model, in, st, y, 1.0, nullptr, out.grad.data());
  return out;
}

inline double attack_loss(const Model& model, const BinarySample& x, Label y) {
  detail::check_sample(model, x);
  const auto st = detail::forward(model, detail::SparseInput{x.active});
  return detail::class_loss(model, st, y);
}

inline Scores scores_dense(const Model& model, std::span<const double> x) {
  if (x.size() != model.dimension()) fail(ErrorCode::kDimension, "input length mismatch");
  return detail::forward(model, detail::DenseInput{x}).scores;
}

/// Soft-tree leaf arrival probabilities for x (sum to 1).
inline std::vector<double> leaf_probabilities(const Model& model, const BinarySample& x) {
  if (model.kind() != ModelKind::kSoftTree) {
    fail(ErrorCode::kConfig, "leaf probabilities are defined for soft-tree models only");
  }
  const auto st = detail::forward(model, detail::SparseInput{x.active});
  return {st.path.begin() + static_cast<std::ptrdiff_t>(model.inner_nodes()), st.path.end()};
}

/// Mean classification loss over `batch` plus, when `with_penalty` is set and
/// the model is a soft tree, the lmbda-weighted routing-balance penalty.
/// Writes the gradient with respect to the parameters into `grad` (resized
/// and overwritten) when non-null. Weight decay is not included.
inline double batch_objective(const Model& model, std::span<const BinarySample* const> batch,
                              std::vector<double>* grad, bool with_penalty) {
  if (grad) grad->assign(model.parameter_count(), 0.0);
  if (batch.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<detail::ForwardState> states;
  states.reserve(batch.size());
  double loss = 0.0;
  for (const auto* x : batch) {
    states.push_back(detail::forward(model, detail::SparseInput{x->active}));
    loss += detail::class_loss(model, states.back(), x->label) * scale;
  }

  const bool penalty = with_penalty && model.kind() == ModelKind::kSoftTree &&
                       model.options().lmbda != 0.0;
  std::vector<double> dA, dB;  // d(penalty)/d(sum of right-child path), d/d(sum of node path)
  if (penalty) {
    const std::size_t inner = model.inner_nodes();
    std::vector<double> A(inner, 0.0), B(inner, 0.0);
    for (const auto& st : states) {
      for (std::size_t i = 0; i < inner; ++i) {
        A[i] += st.path[2 * i + 2];
        B[i] += st.path[i];
      }
    }
    dA.assign(inner, 0.0);
    dB.assign(inner, 0.0);
    for (std::size_t i = 0; i < inner; ++i) {
      const auto depth = static_cast<int>(std::floor(std::log2(static_cast<double>(i + 1))));
      const double w = model.options().lmbda * std::ldexp(1.0, -depth);
      const double alpha = std::clamp(A[i] / B[i], 1e-12, 1.0 - 1e-12);
      loss += -w * 0.5 * (std::log(alpha) + std::log(1.0 - alpha));
      const double dalpha = -w * 0.5 * (1.0 / alpha - 1.0 / (1.0 - alpha));
      dA[i] = dalpha / B[i];
      dB[i] = -dalpha * A[i] / (B[i] * B[i]);
    }
  }

  if (grad) {
    std::vector<double> upstream;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const double* extra = nullptr;
      if (penalty) {
        const std::size_t inner = model.inner_nodes();
        upstream.assign(inner + model.leaves(), 0.0);
        for (std::size_t i = 0; i < inner; ++i) {
          upstream[i] += dB[i];
          upstream[2 * i + 2] += dA[i];
        }
        extra = upstream.data();
      }
      detail::backward(model, detail::SparseInput{batch[k]->active}, states[k], batch[k]->label,
                       scale, grad->data(), nullptr, extra);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Confusion matrix (malware is the positive class).

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  double accuracy() const {
    const std::size_t n = tp + fp + fn + tn;
    return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
  }
};

inline ConfusionMatrix confusion(const Model& model, const Dataset& ds) {
  ConfusionMatrix cm;
  for (const auto& s : ds.samples) {
    const bool pred = predict(model, s).label == Label::kMalware;
    const bool truth = s.label == Label::kMalware;
    if (pred && truth) ++cm.tp;
    else if (pred) ++cm.fp;
    else if (truth) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double weight_decay = 0.0;
  double momentum = 0.9;
  double margin_C = 1.0;  // linear-margin only
  std::uint64_t seed = 0;

  /// Per-kind defaults. The soft-tree values are the tuned settings
  /// (lr 0.12, momentum 0.53, weight decay 5e-4) with a longer schedule.
  static TrainConfig defaults_for(ModelKind kind) {
    TrainConfig c;
    switch (kind) {
      case ModelKind::kLinearMargin:
        c.learning_rate = 0.01;
        c.batch_size = 32;
        c.momentum = 0.9;
        c.margin_C = 1.0;
        break;
      case ModelKind::kMlp:
        c.learning_rate = 0.01;
        c.batch_size = 64;
        c.momentum = 0.9;
        break;
      case ModelKind::kSoftTree:
        c.learning_rate = 0.12;
        c.momentum = 0.53;
        c.weight_decay = 5e-4;
        c.batch_size = 64;
        c.epochs = 60;  // converges more slowly than the other kinds
        break;
    }
    return c;
  }

  void validate() const {
    if (!(learning_rate > 0.0)) fail(ErrorCode::kConfig, "learning_rate must be positive");
    if (batch_size == 0) fail(ErrorCode::kConfig, "batch_size must be positive");
    if (!(weight_decay >= 0.0)) fail(ErrorCode::kConfig, "weight_decay must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorCode::kConfig, "momentum must lie in [0, 1)");
    if (!(margin_C > 0.0)) fail(ErrorCode::kConfig, "margin_C must be positive");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
};

struct FitResult {
  Model model;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 0 means the initial parameters
  double best_val_f1 = 0.0;
};

/// Mini-batch SGD with heavy-ball momentum (v = mu v + g; theta -= lr v) and
/// L2 weight decay. The linear-margin model uses an L2 weight of 1/(C n) on
/// w instead of `weight_decay`, i.e. the SVM primal divided by C n.
///
/// Epochs are driven externally so adversarial training can swap in
/// perturbed samples between epochs while sharing the exact update path.
class Trainer {
 public:
  Trainer(Model init, TrainConfig cfg, std::size_t n_train)
      : model_(std::move(init)), best_(model_), cfg_(cfg), rng_(derive_seed(cfg.seed, 0x7a11)) {
    cfg_.validate();
    if (n_train == 0) fail(ErrorCode::kConfig, "empty training set");
    velocity_.assign(model_.parameter_count(), 0.0);
    if (model_.kind() == ModelKind::kLinearMargin) {
      l2_ = 1.0 / (cfg_.margin_C * static_cast<double>(n_train));
    } else {
      l2_ = cfg_.weight_decay;
    }
  }

  const Model& model() const { return model_; }

  /// One pass over `samples` in a seeded random order. Returns the mean batch
  /// objective.
  double run_epoch(std::span<const BinarySample> samples) {
    if (samples.empty()) fail(ErrorCode::kConfig, "empty training set");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    rng_.shuffle(order);
    std::vector<const BinarySample*> batch;
    std::vector<double> grad;
    auto& theta = model_.mutable_parameters();
    const std::size_t d = model_.dimension();
    const bool linear = model_.kind() == ModelKind::kLinearMargin;
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + cfg_.batch_size);
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&samples[order[k]]);
      total += batch_objective(model_, batch, &grad, /*with_penalty=*/true);
      ++batches;
      const std::size_t reg_end = linear ? d : theta.size();
      for (std::size_t i = 0; i < reg_end; ++i) grad[i] += l2_ * theta[i];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity_[i] = cfg_.momentum * velocity_[i] + grad[i];
        theta[i] -= cfg_.learning_rate * velocity_[i];
      }
    }
    for (double v : theta) {
      if (!std::isfinite(v)) fail(ErrorCode::kNumeric, "training diverged (non-finite parameter)");
    }
    return total / static_cast<double>(batches);
  }

  /// Records the epoch and keeps the parameters with the best validation F1
  /// (earliest wins ties). With an empty validation set the latest epoch is
  /// kept.
  void finish_epoch(const Dataset& val, double train_loss) {
    ++epoch_;
    EpochLog entry{epoch_, train_loss, 0.0};
    if (!val.empty()) entry.val_f1 = confusion(model_, val).f1();
    if (val.empty() || epoch_ == 1 || entry.val_f1 > best_f1_) {
      best_ = model_;
      best_f1_ = entry.val_f1;
      best_epoch_ = epoch_;
    }
    log_.push_back(entry);
  }

  const std::vector<EpochLog>& log() const { return log_; }

  FitResult result() const { return FitResult{best_, log_, best_epoch_, best_f1_}; }

 private:
  Model model_;
  Model best_;
  TrainConfig cfg_;
  Rng rng_;
  std::vector<double> velocity_;
  double l2_ = 0.0;
  std::vector<EpochLog> log_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  double best_f1_ = 0.0;
};

inline FitResult fit_standard(const Model& init, const Dataset& train, const Dataset& val,
                              const TrainConfig& cfg) {
  if (train.empty()) fail(ErrorCode::kConfig, "empty training set");
  if (train.space.dimension != init.dimension() ||
      (!val.empty() && val.space.dimension != init.dimension())) {
    fail(ErrorCode::kDimension, "dataset dimension does not match the model");
  }
  Trainer trainer(init, cfg, train.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double loss = trainer.run_epoch(train.samples);
    trainer.finish_epoch(val, loss);
  }
  return trainer.result();
}

// ---------------------------------------------------------------------------
// Checkpoints: a line-oriented text container.
//
//   atbench-model 1
//   kind <linear-margin|mlp|soft-tree>
//   dimension <d>
//   policy <add-only|flip-any>
//   addable <0/1 string of length d>
//   hidden <w1,w2,...>        (may be empty)
//   max_depth <D>
//   lmbda <value>
//   params <count>
//   <one shortest-round-trip double per line>

inline constexpr int kCheckpointLayoutVersion = 1;

inline void write_model(std::ostream& out, const Model& m) {
  out << "atbench-model " << kCheckpointLayoutVersion << '\n';
  out << "kind " << to_string(m.kind()) << '\n';
  out << "dimension " << m.dimension() << '\n';
  out << "policy " << to_string(m.space().policy) << '\n';
  out << "addable ";
  for (std::size_t j = 0; j < m.dimension(); ++j) out << (m.space().is_addable(j) ? '1' : '0');
  out << '\n';
  out << "hidden ";
  for (std::size_t i = 0; i < m.options().hidden.size(); ++i) {
    out << (i ? "," : "") << m.options().hidden[i];
  }
  out << '\n';
  out << "max_depth " << m.options().max_depth << '\n';
  out << "lmbda " << format_double(m.options().lmbda) << '\n';
  out << "params " << m.parameter_count() << '\n';
  for (double v : m.parameters()) out << format_double(v) << '\n';
}

inline Model read_model(std::istream& in) {
  auto expect = [&](std::string_view key) {
    std::string k;
    if (!(in >> k) || k != key) {
      fail(ErrorCode::kParse, "checkpoint: expected '" + std::string(key) + "'");
    }
  };
  auto read_line_value = [&]() {
    std::string rest;
    std::getline(in, rest);
    if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
    return rest;
  };
  expect("atbench-model");
  int version = 0;
  in >> version;
  if (version != kCheckpointLayoutVersion) {
    fail(ErrorCode::kParse, "checkpoint: unsupported layout version " + std::to_string(version));
  }
  expect("kind");
  std::string kind;
  in >> kind;
  expect("dimension");
  std::size_t d = 0;
  in >> d;
  expect("policy");
  std::string policy;
  in >> policy;
  FeatureSpaceSpec space = FeatureSpaceSpec::make(d, parse_mutation_policy(policy));
  expect("addable");
  const std::string flags = read_line_value();
  if (flags.size() != d) fail(ErrorCode::kParse, "checkpoint: addable flags length mismatch");
  for (std::size_t j = 0; j < d; ++j) space.addable[j] = flags[j] == '1';
  ModelOptions opts;
  opts.hidden.clear();
  expect("hidden");
  {
    std::stringstream ss(read_line_value());
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) opts.hidden.push_back(std::stoul(item));
    }
  }
  expect("max_depth");
  in >> opts.max_depth;
  expect("lmbda");
  std::string lm;
  in >> lm;
  opts.lmbda = std::stod(lm);
  expect("params");
  std::size_t count = 0;
  in >> count;
  std::vector<double> params;
  params.reserve(count);
  std::string tok;
  for (std::size_t i = 0; i < count; ++i) {
    if (!(in >> tok)) fail(ErrorCode::kParse, "checkpoint: truncated parameter list");
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      fail(ErrorCode::kParse, "checkpoint: bad parameter '" + tok + "'");
    }
    params.push_back(v);
  }
  if (!in) fail(ErrorCode::kParse, "checkpoint: truncated");
  return Model::from_parameters(parse_model_kind(kind), space, opts, std::move(params));
}

inline void save_model(const std::string& path, const Model& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write checkpoint '" + path + "'");
  write_model(out, m);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint '" + path + "'");
  return read_model(in);
}

}  // namespace atbench
