#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "remav/rng.hpp"

namespace remav::nn {

enum class Activation { Relu, Softmax, Sigmoid, Identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::Identity;

  bool operator==(const LayerShape&) const = default;
};

// Dense feed-forward chain. All parameters live in one flat vector; layer i
// owns a row-major out x in weight block followed by its out-long bias.
class DenseNet {
 public:
  DenseNet() = default;
  // Throws ValidationError if dimensions do not chain or softmax/sigmoid
  // appear before the final layer.
  explicit DenseNet(std::vector<LayerShape> shapes);

  // Glorot-uniform weights, zero biases.
  static DenseNet glorot(std::span<const std::size_t> widths, Activation hidden,
                         Activation output, Rng& rng);

  std::size_t input_size() const { return shapes_.empty() ? 0 : shapes_.front().in; }
  std::size_t output_size() const { return shapes_.empty() ? 0 : shapes_.back().out; }
  std::size_t layer_count() const { return shapes_.size(); }
  const LayerShape& shape(std::size_t layer) const { return shapes_[layer]; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + shapes_[layer].in * shapes_[layer].out;
  }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  double& weight(std::size_t layer, std::size_t row, std::size_t col) {
    return params_[weight_offset(layer) + row * shapes_[layer].in + col];
  }
  double& bias(std::size_t layer, std::size_t row) { return params_[bias_offset(layer) + row]; }

  // "layer 1 weight[3][7]" style label for a flat parameter index.
  std::string describe_param(std::size_t index) const;

  bool operator==(const DenseNet&) const = default;

 private:
  std::vector<LayerShape> shapes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Activations cached by a forward pass: values[0] is the input, values[i+1]
// the post-activation output of layer i.
struct ForwardTrace {
  std::vector<std::vector<double>> values;

  const std::vector<double>& output() const { return values.back(); }
};

ForwardTrace forward_trace(const DenseNet& net, std::span<const double> input);
std::vector<double> forward(const DenseNet& net, std::span<const double> input);

// Gradient of a scalar loss w.r.t. every parameter, given dL/d(output).
// Shape mirrors DenseNet::params().
std::vector<double> backward(const DenseNet& net, const ForwardTrace& trace,
                             std::span<const double> upstream);

// Same as backward but accumulates into `grads` (sized param_count()).
void backward_accumulate(const DenseNet& net, const ForwardTrace& trace,
                         std::span<const double> upstream, std::span<double> grads);

struct AdamConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : config(cfg), m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam update. Entries whose gradient is exactly zero are
// skipped (parameter and moments untouched), so an all-zero gradient leaves
// the parameters unchanged for any state. `describe` names a parameter in the
// non-finite-gradient error.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const std::function<std::string(std::size_t)>& describe = {});
void adam_step(DenseNet& net, std::span<const double> grads, AdamState& state);

inline constexpr double kProbClamp = 1e-7;

double clamp_prob(double p);

// Mean -log D over expert plus mean -log(1-D) over generated samples.
double bce_pair_loss(std::span<const double> d_expert, std::span<const double> d_generated);

nlohmann::json to_json(const DenseNet& net);
DenseNet from_json(const nlohmann::json& j);

}  // namespace remav::nn
