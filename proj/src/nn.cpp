#include "remav/nn.hpp"

#include <algorithm>
#include <cmath>

#include "remav/error.hpp"

namespace remav::nn {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Softmax: return "softmax";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "softmax") return Activation::Softmax;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "identity") return Activation::Identity;
  throw FormatError("unknown activation '" + name + "'");
}

DenseNet::DenseNet(std::vector<LayerShape> shapes) : shapes_(std::move(shapes)) {
  if (shapes_.empty()) throw ValidationError("DenseNet needs at least one layer");
  std::size_t total = 0;
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    const auto& s = shapes_[i];
    if (s.in == 0 || s.out == 0) throw ValidationError("layer " + std::to_string(i) + " has a zero dimension");
    if (i > 0 && shapes_[i - 1].out != s.in) {
      throw ValidationError("layer " + std::to_string(i) + " input " + std::to_string(s.in) +
                            " does not match previous output " + std::to_string(shapes_[i - 1].out));
    }
    const bool squashing = s.activation == Activation::Softmax || s.activation == Activation::Sigmoid;
    if (squashing && i + 1 != shapes_.size()) {
      throw ValidationError(std::string(to_string(s.activation)) + " is only allowed on the final layer");
    }
    offsets_.push_back(total);
    total += s.in * s.out + s.out;
  }
  params_.assign(total, 0.0);
}

DenseNet DenseNet::glorot(std::span<const std::size_t> widths, Activation hidden, Activation output,
                          Rng& rng) {
  if (widths.size() < 2) throw ValidationError("need at least input and output widths");
  std::vector<LayerShape> shapes;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    shapes.push_back({widths[i], widths[i + 1], last ? output : hidden});
  }
  DenseNet net(std::move(shapes));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& s = net.shape(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    for (std::size_t k = 0; k < s.in * s.out; ++k) {
      net.params_[net.weight_offset(l) + k] = rng.uniform(-limit, limit);
    }
  }
  return net;
}

std::string DenseNet::describe_param(std::size_t index) const {
  for (std::size_t l = 0; l < shapes_.size(); ++l) {
    const auto& s = shapes_[l];
    const std::size_t w0 = weight_offset(l);
    const std::size_t b0 = bias_offset(l);
    if (index >= w0 && index < b0) {
      const std::size_t k = index - w0;
      return "layer " + std::to_string(l) + " weight[" + std::to_string(k / s.in) + "][" +
             std::to_string(k % s.in) + "]";
    }
    if (index >= b0 && index < b0 + s.out) {
      return "layer " + std::to_string(l) + " bias[" + std::to_string(index - b0) + "]";
    }
  }
  return "parameter " + std::to_string(index);
}

namespace {

void apply_activation(Activation a, std::vector<double>& z) {
  switch (a) {
    case Activation::Identity:
      break;
    case Activation::Relu:
      for (double& x : z) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::Sigmoid:
      for (double& x : z) x = 1.0 / (1.0 + std::exp(-x));
      break;
    case Activation::Softmax: {
      const double peak = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double& x : z) {
        x = std::exp(x - peak);
        sum += x;
      }
      for (double& x : z) x /= sum;
      break;
    }
  }
}

}  // namespace

ForwardTrace forward_trace(const DenseNet& net, std::span<const double> input) {
  if (input.size() != net.input_size()) {
    throw DimensionError("forward input", net.input_size(), input.size());
  }
  ForwardTrace trace;
  trace.values.reserve(net.layer_count() + 1);
  trace.values.emplace_back(input.begin(), input.end());
  const auto params = net.params();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& s = net.shape(l);
    const auto& x = trace.values.back();
    std::vector<double> z(params.begin() + static_cast<std::ptrdiff_t>(net.bias_offset(l)),
                          params.begin() + static_cast<std::ptrdiff_t>(net.bias_offset(l) + s.out));
    const double* w = params.data() + net.weight_offset(l);
    for (std::size_t r = 0; r < s.out; ++r) {
      double acc = 0.0;
      const double* row = w + r * s.in;
      for (std::size_t c = 0; c < s.in; ++c) acc += row[c] * x[c];
      z[r] += acc;
    }
    apply_activation(s.activation, z);
    trace.values.push_back(std::move(z));
  }
  return trace;
}

std::vector<double> forward(const DenseNet& net, std::span<const double> input) {
  auto trace = forward_trace(net, input);
  return std::move(trace.values.back());
}

void backward_accumulate(const DenseNet& net, const ForwardTrace& trace,
                         std::span<const double> upstream, std::span<double> grads) {
  if (trace.values.size() != net.layer_count() + 1) {
    throw StateError("backward called without cached forward activations for this net");
  }
  if (upstream.size() != net.output_size()) {
    throw DimensionError("backward upstream gradient", net.output_size(), upstream.size());
  }
  if (grads.size() != net.param_count()) {
    throw DimensionError("gradient buffer", net.param_count(), grads.size());
  }
  const auto params = net.params();
  std::vector<double> delta(upstream.begin(), upstream.end());
  for (std::size_t li = net.layer_count(); li-- > 0;) {
    const auto& s = net.shape(li);
    const auto& y = trace.values[li + 1];
    const auto& x = trace.values[li];
    if (y.size() != s.out || x.size() != s.in) {
      throw StateError("cached activations do not match the net's layer shapes");
    }
    // delta <- dL/dz for this layer
    switch (s.activation) {
      case Activation::Identity:
        break;
      case Activation::Relu:
        for (std::size_t r = 0; r < s.out; ++r) delta[r] = y[r] > 0.0 ? delta[r] : 0.0;
        break;
      case Activation::Sigmoid:
        for (std::size_t r = 0; r < s.out; ++r) delta[r] *= y[r] * (1.0 - y[r]);
        break;
      case Activation::Softmax: {
        double dot = 0.0;
        for (std::size_t r = 0; r < s.out; ++r) dot += delta[r] * y[r];
        for (std::size_t r = 0; r < s.out; ++r) delta[r] = y[r] * (delta[r] - dot);
        break;
      }
    }
    double* gw = grads.data() + net.weight_offset(li);
    double* gb = grads.data() + net.bias_offset(li);
    for (std::size_t r = 0; r < s.out; ++r) {
      const double d = delta[r];
      gb[r] += d;
      if (d == 0.0) continue;
      double* row = gw + r * s.in;
      for (std::size_t c = 0; c < s.in; ++c) row[c] += d * x[c];
    }
    if (li == 0) break;
    std::vector<double> prev(s.in, 0.0);
    const double* w = params.data() + net.weight_offset(li);
    for (std::size_t r = 0; r < s.out; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* row = w + r * s.in;
      for (std::size_t c = 0; c < s.in; ++c) prev[c] += row[c] * d;
    }
    delta = std::move(prev);
  }
}

std::vector<double> backward(const DenseNet& net, const ForwardTrace& trace,
                             std::span<const double> upstream) {
  std::vector<double> grads(net.param_count(), 0.0);
  backward_accumulate(net, trace, upstream, grads);
  return grads;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const std::function<std::string(std::size_t)>& describe) {
  if (grads.size() != params.size()) throw DimensionError("adam gradients", params.size(), grads.size());
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam moment accumulators", params.size(), state.m.size());
  }
  const auto& c = state.config;
  if (!(c.lr > 0.0)) throw ValidationError("adam learning rate must be positive");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("non-finite gradient at " +
                         (describe ? describe(i) : "parameter " + std::to_string(i)));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (g == 0.0) continue;
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

void adam_step(DenseNet& net, std::span<const double> grads, AdamState& state) {
  adam_step(net.params(), grads, state, [&net](std::size_t i) { return net.describe_param(i); });
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double bce_pair_loss(std::span<const double> d_expert, std::span<const double> d_generated) {
  if (d_expert.empty() || d_generated.empty()) throw ValidationError("bce_pair_loss needs non-empty batches");
  double expert = 0.0;
  for (double d : d_expert) expert -= std::log(clamp_prob(d));
  double generated = 0.0;
  for (double d : d_generated) generated -= std::log(1.0 - clamp_prob(d));
  return expert / static_cast<double>(d_expert.size()) +
         generated / static_cast<double>(d_generated.size());
}

nlohmann::json to_json(const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  auto params = net.params();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& s = net.shape(l);
    const auto w = params.subspan(net.weight_offset(l), s.in * s.out);
    const auto b = params.subspan(net.bias_offset(l), s.out);
    layers.push_back({{"in", s.in},
                      {"out", s.out},
                      {"activation", to_string(s.activation)},
                      {"weights", std::vector<double>(w.begin(), w.end())},
                      {"bias", std::vector<double>(b.begin(), b.end())}});
  }
  return {{"format", "remav-densenet"}, {"version", 1}, {"layers", layers}};
}

DenseNet from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "remav-densenet") throw FormatError("not a remav-densenet record");
    if (j.at("version") != 1) throw VersionError("unsupported densenet version " + j.at("version").dump());
    std::vector<LayerShape> shapes;
    for (const auto& layer : j.at("layers")) {
      shapes.push_back({layer.at("in").get<std::size_t>(), layer.at("out").get<std::size_t>(),
                        activation_from_string(layer.at("activation").get<std::string>())});
    }
    DenseNet net(shapes);
    auto params = net.params();
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      const auto w = j.at("layers")[l].at("weights").get<std::vector<double>>();
      const auto b = j.at("layers")[l].at("bias").get<std::vector<double>>();
      if (w.size() != shapes[l].in * shapes[l].out) {
        throw DimensionError("layer " + std::to_string(l) + " weights", shapes[l].in * shapes[l].out, w.size());
      }
      if (b.size() != shapes[l].out) throw DimensionError("layer " + std::to_string(l) + " bias", shapes[l].out, b.size());
      std::copy(w.begin(), w.end(), params.begin() + static_cast<std::ptrdiff_t>(net.weight_offset(l)));
      std::copy(b.begin(), b.end(), params.begin() + static_cast<std::ptrdiff_t>(net.bias_offset(l)));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed densenet record: ") + e.what());
  }
}

}  // namespace remav::nn
