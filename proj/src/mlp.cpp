#include "steve/mlp.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace steve {

namespace {

void apply_activation(Activation activation, Eigen::MatrixXd& values) {
  switch (activation) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      values = values.cwiseMax(0.0);
      break;
    case Activation::kTanh:
      values = values.array().tanh().matrix();
      break;
  }
}

// Multiplies `grad` in place by the activation derivative, expressed in terms
// of the post-activation output.
void apply_activation_grad(Activation activation, const Eigen::MatrixXd& output,
                           Eigen::MatrixXd& grad) {
  switch (activation) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      grad = (output.array() > 0.0).select(grad, 0.0);
      break;
    case Activation::kTanh:
      grad = (grad.array() * (1.0 - output.array().square())).matrix();
      break;
  }
}

[[noreturn]] void dimension_error(const std::string& what, long expected,
                                  long actual) {
  throw std::invalid_argument(what + ": expected dimension " +
                              std::to_string(expected) + ", got " +
                              std::to_string(actual));
}

}  // namespace

std::string_view activation_name(Activation activation) {
  switch (activation) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

int MlpParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int MlpParams::output_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::size_t MlpParams::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers) {
    count += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  }
  return count;
}

bool MlpParams::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

bool MlpParams::same_shape(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].weight.rows() != other.layers[k].weight.rows() ||
        layers[k].weight.cols() != other.layers[k].weight.cols() ||
        layers[k].bias.size() != other.layers[k].bias.size()) {
      return false;
    }
  }
  return true;
}

MlpParams MlpParams::zeros_like() const {
  MlpParams out = *this;
  out.set_zero();
  return out;
}

void MlpParams::set_zero() {
  for (auto& layer : layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
}

void MlpParams::add_scaled(const MlpParams& other, double scale) {
  if (!same_shape(other)) throw std::invalid_argument("add_scaled: shape mismatch");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    layers[k].weight += scale * other.layers[k].weight;
    layers[k].bias += scale * other.layers[k].bias;
  }
}

double MlpParams::squared_norm() const {
  double total = 0.0;
  for (const auto& layer : layers) {
    total += layer.weight.squaredNorm() + layer.bias.squaredNorm();
  }
  return total;
}

double MlpParams::squared_distance(const MlpParams& other) const {
  if (!same_shape(other)) throw std::invalid_argument("squared_distance: shape mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    total += (layers[k].weight - other.layers[k].weight).squaredNorm() +
             (layers[k].bias - other.layers[k].bias).squaredNorm();
  }
  return total;
}

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index offset = 0;
  for (const auto& layer : layers) {
    flat.segment(offset, layer.weight.size()) =
        Eigen::Map<const Eigen::VectorXd>(layer.weight.data(), layer.weight.size());
    offset += layer.weight.size();
    flat.segment(offset, layer.bias.size()) = layer.bias;
    offset += layer.bias.size();
  }
  return flat;
}

void MlpParams::unflatten(const Eigen::VectorXd& values) {
  if (values.size() != static_cast<Eigen::Index>(parameter_count())) {
    dimension_error("unflatten", static_cast<long>(parameter_count()),
                    static_cast<long>(values.size()));
  }
  Eigen::Index offset = 0;
  for (auto& layer : layers) {
    Eigen::Map<Eigen::VectorXd>(layer.weight.data(), layer.weight.size()) =
        values.segment(offset, layer.weight.size());
    offset += layer.weight.size();
    layer.bias = values.segment(offset, layer.bias.size());
    offset += layer.bias.size();
  }
}

bool MlpParams::operator==(const MlpParams& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].activation != other.layers[k].activation ||
        layers[k].weight != other.layers[k].weight ||
        layers[k].bias != other.layers[k].bias) {
      return false;
    }
  }
  return true;
}

MlpParams make_mlp(const MlpShape& shape, Rng& rng) {
  std::vector<int> dims;
  dims.push_back(shape.input_dim);
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());
  dims.push_back(shape.output_dim);
  for (int d : dims) {
    if (d <= 0) throw std::invalid_argument("make_mlp: layer dimensions must be positive");
  }

  MlpParams params;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const bool is_output = k + 2 == dims.size();
    DenseLayer layer;
    layer.activation = is_output ? shape.output_activation : shape.hidden_activation;
    const int fan_in = dims[k];
    // He-uniform for rectifiers, LeCun-uniform otherwise.
    double limit = layer.activation == Activation::kRelu
                       ? std::sqrt(6.0 / fan_in)
                       : std::sqrt(3.0 / fan_in);
    if (is_output) limit *= shape.output_init_scale;
    layer.weight.resize(dims[k + 1], fan_in);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        layer.weight(r, c) = rng.uniform(-limit, limit);
      }
    }
    layer.bias = Eigen::VectorXd::Zero(dims[k + 1]);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache) {
  if (params.layers.empty()) throw std::invalid_argument("forward: empty network");
  if (inputs.rows() != params.input_dim()) {
    dimension_error("forward", params.input_dim(), static_cast<long>(inputs.rows()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Eigen::MatrixXd current = inputs;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& layer = params.layers[k];
    if (layer.weight.cols() != current.rows()) {
      dimension_error("forward layer " + std::to_string(k),
                      static_cast<long>(layer.weight.cols()),
                      static_cast<long>(current.rows()));
    }
    Eigen::MatrixXd next(layer.weight.rows(), current.cols());
    next.noalias() = layer.weight * current;
    next.colwise() += layer.bias;
    apply_activation(layer.activation, next);
    if (cache) cache->inputs.push_back(std::move(current));
    current = std::move(next);
    if (cache) cache->outputs.push_back(current);
  }
  return current;
}

Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& input) {
  return forward_batch(params, input);
}

MlpGradient backward(const MlpParams& params, const ForwardCache& cache,
                     const Eigen::MatrixXd& upstream) {
  const std::size_t depth = params.layers.size();
  if (cache.inputs.size() != depth || cache.outputs.size() != depth) {
    throw std::invalid_argument("backward: cache does not match network depth");
  }
  if (upstream.rows() != params.output_dim() ||
      upstream.cols() != cache.outputs.back().cols()) {
    dimension_error("backward", params.output_dim(), static_cast<long>(upstream.rows()));
  }
  MlpGradient grad;
  grad.params = params.zeros_like();
  Eigen::MatrixXd delta = upstream;
  for (std::size_t k = depth; k-- > 0;) {
    const auto& layer = params.layers[k];
    apply_activation_grad(layer.activation, cache.outputs[k], delta);
    grad.params.layers[k].weight.noalias() = delta * cache.inputs[k].transpose();
    grad.params.layers[k].bias = delta.rowwise().sum();
    Eigen::MatrixXd below(layer.weight.cols(), delta.cols());
    below.noalias() = layer.weight.transpose() * delta;
    delta = std::move(below);
  }
  grad.input = std::move(delta);
  return grad;
}

MlpGradient backward(const MlpParams& params, const Eigen::VectorXd& input,
                     const Eigen::VectorXd& upstream) {
  ForwardCache cache;
  forward_batch(params, input, &cache);
  return backward(params, cache, upstream);
}

void write_mlp(std::ostream& out, const MlpParams& params) {
  const auto old_precision = out.precision(17);
  out << "mlp " << params.layers.size() << '\n';
  for (const auto& layer : params.layers) {
    out << "layer " << layer.weight.rows() << ' ' << layer.weight.cols() << ' '
        << activation_name(layer.activation) << '\n';
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        out << (c ? " " : "") << layer.weight(r, c);
      }
      out << '\n';
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      out << (r ? " " : "") << layer.bias(r);
    }
    out << '\n';
  }
  out.precision(old_precision);
}

MlpParams read_mlp(std::istream& in) {
  std::string tag;
  std::size_t depth = 0;
  if (!(in >> tag >> depth) || tag != "mlp") {
    throw std::runtime_error("read_mlp: missing 'mlp' header");
  }
  MlpParams params;
  for (std::size_t k = 0; k < depth; ++k) {
    long rows = 0, cols = 0;
    std::string activation;
    if (!(in >> tag >> rows >> cols >> activation) || tag != "layer" || rows <= 0 ||
        cols <= 0) {
      throw std::runtime_error("read_mlp: malformed layer header");
    }
    DenseLayer layer;
    layer.activation = parse_activation(activation);
    layer.weight.resize(rows, cols);
    layer.bias.resize(rows);
    for (long r = 0; r < rows; ++r) {
      for (long c = 0; c < cols; ++c) in >> layer.weight(r, c);
    }
    for (long r = 0; r < rows; ++r) in >> layer.bias(r);
    if (!in) throw std::runtime_error("read_mlp: truncated layer data");
    if (!params.layers.empty() && params.layers.back().weight.rows() != cols) {
      throw std::runtime_error("read_mlp: layer dimensions do not chain");
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

}  // namespace steve
