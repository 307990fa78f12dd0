#ifndef STEVE_MLP_HPP
#define STEVE_MLP_HPP

#include <cstddef>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "steve/rng.hpp"

namespace steve {

enum class Activation { kIdentity, kRelu, kTanh };

std::string_view activation_name(Activation activation);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::kIdentity;
};

// Dense feedforward network. Also used as the container for gradients and
// optimizer moments, which share the parameter layout exactly.
struct MlpParams {
  std::vector<DenseLayer> layers;

  int input_dim() const;
  int output_dim() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  bool same_shape(const MlpParams& other) const;

  MlpParams zeros_like() const;
  void set_zero();
  // this += scale * other
  void add_scaled(const MlpParams& other, double scale);
  double squared_norm() const;
  double squared_distance(const MlpParams& other) const;

  // Flattened view in a fixed order (layer by layer, weights column-major,
  // then bias). Used for finite differences and diagnostics.
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& values);

  bool operator==(const MlpParams& other) const;
};

struct MlpShape {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;
  Activation hidden_activation = Activation::kRelu;
  Activation output_activation = Activation::kIdentity;
  // Multiplier on the output layer's init range.
  double output_init_scale = 1.0;
};

// Throws std::invalid_argument when any dimension is non-positive.
MlpParams make_mlp(const MlpShape& shape, Rng& rng);

// Per-layer values recorded by forward_batch for the backward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;   // input to layer k
  std::vector<Eigen::MatrixXd> outputs;  // post-activation output of layer k
};

// Columns of `inputs` are independent samples.
Eigen::MatrixXd forward_batch(const MlpParams& params,
                              const Eigen::MatrixXd& inputs,
                              ForwardCache* cache = nullptr);

Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& input);

struct MlpGradient {
  MlpParams params;        // d loss / d parameter, summed over the batch
  Eigen::MatrixXd input;   // d loss / d input, one column per sample
};

MlpGradient backward(const MlpParams& params, const ForwardCache& cache,
                     const Eigen::MatrixXd& upstream);

// Convenience form: reruns the forward pass on a single input.
MlpGradient backward(const MlpParams& params, const Eigen::VectorXd& input,
                     const Eigen::VectorXd& upstream);

// Text checkpoint. Values are written with 17 significant digits, which
// round-trips IEEE doubles exactly.
void write_mlp(std::ostream& out, const MlpParams& params);
MlpParams read_mlp(std::istream& in);

}  // namespace steve

#endif  // STEVE_MLP_HPP
