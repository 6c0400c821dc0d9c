#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gridpost/layers.hpp"

namespace gridpost {

enum class LayerKind { dense, conv2d, tconv2d, maxpool2d, activation, reshape };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Index units = 0;  // dense units or conv filters
  Window2d window;
  Activation activation = Activation::linear;
  Shape target;  // reshape only

  static LayerSpec dense(Index units, Activation act);
  static LayerSpec conv2d(Index filters, Index kernel, Index stride, Index pad, Activation act);
  static LayerSpec tconv2d(Index filters, Index kernel, Index stride, Index pad, Activation act);
  static LayerSpec maxpool2d(Index window, Index stride);
  static LayerSpec activation_only(Activation act);
  static LayerSpec reshape(Shape target);

  std::string describe() const;
};

/// Per-layer values recorded by a training forward pass.
template <typename Scalar>
struct Tape {
  std::vector<Batch<Scalar>> values;  // values[0] = input, values[i+1] = output of layer i
  std::vector<std::vector<std::int32_t>> argmax;
};

/// A feed-forward stack of layers operating on column batches.
template <typename Scalar>
class Sequential {
 public:
  Sequential() = default;

  /// Validates the geometry of every layer; throws ConfigError naming the
  /// first layer that does not fit. Parameters start at zero.
  Sequential(Shape input_shape, std::vector<LayerSpec> specs);

  /// Uniform fan-in/fan-out scaled weights, zero biases.
  void initialize(std::mt19937_64& rng);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return shapes_.back(); }
  const Shape& layer_output_shape(std::size_t layer) const { return shapes_.at(layer + 1); }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::size_t layer_count() const { return specs_.size(); }

  std::vector<Tensor<Scalar>>& parameters() { return params_; }
  const std::vector<Tensor<Scalar>>& parameters() const { return params_; }
  std::vector<std::string> parameter_names() const;
  Index parameter_count() const;

  Batch<Scalar> forward(const Batch<Scalar>& input) const;

  /// Forward pass recording activations; throws NumericError on the first
  /// layer producing a non-finite value.
  Batch<Scalar> forward(const Batch<Scalar>& input, Tape<Scalar>& tape) const;

  /// Reverse pass. grads is resized to match parameters() and overwritten.
  /// Returns the gradient with respect to the input when want_input_grad.
  Batch<Scalar> backward(const Tape<Scalar>& tape, const Batch<Scalar>& grad_output,
                         std::vector<Tensor<Scalar>>& grads, bool want_input_grad = true) const;

  template <typename Other>
  Sequential<Other> cast() const {
    Sequential<Other> out(input_shape_, specs_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.parameters()[i] = params_[i].template cast<Other>();
    }
    return out;
  }

 private:
  Batch<Scalar> run_layer(std::size_t i, const Batch<Scalar>& x,
                          std::vector<std::int32_t>* argmax) const;

  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<Shape> shapes_;         // shapes_[0] = input, shapes_[i+1] = after layer i
  std::vector<int> param_index_;      // first parameter of layer i, or -1
  std::vector<Tensor<Scalar>> params_;
};

Eigen::VectorXd flatten_parameters(const std::vector<Tensor<double>>& params);
void unflatten_parameters(const Eigen::VectorXd& flat, std::vector<Tensor<double>>& params);

}  // namespace gridpost
