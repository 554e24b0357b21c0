#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epk/graph.hpp"
#include "epk/params.hpp"

namespace epk {

enum class ModelKind { modadd_transformer, mlp, linear };

/// How the model output feeds the loss. Log-prob outputs make dL/df = -e_y
/// constant over training; raw logits go through softmax cross-entropy.
enum class LossKind { nll_logprob, softmax_xent };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ModelSpec {
  ModelKind kind = ModelKind::modadd_transformer;

  // modadd_transformer
  int modulus = 113;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_head = 16;
  std::size_t d_mlp = 512;

  // mlp / linear
  std::size_t input_dim = 8;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 2;

  /// Numbers 0..p-1 plus "+" and "mod p =".
  std::size_t vocab() const { return static_cast<std::size_t>(modulus) + 2; }
  std::size_t plus_token() const { return static_cast<std::size_t>(modulus); }
  std::size_t equals_token() const { return static_cast<std::size_t>(modulus) + 1; }

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// One training or test example. Transformer samples carry the token
/// sequence [a, +, b, mod p =]; vector models carry dense features.
struct Sample {
  std::vector<std::size_t> tokens;
  std::vector<double> features;
  int label = 0;
  int a = -1;
  int b = -1;
  int sum = -1;
};

Sample make_modadd_sample(const ModelSpec& spec, int a, int b);

class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_outputs() const;
  LossKind loss_kind() const;
  const Registry& registry() const { return registry_; }
  const std::vector<TensorSlot>& tensors() const { return tensors_; }
  const TensorSlot& tensor(const std::string& name) const;

  /// Components holding the output layer (never pruned).
  std::vector<std::string> output_components() const;

  /// Weights ~ Normal(0, 1/sqrt(fan_in)), biases zero; deterministic per seed.
  ParamVector init(std::uint64_t seed) const;
  ParamVector zeros() const;

  /// Records the forward pass for a batch and returns the [batch, outputs] node.
  NodeId forward(ComputeGraph& graph, std::span<const Sample> batch) const;

  /// Output vector for one sample (log-probabilities or logits per loss_kind).
  std::vector<double> outputs(std::span<const double> params, const Sample& x) const;

 private:
  void add_tensor(const std::string& name, const std::string& component, Shape shape, std::size_t fan_in,
                  bool is_bias = false);
  NodeId param(ComputeGraph& g, const std::string& name) const;
  NodeId forward_transformer(ComputeGraph& g, std::span<const Sample> batch) const;
  NodeId forward_dense(ComputeGraph& g, std::span<const Sample> batch) const;

  ModelSpec spec_;
  std::vector<TensorSlot> tensors_;
  Registry registry_;
  std::size_t dim_ = 0;
};

/// Log-probabilities of the transformer or MLP for one sample.
std::vector<double> forward_logprobs(const Model& model, std::span<const double> params, const Sample& x);

/// Loss of one output row and its gradient dL/d(output) written to `seed`.
double loss_and_output_grad(LossKind kind, std::span<const double> output, int label, std::span<double> seed);

std::size_t argmax(std::span<const double> v);

/// Softmax of an output row interpreted per loss kind (exp for log-probs).
std::vector<double> output_distribution(std::span<const double> output);

}  // namespace epk
