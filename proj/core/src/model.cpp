#include "epk/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "epk/rng.hpp"

namespace epk {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::modadd_transformer: return "modadd_transformer";
    case ModelKind::mlp: return "mlp";
    case ModelKind::linear: return "linear";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "modadd_transformer") return ModelKind::modadd_transformer;
  if (name == "mlp") return ModelKind::mlp;
  if (name == "linear") return ModelKind::linear;
  throw std::invalid_argument("unknown model kind '" + name + "' (expected modadd_transformer, mlp or linear)");
}

void ModelSpec::validate() const {
  if (kind == ModelKind::modadd_transformer) {
    if (modulus < 2) throw std::invalid_argument("model: modulus must be >= 2");
    if (heads == 0 || d_head == 0 || heads * d_head != d_model) {
      throw std::invalid_argument("model: heads (" + std::to_string(heads) + ") x head dim (" +
                                  std::to_string(d_head) + ") must equal model dim (" + std::to_string(d_model) +
                                  ")");
    }
    if (d_mlp == 0) throw std::invalid_argument("model: mlp hidden dim must be positive");
  } else {
    if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("model: input and output dims must be positive");
    if (kind == ModelKind::linear && !hidden.empty()) throw std::invalid_argument("model: linear model has no hidden layers");
    for (auto h : hidden)
      if (h == 0) throw std::invalid_argument("model: hidden dims must be positive");
  }
}

Sample make_modadd_sample(const ModelSpec& spec, int a, int b) {
  Sample s;
  s.tokens = {static_cast<std::size_t>(a), spec.plus_token(), static_cast<std::size_t>(b), spec.equals_token()};
  s.a = a;
  s.b = b;
  s.sum = a + b;
  s.label = (a + b) % spec.modulus;
  return s;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == ModelKind::modadd_transformer) {
    const std::size_t d = spec_.d_model, v = spec_.vocab(), m = spec_.d_mlp;
    add_tensor("W_E", "embedding", {v, d}, d);
    add_tensor("W_Q", "att_encoders", {d, d}, d);
    add_tensor("W_K", "att_encoders", {d, d}, d);
    add_tensor("W_V", "att_encoders", {d, d}, d);
    add_tensor("W_O", "att_decoders", {d, d}, d);
    add_tensor("W_1", "linear1", {d, m}, d);
    add_tensor("b_1", "linear1", {m}, d, true);
    add_tensor("W_2", "linear2", {m, d}, m);
    add_tensor("b_2", "linear2", {d}, m, true);
    add_tensor("W_U", "decoder", {d, v}, d);
    add_tensor("b_U", "decoder", {v}, d, true);
  } else if (spec_.kind == ModelKind::mlp) {
    std::size_t in = spec_.input_dim;
    for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
      const std::string comp = "hidden" + std::to_string(l + 1);
      add_tensor(comp + ".W", comp, {in, spec_.hidden[l]}, in);
      add_tensor(comp + ".b", comp, {spec_.hidden[l]}, in, true);
      in = spec_.hidden[l];
    }
    add_tensor("output.W", "output", {in, spec_.output_dim}, in);
    add_tensor("output.b", "output", {spec_.output_dim}, in, true);
  } else {
    add_tensor("W", "weights", {spec_.input_dim, spec_.output_dim}, spec_.input_dim);
  }

  std::vector<ComponentRange> ranges;
  for (const auto& t : tensors_) {
    if (ranges.empty() || ranges.back().name != t.component) {
      ranges.push_back({t.component, t.offset, t.offset});
    }
    ranges.back().end = t.offset + t.size();
  }
  registry_ = Registry(std::move(ranges));
  registry_.validate(dim_);
}

void Model::add_tensor(const std::string& name, const std::string& component, Shape shape, std::size_t fan_in,
                       bool is_bias) {
  TensorSlot slot{name, component, dim_, std::move(shape), fan_in, is_bias};
  dim_ += slot.size();
  tensors_.push_back(std::move(slot));
}

const TensorSlot& Model::tensor(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw std::invalid_argument("model has no tensor '" + name + "'");
}

std::size_t Model::num_outputs() const {
  return spec_.kind == ModelKind::modadd_transformer ? spec_.vocab() : spec_.output_dim;
}

LossKind Model::loss_kind() const {
  return spec_.kind == ModelKind::linear ? LossKind::softmax_xent : LossKind::nll_logprob;
}

std::vector<std::string> Model::output_components() const {
  switch (spec_.kind) {
    case ModelKind::modadd_transformer: return {"decoder"};
    case ModelKind::mlp: return {"output"};
    case ModelKind::linear: return {"weights"};
  }
  return {};
}

ParamVector Model::init(std::uint64_t seed) const {
  ParamVector p = zeros();
  SplitMix64 rng(seed);
  for (const auto& t : tensors_) {
    if (t.is_bias) continue;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(t.fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) p.data[t.offset + i] = stddev * rng.normal();
  }
  return p;
}

ParamVector Model::zeros() const { return ParamVector{std::vector<double>(dim_, 0.0), registry_}; }

NodeId Model::param(ComputeGraph& g, const std::string& name) const {
  const TensorSlot& t = tensor(name);
  return g.parameter(t.offset, t.shape);
}

NodeId Model::forward(ComputeGraph& graph, std::span<const Sample> batch) const {
  if (batch.empty()) throw std::invalid_argument("model forward: empty batch");
  if (graph.num_parameters() != dim_) {
    throw std::invalid_argument("model forward: parameter vector has " + std::to_string(graph.num_parameters()) +
                                " entries, model expects " + std::to_string(dim_));
  }
  return spec_.kind == ModelKind::modadd_transformer ? forward_transformer(graph, batch)
                                                     : forward_dense(graph, batch);
}

// Single encoder layer without positional encodings or layer norm. Only the
// final position feeds the decoder, so queries, the MLP and the decoder run on
// that position alone; keys and values see all four tokens.
NodeId Model::forward_transformer(ComputeGraph& g, std::span<const Sample> batch) const {
  const std::size_t n = batch.size(), len = 4, d = spec_.d_model;
  std::vector<std::size_t> ids;
  ids.reserve(n * len);
  for (const auto& s : batch) {
    if (s.tokens.size() != len) {
      throw std::invalid_argument("transformer forward: expected 4 tokens, got " + std::to_string(s.tokens.size()));
    }
    for (auto t : s.tokens) {
      if (t >= spec_.vocab()) {
        throw std::invalid_argument("transformer forward: token id " + std::to_string(t) +
                                    " out of vocabulary of size " + std::to_string(spec_.vocab()));
      }
      ids.push_back(t);
    }
  }
  const NodeId embed = g.embedding_lookup(param(g, "W_E"), std::move(ids));      // [n*4, d]
  const NodeId keys = g.reshape(g.matmul(embed, param(g, "W_K")), {n, len, d});
  const NodeId values = g.reshape(g.matmul(embed, param(g, "W_V")), {n, len, d});
  const NodeId last = g.reshape(g.slice(g.reshape(embed, {n, len, d}), 1, len - 1, len), {n, d});
  const NodeId query = g.reshape(g.matmul(last, param(g, "W_Q")), {n, 1, d});
  const NodeId attended = g.reshape(g.scaled_dot_attention(query, keys, values, spec_.heads), {n, d});
  const NodeId resid1 = g.add(last, g.matmul(attended, param(g, "W_O")));
  const NodeId hidden = g.relu(g.add(g.matmul(resid1, param(g, "W_1")), param(g, "b_1")));
  const NodeId resid2 = g.add(resid1, g.add(g.matmul(hidden, param(g, "W_2")), param(g, "b_2")));
  const NodeId logits = g.add(g.matmul(resid2, param(g, "W_U")), param(g, "b_U"));
  return g.log_softmax(logits);
}

NodeId Model::forward_dense(ComputeGraph& g, std::span<const Sample> batch) const {
  const std::size_t n = batch.size(), in = spec_.input_dim;
  std::vector<double> x;
  x.reserve(n * in);
  for (const auto& s : batch) {
    if (s.features.size() != in) {
      throw std::invalid_argument("dense forward: expected " + std::to_string(in) + " features, got " +
                                  std::to_string(s.features.size()));
    }
    x.insert(x.end(), s.features.begin(), s.features.end());
  }
  NodeId h = g.constant(Tensor({n, in}, std::move(x)));
  if (spec_.kind == ModelKind::linear) return g.matmul(h, param(g, "W"));
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    const std::string comp = "hidden" + std::to_string(l + 1);
    h = g.relu(g.add(g.matmul(h, param(g, comp + ".W")), param(g, comp + ".b")));
  }
  return g.log_softmax(g.add(g.matmul(h, param(g, "output.W")), param(g, "output.b")));
}

std::vector<double> Model::outputs(std::span<const double> params, const Sample& x) const {
  ComputeGraph g(params);
  const NodeId out = forward(g, std::span<const Sample>(&x, 1));
  const auto values = g.value(out).data();
  return {values.begin(), values.end()};
}

std::vector<double> forward_logprobs(const Model& model, std::span<const double> params, const Sample& x) {
  auto out = model.outputs(params, x);
  if (model.loss_kind() == LossKind::softmax_xent) {
    const double mx = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double v : out) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : out) v -= lse;
  }
  return out;
}

double loss_and_output_grad(LossKind kind, std::span<const double> output, int label, std::span<double> seed) {
  const auto y = static_cast<std::size_t>(label);
  if (y >= output.size()) throw std::invalid_argument("loss: label out of range");
  if (kind == LossKind::nll_logprob) {
    std::fill(seed.begin(), seed.end(), 0.0);
    seed[y] = -1.0;
    return -output[y];
  }
  const double mx = *std::max_element(output.begin(), output.end());
  double z = 0.0;
  for (double v : output) z += std::exp(v - mx);
  for (std::size_t j = 0; j < output.size(); ++j) seed[j] = std::exp(output[j] - mx) / z;
  seed[y] -= 1.0;
  return mx + std::log(z) - output[y];
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> output_distribution(std::span<const double> output) {
  std::vector<double> p(output.begin(), output.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

}  // namespace epk
