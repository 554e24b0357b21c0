#include "epk/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace epk {

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& what) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + what);
}

struct AttentionDims {
  std::size_t batch, lq, lk, d;
};

AttentionDims attention_dims(const Shape& q, const Shape& k, const Shape& v) {
  auto split = [](const Shape& s, std::size_t& b, std::size_t& l, std::size_t& d) {
    if (s.size() == 2) {
      b = 1, l = s[0], d = s[1];
    } else if (s.size() == 3) {
      b = s[0], l = s[1], d = s[2];
    } else {
      return false;
    }
    return true;
  };
  AttentionDims out{};
  std::size_t bk = 0, bv = 0, lv = 0, dk = 0, dv = 0;
  if (!split(q, out.batch, out.lq, out.d) || !split(k, bk, out.lk, dk) || !split(v, bv, lv, dv) ||
      q.size() != k.size() || k.size() != v.size()) {
    shape_error(OpKind::scaled_dot_attention, "expected matching rank-2 or rank-3 operands, got q " +
                                                  shape_string(q) + ", k " + shape_string(k) + ", v " +
                                                  shape_string(v));
  }
  if (bk != out.batch || bv != out.batch || lv != out.lk || dk != out.d || dv != out.d) {
    shape_error(OpKind::scaled_dot_attention,
                "incompatible q " + shape_string(q) + ", k " + shape_string(k) + ", v " + shape_string(v));
  }
  return out;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::parameter: return "parameter";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::relu: return "relu";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::scaled_dot_attention: return "scaled_dot_attention";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::reshape: return "reshape";
    case OpKind::slice: return "slice";
    case OpKind::scale: return "scale";
  }
  return "unknown";
}

ComputeGraph::ComputeGraph(std::span<const double> parameters) : parameters_(parameters) {
  nodes_.reserve(32);
}

NodeId ComputeGraph::push(Node n) {
  check_finite(n);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const ComputeGraph::Node& ComputeGraph::node(NodeId id) const {
  if (!id.valid() || id.index >= nodes_.size()) {
    throw std::out_of_range("ComputeGraph: unknown node id " + std::to_string(id.index) + " (graph has " +
                            std::to_string(nodes_.size()) + " nodes)");
  }
  return nodes_[id.index];
}

void ComputeGraph::check_finite(const Node& n) const {
  if (!n.value.all_finite()) {
    throw std::domain_error(std::string(op_name(n.kind)) + ": non-finite value in forward pass");
  }
}

const Tensor& ComputeGraph::value(NodeId id) const { return node(id).value; }
ComputeGraph::Node ComputeGraph::make_node(OpKind kind, std::vector<NodeId> inputs) {
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  return n;
}

OpKind ComputeGraph::kind(NodeId id) const { return node(id).kind; }

NodeId ComputeGraph::parameter(std::size_t offset, Shape shape) {
  const std::size_t n = shape_size(shape);
  if (offset + n > parameters_.size()) {
    shape_error(OpKind::parameter, "range [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                                       ") exceeds parameter vector of length " +
                                       std::to_string(parameters_.size()));
  }
  Node out = make_node(OpKind::parameter);
  out.value = Tensor(std::move(shape),
                     std::vector<double>(parameters_.begin() + offset, parameters_.begin() + offset + n));
  out.needs_grad = true;
  out.offset = offset;
  return push(std::move(out));
}

NodeId ComputeGraph::constant(Tensor value) {
  Node out = make_node(OpKind::constant);
  out.value = std::move(value);
  return push(std::move(out));
}

NodeId ComputeGraph::matmul(NodeId a, NodeId b) {
  const Tensor& x = node(a).value;
  const Tensor& w = node(b).value;
  if (x.rank() < 2 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
    shape_error(OpKind::matmul, "cannot multiply " + shape_string(x.shape()) + " by " + shape_string(w.shape()));
  }
  const std::size_t k = w.dim(0), m = w.dim(1), n = x.size() / k;
  Shape shape = x.shape();
  shape.back() = m;
  Node out = make_node(OpKind::matmul, {a, b});
  out.value = Tensor(std::move(shape));
  linalg::gemm_nn(n, k, m, x.raw(), w.raw(), out.value.raw(), false);
  out.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::add(NodeId a, NodeId b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  Node out = make_node(OpKind::add, {a, b});
  if (x.shape() == y.shape()) {
    out.value = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.value[i] = x[i] + y[i];
  } else if (y.rank() == 1 && x.rank() >= 1 && x.shape().back() == y.dim(0)) {
    out.value = Tensor(x.shape());
    const std::size_t m = y.size();
    for (std::size_t i = 0; i < x.size(); ++i) out.value[i] = x[i] + y[i % m];
  } else {
    shape_error(OpKind::add, "cannot add " + shape_string(x.shape()) + " and " + shape_string(y.shape()) +
                                 " (only equal shapes or a trailing bias are supported)");
  }
  out.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::relu(NodeId x) {
  const Tensor& in = node(x).value;
  Node out = make_node(OpKind::relu, {x});
  out.value = Tensor(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out.value[i] = in[i] > 0.0 ? in[i] : 0.0;
  out.needs_grad = node(x).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::embedding_lookup(NodeId table, std::vector<std::size_t> ids) {
  const Tensor& t = node(table).value;
  if (t.rank() != 2) shape_error(OpKind::embedding_lookup, "table must be rank 2, got " + shape_string(t.shape()));
  const std::size_t vocab = t.dim(0), d = t.dim(1);
  Node out = make_node(OpKind::embedding_lookup, {table});
  out.value = Tensor(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      shape_error(OpKind::embedding_lookup,
                  "token id " + std::to_string(ids[r]) + " out of vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(t.raw() + ids[r] * d, d, out.value.raw() + r * d);
  }
  out.ids = std::move(ids);
  out.needs_grad = node(table).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::scaled_dot_attention(NodeId q, NodeId k, NodeId v, std::size_t heads) {
  const Tensor& tq = node(q).value;
  const Tensor& tk = node(k).value;
  const Tensor& tv = node(v).value;
  const AttentionDims dims = attention_dims(tq.shape(), tk.shape(), tv.shape());
  if (heads == 0 || dims.d % heads != 0) {
    shape_error(OpKind::scaled_dot_attention,
                "model dim " + std::to_string(dims.d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = dims.d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Node out = make_node(OpKind::scaled_dot_attention, {q, k, v});
  out.value = Tensor(tq.shape());
  out.heads = heads;
  out.cache.assign(dims.batch * heads * dims.lq * dims.lk, 0.0);
  std::vector<double> row(dims.lk);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    const double* qb = tq.raw() + b * dims.lq * dims.d;
    const double* kb = tk.raw() + b * dims.lk * dims.d;
    const double* vb = tv.raw() + b * dims.lk * dims.d;
    double* ob = out.value.raw() + b * dims.lq * dims.d;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < dims.lq; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < dims.lk; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += qb[i * dims.d + h * dh + e] * kb[j * dims.d + h * dh + e];
          row[j] = s * inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < dims.lk; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        double* p = out.cache.data() + ((b * heads + h) * dims.lq + i) * dims.lk;
        for (std::size_t j = 0; j < dims.lk; ++j) p[j] = row[j] / z;
        double* o = ob + i * dims.d + h * dh;
        for (std::size_t j = 0; j < dims.lk; ++j) {
          const double* vj = vb + j * dims.d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) o[e] += p[j] * vj[e];
        }
      }
    }
  }
  out.needs_grad = node(q).needs_grad || node(k).needs_grad || node(v).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::log_softmax(NodeId x) {
  const Tensor& in = node(x).value;
  if (in.rank() == 0 || in.size() == 0) shape_error(OpKind::log_softmax, "empty input");
  const std::size_t m = in.shape().back(), rows = in.size() / m;
  Node out = make_node(OpKind::log_softmax, {x});
  out.value = Tensor(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.raw() + r * m;
    double* dst = out.value.raw() + r * m;
    const double mx = *std::max_element(src, src + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(src[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) dst[j] = src[j] - lse;
  }
  out.needs_grad = node(x).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::reshape(NodeId x, Shape shape) {
  const Tensor& in = node(x).value;
  if (shape_size(shape) != in.size()) {
    shape_error(OpKind::reshape, "cannot view " + shape_string(in.shape()) + " as " + shape_string(shape));
  }
  Node out = make_node(OpKind::reshape, {x});
  out.value = Tensor(std::move(shape), std::vector<double>(in.data().begin(), in.data().end()));
  out.needs_grad = node(x).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::slice(NodeId x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& in = node(x).value;
  if (axis >= in.rank() || begin >= end || end > in.dim(axis)) {
    shape_error(OpKind::slice, "invalid range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                   ") on axis " + std::to_string(axis) + " of " + shape_string(in.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= in.dim(a);
  for (std::size_t a = axis + 1; a < in.rank(); ++a) inner *= in.dim(a);
  Shape shape = in.shape();
  shape[axis] = end - begin;
  Node out = make_node(OpKind::slice, {x});
  out.value = Tensor(std::move(shape));
  const std::size_t len = end - begin, full = in.dim(axis);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(in.raw() + (o * full + begin) * inner, len * inner, out.value.raw() + o * len * inner);
  }
  out.axis = axis;
  out.begin = begin;
  out.needs_grad = node(x).needs_grad;
  return push(std::move(out));
}

NodeId ComputeGraph::scale(NodeId x, double factor) {
  const Tensor& in = node(x).value;
  Node out = make_node(OpKind::scale, {x});
  out.value = Tensor(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out.value[i] = in[i] * factor;
  out.factor = factor;
  out.needs_grad = node(x).needs_grad;
  return push(std::move(out));
}

std::vector<double> ComputeGraph::backward(NodeId output, const Tensor& seed) const {
  const Node& out = node(output);
  if (seed.size() != out.value.size()) {
    throw std::invalid_argument("backward: seed " + shape_string(seed.shape()) + " does not match output " +
                                shape_string(out.value.shape()));
  }
  Matrix g = backward_batch(output, seed.data(), 1);
  return std::move(g.values);
}

Matrix ComputeGraph::output_jacobian(NodeId output) const {
  const std::size_t o = node(output).value.size();
  std::vector<double> seeds(o * o, 0.0);
  for (std::size_t i = 0; i < o; ++i) seeds[i * o + i] = 1.0;
  return backward_batch(output, seeds, o);
}

Matrix ComputeGraph::backward_batch(NodeId output, std::span<const double> seeds, std::size_t count) const {
  if (nodes_.empty()) throw std::logic_error("backward: graph has no forward pass recorded");
  const Node& out = node(output);
  if (seeds.size() != count * out.value.size()) {
    throw std::invalid_argument("backward: expected " + std::to_string(count) + " seeds of size " +
                                std::to_string(out.value.size()) + ", got " + std::to_string(seeds.size()) +
                                " values");
  }
  for (double s : seeds) {
    if (!std::isfinite(s)) throw std::domain_error("backward: non-finite seed");
  }
  Matrix result(count, parameters_.size());
  if (count == 0 || !out.needs_grad) return result;

  std::vector<std::vector<double>> grads(output.index + 1);
  grads[output.index].assign(seeds.begin(), seeds.end());
  for (std::size_t idx = output.index + 1; idx-- > 0;) {
    if (grads[idx].empty()) continue;
    propagate(nodes_[idx], grads[idx], count, grads, result);
    grads[idx].clear();
    grads[idx].shrink_to_fit();
  }
  for (double g : result.values) {
    if (!std::isfinite(g)) throw std::domain_error("backward: non-finite gradient");
  }
  return result;
}

void ComputeGraph::propagate(const Node& n, const std::vector<double>& grad, std::size_t count,
                             std::vector<std::vector<double>>& grads, Matrix& out) const {
  auto input_grad = [&](std::size_t which) -> double* {
    const NodeId id = n.inputs[which];
    const Node& in = nodes_[id.index];
    if (!in.needs_grad) return nullptr;
    auto& g = grads[id.index];
    if (g.empty()) g.assign(count * in.value.size(), 0.0);
    return g.data();
  };
  const std::size_t size = n.value.size();

  switch (n.kind) {
    case OpKind::constant:
      break;
    case OpKind::parameter:
      for (std::size_t c = 0; c < count; ++c) {
        double* dst = out.row(c).data() + n.offset;
        const double* src = grad.data() + c * size;
        for (std::size_t i = 0; i < size; ++i) dst[i] += src[i];
      }
      break;
    case OpKind::matmul: {
      const Tensor& x = nodes_[n.inputs[0].index].value;
      const Tensor& w = nodes_[n.inputs[1].index].value;
      const std::size_t k = w.dim(0), m = w.dim(1), rows = x.size() / k;
      if (double* dx = input_grad(0)) linalg::gemm_nt(count * rows, m, k, grad.data(), w.raw(), dx, true);
      if (double* dw = input_grad(1)) {
        for (std::size_t c = 0; c < count; ++c)
          linalg::gemm_tn(rows, k, m, x.raw(), grad.data() + c * size, dw + c * k * m, true);
      }
      break;
    }
    case OpKind::add: {
      const Tensor& y = nodes_[n.inputs[1].index].value;
      if (double* da = input_grad(0)) {
        for (std::size_t i = 0; i < count * size; ++i) da[i] += grad[i];
      }
      if (double* db = input_grad(1)) {
        if (y.size() == size) {
          for (std::size_t i = 0; i < count * size; ++i) db[i] += grad[i];
        } else {
          const std::size_t m = y.size(), rows = size / m;
          for (std::size_t c = 0; c < count; ++c)
            for (std::size_t r = 0; r < rows; ++r) {
              const double* src = grad.data() + c * size + r * m;
              double* dst = db + c * m;
              for (std::size_t j = 0; j < m; ++j) dst[j] += src[j];
            }
        }
      }
      break;
    }
    case OpKind::relu: {
      const Tensor& x = nodes_[n.inputs[0].index].value;
      if (double* dx = input_grad(0)) {
        for (std::size_t c = 0; c < count; ++c)
          for (std::size_t i = 0; i < size; ++i)
            if (x[i] > 0.0) dx[c * size + i] += grad[c * size + i];
      }
      break;
    }
    case OpKind::embedding_lookup: {
      const Tensor& t = nodes_[n.inputs[0].index].value;
      if (double* dt = input_grad(0)) {
        const std::size_t d = t.dim(1);
        for (std::size_t c = 0; c < count; ++c)
          for (std::size_t r = 0; r < n.ids.size(); ++r) {
            double* dst = dt + c * t.size() + n.ids[r] * d;
            const double* src = grad.data() + c * size + r * d;
            for (std::size_t e = 0; e < d; ++e) dst[e] += src[e];
          }
      }
      break;
    }
    case OpKind::scaled_dot_attention: {
      const Tensor& tq = nodes_[n.inputs[0].index].value;
      const Tensor& tk = nodes_[n.inputs[1].index].value;
      const Tensor& tv = nodes_[n.inputs[2].index].value;
      const AttentionDims dims = attention_dims(tq.shape(), tk.shape(), tv.shape());
      const std::size_t heads = n.heads, dh = dims.d / heads;
      const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
      double* dq = input_grad(0);
      double* dk = input_grad(1);
      double* dv = input_grad(2);
      std::vector<double> dp(dims.lk), ds(dims.lk);
      for (std::size_t c = 0; c < count; ++c) {
        const double* gc = grad.data() + c * size;
        for (std::size_t b = 0; b < dims.batch; ++b) {
          const std::size_t qoff = b * dims.lq * dims.d, koff = b * dims.lk * dims.d;
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < dims.lq; ++i) {
              const double* p = n.cache.data() + ((b * heads + h) * dims.lq + i) * dims.lk;
              const double* go = gc + qoff + i * dims.d + h * dh;
              double acc = 0.0;
              for (std::size_t j = 0; j < dims.lk; ++j) {
                const double* vj = tv.raw() + koff + j * dims.d + h * dh;
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += go[e] * vj[e];
                dp[j] = s;
                acc += p[j] * s;
                if (dv) {
                  double* dvj = dv + c * tv.size() + koff + j * dims.d + h * dh;
                  for (std::size_t e = 0; e < dh; ++e) dvj[e] += p[j] * go[e];
                }
              }
              for (std::size_t j = 0; j < dims.lk; ++j) ds[j] = p[j] * (dp[j] - acc) * inv_sqrt;
              if (dq) {
                double* dqi = dq + c * tq.size() + qoff + i * dims.d + h * dh;
                for (std::size_t j = 0; j < dims.lk; ++j) {
                  const double* kj = tk.raw() + koff + j * dims.d + h * dh;
                  for (std::size_t e = 0; e < dh; ++e) dqi[e] += ds[j] * kj[e];
                }
              }
              if (dk) {
                const double* qi = tq.raw() + qoff + i * dims.d + h * dh;
                for (std::size_t j = 0; j < dims.lk; ++j) {
                  double* dkj = dk + c * tk.size() + koff + j * dims.d + h * dh;
                  for (std::size_t e = 0; e < dh; ++e) dkj[e] += ds[j] * qi[e];
                }
              }
            }
          }
        }
      }
      break;
    }
    case OpKind::log_softmax: {
      if (double* dx = input_grad(0)) {
        const std::size_t m = n.value.shape().back(), rows = size / m;
        for (std::size_t c = 0; c < count; ++c)
          for (std::size_t r = 0; r < rows; ++r) {
            const double* g = grad.data() + c * size + r * m;
            const double* y = n.value.raw() + r * m;
            double total = 0.0;
            for (std::size_t j = 0; j < m; ++j) total += g[j];
            double* dst = dx + c * size + r * m;
            for (std::size_t j = 0; j < m; ++j) dst[j] += g[j] - std::exp(y[j]) * total;
          }
      }
      break;
    }
    case OpKind::reshape:
      if (double* dx = input_grad(0)) {
        for (std::size_t i = 0; i < count * size; ++i) dx[i] += grad[i];
      }
      break;
    case OpKind::slice: {
      const Tensor& x = nodes_[n.inputs[0].index].value;
      if (double* dx = input_grad(0)) {
        std::size_t outer = 1, inner = 1;
        for (std::size_t a = 0; a < n.axis; ++a) outer *= x.dim(a);
        for (std::size_t a = n.axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
        const std::size_t len = n.value.dim(n.axis), full = x.dim(n.axis);
        for (std::size_t c = 0; c < count; ++c)
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = grad.data() + c * size + o * len * inner;
            double* dst = dx + c * x.size() + (o * full + n.begin) * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
          }
      }
      break;
    }
    case OpKind::scale:
      if (double* dx = input_grad(0)) {
        for (std::size_t i = 0; i < count * size; ++i) dx[i] += n.factor * grad[i];
      }
      break;
  }
}

}  // namespace epk
