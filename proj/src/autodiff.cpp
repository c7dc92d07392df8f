#include "douap/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "douap/error.hpp"

namespace douap {

namespace {

constexpr double kMinNorm = 1e-12;

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op), detail);
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

// out[r, :] += sum_k a[r, k] * b[k, :] for row-major (rows, inner) x (inner, cols).
void matmul_acc(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t rows,
                std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * cols;
    const double* ar = a.data() + r * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      const double* br = b.data() + k * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += av * br[c];
    }
  }
}

}  // namespace

std::string_view to_string(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAffine: return "affine";
    case Op::kTanh: return "tanh";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kMean: return "mean";
    case Op::kL2Normalize: return "l2_normalize";
    case Op::kRowDot: return "row_dot";
    case Op::kSoftmaxXent: return "softmax_xent";
    case Op::kConcatRows: return "concat_rows";
    case Op::kTranspose: return "transpose";
    case Op::kReshape: return "reshape";
  }
  return "unknown";
}

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

bool Graph::any_needs_grad(std::initializer_list<NodeId> ids) const {
  return std::any_of(ids.begin(), ids.end(), [&](NodeId id) { return nodes_.at(id).needs_grad; });
}

NodeId Graph::leaf(Tensor value) {
  Node n;
  n.needs_grad = value.requires_grad();
  n.value = std::move(value);
  n.value.clear_grad();
  return push(std::move(n));
}

NodeId Graph::param(Tensor value) {
  value.set_requires_grad(true);
  return leaf(std::move(value));
}

NodeId Graph::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

NodeId Graph::affine(NodeId x_id, NodeId w_id) {
  const Tensor& x = value(x_id);
  const Tensor& w = value(w_id);
  if (x.rank() < 1 || w.rank() != 2 || last_dim(x) != w.dim(0)) {
    shape_error("affine", fmt::format("x {} cannot multiply W {}", shape_str(x.shape()), shape_str(w.shape())));
  }
  const std::size_t inner = w.dim(0);
  const std::size_t cols = w.dim(1);
  const std::size_t rows = x.size() / inner;
  Shape out_shape = x.shape();
  out_shape.back() = cols;
  Tensor out(out_shape);
  matmul_acc(x.data(), w.data(), out.data(), rows, inner, cols);

  Node n;
  n.op = Op::kAffine;
  n.inputs = {x_id, w_id};
  n.needs_grad = any_needs_grad({x_id, w_id});
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x_id, NodeId w_id, NodeId b_id) {
  const Tensor& b = value(b_id);
  const std::size_t cols = value(w_id).rank() == 2 ? value(w_id).dim(1) : 0;
  if (b.size() != cols || b.rank() > 2 || (b.rank() == 2 && b.dim(0) != 1)) {
    shape_error("affine", fmt::format("bias {} does not match W {}", shape_str(b.shape()),
                                      shape_str(value(w_id).shape())));
  }
  const std::vector<double> bias = b.values();
  NodeId id = affine(x_id, w_id);
  Node& n = nodes_[id];
  for (std::size_t r = 0; r < n.value.size() / cols; ++r) {
    for (std::size_t c = 0; c < cols; ++c) n.value[r * cols + c] += bias[c];
  }
  n.inputs.push_back(b_id);
  n.needs_grad = n.needs_grad || nodes_[b_id].needs_grad;
  return id;
}

NodeId Graph::tanh(NodeId x_id) {
  Tensor out = value(x_id);
  out.clear_grad();
  for (double& v : out.data()) v = std::tanh(v);
  Node n;
  n.op = Op::kTanh;
  n.inputs = {x_id};
  n.needs_grad = nodes_[x_id].needs_grad;
  n.value = std::move(out);
  return push(std::move(n));
}

namespace {

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, fmt::format("{} vs {}", shape_str(a.shape()), shape_str(b.shape())));
  }
}

}  // namespace

NodeId Graph::add(NodeId a_id, NodeId b_id) {
  require_same_shape("add", value(a_id), value(b_id));
  Tensor out(value(a_id).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a_id)[i] + value(b_id)[i];
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a_id, b_id};
  n.needs_grad = any_needs_grad({a_id, b_id});
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a_id, NodeId b_id) {
  require_same_shape("sub", value(a_id), value(b_id));
  Tensor out(value(a_id).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a_id)[i] - value(b_id)[i];
  Node n;
  n.op = Op::kSub;
  n.inputs = {a_id, b_id};
  n.needs_grad = any_needs_grad({a_id, b_id});
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a_id, NodeId b_id) {
  require_same_shape("mul", value(a_id), value(b_id));
  Tensor out(value(a_id).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a_id)[i] * value(b_id)[i];
  Node n;
  n.op = Op::kMul;
  n.inputs = {a_id, b_id};
  n.needs_grad = any_needs_grad({a_id, b_id});
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x_id, double factor) {
  Tensor out(value(x_id).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(x_id)[i] * factor;
  Node n;
  n.op = Op::kScale;
  n.inputs = {x_id};
  n.needs_grad = nodes_[x_id].needs_grad;
  n.factor = factor;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::mean(NodeId x_id, std::size_t axis) {
  const Tensor& x = value(x_id);
  if (axis >= x.rank()) {
    shape_error("mean", fmt::format("axis {} out of range for {}", axis, shape_str(x.shape())));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  if (len == 0) shape_error("mean", "empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = x.data().data() + (o * len + l) * inner;
      double* dst = out.data().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : out.data()) v *= inv;

  Node n;
  n.op = Op::kMean;
  n.inputs = {x_id};
  n.needs_grad = nodes_[x_id].needs_grad;
  n.axis = axis;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::l2_normalize(NodeId x_id) {
  const Tensor& x = value(x_id);
  if (x.rank() < 1) shape_error("l2_normalize", "scalar input");
  const std::size_t d = last_dim(x);
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  std::vector<double> inv_norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) ss += x[r * d + c] * x[r * d + c];
    const double norm = std::sqrt(ss);
    if (std::isnan(norm)) {
      throw Error(ErrorCode::kNonFinite, "l2_normalize", fmt::format("row {} of {} is not finite", r, shape_str(x.shape())));
    }
    if (!(norm > kMinNorm)) {
      throw Error(ErrorCode::kZeroNorm, "l2_normalize",
                  fmt::format("row {} of {} has norm {:g}", r, shape_str(x.shape()), norm));
    }
    inv_norms[r] = 1.0 / norm;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] / norm;
  }
  Node n;
  n.op = Op::kL2Normalize;
  n.inputs = {x_id};
  n.needs_grad = nodes_[x_id].needs_grad;
  n.saved = std::move(inv_norms);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::row_dot(NodeId a_id, NodeId b_id) {
  const Tensor& a = value(a_id);
  const Tensor& b = value(b_id);
  require_same_shape("row_dot", a, b);
  if (a.rank() < 1) shape_error("row_dot", "scalar input");
  const std::size_t d = last_dim(a);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += a[r * d + c] * b[r * d + c];
    out[r] = acc;
  }
  Node n;
  n.op = Op::kRowDot;
  n.inputs = {a_id, b_id};
  n.needs_grad = any_needs_grad({a_id, b_id});
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::softmax_xent(NodeId logits_id, std::vector<std::size_t> targets) {
  const Tensor& z = value(logits_id);
  if (z.rank() != 2 || targets.size() != z.dim(0) || z.dim(0) == 0) {
    shape_error("softmax_xent", fmt::format("logits {} with {} targets", shape_str(z.shape()), targets.size()));
  }
  const std::size_t rows = z.dim(0);
  const std::size_t cols = z.dim(1);
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) {
      shape_error("softmax_xent", fmt::format("target {} out of range for {} classes", targets[r], cols));
    }
    const double* row = z.data().data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double se = 0.0;
    for (std::size_t c = 0; c < cols; ++c) se += std::exp(row[c] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - lse);
    loss += lse - row[targets[r]];
  }
  Node n;
  n.op = Op::kSoftmaxXent;
  n.inputs = {logits_id};
  n.needs_grad = nodes_[logits_id].needs_grad;
  n.targets = std::move(targets);
  n.saved = std::move(probs);
  n.value = Tensor::scalar(loss / static_cast<double>(rows));
  return push(std::move(n));
}

NodeId Graph::concat_rows(std::span<const NodeId> parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  const Tensor& first = value(parts[0]);
  if (first.rank() < 1) shape_error("concat_rows", "scalar input");
  Shape out_shape = first.shape();
  out_shape[0] = 0;
  std::vector<double> data;
  bool needs = false;
  for (NodeId id : parts) {
    const Tensor& t = value(id);
    if (t.rank() != first.rank() || !std::equal(t.shape().begin() + 1, t.shape().end(), first.shape().begin() + 1)) {
      shape_error("concat_rows", fmt::format("{} vs {}", shape_str(first.shape()), shape_str(t.shape())));
    }
    out_shape[0] += t.dim(0);
    data.insert(data.end(), t.data().begin(), t.data().end());
    needs = needs || nodes_[id].needs_grad;
  }
  Node n;
  n.op = Op::kConcatRows;
  n.inputs.assign(parts.begin(), parts.end());
  n.needs_grad = needs;
  n.value = Tensor(out_shape, std::move(data));
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId x_id) {
  const Tensor& x = value(x_id);
  if (x.rank() != 2) shape_error("transpose", fmt::format("needs rank 2, got {}", shape_str(x.shape())));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  Node n;
  n.op = Op::kTranspose;
  n.inputs = {x_id};
  n.needs_grad = nodes_[x_id].needs_grad;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId x_id, Shape shape) {
  const Tensor& x = value(x_id);
  if (shape_size(shape) != x.size()) {
    shape_error("reshape", fmt::format("{} -> {}", shape_str(x.shape()), shape_str(shape)));
  }
  Node n;
  n.op = Op::kReshape;
  n.inputs = {x_id};
  n.needs_grad = nodes_[x_id].needs_grad;
  n.value = Tensor(std::move(shape), x.values());
  return push(std::move(n));
}

void Graph::backward(NodeId seed) {
  if (seed >= nodes_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "backward", fmt::format("no node {}", seed));
  }
  if (nodes_[seed].value.size() != 1) {
    throw Error(ErrorCode::kNotScalar, "backward",
                fmt::format("seed node {} has shape {}", seed, shape_str(nodes_[seed].value.shape())));
  }
  for (Node& n : nodes_) {
    if (n.needs_grad) {
      n.value.zero_grad();
    } else {
      n.value.clear_grad();
    }
  }
  if (!nodes_[seed].needs_grad) return;
  nodes_[seed].value.grad()[0] = 1.0;
  for (std::size_t i = seed + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.op == Op::kLeaf || !n.needs_grad) continue;
    backward_node(n);
  }
}

void Graph::backward_node(const Node& n) {
  std::span<const double> dy = n.value.grad();
  auto grad_of = [&](std::size_t k) -> std::span<double> {
    Node& in = nodes_[n.inputs[k]];
    return in.needs_grad ? in.value.grad() : std::span<double>{};
  };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAffine: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      const Tensor& w = nodes_[n.inputs[1]].value;
      const std::size_t inner = w.dim(0), cols = w.dim(1), rows = x.size() / inner;
      if (auto dx = grad_of(0); !dx.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t k = 0; k < inner; ++k) {
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) acc += dy[r * cols + c] * w[k * cols + c];
            dx[r * inner + k] += acc;
          }
        }
      }
      if (auto dw = grad_of(1); !dw.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t k = 0; k < inner; ++k) {
            const double xv = x[r * inner + k];
            if (xv == 0.0) continue;
            for (std::size_t c = 0; c < cols; ++c) dw[k * cols + c] += xv * dy[r * cols + c];
          }
        }
      }
      if (n.inputs.size() == 3) {
        if (auto db = grad_of(2); !db.empty()) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
          }
        }
      }
      break;
    }
    case Op::kTanh: {
      auto dx = grad_of(0);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const double y = n.value[i];
        dx[i] += dy[i] * (1.0 - y * y);
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign_b = n.op == Op::kAdd ? 1.0 : -1.0;
      if (auto da = grad_of(0); !da.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (auto db = grad_of(1); !db.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += sign_b * dy[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      if (auto da = grad_of(0); !da.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (auto db = grad_of(1); !db.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
      break;
    }
    case Op::kScale: {
      auto dx = grad_of(0);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * n.factor;
      break;
    }
    case Op::kMean: {
      const Shape& s = nodes_[n.inputs[0]].value.shape();
      std::size_t outer = 1, inner = 1;
      for (std::size_t i = 0; i < n.axis; ++i) outer *= s[i];
      for (std::size_t i = n.axis + 1; i < s.size(); ++i) inner *= s[i];
      const std::size_t len = s[n.axis];
      const double inv = 1.0 / static_cast<double>(len);
      auto dx = grad_of(0);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          for (std::size_t i = 0; i < inner; ++i) dx[(o * len + l) * inner + i] += dy[o * inner + i] * inv;
        }
      }
      break;
    }
    case Op::kL2Normalize: {
      // dx = (dy - y (y . dy)) / |x|
      const std::size_t d = last_dim(n.value);
      const std::size_t rows = n.value.size() / d;
      auto dx = grad_of(0);
      for (std::size_t r = 0; r < rows; ++r) {
        double proj = 0.0;
        for (std::size_t c = 0; c < d; ++c) proj += n.value[r * d + c] * dy[r * d + c];
        for (std::size_t c = 0; c < d; ++c) {
          dx[r * d + c] += (dy[r * d + c] - n.value[r * d + c] * proj) * n.saved[r];
        }
      }
      break;
    }
    case Op::kRowDot: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      const std::size_t d = last_dim(a);
      auto da = grad_of(0);
      auto db = grad_of(1);
      for (std::size_t r = 0; r < n.value.size(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          if (!da.empty()) da[r * d + c] += dy[r] * b[r * d + c];
          if (!db.empty()) db[r * d + c] += dy[r] * a[r * d + c];
        }
      }
      break;
    }
    case Op::kSoftmaxXent: {
      const Tensor& z = nodes_[n.inputs[0]].value;
      const std::size_t rows = z.dim(0), cols = z.dim(1);
      const double g = dy[0] / static_cast<double>(rows);
      auto dz = grad_of(0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double onehot = c == n.targets[r] ? 1.0 : 0.0;
          dz[r * cols + c] += g * (n.saved[r * cols + c] - onehot);
        }
      }
      break;
    }
    case Op::kConcatRows: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = nodes_[n.inputs[k]].value.size();
        if (auto dx = grad_of(k); !dx.empty()) {
          for (std::size_t i = 0; i < len; ++i) dx[i] += dy[offset + i];
        }
        offset += len;
      }
      break;
    }
    case Op::kTranspose: {
      const std::size_t r = n.value.dim(1), c = n.value.dim(0);
      auto dx = grad_of(0);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
      }
      break;
    }
    case Op::kReshape: {
      auto dx = grad_of(0);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      break;
    }
  }
}

NodeId sum_all(Graph& g, NodeId x) {
  const double count = static_cast<double>(g.value(x).size());
  NodeId cur = x;
  while (g.value(cur).rank() > 0) cur = g.mean(cur, 0);
  return g.scale(cur, count);
}

}  // namespace douap
