#include "dsre/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsre::ag {

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) {
    grad = Tensor(value.rows(), value.cols());
  } else {
    grad.fill(0.0);
  }
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Constant: return "constant";
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Gather: return "gather_rows";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::Unfold: return "unfold";
    case OpKind::Linear: return "linear";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Log: return "log";
    case OpKind::KLDiv: return "kl_div";
    case OpKind::L2Norm: return "l2_norm";
    case OpKind::Pick: return "pick";
    case OpKind::Sum: return "sum";
    case OpKind::PiecewiseMaxPool: return "piecewise_max_pool";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (graph_ == nullptr) throw GraphError("value of an unbound Var");
  return graph_->value(id_);
}

// ---- graph -----------------------------------------------------------------

Var Graph::constant(Tensor t) {
  return push(OpKind::Constant, std::move(t), false, nullptr);
}

Var Graph::input(Tensor t) {
  return push(OpKind::Input, std::move(t), true, nullptr);
}

Var Graph::param(Parameter& p) {
  if (backward_done_) throw GraphError("graph: cannot extend a tape after backward");
  Node n;
  n.kind = OpKind::Param;
  n.external = &p.value;
  n.param = mode_ == Mode::Train ? &p : nullptr;
  n.requires_grad = mode_ == Mode::Train;
  if (nodes_.empty()) nodes_.reserve(256);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::param(const Parameter& p) {
  if (backward_done_) throw GraphError("graph: cannot extend a tape after backward");
  Node n;
  n.kind = OpKind::Param;
  n.external = &p.value;
  if (nodes_.empty()) nodes_.reserve(256);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.value;
}

Tensor& Graph::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  const Tensor& v = n.external != nullptr ? *n.external : n.value;
  Tensor& g = n.param != nullptr ? n.param->grad : n.grad;
  if (!g.same_shape(v)) g = Tensor(v.rows(), v.cols());
  return g;
}

void Graph::check_owner(Var v, const char* op) const {
  if (v.graph() != this) throw GraphError(std::string(op) + ": operand belongs to another graph");
}

Var Graph::push(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool rg = false;
  for (const Var& v : inputs) {
    check_owner(v, op_name(kind));
    rg = rg || nodes_[v.id()].requires_grad;
  }
  return push(kind, std::move(value), rg, std::move(fn));
}

Var Graph::push(OpKind kind, Tensor value, bool requires_grad, BackwardFn fn) {
  if (backward_done_) throw GraphError("graph: cannot extend a tape after backward");
  if (!value.all_finite()) throw NonFiniteError(op_name(kind));
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  if (nodes_.empty()) nodes_.reserve(256);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::record_argmax(std::span<const std::int32_t> winners) {
  argmax_trace_.insert(argmax_trace_.end(), winners.begin(), winners.end());
}

void Graph::backward(Var out) {
  if (!out.valid() || nodes_.empty()) throw GraphError("backward: no forward pass recorded");
  check_owner(out, "backward");
  if (backward_done_) throw GraphError("backward: tape already consumed");
  const Tensor& v = value(out.id());
  if (v.size() != 1) throw ShapeError("backward", "output must be scalar, got " + v.shape_string());
  backward_done_ = true;
  if (!nodes_[out.id()].requires_grad) return;
  grad_buffer(out.id())[0] += 1.0;
  for (std::int64_t i = out.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

Tensor Graph::grad(Var v) const {
  check_owner(v, "grad");
  const Node& n = nodes_[v.id()];
  const Tensor& val = value(v.id());
  const Tensor& g = n.param != nullptr ? n.param->grad : n.grad;
  if (g.same_shape(val)) return g;
  return Tensor(val.rows(), val.cols());
}

// ---- helpers ---------------------------------------------------------------

namespace {

std::string shp(const Tensor& t) { return t.shape_string(); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError(op, "shape mismatch " + shp(a) + " vs " + shp(b));
}

Graph& graph_of(Var v, const char* op) {
  if (!v.valid()) throw GraphError(std::string(op) + ": unbound operand");
  return *v.graph();
}

}  // namespace

// ---- ops -------------------------------------------------------------------

Var gather_rows(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table, "gather_rows");
  const Tensor& t = table.value();
  Tensor out(ids.size(), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows()) {
      throw ShapeError("gather_rows", "id " + std::to_string(ids[i]) + " outside table of " +
                                          std::to_string(t.rows()) + " rows");
    }
    std::copy_n(t.row(static_cast<std::size_t>(ids[i])).data(), t.cols(), out.row(i).data());
  }
  const std::uint32_t tid = table.id();
  std::vector<int> saved(ids.begin(), ids.end());
  return g.push(OpKind::Gather, std::move(out), {table},
                [tid, saved = std::move(saved)](Graph& gr, std::uint32_t self) {
                  const Tensor& go = gr.grad_buffer(self);
                  Tensor& gt = gr.grad_buffer(tid);
                  const std::size_t k = gt.cols();
                  for (std::size_t i = 0; i < saved.size(); ++i) {
                    double* dst = gt.row(static_cast<std::size_t>(saved[i])).data();
                    const double* src = go.row(i).data();
                    for (std::size_t c = 0; c < k; ++c) dst[c] += src[c];
                  }
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols", "no operands");
  Graph& g = graph_of(parts[0], "concat_cols");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    g.check_owner(p, "concat_cols");
    if (p.value().rows() != rows) {
      throw ShapeError("concat_cols", "row mismatch " + shp(parts[0].value()) + " vs " + shp(p.value()));
    }
    cols += p.value().cols();
    rg = rg || g.needs_grad(p.id());
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.row(r).data(), v.cols(), out.row(r).data() + off);
    off += v.cols();
  }
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return g.push(OpKind::ConcatCols, std::move(out), rg, [ids](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    std::size_t o = 0;
    for (std::uint32_t id : ids) {
      const std::size_t w = gr.value(id).cols();
      if (gr.needs_grad(id)) {
        Tensor& gi = gr.grad_buffer(id);
        for (std::size_t r = 0; r < go.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) gi(r, c) += go(r, o + c);
        }
      }
      o += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows", "no operands");
  Graph& g = graph_of(parts[0], "concat_rows");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    g.check_owner(p, "concat_rows");
    if (p.value().cols() != cols) {
      throw ShapeError("concat_rows", "column mismatch " + shp(parts[0].value()) + " vs " + shp(p.value()));
    }
    rows += p.value().rows();
    rg = rg || g.needs_grad(p.id());
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return g.push(OpKind::ConcatRows, Tensor(rows, cols, std::move(data)), rg,
                [ids](Graph& gr, std::uint32_t self) {
                  const Tensor& go = gr.grad_buffer(self);
                  std::size_t o = 0;
                  for (std::uint32_t id : ids) {
                    const std::size_t n = gr.value(id).size();
                    if (gr.needs_grad(id)) {
                      Tensor& gi = gr.grad_buffer(id);
                      for (std::size_t i = 0; i < n; ++i) gi[i] += go[o + i];
                    }
                    o += n;
                  }
                });
}

Var unfold(Var x, std::size_t width) {
  Graph& g = graph_of(x, "unfold");
  if (width == 0 || width % 2 == 0) throw ShapeError("unfold", "window width must be odd, got " + std::to_string(width));
  const Tensor& xv = x.value();
  const std::size_t l = xv.rows();
  const std::size_t d = xv.cols();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(width - 1) / 2;
  Tensor out(l, width * d);
  for (std::size_t t = 0; t < l; ++t) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - half + static_cast<std::ptrdiff_t>(j);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(l)) continue;
      std::copy_n(xv.row(static_cast<std::size_t>(src)).data(), d, out.row(t).data() + j * d);
    }
  }
  const std::uint32_t xid = x.id();
  return g.push(OpKind::Unfold, std::move(out), {x}, [xid, width, half](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    Tensor& gx = gr.grad_buffer(xid);
    const std::size_t l = gx.rows();
    const std::size_t d = gx.cols();
    for (std::size_t t = 0; t < l; ++t) {
      for (std::size_t j = 0; j < width; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - half + static_cast<std::ptrdiff_t>(j);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(l)) continue;
        double* dst = gx.row(static_cast<std::size_t>(src)).data();
        const double* s = go.row(t).data() + j * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += s[c];
      }
    }
  });
}

Var linear(Var x, Var w, Var b) {
  Graph& g = graph_of(x, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.cols()) throw ShapeError("linear", "input " + shp(xv) + " vs weight " + shp(wv));
  if (bv.rows() != 1 || bv.cols() != wv.rows()) throw ShapeError("linear", "bias " + shp(bv) + " vs weight " + shp(wv));
  const std::size_t n = xv.rows();
  const std::size_t in = xv.cols();
  const std::size_t out_dim = wv.rows();
  Tensor out(n, out_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = xv.row(i).data();
    double* orow = out.row(i).data();
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = wv.row(o).data();
      double s = bv[o];
      for (std::size_t k = 0; k < in; ++k) s += xr[k] * wr[k];
      orow[o] = s;
    }
  }
  const std::uint32_t xid = x.id(), wid = w.id(), bid = b.id();
  return g.push(OpKind::Linear, std::move(out), {x, w, b}, [xid, wid, bid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    const Tensor& xv = gr.value(xid);
    const Tensor& wv = gr.value(wid);
    const std::size_t n = xv.rows();
    const std::size_t in = xv.cols();
    const std::size_t out_dim = wv.rows();
    if (gr.needs_grad(xid)) {
      Tensor& gx = gr.grad_buffer(xid);
      for (std::size_t i = 0; i < n; ++i) {
        double* gxr = gx.row(i).data();
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double gv = go(i, o);
          if (gv == 0.0) continue;
          const double* wr = wv.row(o).data();
          for (std::size_t k = 0; k < in; ++k) gxr[k] += gv * wr[k];
        }
      }
    }
    if (gr.needs_grad(wid)) {
      Tensor& gw = gr.grad_buffer(wid);
      for (std::size_t i = 0; i < n; ++i) {
        const double* xr = xv.row(i).data();
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double gv = go(i, o);
          if (gv == 0.0) continue;
          double* gwr = gw.row(o).data();
          for (std::size_t k = 0; k < in; ++k) gwr[k] += gv * xr[k];
        }
      }
    }
    if (gr.needs_grad(bid)) {
      Tensor& gb = gr.grad_buffer(bid);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += go(i, o);
      }
    }
  });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) throw ShapeError("matmul", shp(av) + " x " + shp(bv));
  const std::size_t n = av.rows(), m = av.cols(), k = bv.cols();
  Tensor out(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double aij = av(i, j);
      const double* br = bv.row(j).data();
      double* orow = out.row(i).data();
      for (std::size_t c = 0; c < k; ++c) orow[c] += aij * br[c];
    }
  }
  const std::uint32_t aid = a.id(), bid = b.id();
  return g.push(OpKind::MatMul, std::move(out), {a, b}, [aid, bid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    const Tensor& av = gr.value(aid);
    const Tensor& bv = gr.value(bid);
    const std::size_t n = av.rows(), m = av.cols(), k = bv.cols();
    if (gr.needs_grad(aid)) {
      Tensor& ga = gr.grad_buffer(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < k; ++c) s += go(i, c) * bv(j, c);
          ga(i, j) += s;
        }
    }
    if (gr.needs_grad(bid)) {
      Tensor& gb = gr.grad_buffer(bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double aij = av(i, j);
          for (std::size_t c = 0; c < k; ++c) gb(j, c) += aij * go(i, c);
        }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, "matmul_nt");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) throw ShapeError("matmul_nt", shp(av) + " x " + shp(bv) + "^T");
  const std::size_t n = av.rows(), m = av.cols(), k = bv.rows();
  Tensor out(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += av(i, j) * bv(c, j);
      out(i, c) = s;
    }
  const std::uint32_t aid = a.id(), bid = b.id();
  return g.push(OpKind::MatMulNT, std::move(out), {a, b}, [aid, bid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    const Tensor& av = gr.value(aid);
    const Tensor& bv = gr.value(bid);
    const std::size_t n = av.rows(), m = av.cols(), k = bv.rows();
    if (gr.needs_grad(aid)) {
      Tensor& ga = gr.grad_buffer(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) {
          const double gv = go(i, c);
          for (std::size_t j = 0; j < m; ++j) ga(i, j) += gv * bv(c, j);
        }
    }
    if (gr.needs_grad(bid)) {
      Tensor& gb = gr.grad_buffer(bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) {
          const double gv = go(i, c);
          for (std::size_t j = 0; j < m; ++j) gb(c, j) += gv * av(i, j);
        }
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::uint32_t aid = a.id(), bid = b.id();
  return g.push(OpKind::Add, std::move(out), {a, b}, [aid, bid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    for (std::uint32_t id : {aid, bid}) {
      if (!gr.needs_grad(id)) continue;
      Tensor& gi = gr.grad_buffer(id);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::uint32_t aid = a.id(), bid = b.id();
  return g.push(OpKind::Mul, std::move(out), {a, b}, [aid, bid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    if (gr.needs_grad(aid)) {
      Tensor& ga = gr.grad_buffer(aid);
      const Tensor& bv = gr.value(bid);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (gr.needs_grad(bid)) {
      Tensor& gb = gr.grad_buffer(bid);
      const Tensor& av = gr.value(aid);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a, "scale");
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  const std::uint32_t aid = a.id();
  return g.push(OpKind::Scale, std::move(out), {a}, [aid, s](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
  });
}

Var add_scalar(Var a, double s) {
  Graph& g = graph_of(a, "add_scalar");
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  const std::uint32_t aid = a.id();
  return g.push(OpKind::AddScalar, std::move(out), {a}, [aid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    Tensor& ga = gr.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
  });
}

Var tanh(Var a) {
  Graph& g = graph_of(a, "tanh");
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  const std::uint32_t aid = a.id();
  return g.push(OpKind::Tanh, std::move(out), {a}, [aid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    const Tensor& y = gr.value(self);
    Tensor& ga = gr.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

Var softmax(Var a) {
  Graph& g = graph_of(a, "softmax");
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  const std::uint32_t aid = a.id();
  return g.push(OpKind::Softmax, std::move(out), {a}, [aid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    const Tensor& y = gr.value(self);
    Tensor& ga = gr.grad_buffer(aid);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) s += go(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (go(r, c) - s);
    }
  });
}

Var log_softmax(Var a) {
  Graph& g = graph_of(a, "log_softmax");
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const double lz = m + std::log(z);
    for (double& v : row) v -= lz;
  }
  const std::uint32_t aid = a.id();
  return g.push(OpKind::LogSoftmax, std::move(out), {a}, [aid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    const Tensor& y = gr.value(self);
    Tensor& ga = gr.grad_buffer(aid);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) s += go(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += go(r, c) - std::exp(y(r, c)) * s;
    }
  });
}

Var log(Var a) {
  Graph& g = graph_of(a, "log");
  Tensor out = a.value();
  for (double& v : out.values()) v = std::log(v);
  const std::uint32_t aid = a.id();
  return g.push(OpKind::Log, std::move(out), {a}, [aid](Graph& gr, std::uint32_t self) {
    const Tensor& go = gr.grad_buffer(self);
    const Tensor& av = gr.value(aid);
    Tensor& ga = gr.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] / av[i];
  });
}

Var kl_div(Var p, Var log_q) {
  Graph& g = graph_of(p, "kl_div");
  const Tensor& pv = p.value();
  const Tensor& lq = log_q.value();
  require_same_shape("kl_div", pv, lq);
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] < 0.0) throw ShapeError("kl_div", "negative probability");
    if (pv[i] > 0.0) s += pv[i] * (std::log(pv[i]) - lq[i]);
  }
  const std::uint32_t pid = p.id(), qid = log_q.id();
  return g.push(OpKind::KLDiv, Tensor::scalar(s), {p, log_q}, [pid, qid](Graph& gr, std::uint32_t self) {
    const double go = gr.grad_buffer(self)[0];
    const Tensor& pv = gr.value(pid);
    const Tensor& lq = gr.value(qid);
    if (gr.needs_grad(pid)) {
      Tensor& gp = gr.grad_buffer(pid);
      for (std::size_t i = 0; i < gp.size(); ++i) {
        if (pv[i] > 0.0) gp[i] += go * (std::log(pv[i]) - lq[i] + 1.0);
      }
    }
    if (gr.needs_grad(qid)) {
      Tensor& gq = gr.grad_buffer(qid);
      for (std::size_t i = 0; i < gq.size(); ++i) gq[i] -= go * pv[i];
    }
  });
}

Var l2_norm(Var a) {
  Graph& g = graph_of(a, "l2_norm");
  const double n = dsre::l2_norm(a.value());
  const std::uint32_t aid = a.id();
  return g.push(OpKind::L2Norm, Tensor::scalar(n), {a}, [aid](Graph& gr, std::uint32_t self) {
    const double y = gr.value(self)[0];
    if (y == 0.0) return;
    const double go = gr.grad_buffer(self)[0];
    const Tensor& av = gr.value(aid);
    Tensor& ga = gr.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go * av[i] / y;
  });
}

Var pick(Var a, std::size_t r, std::size_t c) {
  Graph& g = graph_of(a, "pick");
  const Tensor& av = a.value();
  if (r >= av.rows() || c >= av.cols()) {
    throw ShapeError("pick", "index (" + std::to_string(r) + "," + std::to_string(c) + ") outside " + shp(av));
  }
  const std::uint32_t aid = a.id();
  return g.push(OpKind::Pick, Tensor::scalar(av(r, c)), {a}, [aid, r, c](Graph& gr, std::uint32_t self) {
    gr.grad_buffer(aid)(r, c) += gr.grad_buffer(self)[0];
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a, "sum");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::uint32_t aid = a.id();
  return g.push(OpKind::Sum, Tensor::scalar(s), {a}, [aid](Graph& gr, std::uint32_t self) {
    const double go = gr.grad_buffer(self)[0];
    for (double& v : gr.grad_buffer(aid).values()) v += go;
  });
}

Var piecewise_max_pool(Var c, const PoolSegments& seg) {
  Graph& g = graph_of(c, "piecewise_max_pool");
  const Tensor& cv = c.value();
  const std::size_t p = cv.cols();
  Tensor out(1, 3 * p);
  std::vector<std::int32_t> winners(3 * p, -1);
  for (std::size_t s = 0; s < 3; ++s) {
    if (seg.end[s] > cv.rows() || seg.begin[s] > seg.end[s]) {
      throw ShapeError("piecewise_max_pool", "segment " + std::to_string(s) + " outside " + shp(cv));
    }
    if (seg.begin[s] == seg.end[s]) continue;
    for (std::size_t k = 0; k < p; ++k) {
      std::size_t best = seg.begin[s];
      for (std::size_t t = seg.begin[s] + 1; t < seg.end[s]; ++t) {
        if (cv(t, k) > cv(best, k)) best = t;
      }
      out[s * p + k] = cv(best, k);
      winners[s * p + k] = static_cast<std::int32_t>(best);
    }
  }
  g.record_argmax(winners);
  const std::uint32_t cid = c.id();
  return g.push(OpKind::PiecewiseMaxPool, std::move(out), {c},
                [cid, winners = std::move(winners), p](Graph& gr, std::uint32_t self) {
                  const Tensor& go = gr.grad_buffer(self);
                  Tensor& gc = gr.grad_buffer(cid);
                  for (std::size_t i = 0; i < winners.size(); ++i) {
                    if (winners[i] < 0) continue;
                    gc(static_cast<std::size_t>(winners[i]), i % p) += go[i];
                  }
                });
}

Var sum_all(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("sum_all", "no operands");
  return sum(concat_cols(scalars));
}

}  // namespace dsre::ag
