#pragma once

// Define-by-run reverse-mode differentiation over dense 2-D tensors.
//
// A Graph is a tape: every op appends a node whose inputs already exist, so
// node order is a topological order and backward is a single reverse sweep.
// Graphs are rebuilt every training step.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsre/tensor.hpp"

namespace dsre::ag {

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::string& what)
      : std::invalid_argument(op + ": " + what), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& op)
      : std::runtime_error(op + ": produced a non-finite value"), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Trainable tensor that outlives graphs. Gradients from every graph that
/// binds it in training mode accumulate into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad();
};

enum class OpKind : std::uint8_t {
  Constant,
  Input,
  Param,
  Gather,
  ConcatCols,
  ConcatRows,
  Unfold,
  Linear,
  MatMul,
  MatMulNT,
  Add,
  Mul,
  Scale,
  AddScalar,
  Tanh,
  Softmax,
  LogSoftmax,
  Log,
  KLDiv,
  L2Norm,
  Pick,
  Sum,
  PiecewiseMaxPool,
};

const char* op_name(OpKind k);

enum class Mode : std::uint8_t {
  Train,   // parameters receive gradients
  Frozen,  // parameters act as constants; only inputs are differentiated
};

class Graph;

/// Handle to a node on a graph's tape.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  std::uint32_t id() const { return id_; }
  const Tensor& value() const;
  std::array<std::size_t, 2> shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Row ranges [begin, end) for the three pooling pieces of a sentence.
/// An empty range yields a constant 0 for every kernel in that piece.
struct PoolSegments {
  std::array<std::size_t, 3> begin{};
  std::array<std::size_t, 3> end{};
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  explicit Graph(Mode mode = Mode::Train) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }

  Var constant(Tensor t);
  /// Differentiable leaf whose gradient is captured after backward (a tap).
  Var input(Tensor t);
  /// Leaf bound to an external parameter; the value is referenced, not copied.
  /// In Frozen mode the parameter is treated as a constant.
  Var param(Parameter& p);
  /// Read-only binding: always a constant, whatever the graph mode.
  Var param(const Parameter& p);

  /// Reverse sweep from a 1x1 output. Each node is visited at most once.
  void backward(Var out);
  bool backward_done() const { return backward_done_; }

  /// Gradient captured at a node (tap). Zero tensor of the node's shape when
  /// no gradient reached it. For parameter leaves this is the parameter grad.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_.at(v.id()).kind; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  /// Winner row per (segment, kernel) for every pooling node, in tape order.
  /// Comparing traces between nearby points detects crossing a max-pool kink.
  const std::vector<std::int32_t>& argmax_trace() const { return argmax_trace_; }

  // Op-construction interface used by the free functions below.
  const Tensor& value(std::uint32_t id) const;
  Tensor& grad_buffer(std::uint32_t id);
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  Var push(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(OpKind kind, Tensor value, bool requires_grad, BackwardFn fn);
  void record_argmax(std::span<const std::int32_t> winners);
  void check_owner(Var v, const char* op) const;

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    Tensor grad;
    BackwardFn backward;
  };

  Mode mode_;
  std::vector<Node> nodes_;
  std::vector<std::int32_t> argmax_trace_;
  bool backward_done_ = false;
};

// ---- ops -------------------------------------------------------------------

/// Rows of `table` selected by `ids` (embedding lookup).
Var gather_rows(Var table, std::span<const int> ids);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Sliding windows of `width` rows, zero-padded (width-1)/2 rows on each side.
/// Row t of the result is rows t-(w-1)/2 .. t+(w-1)/2 of x laid end to end.
Var unfold(Var x, std::size_t width);
/// x * W^T + b with x (n x in), W (out x in), b (1 x out).
Var linear(Var x, Var w, Var b);
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
/// Row-wise softmax.
Var softmax(Var a);
/// Row-wise log-softmax (softmax followed by log, evaluated stably).
Var log_softmax(Var a);
Var log(Var a);
/// sum p * (log p - log_q), with 0 log 0 = 0. p and log_q are 1 x n rows.
Var kl_div(Var p, Var log_q);
Var l2_norm(Var a);
Var pick(Var a, std::size_t r, std::size_t c);
Var sum(Var a);
/// Piecewise max over row ranges of `c` (rows x kernels); rows outside every
/// range are masked. Output 1 x 3*kernels, piece-major. Ties go to the first row.
Var piecewise_max_pool(Var c, const PoolSegments& segments);

Var sum_all(std::span<const Var> scalars);

}  // namespace dsre::ag
