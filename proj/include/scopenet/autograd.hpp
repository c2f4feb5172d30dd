#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "scopenet/tensor.hpp"

namespace scopenet {

class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid as long as the graph
/// is alive.
struct Var {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& value() const;
  const Tensor& grad() const;
  double item() const;  // scalar nodes only
};

/// Named parameter blocks with gradient accumulators and SGD-momentum state.
/// Iteration order is insertion order everywhere, which keeps training and
/// checkpoints deterministic.
class ParamStore {
 public:
  void add(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  int total_size() const;

  void zero_grads();
  /// Classic momentum update: v = momentum*v + (g + weight_decay*w); w -= lr*v.
  void sgd_step(double lr, double momentum, double weight_decay = 0.0);

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    Tensor momentum;
  };
  std::vector<std::string> names_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;

  friend class Graph;
};

/// Reverse-mode tape. Nodes are appended in topological order during the
/// forward pass; backward() sweeps the tape once in reverse. A graph is
/// confined to one thread; separate graphs may run concurrently.
class Graph {
 public:
  // ---- leaves ----
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }
  /// Leaf whose value is copied from `store` and whose gradient flows back
  /// into it via accumulate_param_grads().
  Var param(ParamStore& store, const std::string& name);

  // ---- elementwise, same shape ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var minimum(Var a, Var b);

  // ---- elementwise unary ----
  Var scale(Var a, double k);
  Var shift(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var exp(Var a);
  Var ln(Var a);
  Var pow2(Var a);  // 2^x
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var relu(Var a);
  Var clamp_min(Var a, double lo);

  // ---- reductions ----
  Var sum(Var a);
  Var mean(Var a);
  Var max_last_axis(Var a);

  // ---- shape / indexing ----
  Var reshape(Var a, std::vector<int> shape);
  /// out[i] = a.data[idx[i]] (flat row-major indices). Backward scatters.
  Var gather(Var a, std::vector<int> idx);
  /// m:[r,c] scaled per row by v:[r].
  Var rowwise_mul(Var m, Var v);

  // ---- structured ----
  Var softmax_last_axis(Var a);      // max-subtracted, rows sum to 1
  Var log_softmax_last_axis(Var a);  // stable log-sum-exp form
  Var matmul(Var a, Var b);          // [m,k] x [k,n]
  /// x:[Cin,H,W], w:[Cout,Cin,kh,kw], bias:[Cout]; zero padding.
  Var conv2d(Var x, Var w, Var bias, int stride, int pad);

  /// Accumulate d(root)/d(node) into every requires_grad node's grad.
  /// Calling twice without zero_grads() doubles the gradients.
  void backward(Var root);
  void zero_grads();

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  /// Elements clamped at the last forward of a clamp_min node.
  int clamp_count(Var v) const;

  /// store.grad(name) += grad of every leaf created via param().
  void accumulate_param_grads(ParamStore& store) const;

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

 private:
  enum class Op {
    kLeaf, kAdd, kSub, kMul, kDiv, kMin, kScale, kShift, kExp, kLn, kPow2,
    kSigmoid, kSoftplus, kRelu, kClampMin, kSum, kMean, kMaxLast, kReshape,
    kGather, kRowwiseMul, kSoftmaxLast, kLogSoftmaxLast, kMatmul, kConv2d,
  };

  struct Node {
    Op op = Op::kLeaf;
    Tensor value;
    Tensor grad;  // allocated on first touch
    bool requires_grad = false;
    int a = -1, b = -1, c = -1;
    double p0 = 0.0;
    std::vector<int> iparams;
    int clamped = 0;
  };

  int push(Node n);
  Var make(Op op, Tensor value, int a, int b = -1, int c = -1, double p0 = 0.0,
           std::vector<int> iparams = {});
  Tensor& adj_of(std::vector<Tensor>& adj, std::vector<char>& touched, int i);
  void check_finite(const Tensor& t, const char* op) const;
  static const char* op_name(Op op);

  std::vector<Node> nodes_;
  std::vector<std::pair<int, std::string>> param_bindings_;
};

// ---- gradient verification -------------------------------------------------

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  int worst_elem = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  std::vector<std::string> failures;  // non-finite value reports, by parameter
  bool ok(double rel_tol) const { return failures.empty() && max_rel_err < rel_tol; }
};

/// Compare analytic gradients of the scalar built by `build` against central
/// finite differences over every element of `params`. The relative error is
/// |ga-gn| / max(1, |ga|, |gn|). `corrupt_param`, when non-empty, perturbs
/// that parameter's analytic gradient before comparing (negative-control
/// hook for the checker itself).
GradCheckReport gradcheck(const std::function<Var(Graph&)>& build, ParamStore& params,
                          double step = 1e-5, double rel_tol = 1e-4,
                          const std::string& corrupt_param = "");

}  // namespace scopenet
