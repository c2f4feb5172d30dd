#include "scopenet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scopenet {

namespace {
constexpr double kLn2 = 0.6931471805599453;

double stable_softplus(double x) {
  // ln(1+e^x) without overflow on either side.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

// ---- Var --------------------------------------------------------------------

const Tensor& Var::value() const { return g->value(*this); }
const Tensor& Var::grad() const { return g->grad(*this); }
double Var::item() const {
  const Tensor& t = g->value(*this);
  if (!t.is_scalar()) throw std::logic_error("item(): node is not scalar, shape " + t.shape_str());
  return t.scalar_value();
}

// ---- ParamStore ---------------------------------------------------------------

void ParamStore::add(const std::string& name, Tensor init) {
  if (has(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = static_cast<int>(entries_.size());
  names_.push_back(name);
  Entry e;
  e.grad = Tensor(init.shape());
  e.momentum = Tensor(init.shape());
  e.value = std::move(init);
  entries_.push_back(std::move(e));
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return entries_[it->second].value;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return entries_[it->second].grad;
}

int ParamStore::total_size() const {
  int n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

void ParamStore::sgd_step(double lr, double momentum, double weight_decay) {
  for (auto& e : entries_) {
    double* w = e.value.data();
    double* g = e.grad.data();
    double* v = e.momentum.data();
    int n = e.value.size();
    for (int i = 0; i < n; ++i) {
      double gi = g[i] + weight_decay * w[i];
      v[i] = momentum * v[i] + gi;
      w[i] -= lr * v[i];
    }
  }
}

// ---- Graph: construction ------------------------------------------------------

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check_finite(const Tensor& t, const char* op) const {
  if (!t.all_finite()) {
    throw std::runtime_error(std::string("non-finite values produced by ") + op);
  }
}

Var Graph::make(Op op, Tensor value, int a, int b, int c, double p0, std::vector<int> iparams) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.c = c;
  n.p0 = p0;
  n.iparams = std::move(iparams);
  n.requires_grad = (a >= 0 && nodes_[a].requires_grad) ||
                    (b >= 0 && nodes_[b].requires_grad) ||
                    (c >= 0 && nodes_[c].requires_grad);
  check_finite(value, op_name(op));
  n.value = std::move(value);
  return Var{this, push(std::move(n))};
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  check_finite(value, "leaf");
  if (requires_grad) n.grad = Tensor(value.shape());
  n.value = std::move(value);
  return Var{this, push(std::move(n))};
}

Var Graph::param(ParamStore& store, const std::string& name) {
  Var v = leaf(store.value(name), true);
  param_bindings_.emplace_back(v.id, name);
  return v;
}

const Tensor& Graph::value(Var v) const { return nodes_[v.id].value; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    static const Tensor kEmpty;
    // Lazily report an all-zero gradient of the right shape.
    const_cast<Node&>(n).grad = Tensor(n.value.shape());
  }
  return n.grad;
}

int Graph::clamp_count(Var v) const { return nodes_[v.id].clamped; }

void Graph::zero_grads() {
  for (auto& n : nodes_) {
    if (n.grad.size() > 0) n.grad.fill(0.0);
  }
}

void Graph::accumulate_param_grads(ParamStore& store) const {
  for (const auto& [node_id, name] : param_bindings_) {
    const Node& n = nodes_[node_id];
    if (n.grad.size() == 0) continue;
    Tensor& g = store.grad(name);
    for (int i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }
}

// ---- ops: elementwise binary ---------------------------------------------------

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}
}  // namespace

Var Graph::add(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  require_same_shape(ta, tb, "add");
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
  return make(Op::kAdd, std::move(out), a.id, b.id);
}

Var Graph::sub(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  require_same_shape(ta, tb, "sub");
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = ta[i] - tb[i];
  return make(Op::kSub, std::move(out), a.id, b.id);
}

Var Graph::mul(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  require_same_shape(ta, tb, "mul");
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
  return make(Op::kMul, std::move(out), a.id, b.id);
}

Var Graph::div(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  require_same_shape(ta, tb, "div");
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) {
    if (tb[i] == 0.0) throw std::domain_error("div: zero denominator");
    out[i] = ta[i] / tb[i];
  }
  return make(Op::kDiv, std::move(out), a.id, b.id);
}

Var Graph::minimum(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  require_same_shape(ta, tb, "minimum");
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = std::min(ta[i], tb[i]);
  return make(Op::kMin, std::move(out), a.id, b.id);
}

// ---- ops: elementwise unary ----------------------------------------------------

Var Graph::scale(Var a, double k) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = k * ta[i];
  return make(Op::kScale, std::move(out), a.id, -1, -1, k);
}

Var Graph::shift(Var a, double c) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = ta[i] + c;
  return make(Op::kShift, std::move(out), a.id, -1, -1, c);
}

Var Graph::exp(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = std::exp(ta[i]);
  return make(Op::kExp, std::move(out), a.id);
}

Var Graph::ln(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) {
    if (ta[i] <= 0.0) throw std::domain_error("ln: non-positive input");
    out[i] = std::log(ta[i]);
  }
  return make(Op::kLn, std::move(out), a.id);
}

Var Graph::pow2(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = std::exp2(ta[i]);
  return make(Op::kPow2, std::move(out), a.id);
}

Var Graph::sigmoid(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(ta[i]);
  return make(Op::kSigmoid, std::move(out), a.id);
}

Var Graph::softplus(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = stable_softplus(ta[i]);
  return make(Op::kSoftplus, std::move(out), a.id);
}

Var Graph::relu(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  for (int i = 0; i < out.size(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  return make(Op::kRelu, std::move(out), a.id);
}

Var Graph::clamp_min(Var a, double lo) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape());
  int clamped = 0;
  for (int i = 0; i < out.size(); ++i) {
    if (ta[i] < lo) {
      out[i] = lo;
      ++clamped;
    } else {
      out[i] = ta[i];
    }
  }
  Var v = make(Op::kClampMin, std::move(out), a.id, -1, -1, lo);
  nodes_[v.id].clamped = clamped;
  return v;
}

// ---- ops: reductions -----------------------------------------------------------

Var Graph::sum(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  double s = 0.0;
  for (int i = 0; i < ta.size(); ++i) s += ta[i];
  return make(Op::kSum, Tensor::scalar(s), a.id);
}

Var Graph::mean(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  double s = 0.0;
  for (int i = 0; i < ta.size(); ++i) s += ta[i];
  return make(Op::kMean, Tensor::scalar(s / ta.size()), a.id);
}

Var Graph::max_last_axis(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  if (ta.ndim() < 1) throw std::invalid_argument("max_last_axis: rank-0 input");
  int cols = ta.shape().back();
  int rows = ta.size() / cols;
  std::vector<int> out_shape(ta.shape().begin(), ta.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  std::vector<int> argmax(rows);
  for (int r = 0; r < rows; ++r) {
    const double* row = ta.data() + static_cast<size_t>(r) * cols;
    int best = 0;
    for (int j = 1; j < cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    argmax[r] = best;
    out[r] = row[best];
  }
  return make(Op::kMaxLast, std::move(out), a.id, -1, -1, 0.0, std::move(argmax));
}

// ---- ops: shape / indexing -------------------------------------------------------

Var Graph::reshape(Var a, std::vector<int> shape) {
  const Tensor& ta = nodes_[a.id].value;
  if (Tensor::shape_size(shape) != ta.size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  Tensor out(std::move(shape), ta.vec());
  return make(Op::kReshape, std::move(out), a.id);
}

Var Graph::gather(Var a, std::vector<int> idx) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out({static_cast<int>(idx.size())});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= ta.size()) throw std::out_of_range("gather: index out of range");
    out[static_cast<int>(i)] = ta[idx[i]];
  }
  return make(Op::kGather, std::move(out), a.id, -1, -1, 0.0, std::move(idx));
}

Var Graph::rowwise_mul(Var m, Var v) {
  const Tensor& tm = nodes_[m.id].value;
  const Tensor& tv = nodes_[v.id].value;
  if (tm.ndim() != 2 || tv.ndim() != 1 || tv.size() != tm.shape()[0]) {
    throw std::invalid_argument("rowwise_mul: want [r,c] and [r], got " + tm.shape_str() + " and " +
                                tv.shape_str());
  }
  int rows = tm.shape()[0], cols = tm.shape()[1];
  Tensor out(tm.shape());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out.at(r, c) = tm.at(r, c) * tv[r];
  }
  return make(Op::kRowwiseMul, std::move(out), m.id, v.id);
}

// ---- ops: structured --------------------------------------------------------------

Var Graph::softmax_last_axis(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  int cols = ta.shape().back();
  int rows = ta.size() / cols;
  Tensor out(ta.shape());
  for (int r = 0; r < rows; ++r) {
    const double* in = ta.data() + static_cast<size_t>(r) * cols;
    double* o = out.data() + static_cast<size_t>(r) * cols;
    double mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (int j = 0; j < cols; ++j) o[j] /= z;
  }
  return make(Op::kSoftmaxLast, std::move(out), a.id);
}

Var Graph::log_softmax_last_axis(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  int cols = ta.shape().back();
  int rows = ta.size() / cols;
  Tensor out(ta.shape());
  for (int r = 0; r < rows; ++r) {
    const double* in = ta.data() + static_cast<size_t>(r) * cols;
    double* o = out.data() + static_cast<size_t>(r) * cols;
    double mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += std::exp(in[j] - mx);
    double lz = std::log(z);
    for (int j = 0; j < cols; ++j) o[j] = in[j] - mx - lz;
  }
  return make(Op::kLogSoftmaxLast, std::move(out), a.id);
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + ta.shape_str() + " x " +
                                tb.shape_str());
  }
  int m = ta.shape()[0], k = ta.shape()[1], n = tb.shape()[1];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      double av = ta.at(i, kk);
      const double* brow = tb.data() + static_cast<size_t>(kk) * n;
      double* orow = out.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make(Op::kMatmul, std::move(out), a.id, b.id);
}

Var Graph::conv2d(Var x, Var w, Var bias, int stride, int pad) {
  const Tensor& tx = nodes_[x.id].value;
  const Tensor& tw = nodes_[w.id].value;
  const Tensor& tb = nodes_[bias.id].value;
  if (tx.ndim() != 3 || tw.ndim() != 4 || tb.ndim() != 1) {
    throw std::invalid_argument("conv2d: want x[Cin,H,W], w[Cout,Cin,kh,kw], b[Cout]");
  }
  int cin = tx.shape()[0], h = tx.shape()[1], wd = tx.shape()[2];
  int cout = tw.shape()[0], kh = tw.shape()[2], kw = tw.shape()[3];
  if (tw.shape()[1] != cin) {
    throw std::invalid_argument("conv2d: channel mismatch, input " + tx.shape_str() +
                                " vs weight " + tw.shape_str());
  }
  if (tb.size() != cout) throw std::invalid_argument("conv2d: bias size mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

  Tensor out({cout, oh, ow});
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = tb[co];
        int iy0 = oy * stride - pad;
        int ix0 = ox * stride - pad;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            const double* xrow = tx.data() + (static_cast<size_t>(ci) * h + iy) * wd;
            const double* wrow =
                tw.data() + ((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += wrow[kx] * xrow[ix];
            }
          }
        }
        out.at(co, oy, ox) = acc;
      }
    }
  }
  return make(Op::kConv2d, std::move(out), x.id, w.id, bias.id, 0.0, {stride, pad});
}

// ---- backward -----------------------------------------------------------------------

Tensor& Graph::adj_of(std::vector<Tensor>& adj, std::vector<char>& touched, int i) {
  if (!touched[i]) {
    adj[i] = Tensor(nodes_[i].value.shape());
    touched[i] = 1;
  }
  return adj[i];
}

void Graph::backward(Var root) {
  if (root.g != this) throw std::logic_error("backward: var from another graph");
  const Node& rn = nodes_[root.id];
  if (!rn.value.is_scalar()) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                rn.value.shape_str());
  }

  std::vector<Tensor> adj(nodes_.size());
  std::vector<char> touched(nodes_.size(), 0);
  adj_of(adj, touched, root.id)[0] = 1.0;

  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!touched[i] || !n.requires_grad) continue;
    const Tensor& g = adj[i];
    const int sz = n.value.size();

    auto want = [&](int p) { return p >= 0 && nodes_[p].requires_grad; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k];
        }
        if (want(n.b)) {
          Tensor& db = adj_of(adj, touched, n.b);
          for (int k = 0; k < sz; ++k) db[k] += g[k];
        }
        break;
      }
      case Op::kSub: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k];
        }
        if (want(n.b)) {
          Tensor& db = adj_of(adj, touched, n.b);
          for (int k = 0; k < sz; ++k) db[k] -= g[k];
        }
        break;
      }
      case Op::kMul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k] * vb[k];
        }
        if (want(n.b)) {
          Tensor& db = adj_of(adj, touched, n.b);
          for (int k = 0; k < sz; ++k) db[k] += g[k] * va[k];
        }
        break;
      }
      case Op::kDiv: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k] / vb[k];
        }
        if (want(n.b)) {
          Tensor& db = adj_of(adj, touched, n.b);
          for (int k = 0; k < sz; ++k) db[k] -= g[k] * va[k] / (vb[k] * vb[k]);
        }
        break;
      }
      case Op::kMin: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        // Ties route to the first argument.
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) {
            if (va[k] <= vb[k]) da[k] += g[k];
          }
        }
        if (want(n.b)) {
          Tensor& db = adj_of(adj, touched, n.b);
          for (int k = 0; k < sz; ++k) {
            if (va[k] > vb[k]) db[k] += g[k];
          }
        }
        break;
      }
      case Op::kScale: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += n.p0 * g[k];
        }
        break;
      }
      case Op::kShift: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k];
        }
        break;
      }
      case Op::kExp: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k] * n.value[k];
        }
        break;
      }
      case Op::kLn: {
        const Tensor& va = nodes_[n.a].value;
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k] / va[k];
        }
        break;
      }
      case Op::kPow2: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k] * n.value[k] * kLn2;
        }
        break;
      }
      case Op::kSigmoid: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k] * n.value[k] * (1.0 - n.value[k]);
        }
        break;
      }
      case Op::kSoftplus: {
        const Tensor& va = nodes_[n.a].value;
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k] * stable_sigmoid(va[k]);
        }
        break;
      }
      case Op::kRelu: {
        const Tensor& va = nodes_[n.a].value;
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) {
            if (va[k] > 0.0) da[k] += g[k];
          }
        }
        break;
      }
      case Op::kClampMin: {
        const Tensor& va = nodes_[n.a].value;
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) {
            if (va[k] >= n.p0) da[k] += g[k];
          }
        }
        break;
      }
      case Op::kSum: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          double gv = g[0];
          for (int k = 0; k < da.size(); ++k) da[k] += gv;
        }
        break;
      }
      case Op::kMean: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          double gv = g[0] / da.size();
          for (int k = 0; k < da.size(); ++k) da[k] += gv;
        }
        break;
      }
      case Op::kMaxLast: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          int cols = nodes_[n.a].value.shape().back();
          for (int r = 0; r < sz; ++r) da[r * cols + n.iparams[r]] += g[r];
        }
        break;
      }
      case Op::kReshape: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[k] += g[k];
        }
        break;
      }
      case Op::kGather: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int k = 0; k < sz; ++k) da[n.iparams[k]] += g[k];
        }
        break;
      }
      case Op::kRowwiseMul: {
        const Tensor& vm = nodes_[n.a].value;
        const Tensor& vv = nodes_[n.b].value;
        int rows = vm.shape()[0], cols = vm.shape()[1];
        if (want(n.a)) {
          Tensor& dm = adj_of(adj, touched, n.a);
          for (int r = 0; r < rows; ++r) {
            for (int c2 = 0; c2 < cols; ++c2) dm.at(r, c2) += g[r * cols + c2] * vv[r];
          }
        }
        if (want(n.b)) {
          Tensor& dv = adj_of(adj, touched, n.b);
          for (int r = 0; r < rows; ++r) {
            double s = 0.0;
            for (int c2 = 0; c2 < cols; ++c2) s += g[r * cols + c2] * vm.at(r, c2);
            dv[r] += s;
          }
        }
        break;
      }
      case Op::kSoftmaxLast: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          int cols = n.value.shape().back();
          int rows = sz / cols;
          for (int r = 0; r < rows; ++r) {
            const double* o = n.value.data() + static_cast<size_t>(r) * cols;
            const double* gr = g.data() + static_cast<size_t>(r) * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += gr[j] * o[j];
            double* dr = da.data() + static_cast<size_t>(r) * cols;
            for (int j = 0; j < cols; ++j) dr[j] += o[j] * (gr[j] - dot);
          }
        }
        break;
      }
      case Op::kLogSoftmaxLast: {
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          int cols = n.value.shape().back();
          int rows = sz / cols;
          for (int r = 0; r < rows; ++r) {
            const double* o = n.value.data() + static_cast<size_t>(r) * cols;
            const double* gr = g.data() + static_cast<size_t>(r) * cols;
            double gsum = 0.0;
            for (int j = 0; j < cols; ++j) gsum += gr[j];
            double* dr = da.data() + static_cast<size_t>(r) * cols;
            for (int j = 0; j < cols; ++j) dr[j] += gr[j] - std::exp(o[j]) * gsum;
          }
        }
        break;
      }
      case Op::kMatmul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        int m = va.shape()[0], kdim = va.shape()[1], nn = vb.shape()[1];
        if (want(n.a)) {
          Tensor& da = adj_of(adj, touched, n.a);
          for (int i2 = 0; i2 < m; ++i2) {
            for (int j = 0; j < nn; ++j) {
              double gv = g[i2 * nn + j];
              for (int k2 = 0; k2 < kdim; ++k2) da.at(i2, k2) += gv * vb.at(k2, j);
            }
          }
        }
        if (want(n.b)) {
          Tensor& db = adj_of(adj, touched, n.b);
          for (int k2 = 0; k2 < kdim; ++k2) {
            for (int i2 = 0; i2 < m; ++i2) {
              double av = va.at(i2, k2);
              const double* gr = g.data() + static_cast<size_t>(i2) * nn;
              double* dbr = db.data() + static_cast<size_t>(k2) * nn;
              for (int j = 0; j < nn; ++j) dbr[j] += av * gr[j];
            }
          }
        }
        break;
      }
      case Op::kConv2d: {
        const Tensor& vx = nodes_[n.a].value;
        const Tensor& vw = nodes_[n.b].value;
        int stride = n.iparams[0], pad = n.iparams[1];
        int cin = vx.shape()[0], h = vx.shape()[1], wd = vx.shape()[2];
        int cout = vw.shape()[0], kh = vw.shape()[2], kw = vw.shape()[3];
        int oh = n.value.shape()[1], ow = n.value.shape()[2];
        bool wx = want(n.a), ww = want(n.b), wb = want(n.c);
        Tensor* dx = wx ? &adj_of(adj, touched, n.a) : nullptr;
        Tensor* dw = ww ? &adj_of(adj, touched, n.b) : nullptr;
        Tensor* db = wb ? &adj_of(adj, touched, n.c) : nullptr;
        for (int co = 0; co < cout; ++co) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              double gv = g.at(co, oy, ox);
              if (gv == 0.0) continue;
              if (wb) (*db)[co] += gv;
              int iy0 = oy * stride - pad;
              int ix0 = ox * stride - pad;
              for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < kh; ++ky) {
                  int iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  const double* xrow = vx.data() + (static_cast<size_t>(ci) * h + iy) * wd;
                  const double* wrow =
                      vw.data() + ((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw;
                  double* dxrow =
                      wx ? dx->data() + (static_cast<size_t>(ci) * h + iy) * wd : nullptr;
                  double* dwrow =
                      ww ? dw->data() + ((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw
                         : nullptr;
                  for (int kx = 0; kx < kw; ++kx) {
                    int ix = ix0 + kx;
                    if (ix < 0 || ix >= wd) continue;
                    if (wx) dxrow[ix] += gv * wrow[kx];
                    if (ww) dwrow[kx] += gv * xrow[ix];
                  }
                }
              }
            }
          }
        }
        break;
      }
    }
  }

  // Fold this pass's adjoints into the persistent gradients.
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!touched[i] || !n.requires_grad) continue;
    if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
    const Tensor& a = adj[i];
    for (int k = 0; k < n.grad.size(); ++k) n.grad[k] += a[k];
  }
}

const char* Graph::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMin: return "minimum";
    case Op::kScale: return "scale";
    case Op::kShift: return "shift";
    case Op::kExp: return "exp";
    case Op::kLn: return "ln";
    case Op::kPow2: return "pow2";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kRelu: return "relu";
    case Op::kClampMin: return "clamp_min";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kMaxLast: return "max_last_axis";
    case Op::kReshape: return "reshape";
    case Op::kGather: return "gather";
    case Op::kRowwiseMul: return "rowwise_mul";
    case Op::kSoftmaxLast: return "softmax_last_axis";
    case Op::kLogSoftmaxLast: return "log_softmax_last_axis";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
  }
  return "?";
}

// ---- gradcheck ------------------------------------------------------------------------

GradCheckReport gradcheck(const std::function<Var(Graph&)>& build, ParamStore& params,
                          double step, double rel_tol, const std::string& corrupt_param) {
  GradCheckReport report;

  params.zero_grads();
  {
    Graph g;
    Var root = build(g);
    g.backward(root);
    g.accumulate_param_grads(params);
  }
  if (!corrupt_param.empty()) {
    Tensor& cg = params.grad(corrupt_param);
    if (cg.size() > 0) cg[0] += 0.5 + std::abs(cg[0]);
  }

  auto eval = [&]() {
    Graph g;
    return build(g).item();
  };

  for (const std::string& name : params.names()) {
    Tensor& v = params.value(name);
    const Tensor& ga = params.grad(name);
    GradCheckEntry entry;
    entry.param = name;
    for (int i = 0; i < v.size(); ++i) {
      double saved = v[i];
      v[i] = saved + step;
      double fp = eval();
      v[i] = saved - step;
      double fm = eval();
      v[i] = saved;
      double gn = (fp - fm) / (2.0 * step);
      if (!std::isfinite(gn) || !std::isfinite(ga[i])) {
        report.failures.push_back(name + "[" + std::to_string(i) + "]: non-finite gradient");
        continue;
      }
      double denom = std::max({1.0, std::abs(ga[i]), std::abs(gn)});
      double rel = std::abs(ga[i] - gn) / denom;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_elem = i;
        entry.analytic = ga[i];
        entry.numeric = gn;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  (void)rel_tol;
  return report;
}

}  // namespace scopenet
