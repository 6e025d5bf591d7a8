#pragma once

// Scalar-field computation graphs with reverse-mode differentiation.
//
// A Graph is an immutable DAG of array-valued nodes in topological order.
// Differentiation is a graph-to-graph transformation: derive() appends
// adjoint nodes built from the same op set and returns a new Graph whose
// outputs are the requested gradients. Because the result is again an
// ordinary graph, derivatives nest to any depth.
//
// The op set is closed under differentiation; besides the user-facing ops
// this requires transposed matrix-vector products, outer products, slice
// padding, and the clip subgradient mask. clip01 uses the inclusive
// subgradient (1 on [0,1], 0 outside); discontinuous ops like sign are
// deliberately not representable here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "attractor/array.hpp"

namespace attractor {

struct GraphError : std::runtime_error {
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Op : uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kMatVec,    // (m x n) @ vec(n) -> vec(m)
  kMatVecT,   // (m x n)^T @ vec(m) -> vec(n)
  kOuter,     // vec(m), vec(n) -> mat(m x n)
  kTanh,
  kSigmoid,
  kSoftplus,
  kClip01,
  kClip01Mask,
  kSum,
  kSqNorm,
  kConcat,
  kSlice,
  kPad,
};

using NodeId = int32_t;

struct Node {
  Op op;
  Shape shape;
  std::vector<NodeId> in;
  int p0 = 0;  // leaf/const index, slice/pad offset
  int p1 = 0;  // pad: full length
};

struct LeafDecl {
  std::string name;
  Shape shape;
  NodeId node = -1;
};

template <typename Real>
struct Binding {
  std::map<std::string, Array<Real>> values;

  Binding& set(const std::string& name, Array<Real> a) {
    values[name] = std::move(a);
    return *this;
  }
  Binding& set(const std::string& name, Real x) {
    return set(name, Array<Real>::scalar(x));
  }
  const Array<Real>* find(const std::string& name) const {
    auto it = values.find(name);
    return it == values.end() ? nullptr : &it->second;
  }
};

template <typename Real>
struct Graph {
  std::vector<Node> nodes;
  std::vector<Array<Real>> consts;
  std::vector<LeafDecl> leaves;
  std::vector<NodeId> outputs;

  const Shape& shape(NodeId id) const { return nodes[static_cast<size_t>(id)].shape; }

  NodeId single_output() const {
    if (outputs.size() != 1)
      throw GraphError("graph has " + std::to_string(outputs.size()) +
                       " outputs where exactly one is required");
    return outputs[0];
  }

  const LeafDecl* find_leaf(const std::string& name) const {
    for (const auto& l : leaves)
      if (l.name == name) return &l;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Construction

template <typename Real>
class GraphBuilder {
 public:
  GraphBuilder() = default;
  explicit GraphBuilder(Graph<Real> g) : g_(std::move(g)) {}

  const Graph<Real>& graph() const { return g_; }
  const Shape& shape(NodeId id) const { return g_.shape(id); }
  int size() const { return static_cast<int>(g_.nodes.size()); }

  NodeId leaf(const std::string& name, Shape s) {
    if (g_.find_leaf(name))
      throw GraphError("duplicate leaf '" + name + "'");
    NodeId id = push(Op::kLeaf, s, {});
    g_.nodes.back().p0 = static_cast<int>(g_.leaves.size());
    g_.leaves.push_back({name, s, id});
    return id;
  }

  NodeId constant(Array<Real> a) {
    Shape s = a.shape;
    NodeId id = push(Op::kConst, s, {});
    g_.nodes.back().p0 = static_cast<int>(g_.consts.size());
    g_.consts.push_back(std::move(a));
    return id;
  }
  NodeId scalar(Real x) { return constant(Array<Real>::scalar(x)); }
  NodeId zeros(Shape s) { return constant(Array<Real>::zeros(s)); }
  NodeId ones(Shape s) { return constant(Array<Real>::full(s, Real(1))); }

  NodeId add(NodeId a, NodeId b) { return elementwise(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return elementwise(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return elementwise(Op::kMul, a, b); }
  NodeId neg(NodeId a) { return mul(scalar(Real(-1)), a); }

  NodeId matvec(NodeId w, NodeId x) {
    require(shape(w).rank == 2 && shape(x).rank == 1 && shape(w).cols == shape(x).rows,
            "matvec", w, x);
    return push(Op::kMatVec, Shape::vec(shape(w).rows), {w, x});
  }
  NodeId matvec_t(NodeId w, NodeId y) {
    require(shape(w).rank == 2 && shape(y).rank == 1 && shape(w).rows == shape(y).rows,
            "matvec_t", w, y);
    return push(Op::kMatVecT, Shape::vec(shape(w).cols), {w, y});
  }
  NodeId outer(NodeId u, NodeId v) {
    require(shape(u).rank == 1 && shape(v).rank == 1, "outer", u, v);
    return push(Op::kOuter, Shape::mat(shape(u).rows, shape(v).rows), {u, v});
  }

  NodeId tanh(NodeId a) { return push(Op::kTanh, shape(a), {a}); }
  NodeId sigmoid(NodeId a) { return push(Op::kSigmoid, shape(a), {a}); }
  NodeId softplus(NodeId a) { return push(Op::kSoftplus, shape(a), {a}); }
  NodeId clip01(NodeId a) { return push(Op::kClip01, shape(a), {a}); }
  NodeId clip01_mask(NodeId a) { return push(Op::kClip01Mask, shape(a), {a}); }

  NodeId sum(NodeId a) { return push(Op::kSum, Shape::scalar(), {a}); }
  NodeId squared_norm(NodeId a) { return push(Op::kSqNorm, Shape::scalar(), {a}); }

  NodeId concat(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw GraphError("concat: no operands");
    int total = 0;
    for (NodeId p : parts) {
      if (shape(p).rank != 1)
        throw GraphError("concat: operand is " + shape(p).str() + ", want vector");
      total += shape(p).rows;
    }
    return push(Op::kConcat, Shape::vec(total), parts);
  }

  NodeId slice(NodeId a, int offset, int len) {
    const Shape& s = shape(a);
    if (s.rank != 1 || offset < 0 || len < 1 || offset + len > s.rows)
      throw GraphError("slice: [" + std::to_string(offset) + "," +
                       std::to_string(offset + len) + ") out of " + s.str());
    NodeId id = push(Op::kSlice, Shape::vec(len), {a});
    g_.nodes.back().p0 = offset;
    return id;
  }

  // Embeds a vector at `offset` into a zero vector of length `full`.
  NodeId pad(NodeId a, int offset, int full) {
    const Shape& s = shape(a);
    if (s.rank != 1 || offset < 0 || offset + s.rows > full)
      throw GraphError("pad: " + s.str() + " at " + std::to_string(offset) +
                       " into vec(" + std::to_string(full) + ")");
    NodeId id = push(Op::kPad, Shape::vec(full), {a});
    g_.nodes.back().p0 = offset;
    g_.nodes.back().p1 = full;
    return id;
  }

  // Scalar view of one vector element.
  NodeId at(NodeId v, int i) { return sum(slice(v, i, 1)); }

  // Dot product of two vectors.
  NodeId dot(NodeId a, NodeId b) { return sum(mul(a, b)); }

  Graph<Real> build(std::vector<NodeId> outputs) && {
    for (NodeId o : outputs)
      if (o < 0 || o >= size()) throw GraphError("build: output id out of range");
    g_.outputs = std::move(outputs);
    return std::move(g_);
  }
  Graph<Real> build(NodeId output) && {
    return std::move(*this).build(std::vector<NodeId>{output});
  }

 private:
  NodeId push(Op op, Shape s, std::vector<NodeId> in) {
    for (NodeId i : in)
      if (i < 0 || i >= size()) throw GraphError("operand id out of range");
    g_.nodes.push_back(Node{op, s, std::move(in), 0, 0});
    return static_cast<NodeId>(g_.nodes.size() - 1);
  }

  NodeId elementwise(Op op, NodeId a, NodeId b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    Shape out;
    if (sa == sb) {
      out = sa;
    } else if (sa.rank == 0) {
      out = sb;
    } else if (sb.rank == 0) {
      out = sa;
    } else {
      throw GraphError("elementwise op on " + sa.str() + " and " + sb.str());
    }
    return push(op, out, {a, b});
  }

  void require(bool ok, const char* what, NodeId a, NodeId b) {
    if (!ok)
      throw GraphError(std::string(what) + ": bad shapes " + shape(a).str() + ", " +
                       shape(b).str());
  }

  Graph<Real> g_;
};

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

template <typename Real>
inline Real sigmoid_stable(Real x) {
  if (x >= Real(0)) {
    Real e = std::exp(-x);
    return Real(1) / (Real(1) + e);
  }
  Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
inline Real softplus_stable(Real x) {
  if (x > Real(30)) return x;
  if (x < Real(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace detail

// Executes a graph over bindings. The instance owns reusable buffers, so a
// long-lived Evaluator amortizes all allocation across runs; results are
// bit-identical for identical bindings regardless of reuse. Only ancestors
// of the graph outputs are computed.
template <typename Real>
class Evaluator {
 public:
  explicit Evaluator(std::shared_ptr<const Graph<Real>> g, bool retain_all = false)
      : g_(std::move(g)), retain_all_(retain_all) {
    const auto& nodes = g_->nodes;
    size_t n = nodes.size();
    needed_.assign(n, retain_all_);
    if (!retain_all_) {
      std::vector<NodeId> stack(g_->outputs.begin(), g_->outputs.end());
      while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        if (needed_[static_cast<size_t>(id)]) continue;
        needed_[static_cast<size_t>(id)] = true;
        for (NodeId i : nodes[static_cast<size_t>(id)].in) stack.push_back(i);
      }
    }
    consumers_.assign(n, 0);
    for (size_t id = 0; id < n; ++id) {
      if (!needed_[id]) continue;
      order_.push_back(static_cast<NodeId>(id));
      for (NodeId i : nodes[id].in) consumers_[static_cast<size_t>(i)]++;
    }
    for (NodeId o : g_->outputs) consumers_[static_cast<size_t>(o)]++;
    slots_.resize(n);
  }

  explicit Evaluator(const Graph<Real>& borrowed, bool retain_all = false)
      : Evaluator(std::shared_ptr<const Graph<Real>>(&borrowed, [](const Graph<Real>*) {}),
                  retain_all) {}

  const Graph<Real>& graph() const { return *g_; }

  std::vector<Array<Real>> run(const Binding<Real>& b) {
    bind(b);
    live_ = consumers_;
    for (NodeId id : order_) compute(id);
    std::vector<Array<Real>> out;
    out.reserve(g_->outputs.size());
    for (NodeId o : g_->outputs) {
      const Slot& s = slots_[static_cast<size_t>(o)];
      Array<Real> a(g_->shape(o));
      const Real* src = s.data();
      std::copy(src, src + a.v.size(), a.v.begin());
      out.push_back(std::move(a));
    }
    if (!retain_all_)
      for (NodeId o : g_->outputs) release(o);
    return out;
  }

  // Value of an arbitrary node after run(); requires retain_all.
  const Real* value(NodeId id) const {
    if (!retain_all_) throw GraphError("Evaluator: node inspection requires retain_all");
    return slots_[static_cast<size_t>(id)].data();
  }

 private:
  struct Slot {
    const std::vector<Real>* view = nullptr;
    std::vector<Real> own;
    const Real* data() const { return view ? view->data() : own.data(); }
  };

  void bind(const Binding<Real>& b) {
    for (const auto& l : g_->leaves) {
      if (!needed_[static_cast<size_t>(l.node)]) continue;
      const Array<Real>* a = b.find(l.name);
      if (!a) throw GraphError("missing binding for leaf '" + l.name + "'");
      if (a->shape != l.shape)
        throw GraphError("binding for leaf '" + l.name + "' has shape " + a->shape.str() +
                         ", want " + l.shape.str());
      slots_[static_cast<size_t>(l.node)].view = &a->v;
    }
  }

  std::vector<Real> acquire(size_t n) {
    auto& bucket = pool_[n];
    if (!bucket.empty()) {
      std::vector<Real> v = std::move(bucket.back());
      bucket.pop_back();
      return v;
    }
    return std::vector<Real>(n);
  }

  void release(NodeId id) {
    Slot& s = slots_[static_cast<size_t>(id)];
    if (!s.own.empty()) pool_[s.own.size()].push_back(std::move(s.own));
    s.own.clear();
  }

  void consume(NodeId id) {
    if (retain_all_) return;
    int32_t& c = live_[static_cast<size_t>(id)];
    if (--c == 0) release(id);
  }

  void compute(NodeId id) {
    const Node& n = g_->nodes[static_cast<size_t>(id)];
    Slot& out = slots_[static_cast<size_t>(id)];
    switch (n.op) {
      case Op::kLeaf:
        // view installed by bind()
        return;
      case Op::kConst:
        out.view = &g_->consts[static_cast<size_t>(n.p0)].v;
        return;
      default:
        out.view = nullptr;
        break;
    }

    size_t count = static_cast<size_t>(n.shape.size());
    std::vector<Real> buf = acquire(count);
    Real* y = buf.data();

    auto arg = [&](int i) { return slots_[static_cast<size_t>(n.in[static_cast<size_t>(i)])].data(); };
    auto argshape = [&](int i) -> const Shape& { return g_->shape(n.in[static_cast<size_t>(i)]); };

    switch (n.op) {
      case Op::kAdd: {
        const Real* a = arg(0);
        const Real* b = arg(1);
        if (argshape(0).rank == 0 && n.shape.rank != 0) {
          Real s = a[0];
          for (size_t i = 0; i < count; ++i) y[i] = s + b[i];
        } else if (argshape(1).rank == 0 && n.shape.rank != 0) {
          Real s = b[0];
          for (size_t i = 0; i < count; ++i) y[i] = a[i] + s;
        } else {
          for (size_t i = 0; i < count; ++i) y[i] = a[i] + b[i];
        }
        break;
      }
      case Op::kSub: {
        const Real* a = arg(0);
        const Real* b = arg(1);
        if (argshape(0).rank == 0 && n.shape.rank != 0) {
          Real s = a[0];
          for (size_t i = 0; i < count; ++i) y[i] = s - b[i];
        } else if (argshape(1).rank == 0 && n.shape.rank != 0) {
          Real s = b[0];
          for (size_t i = 0; i < count; ++i) y[i] = a[i] - s;
        } else {
          for (size_t i = 0; i < count; ++i) y[i] = a[i] - b[i];
        }
        break;
      }
      case Op::kMul: {
        const Real* a = arg(0);
        const Real* b = arg(1);
        if (argshape(0).rank == 0 && n.shape.rank != 0) {
          Real s = a[0];
          for (size_t i = 0; i < count; ++i) y[i] = s * b[i];
        } else if (argshape(1).rank == 0 && n.shape.rank != 0) {
          Real s = b[0];
          for (size_t i = 0; i < count; ++i) y[i] = a[i] * s;
        } else {
          for (size_t i = 0; i < count; ++i) y[i] = a[i] * b[i];
        }
        break;
      }
      case Op::kMatVec: {
        const Real* w = arg(0);
        const Real* x = arg(1);
        int rows = argshape(0).rows, cols = argshape(0).cols;
        for (int r = 0; r < rows; ++r) {
          Real acc = Real(0);
          const Real* wr = w + static_cast<size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) acc += wr[c] * x[c];
          y[r] = acc;
        }
        break;
      }
      case Op::kMatVecT: {
        const Real* w = arg(0);
        const Real* u = arg(1);
        int rows = argshape(0).rows, cols = argshape(0).cols;
        for (int c = 0; c < cols; ++c) y[c] = Real(0);
        for (int r = 0; r < rows; ++r) {
          Real ur = u[r];
          const Real* wr = w + static_cast<size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) y[c] += wr[c] * ur;
        }
        break;
      }
      case Op::kOuter: {
        const Real* u = arg(0);
        const Real* v = arg(1);
        int rows = n.shape.rows, cols = n.shape.cols;
        for (int r = 0; r < rows; ++r) {
          Real ur = u[r];
          Real* yr = y + static_cast<size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) yr[c] = ur * v[c];
        }
        break;
      }
      case Op::kTanh: {
        const Real* a = arg(0);
        for (size_t i = 0; i < count; ++i) y[i] = std::tanh(a[i]);
        break;
      }
      case Op::kSigmoid: {
        const Real* a = arg(0);
        for (size_t i = 0; i < count; ++i) y[i] = detail::sigmoid_stable(a[i]);
        break;
      }
      case Op::kSoftplus: {
        const Real* a = arg(0);
        for (size_t i = 0; i < count; ++i) y[i] = detail::softplus_stable(a[i]);
        break;
      }
      case Op::kClip01: {
        const Real* a = arg(0);
        for (size_t i = 0; i < count; ++i)
          y[i] = a[i] < Real(0) ? Real(0) : (a[i] > Real(1) ? Real(1) : a[i]);
        break;
      }
      case Op::kClip01Mask: {
        const Real* a = arg(0);
        for (size_t i = 0; i < count; ++i)
          y[i] = (a[i] >= Real(0) && a[i] <= Real(1)) ? Real(1) : Real(0);
        break;
      }
      case Op::kSum: {
        const Real* a = arg(0);
        size_t m = static_cast<size_t>(argshape(0).size());
        Real acc = Real(0);
        for (size_t i = 0; i < m; ++i) acc += a[i];
        y[0] = acc;
        break;
      }
      case Op::kSqNorm: {
        const Real* a = arg(0);
        size_t m = static_cast<size_t>(argshape(0).size());
        Real acc = Real(0);
        for (size_t i = 0; i < m; ++i) acc += a[i] * a[i];
        y[0] = acc;
        break;
      }
      case Op::kConcat: {
        size_t off = 0;
        for (size_t k = 0; k < n.in.size(); ++k) {
          const Real* a = arg(static_cast<int>(k));
          size_t m = static_cast<size_t>(argshape(static_cast<int>(k)).size());
          std::copy(a, a + m, y + off);
          off += m;
        }
        break;
      }
      case Op::kSlice: {
        const Real* a = arg(0);
        std::copy(a + n.p0, a + n.p0 + n.shape.rows, y);
        break;
      }
      case Op::kPad: {
        const Real* a = arg(0);
        std::fill(y, y + count, Real(0));
        std::copy(a, a + argshape(0).rows, y + n.p0);
        break;
      }
      default:
        throw GraphError("unhandled op in evaluator");
    }
    out.own = std::move(buf);
    for (NodeId i : n.in) consume(i);
  }

  std::shared_ptr<const Graph<Real>> g_;
  bool retain_all_;
  std::vector<bool> needed_;
  std::vector<int32_t> consumers_;
  std::vector<int32_t> live_;
  std::vector<NodeId> order_;
  std::vector<Slot> slots_;
  std::unordered_map<size_t, std::vector<std::vector<Real>>> pool_;
};

// One-shot evaluation of all outputs.
template <typename Real>
std::vector<Array<Real>> evaluate_all(const Graph<Real>& g, const Binding<Real>& b) {
  Evaluator<Real> ev(g);
  return ev.run(b);
}

// One-shot evaluation of a single-output graph.
template <typename Real>
Array<Real> evaluate(const Graph<Real>& g, const Binding<Real>& b) {
  NodeId out = g.single_output();
  (void)out;
  return evaluate_all(g, b)[0];
}

// ---------------------------------------------------------------------------
// Differentiation

// Appends adjoint nodes for d(out)/d(each wrt node) to the builder and
// returns the gradient node ids, one per wrt entry (a zero constant when the
// output does not depend on it). `out` must be scalar-shaped. Adjoints are
// only propagated along paths between `out` and the wrt nodes, so unrelated
// parts of the graph stay untouched.
template <typename Real>
std::vector<NodeId> derive_into(GraphBuilder<Real>& gb, NodeId out,
                                const std::vector<NodeId>& wrt) {
  if (gb.shape(out).rank != 0)
    throw GraphError("derive: output is " + gb.shape(out).str() + ", want scalar");

  const auto& nodes = gb.graph().nodes;
  size_t n = static_cast<size_t>(out) + 1;

  std::vector<bool> in_cone(n, false);
  {
    std::vector<NodeId> stack{out};
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      if (in_cone[static_cast<size_t>(id)]) continue;
      in_cone[static_cast<size_t>(id)] = true;
      for (NodeId i : nodes[static_cast<size_t>(id)].in)
        if (static_cast<size_t>(i) < n) stack.push_back(i);
    }
  }

  std::vector<bool> relevant(n, false);
  for (NodeId w : wrt) {
    if (w < 0 || static_cast<size_t>(w) >= gb.graph().nodes.size())
      throw GraphError("derive: wrt id out of range");
    if (static_cast<size_t>(w) < n) relevant[static_cast<size_t>(w)] = true;
  }
  for (size_t id = 0; id < n; ++id) {
    if (relevant[id]) continue;
    for (NodeId i : nodes[id].in)
      if (relevant[static_cast<size_t>(i)]) {
        relevant[id] = true;
        break;
      }
  }

  std::vector<NodeId> adjoint(n, -1);
  adjoint[static_cast<size_t>(out)] = gb.scalar(Real(1));

  auto accumulate = [&](NodeId target, NodeId contrib) {
    size_t t = static_cast<size_t>(target);
    adjoint[t] = adjoint[t] < 0 ? contrib : gb.add(adjoint[t], contrib);
  };

  // Adjoint of an elementwise contribution, reduced when the operand was a
  // broadcast scalar.
  auto reduce_to = [&](NodeId contrib, NodeId operand) {
    if (gb.shape(operand).rank == 0 && gb.shape(contrib).rank != 0) return gb.sum(contrib);
    return contrib;
  };

  for (NodeId id = out; id >= 0; --id) {
    size_t uid = static_cast<size_t>(id);
    if (!in_cone[uid] || !relevant[uid] || adjoint[uid] < 0) continue;
    NodeId a = adjoint[uid];
    const Node& node = nodes[uid];
    auto want = [&](int k) { return relevant[static_cast<size_t>(node.in[static_cast<size_t>(k)])]; };

    switch (node.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd:
        if (want(0)) accumulate(node.in[0], reduce_to(a, node.in[0]));
        if (want(1)) accumulate(node.in[1], reduce_to(a, node.in[1]));
        break;
      case Op::kSub:
        if (want(0)) accumulate(node.in[0], reduce_to(a, node.in[0]));
        if (want(1)) accumulate(node.in[1], reduce_to(gb.neg(a), node.in[1]));
        break;
      case Op::kMul:
        if (want(0)) accumulate(node.in[0], reduce_to(gb.mul(a, node.in[1]), node.in[0]));
        if (want(1)) accumulate(node.in[1], reduce_to(gb.mul(a, node.in[0]), node.in[1]));
        break;
      case Op::kMatVec:
        if (want(0)) accumulate(node.in[0], gb.outer(a, node.in[1]));
        if (want(1)) accumulate(node.in[1], gb.matvec_t(node.in[0], a));
        break;
      case Op::kMatVecT:
        if (want(0)) accumulate(node.in[0], gb.outer(node.in[1], a));
        if (want(1)) accumulate(node.in[1], gb.matvec(node.in[0], a));
        break;
      case Op::kOuter:
        if (want(0)) accumulate(node.in[0], gb.matvec(a, node.in[1]));
        if (want(1)) accumulate(node.in[1], gb.matvec_t(a, node.in[0]));
        break;
      case Op::kTanh:
        if (want(0))
          accumulate(node.in[0],
                     gb.mul(a, gb.sub(gb.scalar(Real(1)), gb.mul(id, id))));
        break;
      case Op::kSigmoid:
        if (want(0))
          accumulate(node.in[0], gb.mul(a, gb.mul(id, gb.sub(gb.scalar(Real(1)), id))));
        break;
      case Op::kSoftplus:
        if (want(0)) accumulate(node.in[0], gb.mul(a, gb.sigmoid(node.in[0])));
        break;
      case Op::kClip01:
        if (want(0)) accumulate(node.in[0], gb.mul(a, gb.clip01_mask(node.in[0])));
        break;
      case Op::kClip01Mask:
        // Piecewise constant: zero derivative almost everywhere.
        break;
      case Op::kSum:
        if (want(0)) {
          NodeId src = node.in[0];
          NodeId contrib = gb.shape(src).rank == 0 ? a : gb.mul(a, gb.ones(gb.shape(src)));
          accumulate(src, contrib);
        }
        break;
      case Op::kSqNorm:
        if (want(0))
          accumulate(node.in[0], gb.mul(gb.mul(gb.scalar(Real(2)), a), node.in[0]));
        break;
      case Op::kConcat: {
        int off = 0;
        for (size_t k = 0; k < node.in.size(); ++k) {
          int len = gb.shape(node.in[k]).rows;
          if (want(static_cast<int>(k))) accumulate(node.in[k], gb.slice(a, off, len));
          off += len;
        }
        break;
      }
      case Op::kSlice:
        if (want(0))
          accumulate(node.in[0], gb.pad(a, node.p0, gb.shape(node.in[0]).rows));
        break;
      case Op::kPad:
        if (want(0)) accumulate(node.in[0], gb.slice(a, node.p0, gb.shape(node.in[0]).rows));
        break;
    }
  }

  std::vector<NodeId> grads;
  grads.reserve(wrt.size());
  for (NodeId w : wrt) {
    NodeId g = static_cast<size_t>(w) < n ? adjoint[static_cast<size_t>(w)] : -1;
    grads.push_back(g >= 0 ? g : gb.zeros(gb.shape(w)));
  }
  return grads;
}

// Gradient of a single-scalar-output graph with respect to named leaves.
// The result is a new graph over the same leaves whose outputs are the
// gradients, in the order of `wrt_names`; it is itself differentiable.
template <typename Real>
Graph<Real> derive(const Graph<Real>& g, const std::vector<std::string>& wrt_names) {
  NodeId out = g.single_output();
  std::vector<NodeId> wrt;
  wrt.reserve(wrt_names.size());
  for (const auto& name : wrt_names) {
    const LeafDecl* l = g.find_leaf(name);
    if (!l) throw GraphError("derive: '" + name + "' is not a leaf of this graph");
    wrt.push_back(l->node);
  }
  GraphBuilder<Real> gb(g);
  std::vector<NodeId> grads = derive_into(gb, out, wrt);
  return std::move(gb).build(grads);
}

template <typename Real>
Graph<Real> derive(const Graph<Real>& g, const std::string& wrt_name) {
  return derive(g, std::vector<std::string>{wrt_name});
}

// ---------------------------------------------------------------------------
// Finite differences (test oracle)

// Central-difference gradient of a scalar-output graph with respect to one
// leaf. Meant for 64-bit bindings; tolerances are not meaningful in float.
template <typename Real>
Array<Real> finite_diff(const Graph<Real>& g, const Binding<Real>& b,
                        const std::string& wrt_name, Real eps) {
  NodeId out = g.single_output();
  if (g.shape(out).rank != 0)
    throw GraphError("finite_diff: output is " + g.shape(out).str() + ", want scalar");
  const LeafDecl* l = g.find_leaf(wrt_name);
  if (!l) throw GraphError("finite_diff: '" + wrt_name + "' is not a leaf");
  const Array<Real>* base = b.find(wrt_name);
  if (!base) throw GraphError("missing binding for leaf '" + wrt_name + "'");

  Evaluator<Real> ev(g);
  Binding<Real> work = b;
  Array<Real>& x = work.values.at(wrt_name);
  Array<Real> grad(l->shape);
  for (size_t i = 0; i < x.v.size(); ++i) {
    Real saved = x.v[i];
    x.v[i] = saved + eps;
    Real fp = ev.run(work)[0].v[0];
    x.v[i] = saved - eps;
    Real fm = ev.run(work)[0].v[0];
    x.v[i] = saved;
    grad.v[i] = (fp - fm) / (Real(2) * eps);
  }
  return grad;
}

// Max elementwise deviation relative to the reference's largest magnitude;
// the comparator used by every gradient check in the test suites.
template <typename Real>
Real relative_error(const Array<Real>& got, const Array<Real>& ref) {
  if (got.shape != ref.shape) return std::numeric_limits<Real>::infinity();
  Real scale = Real(0);
  for (const Real& r : ref.v) scale = std::max(scale, std::abs(r));
  scale = std::max(scale, Real(1e-12));
  Real worst = Real(0);
  for (size_t i = 0; i < got.v.size(); ++i)
    worst = std::max(worst, std::abs(got.v[i] - ref.v[i]) / scale);
  return worst;
}

}  // namespace attractor
