#pragma once

// Parametric energy functions E(x; theta): scalar-output networks built on
// the computation graph, differentiable in both the pattern and the
// parameters, bounded below in x through tanh-limited pre-output activations.
//
// Two trainable architectures are provided. "gated-rnn" unrolls a fixed
// number of hops of an update-gated recurrent cell over the same input and
// reads the energy off the final state; its writable memory is the dynamic
// linear map applied to the input. "mlp-skip" computes a representation
// f(x) refined by a gated skip connection g(f(x)) so the energy gradient is
// refined together with the energy value. "quadratic" and "linear" are tiny
// diagnostic energies used by gradient checks and tests.

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "attractor/graph.hpp"
#include "attractor/params.hpp"
#include "attractor/rng.hpp"

namespace attractor {

enum class ArchTag { kGatedRnn, kMlpSkip, kQuadratic, kLinear };

inline std::string arch_tag_name(ArchTag t) {
  switch (t) {
    case ArchTag::kGatedRnn: return "gated-rnn";
    case ArchTag::kMlpSkip: return "mlp-skip";
    case ArchTag::kQuadratic: return "quadratic";
    case ArchTag::kLinear: return "linear";
  }
  return "?";
}

inline ArchTag arch_tag_from_name(const std::string& s) {
  if (s == "gated-rnn") return ArchTag::kGatedRnn;
  if (s == "mlp-skip") return ArchTag::kMlpSkip;
  if (s == "quadratic") return ArchTag::kQuadratic;
  if (s == "linear") return ArchTag::kLinear;
  throw std::invalid_argument("unknown energy architecture '" + s + "'");
}

struct EnergyArch {
  ArchTag tag = ArchTag::kGatedRnn;
  int dim = 128;
  int hidden = 0;   // 0: defaults to 8 * dim
  int hops = 5;
  int dynamic = -1; // writable slice width; -1: defaults to (dim - 1) / 2

  static EnergyArch gated_rnn(int d, int hidden = 0, int hops = 5, int dynamic = -1) {
    return {ArchTag::kGatedRnn, d, hidden, hops, dynamic};
  }
  static EnergyArch mlp_skip(int d, int hidden = 0, int dynamic = -1) {
    return {ArchTag::kMlpSkip, d, hidden, 1, dynamic};
  }
  static EnergyArch quadratic(int d) { return {ArchTag::kQuadratic, d, 0, 1, 0}; }
  static EnergyArch linear(int d) { return {ArchTag::kLinear, d, 0, 1, 0}; }

  int hidden_or_default() const { return hidden > 0 ? hidden : 8 * dim; }
  int dynamic_or_default() const { return dynamic >= 0 ? dynamic : (dim - 1) / 2; }

  void validate() const {
    if (dim < 1) throw std::invalid_argument("energy arch: dim must be positive");
    if (tag == ArchTag::kQuadratic || tag == ArchTag::kLinear) return;
    int h = hidden_or_default();
    int dyn = dynamic_or_default();
    if (h < 1) throw std::invalid_argument("energy arch: zero hidden size");
    if (dyn < 1) throw std::invalid_argument("energy arch: needs at least one writable slice");
    if (dyn > h)
      throw std::invalid_argument("energy arch: writable slice " + std::to_string(dyn) +
                                  " larger than layer of size " + std::to_string(h));
    if (tag == ArchTag::kGatedRnn && hops < 1)
      throw std::invalid_argument("energy arch: hops must be positive");
  }
};

using NodeMap = std::map<std::string, NodeId>;

template <typename Real>
class EnergyModel {
 public:
  explicit EnergyModel(EnergyArch arch) : arch_(arch) {
    arch_.validate();
    build_graphs();
  }

  const EnergyArch& arch() const { return arch_; }
  int dim() const { return arch_.dim; }

  // Fresh He-initialized parameters; bit-identical for identical (arch, seed).
  ParameterSet<Real> init_params(uint64_t seed) const {
    Rng rng(seed);
    ParameterSet<Real> ps;
    auto he_mat = [&](int rows, int cols) {
      Array<Real> w(Shape::mat(rows, cols));
      double std = std::sqrt(2.0 / cols);
      for (auto& x : w.v) x = static_cast<Real>(rng.normal(0.0, std));
      return w;
    };
    auto he_vec = [&](int n, int fan_in) {
      Array<Real> w(Shape::vec(n));
      double std = std::sqrt(2.0 / fan_in);
      for (auto& x : w.v) x = static_cast<Real>(rng.normal(0.0, std));
      return w;
    };
    const int d = arch_.dim;
    switch (arch_.tag) {
      case ArchTag::kGatedRnn: {
        int h = arch_.hidden_or_default();
        int dyn = arch_.dynamic_or_default();
        ps.add("mem.w", he_mat(dyn, d), true);
        ps.add("static.w", he_mat(h - dyn, d + h), false);
        ps.add("static.b", Array<Real>::zeros(Shape::vec(h - dyn)), false);
        ps.add("gate.w", he_mat(h, d + h), false);
        ps.add("gate.b", Array<Real>::zeros(Shape::vec(h)), false);
        ps.add("out.w", he_vec(h, h), false);
        ps.add("out.b", Array<Real>::zeros(Shape::scalar()), false);
        break;
      }
      case ArchTag::kMlpSkip: {
        int h = arch_.hidden_or_default();
        int dyn = arch_.dynamic_or_default();
        ps.add("mem.w", he_mat(dyn, d), true);
        ps.add("stat.w", he_mat(h - dyn, d), false);
        ps.add("stat.b", Array<Real>::zeros(Shape::vec(h - dyn)), false);
        ps.add("ref.w", he_mat(h, h), false);
        ps.add("ref.b", Array<Real>::zeros(Shape::vec(h)), false);
        ps.add("refgate.w", he_mat(h, h), false);
        ps.add("refgate.b", Array<Real>::zeros(Shape::vec(h)), false);
        ps.add("out.w", he_vec(h, h), false);
        ps.add("out.b", Array<Real>::zeros(Shape::scalar()), false);
        break;
      }
      case ArchTag::kQuadratic:
        ps.add("c", Array<Real>::zeros(Shape::vec(d)), true);
        break;
      case ArchTag::kLinear:
        ps.add("w", he_vec(d, d), true);
        break;
    }
    return ps;
  }

  // Emits the energy expression for pattern node `x` and parameter nodes
  // `params` (one entry per parameter name) into an existing builder.
  NodeId emit(GraphBuilder<Real>& gb, NodeId x, const NodeMap& params) const {
    auto p = [&](const char* name) -> NodeId {
      auto it = params.find(name);
      if (it == params.end())
        throw GraphError(std::string("energy emit: missing parameter node '") + name + "'");
      return it->second;
    };
    switch (arch_.tag) {
      case ArchTag::kGatedRnn: {
        int h = arch_.hidden_or_default();
        NodeId state = gb.zeros(Shape::vec(h));
        NodeId one = gb.scalar(Real(1));
        for (int hop = 0; hop < arch_.hops; ++hop) {
          NodeId z = gb.concat({x, state});
          NodeId dyn = gb.matvec(p("mem.w"), x);
          NodeId stat = gb.add(gb.matvec(p("static.w"), z), p("static.b"));
          NodeId cand = gb.tanh(gb.concat({dyn, stat}));
          NodeId u = gb.sigmoid(gb.add(gb.matvec(p("gate.w"), z), p("gate.b")));
          state = gb.add(gb.mul(u, cand), gb.mul(gb.sub(one, u), state));
        }
        return gb.add(gb.dot(p("out.w"), state), p("out.b"));
      }
      case ArchTag::kMlpSkip: {
        NodeId dyn = gb.matvec(p("mem.w"), x);
        NodeId stat = gb.add(gb.matvec(p("stat.w"), x), p("stat.b"));
        NodeId a = gb.tanh(gb.concat({dyn, stat}));
        NodeId cand = gb.tanh(gb.add(gb.matvec(p("ref.w"), a), p("ref.b")));
        NodeId u = gb.sigmoid(gb.add(gb.matvec(p("refgate.w"), a), p("refgate.b")));
        NodeId hrep = gb.add(a, gb.mul(u, cand));
        return gb.add(gb.dot(p("out.w"), gb.tanh(hrep)), p("out.b"));
      }
      case ArchTag::kQuadratic:
        return gb.mul(gb.scalar(Real(0.5)), gb.squared_norm(gb.sub(x, p("c"))));
      case ArchTag::kLinear:
        return gb.dot(p("w"), x);
    }
    throw GraphError("energy emit: unknown architecture");
  }

  // Leaf map for emitting against a graph with one leaf per parameter.
  NodeMap emit_leaves(GraphBuilder<Real>& gb, const ParameterSet<Real>& ps) const {
    NodeMap m;
    for (const auto& it : ps.items) m[it.name] = gb.leaf(it.name, it.value.shape);
    return m;
  }

  // The computational graph of E(x; theta) over leaves "x" and parameters.
  std::shared_ptr<const Graph<Real>> energy_graph() const { return energy_graph_; }
  // Gradient graph with output d E / d x, same leaves.
  std::shared_ptr<const Graph<Real>> grad_x_graph() const { return grad_graph_; }

  Binding<Real> binding_for(const Array<Real>& x, const ParameterSet<Real>& ps) const {
    check_dim(x);
    Binding<Real> b;
    b.set("x", x);
    for (const auto& it : ps.items) b.set(it.name, it.value);
    return b;
  }

  Real energy(const Array<Real>& x, const ParameterSet<Real>& ps) const {
    Binding<Real> b = binding_for(x, ps);
    Real e = evaluate(*energy_graph_, b).v[0];
    if (!std::isfinite(static_cast<double>(e)))
      throw std::runtime_error("energy: non-finite value");
    return e;
  }

  Array<Real> grad_x(const Array<Real>& x, const ParameterSet<Real>& ps) const {
    Binding<Real> b = binding_for(x, ps);
    Array<Real> g = evaluate(*grad_graph_, b);
    for (const Real& v : g.v)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("grad_x: non-finite gradient");
    return g;
  }

  // Lower bound of the energy over any x, from the tanh-bounded pre-output
  // representation: E >= out.b - ||out.w||_1. Quadratic energies are bounded
  // by zero; the linear diagnostic energy is unbounded.
  Real energy_lower_bound(const ParameterSet<Real>& ps) const {
    switch (arch_.tag) {
      case ArchTag::kGatedRnn:
      case ArchTag::kMlpSkip: {
        Real acc = Real(0);
        for (const Real& w : ps.at("out.w").v) acc += std::abs(w);
        return ps.at("out.b").v[0] - acc;
      }
      case ArchTag::kQuadratic:
        return Real(0);
      case ArchTag::kLinear:
        return -std::numeric_limits<Real>::infinity();
    }
    return -std::numeric_limits<Real>::infinity();
  }

 private:
  void check_dim(const Array<Real>& x) const {
    if (x.shape != Shape::vec(arch_.dim))
      throw std::invalid_argument("energy: pattern is " + x.shape.str() + ", want vec(" +
                                  std::to_string(arch_.dim) + ")");
  }

  void build_graphs() {
    ParameterSet<Real> proto = init_params(0);
    GraphBuilder<Real> gb;
    NodeId x = gb.leaf("x", Shape::vec(arch_.dim));
    NodeMap pm = emit_leaves(gb, proto);
    NodeId e = emit(gb, x, pm);
    std::vector<NodeId> gx = derive_into(gb, e, {x});
    Graph<Real> both = std::move(gb).build(std::vector<NodeId>{e, gx[0]});

    Graph<Real> eg = both;
    eg.outputs = {both.outputs[0]};
    energy_graph_ = std::make_shared<const Graph<Real>>(std::move(eg));

    Graph<Real> gg = both;
    gg.outputs = {both.outputs[1]};
    grad_graph_ = std::make_shared<const Graph<Real>>(std::move(gg));
  }

  EnergyArch arch_;
  std::shared_ptr<const Graph<Real>> energy_graph_;
  std::shared_ptr<const Graph<Real>> grad_graph_;
};

template <typename Real>
struct BuiltEnergy {
  ParameterSet<Real> params;
  EnergyModel<Real> model;
};

// Constructs the architecture and its seeded initial parameters.
template <typename Real>
BuiltEnergy<Real> build_energy(const EnergyArch& arch, uint64_t seed) {
  EnergyModel<Real> model(arch);
  ParameterSet<Real> ps = model.init_params(seed);
  return {std::move(ps), std::move(model)};
}

}  // namespace attractor
