#pragma once

// Associative retrieval: K steps of projected gradient descent on the energy
// with Nesterov momentum. Step sizes are non-increasing by construction
// (each is the previous one scaled by a sigmoid of a learned logit) and the
// momentum coefficients use the same parametrization, so they stay in (0,1).
//
// Projection clips every coordinate to [0,1]; when a clamp mask is given the
// clamped coordinates are re-asserted to the query's values after every
// update and their velocity is zeroed.
//
// The whole read is emitted as a computation graph, which makes it
// differentiable end-to-end for meta-training; the plain read() entry point
// just evaluates that graph.

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "attractor/energy.hpp"
#include "attractor/graph.hpp"
#include "attractor/params.hpp"

namespace attractor {

template <typename Real>
struct ReadSchedule {
  int steps = 5;                      // K
  Real gamma1 = Real(0.1);            // initial step size, > 0
  std::vector<Real> step_logits;      // K-1 decay logits
  std::vector<Real> momentum_logits;  // K momentum logits
  bool clamp = true;                  // honor clamp masks during retrieval

  static ReadSchedule defaults(int k) {
    ReadSchedule s;
    s.steps = k;
    s.gamma1 = Real(0.1);
    s.step_logits.assign(static_cast<size_t>(k > 0 ? k - 1 : 0), Real(0));
    s.momentum_logits.assign(static_cast<size_t>(k), Real(0));
    return s;
  }

  void validate() const {
    if (steps < 1) throw std::invalid_argument("read schedule: K must be >= 1");
    if (!(gamma1 > Real(0)))
      throw std::invalid_argument("read schedule: non-positive initial step size");
    if (static_cast<int>(step_logits.size()) != steps - 1)
      throw std::invalid_argument("read schedule: want K-1 step logits");
    if (static_cast<int>(momentum_logits.size()) != steps)
      throw std::invalid_argument("read schedule: want K momentum logits");
  }
};

template <typename Real>
struct MaterializedSchedule {
  std::vector<Real> gamma;  // K step sizes, non-increasing
  std::vector<Real> psi;    // K momentum coefficients in (0,1), non-increasing
};

template <typename Real>
MaterializedSchedule<Real> materialize_schedule(const ReadSchedule<Real>& s) {
  s.validate();
  MaterializedSchedule<Real> m;
  m.gamma.resize(static_cast<size_t>(s.steps));
  m.psi.resize(static_cast<size_t>(s.steps));
  m.gamma[0] = s.gamma1;
  for (int k = 1; k < s.steps; ++k)
    m.gamma[static_cast<size_t>(k)] =
        m.gamma[static_cast<size_t>(k - 1)] * detail::sigmoid_stable(s.step_logits[static_cast<size_t>(k - 1)]);
  m.psi[0] = detail::sigmoid_stable(s.momentum_logits[0]);
  for (int k = 1; k < s.steps; ++k)
    m.psi[static_cast<size_t>(k)] =
        m.psi[static_cast<size_t>(k - 1)] * detail::sigmoid_stable(s.momentum_logits[static_cast<size_t>(k)]);
  return m;
}

template <typename Real>
struct ReadResult {
  std::vector<Array<Real>> iterates;  // x^(0..K)
  std::vector<Real> energies;         // E(x^(k)) for k = 0..K when recorded

  const Array<Real>& final_pattern() const { return iterates.back(); }
};

// Schedule parameter nodes used by an emitted read.
struct ReadScheduleNodes {
  NodeId gamma1 = -1;      // scalar
  NodeId step_logits = -1; // vec(K-1); -1 when K == 1
  NodeId momentum_logits = -1;  // vec(K)
};

template <typename Real>
struct ReadEmission {
  std::vector<NodeId> iterates;  // x^(0..K)
  std::vector<NodeId> energies;  // E(x^(k)), k = 0..K (empty unless requested)
};

// Emits the unrolled retrieval into `gb`. `clamp_mask` is a vec(d) of 0/1
// values (all-zero mask = no clamping); params maps every parameter name of
// `model` to its node.
template <typename Real>
ReadEmission<Real> emit_read(GraphBuilder<Real>& gb, const EnergyModel<Real>& model,
                             NodeId query, NodeId clamp_mask, const NodeMap& params,
                             const ReadScheduleNodes& sched, int steps,
                             bool with_energies) {
  if (steps < 1) throw GraphError("emit_read: K must be >= 1");
  const int d = model.dim();
  NodeId one = gb.scalar(Real(1));

  std::vector<NodeId> gamma(static_cast<size_t>(steps));
  std::vector<NodeId> psi(static_cast<size_t>(steps));
  gamma[0] = sched.gamma1;
  for (int k = 1; k < steps; ++k)
    gamma[static_cast<size_t>(k)] =
        gb.mul(gamma[static_cast<size_t>(k - 1)], gb.sigmoid(gb.at(sched.step_logits, k - 1)));
  psi[0] = gb.sigmoid(gb.at(sched.momentum_logits, 0));
  for (int k = 1; k < steps; ++k)
    psi[static_cast<size_t>(k)] =
        gb.mul(psi[static_cast<size_t>(k - 1)], gb.sigmoid(gb.at(sched.momentum_logits, k)));

  NodeId keep = gb.sub(one, clamp_mask);  // 1 on free coordinates
  auto project = [&](NodeId z) {
    NodeId clipped = gb.clip01(z);
    return gb.add(gb.mul(clipped, keep), gb.mul(query, clamp_mask));
  };

  ReadEmission<Real> out;
  NodeId x = query;
  NodeId v = gb.zeros(Shape::vec(d));
  out.iterates.push_back(x);
  if (with_energies) out.energies.push_back(model.emit(gb, x, params));

  for (int k = 0; k < steps; ++k) {
    NodeId look = project(gb.add(x, gb.mul(psi[static_cast<size_t>(k)], v)));
    NodeId e = model.emit(gb, look, params);
    NodeId g = derive_into(gb, e, {look})[0];
    v = gb.sub(gb.mul(psi[static_cast<size_t>(k)], v), gb.mul(gamma[static_cast<size_t>(k)], g));
    v = gb.mul(v, keep);
    x = project(gb.add(x, v));
    out.iterates.push_back(x);
    if (with_energies) out.energies.push_back(model.emit(gb, x, params));
  }
  return out;
}

// Compiled retrieval for one (architecture, K): build once, run per query.
// Not safe for concurrent use; give each thread its own program.
template <typename Real>
class ReadProgram {
 public:
  ReadProgram(const EnergyModel<Real>& model, int steps, bool with_energies = true)
      : model_(model), steps_(steps), with_energies_(with_energies) {
    GraphBuilder<Real> gb;
    NodeId query = gb.leaf("query", Shape::vec(model_.dim()));
    NodeId mask = gb.leaf("clamp_mask", Shape::vec(model_.dim()));
    ParameterSet<Real> proto = model_.init_params(0);
    NodeMap pm = model_.emit_leaves(gb, proto);
    ReadScheduleNodes sched;
    sched.gamma1 = gb.leaf("read.gamma1", Shape::scalar());
    if (steps_ > 1) sched.step_logits = gb.leaf("read.eta", Shape::vec(steps_ - 1));
    sched.momentum_logits = gb.leaf("read.psi", Shape::vec(steps_));
    ReadEmission<Real> em = emit_read(gb, model_, query, mask, pm, sched, steps_, with_energies_);
    std::vector<NodeId> outputs;
    for (size_t k = 1; k < em.iterates.size(); ++k) outputs.push_back(em.iterates[k]);
    for (NodeId e : em.energies) outputs.push_back(e);
    graph_ = std::make_shared<const Graph<Real>>(std::move(gb).build(std::move(outputs)));
    eval_ = std::make_unique<Evaluator<Real>>(graph_);
  }

  const EnergyModel<Real>& model() const { return model_; }
  int steps() const { return steps_; }

  ReadResult<Real> run(const Array<Real>& query, const ParameterSet<Real>& theta,
                       const ReadSchedule<Real>& schedule,
                       const std::vector<uint8_t>* clamp_mask = nullptr) {
    schedule.validate();
    if (schedule.steps != steps_)
      throw std::invalid_argument("read: schedule has K=" + std::to_string(schedule.steps) +
                                  ", program was built for K=" + std::to_string(steps_));
    const int d = model_.dim();
    if (query.shape != Shape::vec(d))
      throw std::invalid_argument("read: query is " + query.shape.str() + ", want vec(" +
                                  std::to_string(d) + ")");
    for (const Real& q : query.v)
      if (!(q >= Real(0) && q <= Real(1)))
        throw std::invalid_argument("read: query leaves the unit box");
    if (clamp_mask && static_cast<int>(clamp_mask->size()) != d)
      throw std::invalid_argument("read: clamp mask size mismatch");

    Binding<Real> b;
    for (const auto& it : theta.items) b.set(it.name, it.value);
    b.set("query", query);
    Array<Real> mask(Shape::vec(d));
    if (clamp_mask && schedule.clamp)
      for (int i = 0; i < d; ++i) mask.v[static_cast<size_t>(i)] = (*clamp_mask)[static_cast<size_t>(i)] ? Real(1) : Real(0);
    b.set("clamp_mask", std::move(mask));
    b.set("read.gamma1", schedule.gamma1);
    if (steps_ > 1) b.set("read.eta", Array<Real>::vec(schedule.step_logits));
    b.set("read.psi", Array<Real>::vec(schedule.momentum_logits));

    std::vector<Array<Real>> outs = eval_->run(b);
    ReadResult<Real> res;
    res.iterates.reserve(static_cast<size_t>(steps_) + 1);
    res.iterates.push_back(query);
    for (int k = 0; k < steps_; ++k) res.iterates.push_back(std::move(outs[static_cast<size_t>(k)]));
    if (with_energies_)
      for (int k = 0; k <= steps_; ++k)
        res.energies.push_back(outs[static_cast<size_t>(steps_ + k)].v[0]);

    for (size_t k = 0; k < res.iterates.size(); ++k)
      for (const Real& v : res.iterates[k].v)
        if (!std::isfinite(static_cast<double>(v)))
          throw std::runtime_error("read: non-finite gradient step at iterate " +
                                   std::to_string(k));
    return res;
  }

 private:
  EnergyModel<Real> model_;
  int steps_;
  bool with_energies_;
  std::shared_ptr<const Graph<Real>> graph_;
  std::unique_ptr<Evaluator<Real>> eval_;
};

// One-shot retrieval; builds a fresh program (fine for tests and small runs).
template <typename Real>
ReadResult<Real> read(const EnergyModel<Real>& model, const Array<Real>& query,
                      const ParameterSet<Real>& theta, const ReadSchedule<Real>& schedule,
                      const std::vector<uint8_t>* clamp_mask = nullptr) {
  ReadProgram<Real> prog(model, schedule.steps);
  return prog.run(query, theta, schedule, clamp_mask);
}

}  // namespace attractor
