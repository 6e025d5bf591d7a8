#pragma once

// Pattern batches and the bipolar <-> unit-box boundary mapping. Retrieval
// always runs in [0,1]^d; bipolar data is mapped at the module boundary and
// thresholded back at 0.5.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "attractor/array.hpp"
#include "attractor/rng.hpp"

namespace attractor {

enum class Domain : uint8_t { kBipolar = 0, kUnitBox = 1 };

template <typename Real>
struct PatternBatch {
  int count = 0;
  int dim = 0;
  Domain domain = Domain::kBipolar;
  std::vector<Real> data;  // row-major, count x dim

  PatternBatch() = default;
  PatternBatch(int n, int d, Domain dom)
      : count(n), dim(d), domain(dom), data(static_cast<size_t>(n) * d, Real(0)) {}

  Real* row(int i) { return data.data() + static_cast<size_t>(i) * dim; }
  const Real* row(int i) const { return data.data() + static_cast<size_t>(i) * dim; }

  Array<Real> row_array(int i) const {
    Array<Real> out(Shape::vec(dim));
    const Real* r = row(i);
    std::copy(r, r + dim, out.v.begin());
    return out;
  }

  void set_row(int i, const Array<Real>& a) {
    if (a.shape != Shape::vec(dim)) throw std::invalid_argument("pattern row: wrong shape");
    std::copy(a.v.begin(), a.v.end(), row(i));
  }

  static PatternBatch random_bipolar(int n, int d, Rng& rng) {
    PatternBatch b(n, d, Domain::kBipolar);
    for (auto& v : b.data) v = rng.coin() ? Real(1) : Real(-1);
    return b;
  }

  static PatternBatch random_unit(int n, int d, Rng& rng) {
    PatternBatch b(n, d, Domain::kUnitBox);
    for (auto& v : b.data) v = static_cast<Real>(rng.uniform());
    return b;
  }
};

// {-1,+1} -> [0,1]
template <typename Real>
Array<Real> bipolar_to_unit(const Array<Real>& s) {
  Array<Real> u(s.shape);
  for (size_t i = 0; i < s.v.size(); ++i) u.v[i] = (s.v[i] + Real(1)) / Real(2);
  return u;
}

// [0,1] -> {-1,+1} by thresholding at 0.5 (ties go up).
template <typename Real>
Array<Real> unit_to_bipolar(const Array<Real>& u) {
  Array<Real> s(u.shape);
  for (size_t i = 0; i < u.v.size(); ++i) s.v[i] = u.v[i] >= Real(0.5) ? Real(1) : Real(-1);
  return s;
}

template <typename Real>
int hamming_distance(const Array<Real>& a, const Array<Real>& b) {
  if (a.shape != b.shape) throw std::invalid_argument("hamming: shape mismatch");
  int errs = 0;
  for (size_t i = 0; i < a.v.size(); ++i)
    if (a.v[i] != b.v[i]) ++errs;
  return errs;
}

}  // namespace attractor
