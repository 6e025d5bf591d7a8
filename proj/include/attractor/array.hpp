#pragma once

// Dense value type shared by the whole library: a rank-0/1/2 real array
// with row-major storage. Kept deliberately minimal; all heavy lifting
// happens in the computation graph kernels.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace attractor {

struct Shape {
  int rank = 0;   // 0 scalar, 1 vector, 2 matrix
  int rows = 1;   // vector length when rank==1
  int cols = 1;

  static Shape scalar() { return {0, 1, 1}; }
  static Shape vec(int n) { return {1, n, 1}; }
  static Shape mat(int r, int c) { return {2, r, c}; }

  int size() const { return rows * cols; }

  bool operator==(const Shape& o) const {
    return rank == o.rank && rows == o.rows && cols == o.cols;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    switch (rank) {
      case 0: return "scalar";
      case 1: return "vec(" + std::to_string(rows) + ")";
      default: return "mat(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
    }
  }
};

template <typename Real>
struct Array {
  Shape shape;
  std::vector<Real> v;

  Array() : shape(Shape::scalar()), v(1, Real(0)) {}
  explicit Array(Shape s) : shape(s), v(static_cast<size_t>(s.size()), Real(0)) {}
  Array(Shape s, std::vector<Real> data) : shape(s), v(std::move(data)) {
    if (static_cast<int>(v.size()) != shape.size())
      throw std::invalid_argument("Array: data size does not match shape " + shape.str());
  }

  static Array scalar(Real x) { return Array(Shape::scalar(), {x}); }
  static Array vec(std::vector<Real> data) {
    int n = static_cast<int>(data.size());
    return Array(Shape::vec(n), std::move(data));
  }
  static Array zeros(Shape s) { return Array(s); }
  static Array full(Shape s, Real x) {
    Array a(s);
    for (auto& e : a.v) e = x;
    return a;
  }

  int size() const { return shape.size(); }
  Real& operator[](size_t i) { return v[i]; }
  const Real& operator[](size_t i) const { return v[i]; }

  // Matrix element access (rank 2).
  Real& at(int r, int c) { return v[static_cast<size_t>(r) * shape.cols + c]; }
  const Real& at(int r, int c) const { return v[static_cast<size_t>(r) * shape.cols + c]; }

  bool operator==(const Array& o) const { return shape == o.shape && v == o.v; }

  template <typename Other>
  Array<Other> cast() const {
    Array<Other> out(shape);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<Other>(v[i]);
    return out;
  }
};

}  // namespace attractor
