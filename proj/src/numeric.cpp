#include "cvpm/numeric.hpp"

#include <algorithm>
#include <cmath>

namespace cvpm {

void Mat::set_row(int r, const Vec& v) {
  if (int(v.size()) != cols) {
    throw ShapeError("set_row: row has dim " + std::to_string(v.size()) +
                     " but matrix is " + shape_str(*this));
  }
  std::copy(v.begin(), v.end(), row_ptr(r));
}

std::string shape_str(int rows, int cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

std::string shape_str(const Mat& m) { return shape_str(m.rows, m.cols); }

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec matvec(const Mat& m, const Vec& x) {
  if (m.cols != int(x.size())) {
    throw ShapeError("matvec: matrix " + shape_str(m) + " vs vector dim " +
                     std::to_string(x.size()));
  }
  Vec out(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row_ptr(r);
    double s = 0.0;
    for (int c = 0; c < m.cols; ++c) s += row[c] * x[c];
    out[r] = s;
  }
  return out;
}

Vec matvec_t(const Mat& m, const Vec& x) {
  if (m.rows != int(x.size())) {
    throw ShapeError("matvec_t: matrix " + shape_str(m) + " vs vector dim " +
                     std::to_string(x.size()));
  }
  Vec out(m.cols, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row_ptr(r);
    for (int c = 0; c < m.cols; ++c) out[c] += row[c] * x[r];
  }
  return out;
}

Vec affine(const Vec& x, const Mat& w, const Vec& b) {
  if (w.cols != int(x.size()) || w.rows != int(b.size())) {
    throw ShapeError("affine: W " + shape_str(w) + " vs x dim " +
                     std::to_string(x.size()) + ", b dim " +
                     std::to_string(b.size()));
  }
  Vec out = matvec(w, x);
  for (int i = 0; i < w.rows; ++i) out[i] += b[i];
  return out;
}

Vec add(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw ShapeError("add: dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  Vec out(a);
  for (size_t i = 0; i < b.size(); ++i) out[i] += b[i];
  return out;
}

Vec sub(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw ShapeError("sub: dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  Vec out(a);
  for (size_t i = 0; i < b.size(); ++i) out[i] -= b[i];
  return out;
}

Vec scale(const Vec& a, double s) {
  Vec out(a);
  for (double& v : out) v *= s;
  return out;
}

Vec hadamard(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw ShapeError("hadamard: dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  Vec out(a);
  for (size_t i = 0; i < b.size(); ++i) out[i] *= b[i];
  return out;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double sum(const Vec& a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s;
}

double sq_norm(const Vec& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

Vec relu(const Vec& x) {
  Vec out(x);
  for (double& v : out) v = std::max(0.0, v);
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Vec sigmoid(const Vec& x) {
  Vec out(x);
  for (double& v : out) v = sigmoid(v);
  return out;
}

Vec softmax(const Vec& x) {
  if (x.empty()) throw ShapeError("softmax: empty input");
  check_finite(x, "softmax input");
  double m = *std::max_element(x.begin(), x.end());
  Vec out(x.size());
  double z = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double log_sum_exp(const Vec& x) {
  if (x.empty()) throw ShapeError("log_sum_exp: empty input");
  check_finite(x, "log_sum_exp input");
  double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  return m + std::log(z);
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) {
    throw ValidationError(what + ": non-finite value " + format_double(v));
  }
}

void check_finite(const Vec& v, const std::string& what) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ValidationError(what + ": non-finite value at index " +
                            std::to_string(i));
    }
  }
}

}  // namespace cvpm
