#pragma once

#include <string>

#include "cvpm/common.hpp"

namespace cvpm {

// Row-major dense matrix.
struct Mat {
  int rows = 0;
  int cols = 0;
  Vec data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(size_t(r) * size_t(c), fill) {}

  double& at(int r, int c) { return data[size_t(r) * cols + c]; }
  double at(int r, int c) const { return data[size_t(r) * cols + c]; }
  double* row_ptr(int r) { return data.data() + size_t(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + size_t(r) * cols; }
  Vec row(int r) const { return Vec(row_ptr(r), row_ptr(r) + cols); }
  void set_row(int r, const Vec& v);
};

std::string shape_str(int rows, int cols);
std::string shape_str(const Mat& m);

double dot(const Vec& a, const Vec& b);
Vec matvec(const Mat& m, const Vec& x);
// Transpose apply: result = m^T x.
Vec matvec_t(const Mat& m, const Vec& x);
Vec affine(const Vec& x, const Mat& w, const Vec& b);

Vec add(const Vec& a, const Vec& b);
Vec sub(const Vec& a, const Vec& b);
Vec scale(const Vec& a, double s);
Vec hadamard(const Vec& a, const Vec& b);
Vec concat(const Vec& a, const Vec& b);
double sum(const Vec& a);
double sq_norm(const Vec& a);

Vec relu(const Vec& x);
double sigmoid(double x);
Vec sigmoid(const Vec& x);
// Max-subtracted; stable for entries up to +-700 and beyond.
Vec softmax(const Vec& x);
double log_sum_exp(const Vec& x);

void check_finite(double v, const std::string& what);
void check_finite(const Vec& v, const std::string& what);

}  // namespace cvpm
