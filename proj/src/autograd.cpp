#include "cvpm/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace cvpm {

Tape::Var Tape::push(Vec val, int rows, int cols) {
  Node n;
  n.val = std::move(val);
  n.rows = rows;
  n.cols = cols;
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

Tape::Var Tape::param(const ParamRef& p) {
  auto it = param_ids_.find(p.name);
  if (it != param_ids_.end()) return Var{it->second};
  Var v = push(p.value->data, p.value->rows, p.value->cols);
  node(v).is_param = true;
  node(v).name = p.name;
  param_ids_[p.name] = v.id;
  return v;
}

Tape::Var Tape::constant(Vec v) {
  int n = int(v.size());
  return push(std::move(v), n, 1);
}

Tape::Var Tape::constant(double v) { return push(Vec{v}, 1, 1); }

Tape::Var Tape::affine(Var x, Var w, Var b) {
  const Node& wn = node(w);
  const Vec& xv = node(x).val;
  const Vec& bv = node(b).val;
  if (wn.cols != int(xv.size()) || wn.rows != int(bv.size())) {
    throw ShapeError("affine: W " + shape_str(wn.rows, wn.cols) + " vs x dim " +
                     std::to_string(xv.size()) + ", b dim " +
                     std::to_string(bv.size()));
  }
  Vec out(wn.rows, 0.0);
  for (int r = 0; r < wn.rows; ++r) {
    double s = bv[r];
    const double* row = wn.val.data() + size_t(r) * wn.cols;
    for (int c = 0; c < wn.cols; ++c) s += row[c] * xv[c];
    out[r] = s;
  }
  Var o = push(std::move(out), wn.rows, 1);
  node(o).back = [this, x, w, b, o] {
    const Vec& g = grad_of(o);
    Node& wn2 = node(w);
    const Vec& xv2 = node(x).val;
    Vec& gw = grad_of(w);
    Vec& gx = grad_of(x);
    Vec& gb = grad_of(b);
    for (int r = 0; r < wn2.rows; ++r) {
      double gr = g[r];
      gb[r] += gr;
      const double* row = wn2.val.data() + size_t(r) * wn2.cols;
      double* gwrow = gw.data() + size_t(r) * wn2.cols;
      for (int c = 0; c < wn2.cols; ++c) {
        gwrow[c] += gr * xv2[c];
        gx[c] += gr * row[c];
      }
    }
  };
  return o;
}

Tape::Var Tape::matvec(Var w, Var x) {
  const Node& wn = node(w);
  Var zero = constant(Vec(wn.rows, 0.0));
  return affine(x, w, zero);
}

Tape::Var Tape::const_matvec(std::shared_ptr<const Mat> c, Var x, double s) {
  const Vec& xv = node(x).val;
  if (c->cols != int(xv.size())) {
    throw ShapeError("const_matvec: matrix " + shape_str(*c) +
                     " vs vector dim " + std::to_string(xv.size()));
  }
  Vec out = cvpm::scale(cvpm::matvec(*c, xv), s);
  Var o = push(std::move(out), c->rows, 1);
  node(o).back = [this, c, x, s, o] {
    const Vec& g = grad_of(o);
    Vec& gx = grad_of(x);
    for (int r = 0; r < c->rows; ++r) {
      const double* row = c->row_ptr(r);
      double gr = g[r] * s;
      for (int cc = 0; cc < c->cols; ++cc) gx[cc] += gr * row[cc];
    }
  };
  return o;
}

Tape::Var Tape::const_matvec_t(std::shared_ptr<const Mat> c, Var x, double s) {
  const Vec& xv = node(x).val;
  if (c->rows != int(xv.size())) {
    throw ShapeError("const_matvec_t: matrix " + shape_str(*c) +
                     " vs vector dim " + std::to_string(xv.size()));
  }
  Vec out = cvpm::scale(cvpm::matvec_t(*c, xv), s);
  Var o = push(std::move(out), c->cols, 1);
  node(o).back = [this, c, x, s, o] {
    const Vec& g = grad_of(o);
    Vec& gx = grad_of(x);
    for (int r = 0; r < c->rows; ++r) {
      const double* row = c->row_ptr(r);
      double acc = 0.0;
      for (int cc = 0; cc < c->cols; ++cc) acc += row[cc] * g[cc];
      gx[r] += s * acc;
    }
  };
  return o;
}

Tape::Var Tape::flat_matvec(Var w, Vec u, int rows, double s) {
  const Vec& wv = node(w).val;
  int n = int(u.size());
  if (int(wv.size()) != rows * n) {
    throw ShapeError("flat_matvec: flat dim " + std::to_string(wv.size()) +
                     " vs " + shape_str(rows, n));
  }
  Vec out(rows, 0.0);
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < n; ++c) acc += wv[size_t(r) * n + c] * u[c];
    out[r] = s * acc;
  }
  Var o = push(std::move(out), rows, 1);
  node(o).back = [this, w, u = std::move(u), rows, s, o] {
    const Vec& g = grad_of(o);
    Vec& gw = grad_of(w);
    int n2 = int(u.size());
    for (int r = 0; r < rows; ++r) {
      double gr = g[r] * s;
      for (int c = 0; c < n2; ++c) gw[size_t(r) * n2 + c] += gr * u[c];
    }
  };
  return o;
}

Tape::Var Tape::relu(Var x) {
  Vec out = cvpm::relu(node(x).val);
  Var o = push(std::move(out), node(x).rows, node(x).cols);
  node(o).back = [this, x, o] {
    const Vec& g = grad_of(o);
    const Vec& xv = node(x).val;
    Vec& gx = grad_of(x);
    for (size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  };
  return o;
}

Tape::Var Tape::exp_clamp(Var x, double lo, double hi) {
  const Vec& xv = node(x).val;
  Vec out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp(std::clamp(xv[i], lo, hi));
  }
  Var o = push(std::move(out), node(x).rows, node(x).cols);
  node(o).back = [this, x, lo, hi, o] {
    const Vec& g = grad_of(o);
    const Vec& xv2 = node(x).val;
    const Vec& ov = node(o).val;
    Vec& gx = grad_of(x);
    for (size_t i = 0; i < xv2.size(); ++i) {
      if (xv2[i] > lo && xv2[i] < hi) gx[i] += g[i] * ov[i];
    }
  };
  return o;
}

Tape::Var Tape::add(Var a, Var b) {
  Vec out = cvpm::add(node(a).val, node(b).val);
  Var o = push(std::move(out), node(a).rows, node(a).cols);
  node(o).back = [this, a, b, o] {
    const Vec& g = grad_of(o);
    Vec& ga = grad_of(a);
    Vec& gb = grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return o;
}

Tape::Var Tape::sub(Var a, Var b) {
  Vec out = cvpm::sub(node(a).val, node(b).val);
  Var o = push(std::move(out), node(a).rows, node(a).cols);
  node(o).back = [this, a, b, o] {
    const Vec& g = grad_of(o);
    Vec& ga = grad_of(a);
    Vec& gb = grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  };
  return o;
}

Tape::Var Tape::mul(Var a, Var b) {
  Vec out = hadamard(node(a).val, node(b).val);
  Var o = push(std::move(out), node(a).rows, node(a).cols);
  node(o).back = [this, a, b, o] {
    const Vec& g = grad_of(o);
    const Vec& av = node(a).val;
    const Vec& bv = node(b).val;
    Vec& ga = grad_of(a);
    Vec& gb = grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv[i];
      gb[i] += g[i] * av[i];
    }
  };
  return o;
}

Tape::Var Tape::mul_const(Var x, Vec c) {
  Vec out = hadamard(node(x).val, c);
  Var o = push(std::move(out), node(x).rows, node(x).cols);
  node(o).back = [this, x, c = std::move(c), o] {
    const Vec& g = grad_of(o);
    Vec& gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c[i];
  };
  return o;
}

Tape::Var Tape::axpb(Var x, double a, double b) {
  const Vec& xv = node(x).val;
  Vec out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = a * xv[i] + b;
  Var o = push(std::move(out), node(x).rows, node(x).cols);
  node(o).back = [this, x, a, o] {
    const Vec& g = grad_of(o);
    Vec& gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
  };
  return o;
}

Tape::Var Tape::concat(Var a, Var b) {
  Vec out = cvpm::concat(node(a).val, node(b).val);
  int n = int(out.size());
  Var o = push(std::move(out), n, 1);
  node(o).back = [this, a, b, o] {
    const Vec& g = grad_of(o);
    Vec& ga = grad_of(a);
    Vec& gb = grad_of(b);
    size_t na = ga.size();
    for (size_t i = 0; i < na; ++i) ga[i] += g[i];
    for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
  };
  return o;
}

Tape::Var Tape::softmax(Var x) {
  Vec out = cvpm::softmax(node(x).val);
  Var o = push(std::move(out), node(x).rows, node(x).cols);
  node(o).back = [this, x, o] {
    const Vec& g = grad_of(o);
    const Vec& y = node(o).val;
    Vec& gx = grad_of(x);
    double gy = 0.0;
    for (size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    for (size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - gy);
  };
  return o;
}

Tape::Var Tape::dot_const(Var x, Vec v, double s) {
  double out = s * cvpm::dot(node(x).val, v);
  Var o = push(Vec{out}, 1, 1);
  node(o).back = [this, x, v = std::move(v), s, o] {
    double g = grad_of(o)[0] * s;
    Vec& gx = grad_of(x);
    for (size_t i = 0; i < v.size(); ++i) gx[i] += g * v[i];
  };
  return o;
}

Tape::Var Tape::sum_sq(Var x) {
  double out = sq_norm(node(x).val);
  Var o = push(Vec{out}, 1, 1);
  node(o).back = [this, x, o] {
    double g = grad_of(o)[0];
    const Vec& xv = node(x).val;
    Vec& gx = grad_of(x);
    for (size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g * xv[i];
  };
  return o;
}

Tape::Var Tape::log_sum_exp(Var x) {
  double out = cvpm::log_sum_exp(node(x).val);
  Var o = push(Vec{out}, 1, 1);
  node(o).back = [this, x, o] {
    double g = grad_of(o)[0];
    Vec sm = cvpm::softmax(node(x).val);
    Vec& gx = grad_of(x);
    for (size_t i = 0; i < sm.size(); ++i) gx[i] += g * sm[i];
  };
  return o;
}

Tape::Var Tape::pick(Var x, int index) {
  const Vec& xv = node(x).val;
  if (index < 0 || index >= int(xv.size())) {
    throw ShapeError("pick: index " + std::to_string(index) + " in dim " +
                     std::to_string(xv.size()));
  }
  Var o = push(Vec{xv[index]}, 1, 1);
  node(o).back = [this, x, index, o] {
    grad_of(x)[index] += grad_of(o)[0];
  };
  return o;
}

Tape::Var Tape::sum(const std::vector<Var>& scalars) {
  double acc = 0.0;
  for (Var v : scalars) acc += scalar_value(v);
  Var o = push(Vec{acc}, 1, 1);
  node(o).back = [this, scalars, o] {
    double g = grad_of(o)[0];
    for (Var v : scalars) grad_of(v)[0] += g;
  };
  return o;
}

Tape::Var Tape::sq_err_rows(Var x, std::shared_ptr<const Mat> rows, Vec r) {
  const Vec& xv = node(x).val;
  if (rows->cols != int(xv.size()) || rows->rows != int(r.size())) {
    throw ShapeError("sq_err_rows: rows " + shape_str(*rows) + " vs x dim " +
                     std::to_string(xv.size()) + ", targets " +
                     std::to_string(r.size()));
  }
  double acc = 0.0;
  for (int j = 0; j < rows->rows; ++j) {
    double e = -r[j];
    const double* row = rows->row_ptr(j);
    for (int c = 0; c < rows->cols; ++c) e += row[c] * xv[c];
    acc += e * e;
  }
  Var o = push(Vec{acc}, 1, 1);
  node(o).back = [this, x, rows, r = std::move(r), o] {
    double g = grad_of(o)[0];
    const Vec& xv2 = node(x).val;
    Vec& gx = grad_of(x);
    for (int j = 0; j < rows->rows; ++j) {
      const double* row = rows->row_ptr(j);
      double e = -r[j];
      for (int c = 0; c < rows->cols; ++c) e += row[c] * xv2[c];
      double coef = 2.0 * g * e;
      for (int c = 0; c < rows->cols; ++c) gx[c] += coef * row[c];
    }
  };
  return o;
}

const Vec& Tape::value(Var v) const { return node(v).val; }

double Tape::scalar_value(Var v) const {
  const Vec& val = node(v).val;
  if (val.size() != 1) {
    throw ShapeError("scalar_value: node has dim " +
                     std::to_string(val.size()));
  }
  return val[0];
}

int Tape::dim(Var v) const { return int(node(v).val.size()); }

void Tape::backward(Var loss) {
  if (backward_done_) throw ContractError("backward called twice on one tape");
  backward_done_ = true;
  if (node(loss).val.size() != 1) {
    throw ShapeError("backward: loss has dim " +
                     std::to_string(node(loss).val.size()));
  }
  for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
  nodes_[loss.id].grad[0] = 1.0;
  for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back();
  }
}

GradientBundle Tape::grads() const {
  if (!backward_done_) throw ContractError("grads requested before backward");
  GradientBundle out;
  for (const auto& [name, id] : param_ids_) {
    const Node& n = nodes_[id];
    Mat g(n.rows, n.cols);
    g.data = n.grad;
    out[name] = std::move(g);
  }
  return out;
}

Adam::Adam(std::vector<ParamRef> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value->rows, p.value->cols);
    v_.emplace_back(p.value->rows, p.value->cols);
  }
}

void Adam::step(const GradientBundle& grads) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Mat& p = *params_[i].value;
    const Mat* g = nullptr;
    auto it = grads.find(params_[i].name);
    if (it != grads.end()) {
      if (it->second.rows != p.rows || it->second.cols != p.cols) {
        throw ShapeError("adam: grad " + shape_str(it->second) + " vs param " +
                         shape_str(p) + " for " + params_[i].name);
      }
      g = &it->second;
    }
    for (size_t k = 0; k < p.data.size(); ++k) {
      double gk = g ? g->data[k] : 0.0;
      m_[i].data[k] = cfg_.beta1 * m_[i].data[k] + (1.0 - cfg_.beta1) * gk;
      v_[i].data[k] = cfg_.beta2 * v_[i].data[k] + (1.0 - cfg_.beta2) * gk * gk;
      double mh = m_[i].data[k] / bc1;
      double vh = v_[i].data[k] / bc2;
      double old = p.data[k];
      p.data[k] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) +
                              cfg_.weight_decay * old);
    }
  }
}

GradCheckReport gradient_check(const std::function<double()>& loss_fn,
                               const std::function<GradientBundle()>& grad_fn,
                               const std::vector<ParamRef>& params,
                               double eps, double tol) {
  double l0 = loss_fn();
  double l0_again = loss_fn();
  if (l0 != l0_again) {
    throw ContractError("gradient_check: loss not deterministic (" +
                        format_double(l0) + " vs " + format_double(l0_again) +
                        ")");
  }
  GradientBundle analytic = grad_fn();
  GradCheckReport rep;
  for (const auto& p : params) {
    const Mat* g = nullptr;
    auto it = analytic.find(p.name);
    if (it != analytic.end()) g = &it->second;
    for (size_t k = 0; k < p.value->data.size(); ++k) {
      double saved = p.value->data[k];
      p.value->data[k] = saved + eps;
      double lp = loss_fn();
      p.value->data[k] = saved - eps;
      double lm = loss_fn();
      p.value->data[k] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      double an = g ? g->data[k] : 0.0;
      double diff = std::abs(fd - an);
      double rel = diff <= 1e-8
                       ? 0.0
                       : diff / std::max(std::max(std::abs(fd), std::abs(an)),
                                         1e-12);
      ++rep.entries;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = p.name;
        rep.worst_index = int(k);
      }
    }
  }
  rep.passed = rep.max_rel_err < tol;
  return rep;
}

}  // namespace cvpm
