#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cvpm/numeric.hpp"

namespace cvpm {

// Named view of a trainable tensor; the name keys gradients and optimizer
// state, so it must be unique within a model.
struct ParamRef {
  std::string name;
  Mat* value = nullptr;
};

// Parameter name -> gradient tensor of the same shape.
using GradientBundle = std::map<std::string, Mat>;

// Reverse-mode tape over flat fp64 vectors. Build a graph per batch, call
// backward once, harvest grads, discard. Non-copyable; closures capture this.
class Tape {
 public:
  struct Var {
    int id = -1;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf under its name; repeated calls with the same name return
  // the same node.
  Var param(const ParamRef& p);
  Var constant(Vec v);
  Var constant(double v);

  // w, b are leaves from param(); x any node. out = W x + b.
  Var affine(Var x, Var w, Var b);
  Var matvec(Var w, Var x);
  // out = s * C x  /  s * C^T x; C is untrained data shared by reference.
  Var const_matvec(std::shared_ptr<const Mat> c, Var x, double s = 1.0);
  Var const_matvec_t(std::shared_ptr<const Mat> c, Var x, double s = 1.0);
  // w holds rows*u.size() entries row-major; out = s * reshape(w) u.
  Var flat_matvec(Var w, Vec u, int rows, double s = 1.0);

  Var relu(Var x);
  // exp of the input clamped to [lo, hi]; zero gradient outside the window.
  Var exp_clamp(Var x, double lo, double hi);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var mul_const(Var x, Vec c);
  // a*x + b elementwise.
  Var axpb(Var x, double a, double b);
  Var concat(Var a, Var b);
  Var softmax(Var x);

  Var dot_const(Var x, Vec v, double s = 1.0);
  Var sum_sq(Var x);
  Var log_sum_exp(Var x);
  Var pick(Var x, int index);
  Var sum(const std::vector<Var>& scalars);
  // sum_j (x . rows_j - r_j)^2
  Var sq_err_rows(Var x, std::shared_ptr<const Mat> rows, Vec r);

  const Vec& value(Var v) const;
  double scalar_value(Var v) const;
  int dim(Var v) const;

  // Seeds d(loss)=1 and propagates; loss must be scalar. One call per tape.
  void backward(Var loss);
  // Gradients of all registered params, shaped like their tensors. Params the
  // loss never touched get zero tensors.
  GradientBundle grads() const;

 private:
  struct Node {
    Vec val;
    Vec grad;
    int rows = 0;
    int cols = 0;
    std::function<void()> back;
    bool is_param = false;
    std::string name;
  };

  Var push(Vec val, int rows, int cols);
  Node& node(Var v) { return nodes_[v.id]; }
  const Node& node(Var v) const { return nodes_[v.id]; }
  Vec& grad_of(Var v) { return nodes_[v.id].grad; }

  std::deque<Node> nodes_;
  std::map<std::string, int> param_ids_;
  bool backward_done_ = false;
};

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with decoupled weight decay over a fixed list of named tensors.
class Adam {
 public:
  Adam(std::vector<ParamRef> params, AdamConfig cfg);
  // Missing names step with zero gradient (decay still applies).
  void step(const GradientBundle& grads);
  int steps() const { return t_; }

 private:
  std::vector<ParamRef> params_;
  AdamConfig cfg_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  int t_ = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  int entries = 0;
  bool passed = false;
};

// Central finite differences against analytic gradients, entry by entry.
// loss_fn must be deterministic at fixed parameters; checked by evaluating
// twice. Differences below the 1e-8 absolute floor count as exact.
GradCheckReport gradient_check(const std::function<double()>& loss_fn,
                               const std::function<GradientBundle()>& grad_fn,
                               const std::vector<ParamRef>& params,
                               double eps = 1e-5, double tol = 1e-4);

}  // namespace cvpm
