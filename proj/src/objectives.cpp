#include "cvpm/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "cvpm/rng.hpp"

namespace cvpm {

namespace {

double sq_dist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int c = 0; c < d; ++c) {
    double diff = a[c] - b[c];
    s += diff * diff;
  }
  return s;
}

int nearest_center(const Mat& centers, const double* p, int d) {
  int best = 0;
  double best_d = sq_dist(centers.row_ptr(0), p, d);
  for (int c = 1; c < centers.rows; ++c) {
    double dd = sq_dist(centers.row_ptr(c), p, d);
    if (dd < best_d) {
      best_d = dd;
      best = c;
    }
  }
  return best;
}

}  // namespace

Centroids kmeans(const Mat& points, int k, uint64_t seed, int max_iters) {
  int n = points.rows;
  int d = points.cols;
  if (k < 1) throw ValidationError("kmeans: k must be >= 1");
  if (k > n) {
    throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds " +
                          std::to_string(n) + " points");
  }
  Rng rng(derive_seed(seed, seed_tag("kmeans")));
  Centroids out;
  out.k = k;
  out.centers = Mat(k, d);

  out.centers.set_row(0, points.row(int(rng.below(uint64_t(n)))));
  Vec d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = sq_dist(out.centers.row_ptr(0), points.row_ptr(i), d);
      for (int j = 1; j < c; ++j) {
        best = std::min(best,
                        sq_dist(out.centers.row_ptr(j), points.row_ptr(i), d));
      }
      d2[i] = best;
      total += best;
    }
    int picked;
    if (total <= 0.0) {
      picked = int(rng.below(uint64_t(n)));
    } else {
      double r = rng.uniform() * total;
      double acc = 0.0;
      picked = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (r < acc) {
          picked = i;
          break;
        }
      }
    }
    out.centers.set_row(c, points.row(picked));
  }

  out.assignment.assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int a = nearest_center(out.centers, points.row_ptr(i), d);
      if (a != out.assignment[i]) {
        out.assignment[i] = a;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    Mat sums(k, d);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      int a = out.assignment[i];
      ++counts[a];
      const double* p = points.row_ptr(i);
      double* s = sums.row_ptr(a);
      for (int c = 0; c < d; ++c) s[c] += p[c];
    }
    std::vector<char> reseeded(n, 0);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        double inv = 1.0 / double(counts[c]);
        double* center = out.centers.row_ptr(c);
        const double* s = sums.row_ptr(c);
        for (int cc = 0; cc < d; ++cc) center[cc] = s[cc] * inv;
      } else {
        int far = -1;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          if (reseeded[i]) continue;
          double dd = sq_dist(out.centers.row_ptr(out.assignment[i]),
                              points.row_ptr(i), d);
          if (dd > far_d) {
            far_d = dd;
            far = i;
          }
        }
        out.centers.set_row(c, points.row(far));
        reseeded[far] = 1;
      }
    }
    if (!changed) break;
  }
  for (int i = 0; i < n; ++i) {
    out.assignment[i] = nearest_center(out.centers, points.row_ptr(i), d);
  }
  return out;
}

double kmeans_sse(const Mat& points, const Centroids& c) {
  double sse = 0.0;
  for (int i = 0; i < points.rows; ++i) {
    sse += sq_dist(c.centers.row_ptr(c.assignment[i]), points.row_ptr(i),
                   points.cols);
  }
  return sse;
}

double supervised_loss(
    const std::vector<Vec>& u_hats,
    const std::vector<std::vector<std::pair<int, double>>>& ratings_per_user,
    const EmbeddingTable& v_t) {
  if (u_hats.size() != ratings_per_user.size()) {
    throw ShapeError("supervised_loss: " + std::to_string(u_hats.size()) +
                     " users vs " + std::to_string(ratings_per_user.size()) +
                     " rating lists");
  }
  double acc = 0.0;
  size_t count = 0;
  for (size_t u = 0; u < u_hats.size(); ++u) {
    for (const auto& [item, rating] : ratings_per_user[u]) {
      double e = predict_score(u_hats[u], v_t.row(item)) - rating;
      acc += e * e;
      ++count;
    }
  }
  if (count == 0) throw ContractError("supervised_loss: empty batch");
  return acc / double(count);
}

double group_contrastive_loss(const Vec& u_hat, int own_center,
                              const Mat& centers, double tau) {
  if (tau <= 0.0) {
    throw ConfigError("group contrastive: tau must be > 0, got " +
                      format_double(tau));
  }
  if (own_center < 0 || own_center >= centers.rows) {
    throw ValidationError("group contrastive: center index " +
                          std::to_string(own_center) + " of " +
                          std::to_string(centers.rows));
  }
  Vec sims(centers.rows);
  for (int c = 0; c < centers.rows; ++c) {
    sims[c] = dot(u_hat, centers.row(c)) / tau;
  }
  return log_sum_exp(sims) - sims[own_center];
}

double individual_contrastive_loss(const Vec& u_hat, const Vec& z_pos,
                                   const Vec& z_neg, double margin) {
  if (margin < 0.0) {
    throw ValidationError("individual contrastive: margin must be >= 0");
  }
  double gap = sq_norm(sub(u_hat, z_pos)) - sq_norm(sub(u_hat, z_neg)) + margin;
  return std::max(0.0, gap);
}

LossBreakdown total_loss(double l_o, double l_ng, double l_ni, double gamma,
                         double tau, double margin) {
  check_finite(l_o, "total_loss l_o");
  check_finite(l_ng, "total_loss l_ng");
  check_finite(l_ni, "total_loss l_ni");
  LossBreakdown b;
  b.l_o = l_o;
  b.l_ng = l_ng;
  b.l_ni = l_ni;
  b.gamma = gamma;
  b.tau = tau;
  b.margin = margin;
  b.total = l_o + gamma * (l_ng + l_ni);
  return b;
}

void append_train_log(std::ostream& out, int epoch, const LossBreakdown& b) {
  out << "epoch=" << epoch << " l_o=" << format_double(b.l_o)
      << " l_ng=" << format_double(b.l_ng) << " l_ni=" << format_double(b.l_ni)
      << " total=" << format_double(b.total) << '\n';
}

}  // namespace cvpm
