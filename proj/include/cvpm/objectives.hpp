#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "cvpm/mf.hpp"
#include "cvpm/numeric.hpp"

namespace cvpm {

struct Centroids {
  int k = 0;
  Mat centers;
  std::vector<int> assignment;
};

// k-means++ seeding then Lloyd iterations until the assignment stops changing
// or max_iters; empty clusters re-seed to the globally farthest point.
Centroids kmeans(const Mat& points, int k, uint64_t seed, int max_iters = 100);
double kmeans_sse(const Mat& points, const Centroids& c);

// Mean squared error of u_hat . v_j against r over every (user, rating) pair
// in the batch.
double supervised_loss(
    const std::vector<Vec>& u_hats,
    const std::vector<std::vector<std::pair<int, double>>>& ratings_per_user,
    const EmbeddingTable& v_t);

// -log softmax(own | similarities u_hat . c_i / tau); 0 for a single center.
double group_contrastive_loss(const Vec& u_hat, int own_center,
                              const Mat& centers, double tau);

// max(||u_hat - z_pos||^2 - ||u_hat - z_neg||^2 + margin, 0)
double individual_contrastive_loss(const Vec& u_hat, const Vec& z_pos,
                                   const Vec& z_neg, double margin);

struct LossBreakdown {
  double l_o = 0.0;
  double l_ng = 0.0;
  double l_ni = 0.0;
  double total = 0.0;
  double gamma = 0.0;
  double tau = 0.0;
  double margin = 0.0;
};

LossBreakdown total_loss(double l_o, double l_ng, double l_ni, double gamma,
                         double tau, double margin);

// One structured record per line: epoch, the three components, total.
void append_train_log(std::ostream& out, int epoch, const LossBreakdown& b);

}  // namespace cvpm
