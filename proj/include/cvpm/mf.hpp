#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cvpm/data.hpp"
#include "cvpm/numeric.hpp"

namespace cvpm {

struct EmbeddingTable {
  int dim = 0;
  Mat vectors;
  std::vector<std::string> ids;

  int count() const { return vectors.rows; }
  Vec row(int r) const { return vectors.row(r); }
};

struct MfConfig {
  int dim = 10;
  double reg = 0.0;
  double lr = 1e-2;
  double weight_decay = 5e-4;
  int epochs = 100;
  int batch_size = 512;
  uint64_t seed = 0;
  double init_std = 0.1;
  double early_stop_rel = 1e-5;
};

double predict_score(const Vec& u, const Vec& v);

// Full objective: (1/|D|) sum (u.v - r)^2 + reg * (sum ||u||^2 + sum ||v||^2)
// over every table row. Training uses minibatches; this form backs the
// gradient check and epoch-level loss reporting.
double mf_loss(const Mat& u, const Mat& v,
               const std::vector<Interaction>& records, double reg);
void mf_grads(const Mat& u, const Mat& v,
              const std::vector<Interaction>& records, double reg, Mat& gu,
              Mat& gv);

// Minibatch Adam with decoupled weight decay; rows update lazily. Epoch loss
// is the full objective evaluated after each epoch; stops early when relative
// improvement drops below cfg.early_stop_rel.
std::pair<EmbeddingTable, EmbeddingTable> train_mf(
    const InteractionSet& data, const MfConfig& cfg,
    std::vector<double>* epoch_losses = nullptr);

// Binary: magic, version, entity_count, dim, row-major fp64 payload. Ids go
// to a text sidecar at path + ".ids".
void save_table(const std::string& path, const EmbeddingTable& t);
EmbeddingTable load_table(const std::string& path);

}  // namespace cvpm
