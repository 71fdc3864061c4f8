#pragma once

#include <cstdint>
#include <vector>

#include "cvpm/data.hpp"
#include "cvpm/mf.hpp"
#include "cvpm/trainer.hpp"
#include "cvpm/transfer.hpp"

namespace cvpm {

// Target-domain-only factorization. Test users keep their vocabulary slots
// but contribute no training records, so their rows stay near initialization.
struct TgtModel {
  EmbeddingTable users;
  EmbeddingTable items;
};

TgtModel train_tgt(const DomainPair& pair, const SplitPlan& split,
                   const MfConfig& cfg);

struct EmcdrConfig {
  int hidden = 0;  // 0 picks 2 * source dim
  double lr = 1e-2;
  double weight_decay = 5e-4;
  int epochs = 100;
  int batch_size = 256;
  uint64_t seed = 0;
};

// Supervised embedding-to-embedding mapping fit on the shared users.
MappingParams train_emcdr(const DomainPair& pair, const SplitPlan& split,
                          const PretrainedTables& tables,
                          const EmcdrConfig& cfg,
                          std::vector<double>* batch_losses = nullptr);

Vec map_emcdr(const MappingParams& theta, const Vec& u_src);

}  // namespace cvpm
