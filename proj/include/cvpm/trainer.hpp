#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cvpm/data.hpp"
#include "cvpm/mf.hpp"
#include "cvpm/objectives.hpp"
#include "cvpm/transfer.hpp"
#include "cvpm/valence.hpp"

namespace cvpm {

struct CvpmConfig {
  int dim = 10;
  int n_dot_pos = 50;
  int n_dot_neg = 50;
  int n_ddot_pos = 5;
  int n_ddot_neg = 5;
  int centroids = 100;
  double tau = 0.1;
  double gamma = 1e-3;
  double margin = 1e-3;
  double lr = 1e-2;
  double weight_decay = 5e-4;
  int batch_size_meta = 256;
  int epochs = 100;
  uint64_t seed = 0;
  bool ablate_sampling = false;  // NS: no sampling enhancement
  bool ablate_encoder = false;   // NE: mean pooling instead of the encoder
  bool ablate_bias = false;      // NB: no personalized bias network
  bool ablate_aux = false;       // NA: no contrastive terms
  Mode mode = Mode::CDR;
  double val_fraction = 0.1;
  int patience = 10;
  // Feed the pretrained source embedding into the mapping instead of fused
  // valence codes; with all four ablations this reduces the pipeline to the
  // plain supervised-mapping baseline architecture.
  bool map_from_user_embedding = false;
  // Compare contrastive targets after passing centroids through the current
  // common map.
  bool project_centroids = false;
};

struct PretrainedTables {
  EmbeddingTable u_src;
  EmbeddingTable v_src;
  EmbeddingTable u_tgt;
  EmbeddingTable v_tgt;
};

// Stage A for both domains. Target-domain training excludes every record of a
// test (or warm-excluded) user; their rows stay at initialization.
PretrainedTables pretrain_pair(const DomainPair& pair, const SplitPlan& split,
                               const MfConfig& cfg);

struct TrainedModel {
  PretrainedTables tables;
  ValenceEncoderParams encoder;
  MappingParams theta;
  MetaParams meta;
  Centroids centroids;
  CvpmConfig config;
};

// Stage B: per epoch, resample valence complements, encode, transfer, and
// take one Adam step per meta-batch on the combined objective. Pretrained
// tables stay frozen. Returns the parameters with the best validation loss
// when a validation fraction is configured, the final parameters otherwise.
TrainedModel train_cvpm(const DomainPair& pair, const SplitPlan& split,
                        const CvpmConfig& cfg, const PretrainedTables& tables,
                        std::vector<LossBreakdown>* batch_trace = nullptr,
                        std::ostream* log = nullptr);

// Warm start: full-batch Adam steps on the supervised loss over the test
// users' earlier halves; only encoder/mapping/meta parameters move.
TrainedModel finetune_warm(const TrainedModel& model, const DomainPair& pair,
                           const SplitPlan& split, int steps, double lr);

// Deterministic transfer of one source user (encoder at the mean, real
// valence sets only).
Vec map_user_cold(const TrainedModel& model, const DomainPair& pair,
                  int src_user);

std::vector<std::pair<int, double>> recommend(
    const TrainedModel& model, const DomainPair& pair,
    const std::string& user_id, int k, const std::vector<int>& candidates);

void save_checkpoint(const std::string& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::string& path);

std::string cvpm_config_text(const CvpmConfig& cfg);
CvpmConfig cvpm_config_from_text(const std::string& text);

}  // namespace cvpm
