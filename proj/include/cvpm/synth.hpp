#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvpm/data.hpp"
#include "cvpm/numeric.hpp"

namespace cvpm {

enum class MapKind { Identity, Linear, Tanh };
enum class OverlapSide { User, Item };

const char* map_kind_name(MapKind k);
MapKind map_kind_from_name(const std::string& name);

struct SynthConfig {
  int n_users_src = 2000;
  int n_users_tgt = 1000;
  int overlap_count = 300;
  int n_items_src = 500;
  int n_items_tgt = 500;
  int dim = 10;
  MapKind map_kind = MapKind::Linear;
  OverlapSide overlap_side = OverlapSide::User;
  double rating_noise = 0.3;
  double map_noise = 0.1;
  double density_src = 0.04;
  double density_tgt = 0.02;
  double min_rating = 1.0;
  double max_rating = 5.0;
  double popularity_exponent = 1.0;
  uint64_t seed = 0;
};

// Planted latents behind the generated interactions.
struct SynthTruth {
  Mat users_src;
  Mat users_tgt;
  Mat items_src;
  Mat items_tgt;
  Mat map_a;  // cross-domain bridge applied to the overlapping side
  MapKind map_kind = MapKind::Linear;
  OverlapSide overlap_side = OverlapSide::User;
  std::vector<std::string> overlap_ids;
};

struct SynthData {
  InteractionSet raw_source;
  InteractionSet raw_target;
  DomainPair pair;
  SynthTruth truth;
};

// Deterministic generator: same config, same corpus.
SynthData generate_synth(const SynthConfig& cfg);

// Noise-free rating a planted user/item latent pair implies.
double ideal_rating(const Vec& u, const Vec& v, double min_rating,
                    double max_rating);

void save_truth(const std::string& path, const SynthTruth& truth);

}  // namespace cvpm
