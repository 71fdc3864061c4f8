#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvpm/autograd.hpp"
#include "cvpm/numeric.hpp"

namespace cvpm {

struct MlpLayer {
  Mat w;
  Mat b;
};

// Two-layer perceptron, ReLU between layers; parameter names derive from the
// prefix so distinct networks coexist in one gradient bundle.
struct MappingParams {
  std::string prefix;
  std::vector<MlpLayer> layers;

  int in_dim() const { return layers.front().w.cols; }
  int out_dim() const { return layers.back().w.rows; }
  static MappingParams init(const std::string& prefix, int in, int hidden,
                            int out, uint64_t seed);
  std::vector<ParamRef> refs();
};

// Emits a flattened d_tgt x d_src matrix w; the personalized bias is
// w u_s / sqrt(d_src) (scale optional for constructed-weight tests).
struct MetaParams {
  MappingParams net;
  int d_src = 0;
  int d_tgt = 0;
  bool scaled = true;

  static MetaParams init(const std::string& prefix, int in, int hidden,
                         int d_src, int d_tgt, uint64_t seed);
  std::vector<ParamRef> refs() { return net.refs(); }
};

// Concatenation [z_pos || z_neg].
Vec fuse_preferences(const Vec& z_pos, const Vec& z_neg);

Vec mlp_forward(const Vec& x, const MappingParams& p);
Vec common_map(const Vec& p_s, const MappingParams& theta);
Vec meta_bias(const Vec& p_s, const Vec& u_s, const MetaParams& theta_meta);

struct TransferResult {
  Vec fused;
  Vec common;
  Vec bias;
  Vec mapped;
};

TransferResult transfer_user(const Vec& u_s, const Vec& z_pos,
                             const Vec& z_neg, const MappingParams& theta,
                             const MetaParams& theta_meta,
                             bool use_bias = true);

Tape::Var mlp_forward_t(Tape& t, Tape::Var x, MappingParams& p);
Tape::Var meta_bias_t(Tape& t, Tape::Var p_s, const Vec& u_s,
                      MetaParams& theta_meta);

// Versioned tensor container: config text plus named, shape-headed fp64
// tensors. Backs model checkpoints.
void save_tensors(const std::string& path, const std::string& config_text,
                  const std::vector<std::pair<std::string, const Mat*>>& tensors);
struct TensorFile {
  std::string config_text;
  std::vector<std::pair<std::string, Mat>> tensors;
  const Mat& get(const std::string& name) const;
};
TensorFile load_tensors(const std::string& path);

}  // namespace cvpm
