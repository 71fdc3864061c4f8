#include "cvpm/transfer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cvpm/rng.hpp"

namespace cvpm {

namespace {

Mat init_mat(int rows, int cols, double stddev, uint64_t seed) {
  Mat m(rows, cols);
  Rng rng(seed);
  for (double& x : m.data) x = rng.normal(0.0, stddev);
  return m;
}

}  // namespace

MappingParams MappingParams::init(const std::string& prefix, int in, int hidden,
                                  int out, uint64_t seed) {
  if (in < 1 || hidden < 1 || out < 1) {
    throw ConfigError("mapping init: dims must be positive");
  }
  MappingParams p;
  p.prefix = prefix;
  MlpLayer l0;
  l0.w = init_mat(hidden, in, std::sqrt(2.0 / double(in)),
                  derive_seed(seed, seed_tag(prefix + ".0.w")));
  l0.b = Mat(hidden, 1);
  MlpLayer l1;
  l1.w = init_mat(out, hidden, std::sqrt(1.0 / double(hidden)),
                  derive_seed(seed, seed_tag(prefix + ".1.w")));
  l1.b = Mat(out, 1);
  p.layers.push_back(std::move(l0));
  p.layers.push_back(std::move(l1));
  return p;
}

std::vector<ParamRef> MappingParams::refs() {
  std::vector<ParamRef> out;
  for (size_t i = 0; i < layers.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".w", &layers[i].w});
    out.push_back({prefix + "." + std::to_string(i) + ".b", &layers[i].b});
  }
  return out;
}

MetaParams MetaParams::init(const std::string& prefix, int in, int hidden,
                            int d_src, int d_tgt, uint64_t seed) {
  MetaParams p;
  p.d_src = d_src;
  p.d_tgt = d_tgt;
  p.net = MappingParams::init(prefix, in, hidden, d_src * d_tgt, seed);
  return p;
}

Vec fuse_preferences(const Vec& z_pos, const Vec& z_neg) {
  if (z_pos.size() != z_neg.size()) {
    throw ShapeError("fuse_preferences: dims " + std::to_string(z_pos.size()) +
                     " vs " + std::to_string(z_neg.size()));
  }
  return concat(z_pos, z_neg);
}

Vec mlp_forward(const Vec& x, const MappingParams& p) {
  Vec h = relu(affine(x, p.layers[0].w, p.layers[0].b.data));
  return affine(h, p.layers[1].w, p.layers[1].b.data);
}

Vec common_map(const Vec& p_s, const MappingParams& theta) {
  return mlp_forward(p_s, theta);
}

Vec meta_bias(const Vec& p_s, const Vec& u_s, const MetaParams& theta_meta) {
  if (int(u_s.size()) != theta_meta.d_src) {
    throw ShapeError("meta_bias: u_s dim " + std::to_string(u_s.size()) +
                     " vs d_src " + std::to_string(theta_meta.d_src));
  }
  Vec flat = mlp_forward(p_s, theta_meta.net);
  double s = theta_meta.scaled ? 1.0 / std::sqrt(double(theta_meta.d_src)) : 1.0;
  Vec bias(theta_meta.d_tgt, 0.0);
  for (int r = 0; r < theta_meta.d_tgt; ++r) {
    double acc = 0.0;
    for (int c = 0; c < theta_meta.d_src; ++c) {
      acc += flat[size_t(r) * theta_meta.d_src + c] * u_s[c];
    }
    bias[r] = s * acc;
  }
  return bias;
}

TransferResult transfer_user(const Vec& u_s, const Vec& z_pos,
                             const Vec& z_neg, const MappingParams& theta,
                             const MetaParams& theta_meta, bool use_bias) {
  TransferResult out;
  out.fused = fuse_preferences(z_pos, z_neg);
  out.common = common_map(out.fused, theta);
  out.bias = use_bias ? meta_bias(out.fused, u_s, theta_meta)
                      : Vec(out.common.size(), 0.0);
  out.mapped = add(out.common, out.bias);
  return out;
}

Tape::Var mlp_forward_t(Tape& t, Tape::Var x, MappingParams& p) {
  auto rs = p.refs();
  Tape::Var w0 = t.param(rs[0]);
  Tape::Var b0 = t.param(rs[1]);
  Tape::Var w1 = t.param(rs[2]);
  Tape::Var b1 = t.param(rs[3]);
  Tape::Var h = t.relu(t.affine(x, w0, b0));
  return t.affine(h, w1, b1);
}

Tape::Var meta_bias_t(Tape& t, Tape::Var p_s, const Vec& u_s,
                      MetaParams& theta_meta) {
  Tape::Var flat = mlp_forward_t(t, p_s, theta_meta.net);
  double s = theta_meta.scaled ? 1.0 / std::sqrt(double(theta_meta.d_src)) : 1.0;
  return t.flat_matvec(flat, u_s, theta_meta.d_tgt, s);
}

namespace {

constexpr char kTensorMagic[8] = {'C', 'V', 'P', 'M', 'C', 'K', 'P', '1'};

}  // namespace

void save_tensors(
    const std::string& path, const std::string& config_text,
    const std::vector<std::pair<std::string, const Mat*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kTensorMagic, sizeof(kTensorMagic));
  uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint64_t cfg_len = config_text.size();
  out.write(reinterpret_cast<const char*>(&cfg_len), sizeof(cfg_len));
  out.write(config_text.data(), std::streamsize(cfg_len));
  uint32_t count = uint32_t(tensors.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, mat] : tensors) {
    uint32_t name_len = uint32_t(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(name.data(), name_len);
    uint32_t shape[2] = {uint32_t(mat->rows), uint32_t(mat->cols)};
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
    out.write(reinterpret_cast<const char*>(mat->data.data()),
              std::streamsize(mat->data.size() * sizeof(double)));
  }
}

const Mat& TensorFile::get(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw DataError("checkpoint: missing tensor " + name);
}

TensorFile load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw ParseError(path + ": not a checkpoint file");
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1) {
    throw ParseError(path + ": unsupported checkpoint version");
  }
  uint64_t cfg_len = 0;
  in.read(reinterpret_cast<char*>(&cfg_len), sizeof(cfg_len));
  TensorFile tf;
  tf.config_text.resize(cfg_len);
  in.read(tf.config_text.data(), std::streamsize(cfg_len));
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in) throw ParseError(path + ": truncated header");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t shape[2];
    in.read(reinterpret_cast<char*>(shape), sizeof(shape));
    Mat m(static_cast<int>(shape[0]), static_cast<int>(shape[1]));
    in.read(reinterpret_cast<char*>(m.data.data()),
            std::streamsize(m.data.size() * sizeof(double)));
    if (!in) throw ParseError(path + ": truncated tensor " + name);
    tf.tensors.emplace_back(std::move(name), std::move(m));
  }
  return tf;
}

}  // namespace cvpm
