#include "cvpm/mf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "cvpm/rng.hpp"

namespace cvpm {

double predict_score(const Vec& u, const Vec& v) { return dot(u, v); }

double mf_loss(const Mat& u, const Mat& v,
               const std::vector<Interaction>& records, double reg) {
  if (records.empty()) throw DataError("mf_loss: no records");
  double data_term = 0.0;
  for (const Interaction& r : records) {
    const double* ur = u.row_ptr(r.user);
    const double* vr = v.row_ptr(r.item);
    double e = -r.rating;
    for (int c = 0; c < u.cols; ++c) e += ur[c] * vr[c];
    data_term += e * e;
  }
  data_term /= double(records.size());
  double reg_term = 0.0;
  if (reg > 0.0) {
    for (double x : u.data) reg_term += x * x;
    for (double x : v.data) reg_term += x * x;
  }
  return data_term + reg * reg_term;
}

void mf_grads(const Mat& u, const Mat& v,
              const std::vector<Interaction>& records, double reg, Mat& gu,
              Mat& gv) {
  gu = Mat(u.rows, u.cols);
  gv = Mat(v.rows, v.cols);
  double inv = 2.0 / double(records.size());
  for (const Interaction& r : records) {
    const double* ur = u.row_ptr(r.user);
    const double* vr = v.row_ptr(r.item);
    double e = -r.rating;
    for (int c = 0; c < u.cols; ++c) e += ur[c] * vr[c];
    double coef = inv * e;
    double* gur = gu.row_ptr(r.user);
    double* gvr = gv.row_ptr(r.item);
    for (int c = 0; c < u.cols; ++c) {
      gur[c] += coef * vr[c];
      gvr[c] += coef * ur[c];
    }
  }
  if (reg > 0.0) {
    for (size_t i = 0; i < u.data.size(); ++i) gu.data[i] += 2.0 * reg * u.data[i];
    for (size_t i = 0; i < v.data.size(); ++i) gv.data[i] += 2.0 * reg * v.data[i];
  }
}

namespace {

void validate_mf_config(const MfConfig& cfg) {
  if (cfg.dim < 1) throw ConfigError("mf: dim must be >= 1");
  if (cfg.reg < 0.0) throw ConfigError("mf: reg must be >= 0");
  if (cfg.lr <= 0.0) throw ConfigError("mf: lr must be > 0");
  if (cfg.epochs < 0) throw ConfigError("mf: epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("mf: batch_size must be >= 1");
}

Mat init_table(int rows, int dim, double stddev, uint64_t seed) {
  Mat m(rows, dim);
  Rng rng(seed);
  for (double& x : m.data) x = rng.normal(0.0, stddev);
  return m;
}

// Lazy row-wise Adam: moments update only on touched rows, bias correction
// uses the global step count.
struct SparseAdam {
  Mat m, v;
  explicit SparseAdam(int rows, int cols) : m(rows, cols), v(rows, cols) {}

  void update_row(Mat& p, int row, const Vec& g, int t, const MfConfig& cfg) {
    double bc1 = 1.0 - std::pow(0.9, t);
    double bc2 = 1.0 - std::pow(0.999, t);
    double* pr = p.row_ptr(row);
    double* mr = m.row_ptr(row);
    double* vr = v.row_ptr(row);
    for (int c = 0; c < p.cols; ++c) {
      mr[c] = 0.9 * mr[c] + 0.1 * g[c];
      vr[c] = 0.999 * vr[c] + 0.001 * g[c] * g[c];
      double mh = mr[c] / bc1;
      double vh = vr[c] / bc2;
      pr[c] -= cfg.lr * (mh / (std::sqrt(vh) + 1e-8) +
                         cfg.weight_decay * pr[c]);
    }
  }
};

}  // namespace

std::pair<EmbeddingTable, EmbeddingTable> train_mf(
    const InteractionSet& data, const MfConfig& cfg,
    std::vector<double>* epoch_losses) {
  validate_mf_config(cfg);
  if (data.records.empty()) {
    throw DataError("train_mf: interaction set has no records");
  }
  EmbeddingTable ut;
  EmbeddingTable vt;
  ut.dim = cfg.dim;
  vt.dim = cfg.dim;
  ut.ids = data.user_ids;
  vt.ids = data.item_ids;
  ut.vectors = init_table(data.user_count(), cfg.dim, cfg.init_std,
                          derive_seed(cfg.seed, seed_tag("mf.U")));
  vt.vectors = init_table(data.item_count(), cfg.dim, cfg.init_std,
                          derive_seed(cfg.seed, seed_tag("mf.V")));

  SparseAdam adam_u(data.user_count(), cfg.dim);
  SparseAdam adam_v(data.item_count(), cfg.dim);
  int t = 0;
  std::vector<int> order(data.records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  double prev_loss = 0.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> shuffled =
        epoch_shuffle(order, derive_seed(cfg.seed, seed_tag("mf")), epoch);
    for (size_t start = 0; start < shuffled.size();
         start += size_t(cfg.batch_size)) {
      size_t end = std::min(shuffled.size(), start + size_t(cfg.batch_size));
      double inv = 2.0 / double(end - start);
      std::map<int, Vec> gu;
      std::map<int, Vec> gv;
      for (size_t i = start; i < end; ++i) {
        const Interaction& r = data.records[shuffled[i]];
        const double* ur = ut.vectors.row_ptr(r.user);
        const double* vr = vt.vectors.row_ptr(r.item);
        double e = -r.rating;
        for (int c = 0; c < cfg.dim; ++c) e += ur[c] * vr[c];
        double coef = inv * e;
        Vec& gur = gu.try_emplace(r.user, Vec(cfg.dim, 0.0)).first->second;
        Vec& gvr = gv.try_emplace(r.item, Vec(cfg.dim, 0.0)).first->second;
        for (int c = 0; c < cfg.dim; ++c) {
          gur[c] += coef * vr[c];
          gvr[c] += coef * ur[c];
        }
      }
      if (cfg.reg > 0.0) {
        for (auto& [row, g] : gu) {
          const double* pr = ut.vectors.row_ptr(row);
          for (int c = 0; c < cfg.dim; ++c) g[c] += 2.0 * cfg.reg * pr[c];
        }
        for (auto& [row, g] : gv) {
          const double* pr = vt.vectors.row_ptr(row);
          for (int c = 0; c < cfg.dim; ++c) g[c] += 2.0 * cfg.reg * pr[c];
        }
      }
      ++t;
      for (const auto& [row, g] : gu) {
        adam_u.update_row(ut.vectors, row, g, t, cfg);
      }
      for (const auto& [row, g] : gv) {
        adam_v.update_row(vt.vectors, row, g, t, cfg);
      }
    }
    double loss = mf_loss(ut.vectors, vt.vectors, data.records, cfg.reg);
    if (!std::isfinite(loss)) {
      throw TrainError("train_mf: loss diverged at epoch " +
                       std::to_string(epoch));
    }
    if (epoch_losses) epoch_losses->push_back(loss);
    if (epoch > 1) {
      double rel = (prev_loss - loss) / std::max(std::abs(prev_loss), 1e-12);
      if (rel < cfg.early_stop_rel) break;
    }
    prev_loss = loss;
  }
  return {std::move(ut), std::move(vt)};
}

namespace {

constexpr char kTableMagic[8] = {'C', 'V', 'P', 'M', 'E', 'M', 'B', '1'};

}  // namespace

void save_table(const std::string& path, const EmbeddingTable& t) {
  if (int(t.ids.size()) != t.count()) {
    throw ValidationError("save_table: " + std::to_string(t.ids.size()) +
                          " ids for " + std::to_string(t.count()) + " rows");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write table: " + path);
  out.write(kTableMagic, sizeof(kTableMagic));
  uint32_t header[3] = {1u, uint32_t(t.count()), uint32_t(t.dim)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(t.vectors.data.data()),
            std::streamsize(t.vectors.data.size() * sizeof(double)));
  std::ofstream ids(path + ".ids");
  if (!ids) throw DataError("cannot write id sidecar: " + path + ".ids");
  for (const std::string& id : t.ids) ids << id << '\n';
}

EmbeddingTable load_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open table: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTableMagic, sizeof(magic)) != 0) {
    throw ParseError(path + ": not an embedding table file");
  }
  uint32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] != 1u) {
    throw ParseError(path + ": unsupported table version");
  }
  EmbeddingTable t;
  t.dim = int(header[2]);
  t.vectors = Mat(int(header[1]), t.dim);
  in.read(reinterpret_cast<char*>(t.vectors.data.data()),
          std::streamsize(t.vectors.data.size() * sizeof(double)));
  if (!in) throw ParseError(path + ": truncated payload");
  std::ifstream ids(path + ".ids");
  if (!ids) throw DataError("cannot open id sidecar: " + path + ".ids");
  std::string line;
  while (std::getline(ids, line)) t.ids.push_back(line);
  if (int(t.ids.size()) != t.count()) {
    throw ParseError(path + ".ids: " + std::to_string(t.ids.size()) +
                     " ids for " + std::to_string(t.count()) + " rows");
  }
  return t;
}

}  // namespace cvpm
