#include "cvpm/valence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace cvpm {

std::vector<int> ValenceSets::all_pos() const {
  std::vector<int> out = pos;
  out.insert(out.end(), pos_aug.begin(), pos_aug.end());
  return out;
}

std::vector<int> ValenceSets::all_neg() const {
  std::vector<int> out = neg;
  out.insert(out.end(), neg_aug.begin(), neg_aug.end());
  return out;
}

ValenceSets median_split(const std::vector<std::pair<int, double>>& history) {
  if (history.empty()) throw ValidationError("median_split: empty history");
  Vec ratings;
  ratings.reserve(history.size());
  for (const auto& [item, rating] : history) ratings.push_back(rating);
  std::sort(ratings.begin(), ratings.end());
  size_t n = ratings.size();
  double median = n % 2 == 1
                      ? ratings[n / 2]
                      : 0.5 * (ratings[n / 2 - 1] + ratings[n / 2]);
  ValenceSets sets;
  sets.median = median;
  for (const auto& [item, rating] : history) {
    if (rating >= median) {
      sets.pos.push_back(item);
    } else {
      sets.neg.push_back(item);
    }
  }
  return sets;
}

Vec mean_pool(const std::vector<int>& items, const EmbeddingTable& v) {
  if (items.empty()) throw ValidationError("mean_pool: empty item set");
  Vec out(v.dim, 0.0);
  for (int idx : items) {
    const double* row = v.vectors.row_ptr(idx);
    for (int c = 0; c < v.dim; ++c) out[c] += row[c];
  }
  double inv = 1.0 / double(items.size());
  for (double& x : out) x *= inv;
  return out;
}

Candidates generate_candidates(const Vec& u, const EmbeddingTable& v,
                               const std::vector<char>& exclude, int n_dot_pos,
                               int n_dot_neg, std::ostream* log) {
  if (int(u.size()) != v.dim) {
    throw ShapeError("generate_candidates: user dim " +
                     std::to_string(u.size()) + " vs table dim " +
                     std::to_string(v.dim));
  }
  if (!exclude.empty() && int(exclude.size()) != v.count()) {
    throw ShapeError("generate_candidates: exclude mask size " +
                     std::to_string(exclude.size()) + " vs " +
                     std::to_string(v.count()) + " items");
  }
  std::vector<std::pair<double, int>> scored;
  for (int j = 0; j < v.count(); ++j) {
    if (!exclude.empty() && exclude[j]) continue;
    scored.emplace_back(predict_score(u, v.row(j)), j);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  int avail = int(scored.size());
  int need = n_dot_pos + n_dot_neg;
  int n_pos = n_dot_pos;
  int n_neg = n_dot_neg;
  if (avail < need && need > 0) {
    n_pos = n_dot_pos * avail / need;
    n_neg = n_dot_neg * avail / need;
    if (log) {
      *log << "candidates: only " << avail << " items available for "
           << need << " requested; shrunk to " << n_pos << "+" << n_neg
           << '\n';
    }
  }
  Candidates cands;
  for (int i = 0; i < n_pos; ++i) cands.pos.push_back(scored[i].second);
  for (int i = avail - n_neg; i < avail; ++i) {
    cands.neg.push_back(scored[i].second);
  }
  return cands;
}

Vec sampling_probs_negative(const std::vector<int64_t>& counts,
                            std::ostream* log) {
  if (counts.empty()) {
    throw ValidationError("sampling_probs_negative: no candidates");
  }
  Vec smoothed(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] <= 0) {
      if (log) {
        *log << "negative sampling: zero popularity at candidate " << i
             << ", smoothed to 1\n";
      }
      smoothed[i] = 1.0;
    } else {
      smoothed[i] = double(counts[i]);
    }
  }
  double total = sum(smoothed);
  Vec scores(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    scores[i] = sigmoid(total / smoothed[i]);
  }
  return scale(scores, 1.0 / sum(scores));
}

Vec sampling_probs_positive(const std::vector<int64_t>& counts,
                            const std::vector<int>& df,
                            int n_users_with_candidates) {
  if (counts.empty()) {
    throw ValidationError("sampling_probs_positive: no candidates");
  }
  if (counts.size() != df.size()) {
    throw ShapeError("sampling_probs_positive: " +
                     std::to_string(counts.size()) + " counts vs " +
                     std::to_string(df.size()) + " document frequencies");
  }
  double total = 0.0;
  for (int64_t c : counts) {
    if (c < 1) {
      throw ValidationError("sampling_probs_positive: count below 1");
    }
    total += double(c);
  }
  Vec scores(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    double d = df[i] < 1 ? 1.0 : double(df[i]);
    double tf = double(counts[i]) / total;
    double idf =
        std::max(0.0, std::log10(double(n_users_with_candidates) / d));
    scores[i] = sigmoid(tf * idf);
  }
  return scale(scores, 1.0 / sum(scores));
}

std::vector<int> weighted_sample_without_replacement(const Vec& probs, int n,
                                                     Rng& rng) {
  if (n > int(probs.size())) {
    throw ValidationError("weighted sample: " + std::to_string(n) +
                          " draws from " + std::to_string(probs.size()) +
                          " candidates");
  }
  Vec weights = probs;
  for (double w : weights) {
    if (w < 0.0) throw ValidationError("weighted sample: negative weight");
  }
  std::vector<int> out;
  out.reserve(n);
  for (int draw = 0; draw < n; ++draw) {
    double total = sum(weights);
    if (total <= 0.0) {
      throw ValidationError("weighted sample: no remaining weight");
    }
    double r = rng.uniform() * total;
    double acc = 0.0;
    int picked = -1;
    for (size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      acc += weights[i];
      if (r < acc) {
        picked = int(i);
        break;
      }
    }
    if (picked < 0) {
      for (int i = int(weights.size()) - 1; i >= 0; --i) {
        if (weights[i] > 0.0) {
          picked = i;
          break;
        }
      }
    }
    out.push_back(picked);
    weights[picked] = 0.0;
  }
  return out;
}

void augment(ValenceSets& sets, const Candidates& cands, const Vec& probs_pos,
             const Vec& probs_neg, int n_ddot_pos, int n_ddot_neg, Rng& rng) {
  sets.pos_aug.clear();
  sets.neg_aug.clear();
  int n_pos = std::min(n_ddot_pos, int(cands.pos.size()));
  int n_neg = std::min(n_ddot_neg, int(cands.neg.size()));
  if (n_pos > 0) {
    for (int i : weighted_sample_without_replacement(probs_pos, n_pos, rng)) {
      sets.pos_aug.push_back(cands.pos[i]);
    }
  }
  if (n_neg > 0) {
    for (int i : weighted_sample_without_replacement(probs_neg, n_neg, rng)) {
      sets.neg_aug.push_back(cands.neg[i]);
    }
  }
}

Mat rows_from(const EmbeddingTable& table, const std::vector<int>& indices) {
  Mat out(int(indices.size()), table.dim);
  for (size_t r = 0; r < indices.size(); ++r) {
    const double* src = table.vectors.row_ptr(indices[r]);
    std::copy(src, src + table.dim, out.row_ptr(int(r)));
  }
  return out;
}

Vec attention_pool(const Mat& items, const Mat& head) {
  if (items.rows == 0) throw ValidationError("attention_pool: empty item list");
  if (head.rows != items.cols || head.cols != 1) {
    throw ShapeError("attention_pool: head " + shape_str(head) +
                     " vs items " + shape_str(items));
  }
  Vec logits(items.rows);
  for (int r = 0; r < items.rows; ++r) {
    logits[r] = dot(items.row(r), head.data);
  }
  Vec alpha = softmax(logits);
  Vec out(items.cols, 0.0);
  for (int r = 0; r < items.rows; ++r) {
    const double* row = items.row_ptr(r);
    for (int c = 0; c < items.cols; ++c) out[c] += alpha[r] * row[c];
  }
  return out;
}

EncodedValence encode_valence(const Vec& p, const Mat& proj, const Mat& w_mu,
                              const Mat& w_sigma, const Vec* eps) {
  Vec h = relu(matvec(proj, p));
  EncodedValence out;
  out.mu = matvec(w_mu, h);
  Vec log_sigma = matvec(w_sigma, h);
  out.sigma.resize(log_sigma.size());
  for (size_t i = 0; i < log_sigma.size(); ++i) {
    out.sigma[i] = std::exp(std::clamp(log_sigma[i], -10.0, 10.0));
  }
  if (eps) {
    if (eps->size() != out.mu.size()) {
      throw ShapeError("encode_valence: eps dim " +
                       std::to_string(eps->size()) + " vs z dim " +
                       std::to_string(out.mu.size()));
    }
    out.z = add(out.mu, hadamard(*eps, out.sigma));
  } else {
    out.z = out.mu;
  }
  return out;
}

namespace {

Mat init_mat(int rows, int cols, double stddev, uint64_t seed) {
  Mat m(rows, cols);
  Rng rng(seed);
  for (double& x : m.data) x = rng.normal(0.0, stddev);
  return m;
}

}  // namespace

ValenceEncoderParams ValenceEncoderParams::init(int d, uint64_t seed) {
  ValenceEncoderParams p;
  auto make = [&](const char* name, int rows, int cols, double stddev) {
    return init_mat(rows, cols, stddev, derive_seed(seed, seed_tag(name)));
  };
  double att_std = 1.0 / std::sqrt(double(d));
  double lin_std = std::sqrt(2.0 / double(d));
  p.att_pos = make("enc.att_pos", d, 1, att_std);
  p.att_neg = make("enc.att_neg", d, 1, att_std);
  p.proj_pos = make("enc.proj_pos", d, d, lin_std);
  p.proj_neg = make("enc.proj_neg", d, d, lin_std);
  p.mu_pos = make("enc.mu_pos", d, d, lin_std);
  p.sigma_pos = make("enc.sigma_pos", d, d, lin_std);
  p.mu_neg = make("enc.mu_neg", d, d, lin_std);
  p.sigma_neg = make("enc.sigma_neg", d, d, lin_std);
  return p;
}

std::vector<ParamRef> ValenceEncoderParams::refs() {
  return {
      {"enc.att_pos", &att_pos},     {"enc.att_neg", &att_neg},
      {"enc.proj_pos", &proj_pos},   {"enc.proj_neg", &proj_neg},
      {"enc.mu_pos", &mu_pos},       {"enc.sigma_pos", &sigma_pos},
      {"enc.mu_neg", &mu_neg},       {"enc.sigma_neg", &sigma_neg},
  };
}

Tape::Var attention_pool_t(Tape& t, const std::shared_ptr<const Mat>& items,
                           Tape::Var head) {
  if (items->rows == 0) {
    throw ValidationError("attention_pool: empty item list");
  }
  Tape::Var logits = t.const_matvec(items, head);
  Tape::Var alpha = t.softmax(logits);
  return t.const_matvec_t(items, alpha);
}

Tape::Var encode_valence_t(Tape& t, Tape::Var p, Tape::Var proj,
                           Tape::Var w_mu, Tape::Var w_sigma, const Vec* eps) {
  Tape::Var h = t.relu(t.matvec(proj, p));
  Tape::Var mu = t.matvec(w_mu, h);
  if (!eps) return mu;
  Tape::Var sigma = t.exp_clamp(t.matvec(w_sigma, h), -10.0, 10.0);
  return t.add(mu, t.mul_const(sigma, *eps));
}

}  // namespace cvpm
