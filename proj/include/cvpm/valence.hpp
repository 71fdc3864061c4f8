#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <utility>
#include <vector>

#include "cvpm/autograd.hpp"
#include "cvpm/mf.hpp"
#include "cvpm/rng.hpp"

namespace cvpm {

// Item indices above/below the user's median rating; sampled complements kept
// separate so real interactions stay distinguishable.
struct ValenceSets {
  std::vector<int> pos;
  std::vector<int> neg;
  std::vector<int> pos_aug;
  std::vector<int> neg_aug;
  double median = 0.0;

  std::vector<int> all_pos() const;
  std::vector<int> all_neg() const;
};

// Median of the user's ratings (mean of middles for even counts); rating >= M
// goes positive, < M negative.
ValenceSets median_split(const std::vector<std::pair<int, double>>& history);

Vec mean_pool(const std::vector<int>& items, const EmbeddingTable& v);

struct Candidates {
  std::vector<int> pos;
  std::vector<int> neg;
};

// Scores every non-excluded item, sorts descending (ties by ascending index),
// takes the head as positive candidates and the tail as negative. Shrinks both
// counts proportionally when items run short, logging a warning.
Candidates generate_candidates(const Vec& u, const EmbeddingTable& v,
                               const std::vector<char>& exclude, int n_dot_pos,
                               int n_dot_neg, std::ostream* log = nullptr);

// Reciprocal-popularity scores sigmoid(sum(n)/n_j), renormalized to sum 1.
// Zero counts are smoothed to 1 and logged.
Vec sampling_probs_negative(const std::vector<int64_t>& counts,
                            std::ostream* log = nullptr);

// tf-idf scores sigmoid(tf_j * idf_j), tf over the user's candidate counts,
// idf = log10(users_with_candidates / df_j) clamped below at 0, renormalized.
Vec sampling_probs_positive(const std::vector<int64_t>& counts,
                            const std::vector<int>& df,
                            int n_users_with_candidates);

// Sequential draws proportional to remaining weight; result in draw order.
std::vector<int> weighted_sample_without_replacement(const Vec& probs, int n,
                                                     Rng& rng);

// Refills the augmented sides by weighted sampling from the candidates;
// counts clamp to candidate list sizes.
void augment(ValenceSets& sets, const Candidates& cands, const Vec& probs_pos,
             const Vec& probs_neg, int n_ddot_pos, int n_ddot_neg, Rng& rng);

Mat rows_from(const EmbeddingTable& table, const std::vector<int>& indices);

// Softmax over per-item logits v_j . head, output in the convex hull of rows.
Vec attention_pool(const Mat& items, const Mat& head);

struct EncodedValence {
  Vec mu;
  Vec sigma;
  Vec z;
};

// h = relu(proj p); mu = W_mu h; sigma = exp(clamp(W_sigma h, [-10,10]));
// z = mu + eps*sigma, or exactly mu when eps is null (inference).
EncodedValence encode_valence(const Vec& p, const Mat& proj, const Mat& w_mu,
                              const Mat& w_sigma, const Vec* eps);

// One attention head, projection, and Gaussian heads per valence side; no
// bias terms anywhere in the encoder.
struct ValenceEncoderParams {
  Mat att_pos;
  Mat att_neg;
  Mat proj_pos;
  Mat proj_neg;
  Mat mu_pos;
  Mat sigma_pos;
  Mat mu_neg;
  Mat sigma_neg;

  static ValenceEncoderParams init(int d, uint64_t seed);
  std::vector<ParamRef> refs();
};

Tape::Var attention_pool_t(Tape& t, const std::shared_ptr<const Mat>& items,
                           Tape::Var head);
Tape::Var encode_valence_t(Tape& t, Tape::Var p, Tape::Var proj,
                           Tape::Var w_mu, Tape::Var w_sigma, const Vec* eps);

}  // namespace cvpm
