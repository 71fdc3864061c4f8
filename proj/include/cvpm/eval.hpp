#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cvpm/data.hpp"
#include "cvpm/mf.hpp"
#include "cvpm/numeric.hpp"

namespace cvpm {

// One leave-one-out ranking question: scores are stored positive-first,
// then the negatives in draw order.
struct RankingInstance {
  int positive_item = -1;
  std::vector<int> negatives;
  Vec scores;
};

// 1-based rank of the positive among the candidates; ties resolve by
// ascending item index.
int positive_rank(const RankingInstance& inst);
double hit_at_k(int rank, int k);
double ndcg_at_k(int rank, int k);

double mae(const Vec& predicted, const Vec& actual);
double rmse(const Vec& predicted, const Vec& actual);

struct EvalConfig {
  std::vector<int> ks = {1, 3, 5};
  int n_negatives = 4;
  uint64_t seed = 0;
};

struct MetricsReport {
  std::string protocol;  // cold | warm
  std::string mode;      // cdr | csr
  double train_ratio = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  std::map<int, double> hit;
  std::map<int, double> ndcg;
  int n_users = 0;
  int n_instances = 0;
};

// Produces the mapped target-space vector for a test user id.
using UserVecFn = std::function<Vec(const std::string&)>;

MetricsReport evaluate_cold(const DomainPair& pair, const SplitPlan& split,
                            const UserVecFn& user_vec,
                            const EmbeddingTable& v_tgt,
                            const EvalConfig& cfg);

// Scores only the held-back eval half of each warm user's records.
MetricsReport evaluate_warm(const DomainPair& pair, const SplitPlan& split,
                            const UserVecFn& user_vec,
                            const EmbeddingTable& v_tgt,
                            const EvalConfig& cfg);

void write_report_kv(std::ostream& out, const MetricsReport& r);
void write_report_jsonl(std::ostream& out, const MetricsReport& r);
std::string report_table(
    const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace cvpm
