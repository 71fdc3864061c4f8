#include "cvpm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "cvpm/rng.hpp"

namespace cvpm {

int positive_rank(const RankingInstance& inst) {
  size_t n = inst.negatives.size() + 1;
  if (inst.scores.size() != n) {
    throw ShapeError("positive_rank: " + std::to_string(inst.scores.size()) +
                     " scores for " + std::to_string(n) + " candidates");
  }
  std::unordered_set<int> seen{inst.positive_item};
  for (int item : inst.negatives) {
    if (!seen.insert(item).second) {
      throw ValidationError("positive_rank: duplicate candidate item " +
                            std::to_string(item));
    }
  }
  double pos_score = inst.scores[0];
  int rank = 1;
  for (size_t j = 0; j < inst.negatives.size(); ++j) {
    double s = inst.scores[j + 1];
    if (s > pos_score ||
        (s == pos_score && inst.negatives[j] < inst.positive_item)) {
      ++rank;
    }
  }
  return rank;
}

double hit_at_k(int rank, int k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(int rank, int k) {
  return rank <= k ? 1.0 / std::log2(double(rank) + 1.0) : 0.0;
}

double mae(const Vec& predicted, const Vec& actual) {
  if (predicted.size() != actual.size()) {
    throw ShapeError("mae: " + std::to_string(predicted.size()) + " vs " +
                     std::to_string(actual.size()) + " values");
  }
  if (predicted.empty()) throw EvalError("mae: no predictions");
  double acc = 0.0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    acc += std::fabs(predicted[i] - actual[i]);
  }
  return acc / double(predicted.size());
}

double rmse(const Vec& predicted, const Vec& actual) {
  if (predicted.size() != actual.size()) {
    throw ShapeError("rmse: " + std::to_string(predicted.size()) + " vs " +
                     std::to_string(actual.size()) + " values");
  }
  if (predicted.empty()) throw EvalError("rmse: no predictions");
  double acc = 0.0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    double e = predicted[i] - actual[i];
    acc += e * e;
  }
  return std::sqrt(acc / double(predicted.size()));
}

namespace {

void validate_eval_config(const EvalConfig& cfg) {
  if (cfg.n_negatives < 1) {
    throw ConfigError("eval: n_negatives must be >= 1");
  }
  if (cfg.ks.empty()) throw ConfigError("eval: no cutoffs given");
  for (int k : cfg.ks) {
    if (k < 1) throw ConfigError("eval: cutoff must be >= 1");
  }
}

MetricsReport evaluate_users(
    const DomainPair& pair, const std::vector<std::string>& users,
    const std::function<std::vector<int>(int)>& eval_records_of,
    const UserVecFn& user_vec, const EmbeddingTable& v_tgt,
    const EvalConfig& cfg, const std::string& protocol) {
  validate_eval_config(cfg);
  if (v_tgt.count() != pair.target.item_count()) {
    throw ShapeError("evaluate: item table has " +
                     std::to_string(v_tgt.count()) + " rows for " +
                     std::to_string(pair.target.item_count()) + " items");
  }
  std::vector<std::vector<int>> by_user(pair.target.user_count());
  for (size_t ri = 0; ri < pair.target.records.size(); ++ri) {
    by_user[pair.target.records[ri].user].push_back(int(ri));
  }
  MetricsReport rep;
  rep.protocol = protocol;
  for (int k : cfg.ks) {
    rep.hit[k] = 0.0;
    rep.ndcg[k] = 0.0;
  }
  Vec preds;
  Vec actuals;
  int n_items = pair.target.item_count();
  for (const std::string& id : users) {
    int tu = pair.target.find_user(id);
    if (tu < 0) throw EvalError("evaluate: test user " + id +
                                " missing from target domain");
    std::vector<int> eval_records = eval_records_of(tu);
    if (eval_records.empty()) continue;
    Vec u_hat = user_vec(id);
    if (int(u_hat.size()) != v_tgt.dim) {
      throw ShapeError("evaluate: mapped vector dim " +
                       std::to_string(u_hat.size()) + " vs item dim " +
                       std::to_string(v_tgt.dim));
    }
    for (double x : u_hat) {
      if (!std::isfinite(x)) {
        throw EvalError("evaluate: non-finite prediction vector for user " +
                        id);
      }
    }
    std::unordered_set<int> interacted;
    for (int ri : by_user[tu]) interacted.insert(pair.target.records[ri].item);
    if (n_items - int(interacted.size()) < cfg.n_negatives) {
      throw EvalError("evaluate: user " + id + " leaves fewer than " +
                      std::to_string(cfg.n_negatives) +
                      " never-interacted items");
    }
    for (size_t k = 0; k < eval_records.size(); ++k) {
      const Interaction& r = pair.target.records[eval_records[k]];
      RankingInstance inst;
      inst.positive_item = r.item;
      Rng rng(derive_seed(cfg.seed, seed_tag("negatives"), uint64_t(tu),
                          uint64_t(k)));
      std::unordered_set<int> drawn;
      while (int(inst.negatives.size()) < cfg.n_negatives) {
        int j = int(rng.below(uint64_t(n_items)));
        if (interacted.count(j) || drawn.count(j)) continue;
        drawn.insert(j);
        inst.negatives.push_back(j);
      }
      inst.scores.push_back(predict_score(u_hat, v_tgt.row(r.item)));
      for (int j : inst.negatives) {
        inst.scores.push_back(predict_score(u_hat, v_tgt.row(j)));
      }
      int rank = positive_rank(inst);
      for (int kk : cfg.ks) {
        rep.hit[kk] += hit_at_k(rank, kk);
        rep.ndcg[kk] += ndcg_at_k(rank, kk);
      }
      preds.push_back(inst.scores[0]);
      actuals.push_back(r.rating);
      ++rep.n_instances;
    }
    ++rep.n_users;
  }
  if (rep.n_instances == 0) {
    throw EvalError("evaluate: empty test set for protocol " + protocol);
  }
  for (int k : cfg.ks) {
    rep.hit[k] /= double(rep.n_instances);
    rep.ndcg[k] /= double(rep.n_instances);
  }
  rep.mae = mae(preds, actuals);
  rep.rmse = rmse(preds, actuals);
  return rep;
}

}  // namespace

MetricsReport evaluate_cold(const DomainPair& pair, const SplitPlan& split,
                            const UserVecFn& user_vec,
                            const EmbeddingTable& v_tgt,
                            const EvalConfig& cfg) {
  std::vector<std::vector<int>> by_user(pair.target.user_count());
  for (size_t ri = 0; ri < pair.target.records.size(); ++ri) {
    by_user[pair.target.records[ri].user].push_back(int(ri));
  }
  MetricsReport rep = evaluate_users(
      pair, split.test_overlap, [&](int tu) { return by_user[tu]; }, user_vec,
      v_tgt, cfg, "cold");
  rep.mode = mode_name(pair.mode);
  rep.train_ratio = split.train_ratio;
  return rep;
}

MetricsReport evaluate_warm(const DomainPair& pair, const SplitPlan& split,
                            const UserVecFn& user_vec,
                            const EmbeddingTable& v_tgt,
                            const EvalConfig& cfg) {
  if (!split.warm) throw ConfigError("evaluate_warm: split has no warm halves");
  std::vector<std::string> users;
  for (const auto& [id, ws] : split.warm_splits) users.push_back(id);
  MetricsReport rep = evaluate_users(
      pair, users,
      [&](int tu) {
        const std::string& id = pair.target.user_ids[tu];
        return split.warm_splits.at(id).eval_records;
      },
      user_vec, v_tgt, cfg, "warm");
  rep.mode = mode_name(pair.mode);
  rep.train_ratio = split.train_ratio;
  return rep;
}

void write_report_kv(std::ostream& out, const MetricsReport& r) {
  out << "protocol=" << r.protocol << '\n';
  out << "mode=" << r.mode << '\n';
  out << "train_ratio=" << format_double(r.train_ratio) << '\n';
  out << "n_users=" << r.n_users << '\n';
  out << "n_instances=" << r.n_instances << '\n';
  out << "mae=" << format_double(r.mae) << '\n';
  out << "rmse=" << format_double(r.rmse) << '\n';
  for (const auto& [k, v] : r.hit) {
    out << "hit@" << k << '=' << format_double(v) << '\n';
  }
  for (const auto& [k, v] : r.ndcg) {
    out << "ndcg@" << k << '=' << format_double(v) << '\n';
  }
}

void write_report_jsonl(std::ostream& out, const MetricsReport& r) {
  nlohmann::json j;
  j["protocol"] = r.protocol;
  j["mode"] = r.mode;
  j["train_ratio"] = r.train_ratio;
  j["n_users"] = r.n_users;
  j["n_instances"] = r.n_instances;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  for (const auto& [k, v] : r.hit) j["hit"][std::to_string(k)] = v;
  for (const auto& [k, v] : r.ndcg) j["ndcg"][std::to_string(k)] = v;
  out << j.dump() << '\n';
}

std::string report_table(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "model" << std::right << std::setw(9)
      << "mae" << std::setw(9) << "rmse";
  if (!rows.empty()) {
    for (const auto& [k, v] : rows.front().second.hit) {
      out << std::setw(8) << ("hit@" + std::to_string(k));
    }
    for (const auto& [k, v] : rows.front().second.ndcg) {
      out << std::setw(8) << ("ndcg@" + std::to_string(k));
    }
  }
  out << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(16) << name << std::right << std::setw(9)
        << r.mae << std::setw(9) << r.rmse;
    for (const auto& [k, v] : r.hit) out << std::setw(8) << v;
    for (const auto& [k, v] : r.ndcg) out << std::setw(8) << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace cvpm
