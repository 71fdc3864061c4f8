#include "cvpm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "cvpm/autograd.hpp"
#include "cvpm/rng.hpp"

namespace cvpm {

TgtModel train_tgt(const DomainPair& pair, const SplitPlan& split,
                   const MfConfig& cfg) {
  std::unordered_set<std::string> banned(split.test_overlap.begin(),
                                         split.test_overlap.end());
  banned.insert(split.excluded.begin(), split.excluded.end());
  InteractionSet train = filter_records(
      pair.target, [&](const Interaction& r) {
        return banned.count(pair.target.user_ids[r.user]) == 0;
      });
  if (train.records.empty()) {
    throw DataError("train_tgt: no target records outside the test users");
  }
  TgtModel m;
  std::tie(m.users, m.items) = train_mf(train, cfg);
  return m;
}

MappingParams train_emcdr(const DomainPair& pair, const SplitPlan& split,
                          const PretrainedTables& tables,
                          const EmcdrConfig& cfg,
                          std::vector<double>* batch_losses) {
  if (cfg.lr <= 0.0) throw ConfigError("emcdr: lr must be > 0");
  if (cfg.epochs < 0) throw ConfigError("emcdr: epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("emcdr: batch size must be >= 1");
  if (cfg.hidden < 0) throw ConfigError("emcdr: hidden must be >= 0");

  std::unordered_set<std::string> banned(split.test_overlap.begin(),
                                         split.test_overlap.end());
  banned.insert(split.excluded.begin(), split.excluded.end());

  // Train users ordered by source index so batch order matches the shared
  // epoch shuffle.
  std::vector<std::pair<int, int>> users;
  for (const std::string& id : split.train_overlap) {
    if (banned.count(id)) {
      throw ContractError("leakage: user " + id + " is both train and test");
    }
    int su = pair.source.find_user(id);
    int tu = pair.target.find_user(id);
    if (su < 0 || tu < 0) {
      throw DataError("train_emcdr: overlap user " + id +
                      " missing from a domain");
    }
    users.emplace_back(su, tu);
  }
  if (users.empty()) throw DataError("train_emcdr: no train overlap users");
  std::sort(users.begin(), users.end());

  int d_s = tables.u_src.dim;
  int d_t = tables.u_tgt.dim;
  int hidden = cfg.hidden > 0 ? cfg.hidden : 2 * d_s;
  MappingParams theta =
      MappingParams::init("theta", d_s, hidden, d_t,
                          derive_seed(cfg.seed, seed_tag("theta")));
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  Adam adam(theta.refs(), acfg);

  std::vector<int> all(users.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  uint64_t shuffle_seed = derive_seed(cfg.seed, seed_tag("meta"));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order = epoch_shuffle(all, shuffle_seed, epoch);
    for (size_t start = 0; start < order.size();
         start += size_t(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
      Tape t;
      std::vector<Tape::Var> terms;
      for (size_t bi = start; bi < end; ++bi) {
        const auto& [su, tu] = users[order[bi]];
        Tape::Var pred =
            mlp_forward_t(t, t.constant(tables.u_src.row(su)), theta);
        terms.push_back(
            t.sum_sq(t.sub(pred, t.constant(tables.u_tgt.row(tu)))));
      }
      size_t n_ratings = (end - start) * size_t(d_t);
      Tape::Var loss = t.axpb(t.sum(terms), 1.0 / double(n_ratings), 0.0);
      double loss_val = t.scalar_value(loss);
      if (!std::isfinite(loss_val)) {
        throw TrainError("train_emcdr: non-finite loss at epoch " +
                         std::to_string(epoch));
      }
      if (batch_losses) batch_losses->push_back(loss_val);
      t.backward(loss);
      adam.step(t.grads());
    }
  }
  return theta;
}

Vec map_emcdr(const MappingParams& theta, const Vec& u_src) {
  return mlp_forward(u_src, theta);
}

}  // namespace cvpm
