#include "cvpm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "cvpm/rng.hpp"

namespace cvpm {

namespace {

void validate_cvpm_config(const CvpmConfig& cfg) {
  if (cfg.dim < 1) throw ConfigError("cvpm: dim must be >= 1");
  if (cfg.tau <= 0.0) throw ConfigError("cvpm: tau must be > 0");
  if (cfg.gamma < 0.0) throw ConfigError("cvpm: gamma must be >= 0");
  if (cfg.margin < 0.0) throw ConfigError("cvpm: margin must be >= 0");
  if (cfg.lr <= 0.0) throw ConfigError("cvpm: lr must be > 0");
  if (cfg.batch_size_meta < 1) throw ConfigError("cvpm: batch size must be >= 1");
  if (cfg.epochs < 0) throw ConfigError("cvpm: epochs must be >= 0");
  if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0) {
    throw ConfigError("cvpm: val_fraction must lie in [0, 1)");
  }
  if (cfg.patience < 1) throw ConfigError("cvpm: patience must be >= 1");
  if (cfg.centroids < 1) throw ConfigError("cvpm: centroids must be >= 1");
  if (cfg.n_dot_pos < 0 || cfg.n_dot_neg < 0 || cfg.n_ddot_pos < 0 ||
      cfg.n_ddot_neg < 0) {
    throw ConfigError("cvpm: candidate and augment counts must be >= 0");
  }
  if (cfg.map_from_user_embedding && !cfg.ablate_aux && cfg.gamma > 0.0) {
    throw ConfigError(
        "cvpm: contrastive terms need valence codes; disable them when "
        "mapping from the user embedding");
  }
}

void check_tables(const CvpmConfig& cfg, const DomainPair& pair,
                  const PretrainedTables& tables) {
  auto check = [&](const EmbeddingTable& t, int expect_rows, const char* what) {
    if (t.dim != cfg.dim) {
      throw ShapeError(std::string("train_cvpm: ") + what + " dim " +
                       std::to_string(t.dim) + " vs config dim " +
                       std::to_string(cfg.dim));
    }
    if (t.count() != expect_rows) {
      throw ShapeError(std::string("train_cvpm: ") + what + " has " +
                       std::to_string(t.count()) + " rows, expected " +
                       std::to_string(expect_rows));
    }
  };
  check(tables.u_src, pair.source.user_count(), "source user table");
  check(tables.v_src, pair.source.item_count(), "source item table");
  check(tables.u_tgt, pair.target.user_count(), "target user table");
  check(tables.v_tgt, pair.target.item_count(), "target item table");
}

struct ForwardParams {
  ValenceEncoderParams* encoder;
  MappingParams* theta;
  MetaParams* meta;
};

struct UserGraph {
  Tape::Var u_hat;
  Tape::Var z_pos;
  Tape::Var z_neg;
  bool has_z = false;
};

ParamRef enc_ref(const char* name, Mat& m) {
  return ParamRef{std::string("enc.") + name, &m};
}

// One user's forward pass. eps null means deterministic encoding at the mean.
UserGraph build_user_graph(Tape& t, const CvpmConfig& cfg,
                           const PretrainedTables& tables, ForwardParams fp,
                           const ValenceSets& sets, const Vec& u_s,
                           const Vec* eps_pos, const Vec* eps_neg) {
  UserGraph g;
  Tape::Var input;
  if (cfg.map_from_user_embedding) {
    input = t.constant(u_s);
  } else {
    auto side = [&](const std::vector<int>& items, bool positive) {
      ValenceEncoderParams& e = *fp.encoder;
      if (cfg.ablate_encoder) {
        return t.constant(items.empty() ? u_s
                                        : mean_pool(items, tables.v_src));
      }
      Tape::Var pooled;
      if (items.empty()) {
        pooled = t.constant(u_s);
      } else {
        auto rows = std::make_shared<Mat>(rows_from(tables.v_src, items));
        Tape::Var head = t.param(positive ? enc_ref("att_pos", e.att_pos)
                                          : enc_ref("att_neg", e.att_neg));
        pooled = attention_pool_t(t, rows, head);
      }
      Tape::Var proj = t.param(positive ? enc_ref("proj_pos", e.proj_pos)
                                        : enc_ref("proj_neg", e.proj_neg));
      Tape::Var w_mu = t.param(positive ? enc_ref("mu_pos", e.mu_pos)
                                        : enc_ref("mu_neg", e.mu_neg));
      Tape::Var w_sigma =
          t.param(positive ? enc_ref("sigma_pos", e.sigma_pos)
                           : enc_ref("sigma_neg", e.sigma_neg));
      return encode_valence_t(t, pooled, proj, w_mu, w_sigma,
                              positive ? eps_pos : eps_neg);
    };
    g.z_pos = side(sets.all_pos(), true);
    g.z_neg = side(sets.all_neg(), false);
    g.has_z = true;
    input = t.concat(g.z_pos, g.z_neg);
  }
  g.u_hat = mlp_forward_t(t, input, *fp.theta);
  if (!cfg.ablate_bias) {
    g.u_hat = t.add(g.u_hat, meta_bias_t(t, input, u_s, *fp.meta));
  }
  return g;
}

std::vector<std::vector<std::pair<int, double>>> histories(
    const InteractionSet& s) {
  std::vector<std::vector<std::pair<int, double>>> out(s.user_count());
  for (const Interaction& r : s.records) {
    out[r.user].emplace_back(r.item, r.rating);
  }
  return out;
}

struct ParamSnapshot {
  ValenceEncoderParams encoder;
  MappingParams theta;
  MetaParams meta;
};

}  // namespace

PretrainedTables pretrain_pair(const DomainPair& pair, const SplitPlan& split,
                               const MfConfig& cfg) {
  std::unordered_set<std::string> banned(split.test_overlap.begin(),
                                         split.test_overlap.end());
  banned.insert(split.excluded.begin(), split.excluded.end());
  InteractionSet tgt_train = filter_records(
      pair.target, [&](const Interaction& r) {
        return banned.count(pair.target.user_ids[r.user]) == 0;
      });
  if (tgt_train.records.empty()) {
    throw DataError("pretrain: no target records outside the test users");
  }
  PretrainedTables t;
  MfConfig src_cfg = cfg;
  src_cfg.seed = derive_seed(cfg.seed, seed_tag("pretrain.src"));
  std::tie(t.u_src, t.v_src) = train_mf(pair.source, src_cfg);
  MfConfig tgt_cfg = cfg;
  tgt_cfg.seed = derive_seed(cfg.seed, seed_tag("pretrain.tgt"));
  std::tie(t.u_tgt, t.v_tgt) = train_mf(tgt_train, tgt_cfg);
  return t;
}

TrainedModel train_cvpm(const DomainPair& pair, const SplitPlan& split,
                        const CvpmConfig& cfg, const PretrainedTables& tables,
                        std::vector<LossBreakdown>* batch_trace,
                        std::ostream* log) {
  validate_cvpm_config(cfg);
  check_tables(cfg, pair, tables);
  int n_src = pair.source.user_count();
  int d = cfg.dim;
  double gamma_eff = cfg.ablate_aux ? 0.0 : cfg.gamma;

  std::unordered_set<std::string> banned(split.test_overlap.begin(),
                                         split.test_overlap.end());
  banned.insert(split.excluded.begin(), split.excluded.end());
  for (const std::string& id : split.train_overlap) {
    if (banned.count(id)) {
      throw ContractError("leakage: user " + id + " is both train and test");
    }
  }

  // Validation holdout from the train overlap.
  std::vector<std::string> val_ids;
  std::vector<std::string> sup_ids;
  {
    std::vector<std::string> shuffled = split.train_overlap;
    Rng rng(derive_seed(cfg.seed, seed_tag("val")));
    rng.shuffle(shuffled);
    size_t n_val = size_t(std::llround(cfg.val_fraction *
                                       double(shuffled.size())));
    if (n_val >= shuffled.size()) n_val = shuffled.size() - 1;
    std::unordered_set<std::string> val_set(shuffled.begin(),
                                            shuffled.begin() + n_val);
    for (const std::string& id : split.train_overlap) {
      if (val_set.count(id)) {
        val_ids.push_back(id);
      } else {
        sup_ids.push_back(id);
      }
    }
  }

  // Per-source-user supervision data; rows of V_t are frozen, so the per-user
  // item matrices build once.
  std::vector<std::shared_ptr<const Mat>> sup_rows(n_src);
  std::vector<Vec> sup_ratings(n_src);
  auto collect_targets = [&](const std::vector<std::string>& ids,
                             std::vector<std::shared_ptr<const Mat>>& rows_out,
                             std::vector<Vec>& ratings_out) {
    std::unordered_set<int> tgt_users;
    for (const std::string& id : ids) {
      int tu = pair.target.find_user(id);
      if (tu >= 0) tgt_users.insert(tu);
    }
    std::vector<std::vector<int>> items(pair.target.user_count());
    std::vector<Vec> ratings(pair.target.user_count());
    for (const Interaction& r : pair.target.records) {
      if (!tgt_users.count(r.user)) continue;
      if (banned.count(pair.target.user_ids[r.user])) {
        throw ContractError("leakage: test user " +
                            pair.target.user_ids[r.user] +
                            " record reached training");
      }
      items[r.user].push_back(r.item);
      ratings[r.user].push_back(r.rating);
    }
    for (const std::string& id : ids) {
      int tu = pair.target.find_user(id);
      int su = pair.source.find_user(id);
      if (tu < 0 || su < 0 || items[tu].empty()) continue;
      rows_out[su] = std::make_shared<const Mat>(
          rows_from(tables.v_tgt, items[tu]));
      ratings_out[su] = ratings[tu];
    }
  };
  collect_targets(sup_ids, sup_rows, sup_ratings);
  std::vector<std::shared_ptr<const Mat>> val_rows(n_src);
  std::vector<Vec> val_ratings(n_src);
  collect_targets(val_ids, val_rows, val_ratings);

  std::vector<std::vector<std::pair<int, double>>> hist =
      histories(pair.source);
  std::vector<Vec> u_s_vec(n_src);
  std::vector<ValenceSets> base_sets(n_src);
  for (int u = 0; u < n_src; ++u) {
    u_s_vec[u] = tables.u_src.row(u);
    if (hist[u].empty()) {
      throw DataError("train_cvpm: source user " + pair.source.user_ids[u] +
                      " has no records");
    }
    base_sets[u] = median_split(hist[u]);
  }

  // Candidates and sampling distributions; frozen embeddings make these
  // epoch-invariant.
  std::vector<Candidates> cand(n_src);
  std::vector<Vec> probs_pos(n_src);
  std::vector<Vec> probs_neg(n_src);
  if (!cfg.ablate_sampling) {
    std::vector<char> mask(pair.source.item_count(), 0);
    for (int u = 0; u < n_src; ++u) {
      std::fill(mask.begin(), mask.end(), 0);
      for (const auto& [item, rating] : hist[u]) mask[item] = 1;
      cand[u] = generate_candidates(u_s_vec[u], tables.v_src, mask,
                                    cfg.n_dot_pos, cfg.n_dot_neg, log);
    }
    std::vector<int> df(pair.source.item_count(), 0);
    int users_with_cands = 0;
    for (int u = 0; u < n_src; ++u) {
      if (cand[u].pos.empty()) continue;
      ++users_with_cands;
      for (int item : cand[u].pos) ++df[item];
    }
    for (int u = 0; u < n_src; ++u) {
      if (!cand[u].pos.empty()) {
        std::vector<int64_t> counts;
        std::vector<int> dfs;
        for (int item : cand[u].pos) {
          counts.push_back(std::max<int64_t>(1, pair.source.popularity[item]));
          dfs.push_back(df[item]);
        }
        probs_pos[u] = sampling_probs_positive(counts, dfs, users_with_cands);
      }
      if (!cand[u].neg.empty()) {
        std::vector<int64_t> counts;
        for (int item : cand[u].neg) {
          counts.push_back(pair.source.popularity[item]);
        }
        probs_neg[u] = sampling_probs_negative(counts, log);
      }
    }
  }

  TrainedModel model;
  model.config = cfg;
  model.tables = tables;
  model.encoder =
      ValenceEncoderParams::init(d, derive_seed(cfg.seed, seed_tag("enc")));
  int map_in = cfg.map_from_user_embedding ? d : 2 * d;
  model.theta = MappingParams::init("theta", map_in, 2 * d, d,
                                    derive_seed(cfg.seed, seed_tag("theta")));
  model.meta = MetaParams::init("meta", map_in, 2 * d, d, d,
                                derive_seed(cfg.seed, seed_tag("meta_net")));
  if (cfg.centroids > n_src) {
    throw ConfigError("cvpm: " + std::to_string(cfg.centroids) +
                      " centroids exceed " + std::to_string(n_src) +
                      " source users");
  }
  // Inputs and seed are frozen, so every epoch's recomputation would yield
  // this exact clustering; compute it once.
  model.centroids =
      kmeans(tables.u_src.vectors, cfg.centroids,
             derive_seed(cfg.seed, seed_tag("centroids")), 100);
  auto centers_src = std::make_shared<const Mat>(model.centroids.centers);

  ForwardParams fp{&model.encoder, &model.theta, &model.meta};
  std::vector<ParamRef> params;
  for (auto r : model.encoder.refs()) params.push_back(r);
  for (auto r : model.theta.refs()) params.push_back(r);
  for (auto r : model.meta.refs()) params.push_back(r);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  Adam adam(params, adam_cfg);

  auto effective_centers = [&]() -> std::shared_ptr<const Mat> {
    if (!cfg.project_centroids) return centers_src;
    auto projected = std::make_shared<Mat>(model.centroids.k, d);
    for (int c = 0; c < model.centroids.k; ++c) {
      projected->set_row(c, common_map(model.centroids.centers.row(c),
                                       model.theta));
    }
    return projected;
  };

  // Deterministic inference pass for validation and model selection.
  struct ValScore {
    double l_o = 0.0;
    double total = 0.0;
  };
  auto validation_total = [&]() -> ValScore {
    double l_o_acc = 0.0;
    size_t n_ratings = 0;
    double l_ng_acc = 0.0;
    double l_ni_acc = 0.0;
    int n_users = 0;
    std::shared_ptr<const Mat> centers = effective_centers();
    for (const std::string& id : val_ids) {
      int u = pair.source.find_user(id);
      if (u < 0 || !val_rows[u]) continue;
      Tape t;
      UserGraph g = build_user_graph(t, cfg, tables, fp, base_sets[u],
                                     u_s_vec[u], nullptr, nullptr);
      const Vec& u_hat = t.value(g.u_hat);
      const Mat& rows = *val_rows[u];
      for (int j = 0; j < rows.rows; ++j) {
        double e = dot(u_hat, rows.row(j)) - val_ratings[u][j];
        l_o_acc += e * e;
        ++n_ratings;
      }
      if (gamma_eff > 0.0 && g.has_z) {
        l_ng_acc += group_contrastive_loss(
            u_hat, model.centroids.assignment[u], *centers, cfg.tau);
        l_ni_acc += individual_contrastive_loss(u_hat, t.value(g.z_pos),
                                                t.value(g.z_neg), cfg.margin);
      }
      ++n_users;
    }
    if (n_ratings == 0) return ValScore{};
    ValScore s;
    s.l_o = l_o_acc / double(n_ratings);
    s.total = s.l_o;
    if (gamma_eff > 0.0 && n_users > 0) {
      s.total += gamma_eff * (l_ng_acc + l_ni_acc) / double(n_users);
    }
    return s;
  };

  std::vector<int> all_users(n_src);
  for (int u = 0; u < n_src; ++u) all_users[u] = u;
  uint64_t shuffle_seed = derive_seed(cfg.seed, seed_tag("meta"));

  ParamSnapshot best{model.encoder, model.theta, model.meta};
  double best_val = std::numeric_limits<double>::infinity();
  bool have_val = !val_ids.empty();
  int since_improved = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order = epoch_shuffle(all_users, shuffle_seed, epoch);
    double ep_lo = 0.0;
    double ep_lng = 0.0;
    double ep_lni = 0.0;
    int ep_batches = 0;
    for (size_t start = 0; start < order.size();
         start += size_t(cfg.batch_size_meta)) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch_size_meta));
      std::shared_ptr<const Mat> centers = effective_centers();
      Tape t;
      std::vector<Tape::Var> lo_terms;
      std::vector<Tape::Var> lng_terms;
      std::vector<Tape::Var> lni_terms;
      size_t n_ratings = 0;
      for (size_t bi = start; bi < end; ++bi) {
        int u = order[bi];
        ValenceSets sets = base_sets[u];
        if (!cfg.ablate_sampling && !cfg.map_from_user_embedding) {
          Rng aug_rng(derive_seed(cfg.seed, seed_tag("aug"), uint64_t(epoch),
                                  uint64_t(u)));
          augment(sets, cand[u], probs_pos[u], probs_neg[u], cfg.n_ddot_pos,
                  cfg.n_ddot_neg, aug_rng);
        }
        Vec eps_pos(d);
        Vec eps_neg(d);
        const Vec* ep = nullptr;
        const Vec* en = nullptr;
        if (!cfg.ablate_encoder && !cfg.map_from_user_embedding) {
          Rng eps_rng(derive_seed(cfg.seed, seed_tag("eps"), uint64_t(epoch),
                                  uint64_t(u)));
          for (int c = 0; c < d; ++c) eps_pos[c] = eps_rng.normal();
          for (int c = 0; c < d; ++c) eps_neg[c] = eps_rng.normal();
          ep = &eps_pos;
          en = &eps_neg;
        }
        UserGraph g = build_user_graph(t, cfg, tables, fp, sets, u_s_vec[u],
                                       ep, en);
        if (sup_rows[u]) {
          lo_terms.push_back(
              t.sq_err_rows(g.u_hat, sup_rows[u], sup_ratings[u]));
          n_ratings += sup_ratings[u].size();
        }
        if (gamma_eff > 0.0) {
          Tape::Var sims = t.const_matvec(centers, g.u_hat, 1.0 / cfg.tau);
          lng_terms.push_back(t.sub(
              t.log_sum_exp(sims),
              t.pick(sims, model.centroids.assignment[u])));
          Tape::Var gap = t.sub(t.sum_sq(t.sub(g.u_hat, g.z_pos)),
                                t.sum_sq(t.sub(g.u_hat, g.z_neg)));
          lni_terms.push_back(t.relu(t.axpb(gap, 1.0, cfg.margin)));
        }
      }
      Tape::Var l_o = lo_terms.empty()
                          ? t.constant(0.0)
                          : t.axpb(t.sum(lo_terms),
                                   1.0 / double(n_ratings), 0.0);
      Tape::Var total = l_o;
      double inv_users = 1.0 / double(end - start);
      Tape::Var l_ng = t.constant(0.0);
      Tape::Var l_ni = t.constant(0.0);
      if (gamma_eff > 0.0) {
        l_ng = t.axpb(t.sum(lng_terms), inv_users, 0.0);
        l_ni = t.axpb(t.sum(lni_terms), inv_users, 0.0);
        total = t.add(l_o, t.axpb(t.add(l_ng, l_ni), gamma_eff, 0.0));
      }
      double lo_val = t.scalar_value(l_o);
      double lng_val = t.scalar_value(l_ng);
      double lni_val = t.scalar_value(l_ni);
      double total_val = t.scalar_value(total);
      if (!std::isfinite(total_val)) {
        throw TrainError("train_cvpm: non-finite loss at epoch " +
                         std::to_string(epoch) + " batch " +
                         std::to_string(start / cfg.batch_size_meta));
      }
      if (batch_trace) {
        batch_trace->push_back(
            total_loss(lo_val, lng_val, lni_val, gamma_eff, cfg.tau,
                       cfg.margin));
      }
      ep_lo += lo_val;
      ep_lng += lng_val;
      ep_lni += lni_val;
      ++ep_batches;
      t.backward(total);
      adam.step(t.grads());
    }
    if (log && ep_batches > 0) {
      append_train_log(*log, epoch,
                       total_loss(ep_lo / ep_batches, ep_lng / ep_batches,
                                  ep_lni / ep_batches, gamma_eff, cfg.tau,
                                  cfg.margin));
    }
    if (have_val) {
      ValScore vs = validation_total();
      double val = vs.total;
      if (log) *log << "# val epoch=" << epoch
                    << " l_o=" << format_double(vs.l_o)
                    << " total=" << format_double(val) << '\n';
      if (val < best_val) {
        best_val = val;
        best = ParamSnapshot{model.encoder, model.theta, model.meta};
        since_improved = 0;
      } else {
        ++since_improved;
        if (since_improved >= cfg.patience) break;
      }
    }
  }
  if (have_val) {
    model.encoder = best.encoder;
    model.theta = best.theta;
    model.meta = best.meta;
  }
  return model;
}

namespace {

Vec map_user_with_params(const CvpmConfig& cfg, const PretrainedTables& tables,
                         ValenceEncoderParams& enc, MappingParams& theta,
                         MetaParams& meta,
                         const std::vector<std::pair<int, double>>& hist,
                         int src_user) {
  ValenceSets sets = median_split(hist);
  Tape t;
  ForwardParams fp{&enc, &theta, &meta};
  UserGraph g = build_user_graph(t, cfg, tables, fp, sets,
                                 tables.u_src.row(src_user), nullptr, nullptr);
  return t.value(g.u_hat);
}

}  // namespace

Vec map_user_cold(const TrainedModel& model, const DomainPair& pair,
                  int src_user) {
  if (src_user < 0 || src_user >= pair.source.user_count()) {
    throw DataError("map_user_cold: user index " + std::to_string(src_user) +
                    " of " + std::to_string(pair.source.user_count()));
  }
  std::vector<std::pair<int, double>> hist;
  for (const Interaction& r : pair.source.records) {
    if (r.user == src_user) hist.emplace_back(r.item, r.rating);
  }
  if (hist.empty()) {
    throw DataError("map_user_cold: user " + pair.source.user_ids[src_user] +
                    " has no source records");
  }
  TrainedModel& m = const_cast<TrainedModel&>(model);
  return map_user_with_params(model.config, model.tables, m.encoder, m.theta,
                              m.meta, hist, src_user);
}

TrainedModel finetune_warm(const TrainedModel& model, const DomainPair& pair,
                           const SplitPlan& split, int steps, double lr) {
  if (!split.warm) {
    throw ConfigError("finetune_warm: split has no warm halves");
  }
  if (steps < 0) throw ConfigError("finetune_warm: steps must be >= 0");
  if (lr < 0.0) throw ConfigError("finetune_warm: lr must be >= 0");

  struct FtUser {
    int src_user;
    std::vector<std::pair<int, double>> hist;
    ValenceSets sets;
    std::shared_ptr<const Mat> rows;
    Vec ratings;
  };
  std::vector<std::vector<std::pair<int, double>>> hist =
      histories(pair.source);
  std::vector<FtUser> users;
  size_t total_records = 0;
  for (const auto& [id, ws] : split.warm_splits) {
    std::unordered_set<int> eval_set(ws.eval_records.begin(),
                                     ws.eval_records.end());
    FtUser fu;
    fu.src_user = pair.source.find_user(id);
    if (fu.src_user < 0) {
      throw DataError("finetune_warm: user " + id + " not in source domain");
    }
    int tgt_user = pair.target.find_user(id);
    std::vector<int> items;
    for (int ri : ws.finetune_records) {
      if (eval_set.count(ri)) {
        throw ContractError("finetune_warm: record " + std::to_string(ri) +
                            " of user " + id + " is in the eval half");
      }
      const Interaction& r = pair.target.records[ri];
      if (r.user != tgt_user) {
        throw ContractError("finetune_warm: record " + std::to_string(ri) +
                            " does not belong to user " + id);
      }
      items.push_back(r.item);
      fu.ratings.push_back(r.rating);
    }
    if (items.empty()) continue;
    fu.rows =
        std::make_shared<const Mat>(rows_from(model.tables.v_tgt, items));
    fu.hist = hist[fu.src_user];
    fu.sets = median_split(fu.hist);
    total_records += items.size();
    users.push_back(std::move(fu));
  }
  if (users.empty()) {
    throw DataError("finetune_warm: no finetune records in the split");
  }

  TrainedModel out = model;
  ForwardParams fp{&out.encoder, &out.theta, &out.meta};
  std::vector<ParamRef> params;
  for (auto r : out.encoder.refs()) params.push_back(r);
  for (auto r : out.theta.refs()) params.push_back(r);
  for (auto r : out.meta.refs()) params.push_back(r);
  AdamConfig acfg;
  acfg.lr = lr;
  acfg.weight_decay = 0.0;
  Adam adam(params, acfg);
  double inv = 1.0 / double(total_records);
  for (int step = 0; step < steps; ++step) {
    Tape t;
    std::vector<Tape::Var> terms;
    for (FtUser& fu : users) {
      UserGraph g =
          build_user_graph(t, out.config, out.tables, fp, fu.sets,
                           out.tables.u_src.row(fu.src_user), nullptr,
                           nullptr);
      terms.push_back(t.sq_err_rows(g.u_hat, fu.rows, fu.ratings));
    }
    Tape::Var loss = t.axpb(t.sum(terms), inv, 0.0);
    if (!std::isfinite(t.scalar_value(loss))) {
      throw TrainError("finetune_warm: non-finite loss at step " +
                       std::to_string(step));
    }
    t.backward(loss);
    adam.step(t.grads());
  }
  return out;
}

std::vector<std::pair<int, double>> recommend(
    const TrainedModel& model, const DomainPair& pair,
    const std::string& user_id, int k, const std::vector<int>& candidates) {
  int u = pair.source.find_user(user_id);
  if (u < 0) throw DataError("recommend: unknown user " + user_id);
  if (candidates.empty()) {
    throw ValidationError("recommend: no candidate items");
  }
  for (int c : candidates) {
    if (c < 0 || c >= pair.target.item_count()) {
      throw ValidationError("recommend: candidate " + std::to_string(c) +
                            " outside target catalog of " +
                            std::to_string(pair.target.item_count()));
    }
  }
  Vec u_hat = map_user_cold(model, pair, u);
  std::vector<std::pair<int, double>> scored;
  scored.reserve(candidates.size());
  for (int c : candidates) {
    scored.emplace_back(c, predict_score(u_hat, model.tables.v_tgt.row(c)));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (int(scored.size()) > k) scored.resize(k);
  return scored;
}

std::string cvpm_config_text(const CvpmConfig& cfg) {
  std::ostringstream out;
  out << "dim " << cfg.dim << '\n';
  out << "n_dot_pos " << cfg.n_dot_pos << '\n';
  out << "n_dot_neg " << cfg.n_dot_neg << '\n';
  out << "n_ddot_pos " << cfg.n_ddot_pos << '\n';
  out << "n_ddot_neg " << cfg.n_ddot_neg << '\n';
  out << "centroids " << cfg.centroids << '\n';
  out << "tau " << format_double(cfg.tau) << '\n';
  out << "gamma " << format_double(cfg.gamma) << '\n';
  out << "margin " << format_double(cfg.margin) << '\n';
  out << "lr " << format_double(cfg.lr) << '\n';
  out << "weight_decay " << format_double(cfg.weight_decay) << '\n';
  out << "batch_size_meta " << cfg.batch_size_meta << '\n';
  out << "epochs " << cfg.epochs << '\n';
  out << "seed " << cfg.seed << '\n';
  out << "ablate_sampling " << cfg.ablate_sampling << '\n';
  out << "ablate_encoder " << cfg.ablate_encoder << '\n';
  out << "ablate_bias " << cfg.ablate_bias << '\n';
  out << "ablate_aux " << cfg.ablate_aux << '\n';
  out << "mode " << mode_name(cfg.mode) << '\n';
  out << "val_fraction " << format_double(cfg.val_fraction) << '\n';
  out << "patience " << cfg.patience << '\n';
  out << "map_from_user_embedding " << cfg.map_from_user_embedding << '\n';
  out << "project_centroids " << cfg.project_centroids << '\n';
  return out.str();
}

CvpmConfig cvpm_config_from_text(const std::string& text) {
  CvpmConfig cfg;
  std::istringstream in(text);
  std::string key;
  while (in >> key) {
    if (key == "dim") in >> cfg.dim;
    else if (key == "n_dot_pos") in >> cfg.n_dot_pos;
    else if (key == "n_dot_neg") in >> cfg.n_dot_neg;
    else if (key == "n_ddot_pos") in >> cfg.n_ddot_pos;
    else if (key == "n_ddot_neg") in >> cfg.n_ddot_neg;
    else if (key == "centroids") in >> cfg.centroids;
    else if (key == "tau") in >> cfg.tau;
    else if (key == "gamma") in >> cfg.gamma;
    else if (key == "margin") in >> cfg.margin;
    else if (key == "lr") in >> cfg.lr;
    else if (key == "weight_decay") in >> cfg.weight_decay;
    else if (key == "batch_size_meta") in >> cfg.batch_size_meta;
    else if (key == "epochs") in >> cfg.epochs;
    else if (key == "seed") in >> cfg.seed;
    else if (key == "ablate_sampling") in >> cfg.ablate_sampling;
    else if (key == "ablate_encoder") in >> cfg.ablate_encoder;
    else if (key == "ablate_bias") in >> cfg.ablate_bias;
    else if (key == "ablate_aux") in >> cfg.ablate_aux;
    else if (key == "mode") {
      std::string m;
      in >> m;
      if (m == "cdr") cfg.mode = Mode::CDR;
      else if (m == "csr") cfg.mode = Mode::CSR;
      else throw ParseError("checkpoint config: bad mode " + m);
    } else if (key == "val_fraction") in >> cfg.val_fraction;
    else if (key == "patience") in >> cfg.patience;
    else if (key == "map_from_user_embedding") in >> cfg.map_from_user_embedding;
    else if (key == "project_centroids") in >> cfg.project_centroids;
    else throw ParseError("checkpoint config: unknown key " + key);
    if (!in && !in.eof()) {
      throw ParseError("checkpoint config: bad value for " + key);
    }
  }
  return cfg;
}

namespace {

constexpr const char* kIdsMarker = "---ids---";

std::string ids_block(const std::vector<std::string>& ids) {
  std::ostringstream out;
  out << ids.size() << '\n';
  for (const std::string& id : ids) out << id << '\n';
  return out.str();
}

std::vector<std::string> read_ids_block(std::istream& in) {
  size_t n = 0;
  in >> n;
  std::string line;
  std::getline(in, line);
  std::vector<std::string> ids(n);
  for (size_t i = 0; i < n; ++i) {
    if (!std::getline(in, ids[i])) {
      throw ParseError("checkpoint: truncated id block");
    }
  }
  return ids;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainedModel& model) {
  std::ostringstream cfg_text;
  cfg_text << cvpm_config_text(model.config);
  cfg_text << kIdsMarker << '\n';
  cfg_text << ids_block(model.tables.u_src.ids);
  cfg_text << ids_block(model.tables.v_src.ids);
  cfg_text << ids_block(model.tables.u_tgt.ids);
  cfg_text << ids_block(model.tables.v_tgt.ids);

  Mat assign(int(model.centroids.assignment.size()), 1);
  for (size_t i = 0; i < model.centroids.assignment.size(); ++i) {
    assign.data[i] = double(model.centroids.assignment[i]);
  }
  std::vector<std::pair<std::string, const Mat*>> tensors = {
      {"tables.u_src", &model.tables.u_src.vectors},
      {"tables.v_src", &model.tables.v_src.vectors},
      {"tables.u_tgt", &model.tables.u_tgt.vectors},
      {"tables.v_tgt", &model.tables.v_tgt.vectors},
      {"enc.att_pos", &model.encoder.att_pos},
      {"enc.att_neg", &model.encoder.att_neg},
      {"enc.proj_pos", &model.encoder.proj_pos},
      {"enc.proj_neg", &model.encoder.proj_neg},
      {"enc.mu_pos", &model.encoder.mu_pos},
      {"enc.sigma_pos", &model.encoder.sigma_pos},
      {"enc.mu_neg", &model.encoder.mu_neg},
      {"enc.sigma_neg", &model.encoder.sigma_neg},
      {"theta.0.w", &model.theta.layers[0].w},
      {"theta.0.b", &model.theta.layers[0].b},
      {"theta.1.w", &model.theta.layers[1].w},
      {"theta.1.b", &model.theta.layers[1].b},
      {"meta.0.w", &model.meta.net.layers[0].w},
      {"meta.0.b", &model.meta.net.layers[0].b},
      {"meta.1.w", &model.meta.net.layers[1].w},
      {"meta.1.b", &model.meta.net.layers[1].b},
      {"cent.centers", &model.centroids.centers},
      {"cent.assignment", &assign},
  };
  save_tensors(path, cfg_text.str(), tensors);
}

TrainedModel load_checkpoint(const std::string& path) {
  TensorFile tf = load_tensors(path);
  size_t marker = tf.config_text.find(kIdsMarker);
  if (marker == std::string::npos) {
    throw ParseError(path + ": checkpoint missing id blocks");
  }
  TrainedModel model;
  model.config = cvpm_config_from_text(tf.config_text.substr(0, marker));
  {
    std::istringstream ids_in(
        tf.config_text.substr(marker + std::string(kIdsMarker).size() + 1));
    model.tables.u_src.ids = read_ids_block(ids_in);
    model.tables.v_src.ids = read_ids_block(ids_in);
    model.tables.u_tgt.ids = read_ids_block(ids_in);
    model.tables.v_tgt.ids = read_ids_block(ids_in);
  }
  auto table = [&](const char* name, EmbeddingTable& t) {
    t.vectors = tf.get(name);
    t.dim = t.vectors.cols;
    if (int(t.ids.size()) != t.vectors.rows) {
      throw ParseError(path + ": id count mismatch for " + name);
    }
  };
  table("tables.u_src", model.tables.u_src);
  table("tables.v_src", model.tables.v_src);
  table("tables.u_tgt", model.tables.u_tgt);
  table("tables.v_tgt", model.tables.v_tgt);
  model.encoder.att_pos = tf.get("enc.att_pos");
  model.encoder.att_neg = tf.get("enc.att_neg");
  model.encoder.proj_pos = tf.get("enc.proj_pos");
  model.encoder.proj_neg = tf.get("enc.proj_neg");
  model.encoder.mu_pos = tf.get("enc.mu_pos");
  model.encoder.sigma_pos = tf.get("enc.sigma_pos");
  model.encoder.mu_neg = tf.get("enc.mu_neg");
  model.encoder.sigma_neg = tf.get("enc.sigma_neg");
  model.theta.prefix = "theta";
  model.theta.layers = {{tf.get("theta.0.w"), tf.get("theta.0.b")},
                        {tf.get("theta.1.w"), tf.get("theta.1.b")}};
  model.meta.net.prefix = "meta";
  model.meta.net.layers = {{tf.get("meta.0.w"), tf.get("meta.0.b")},
                           {tf.get("meta.1.w"), tf.get("meta.1.b")}};
  model.meta.d_src = model.config.dim;
  model.meta.d_tgt = model.config.dim;
  model.meta.scaled = true;
  model.centroids.centers = tf.get("cent.centers");
  model.centroids.k = model.centroids.centers.rows;
  const Mat& assign = tf.get("cent.assignment");
  model.centroids.assignment.resize(assign.rows);
  for (int i = 0; i < assign.rows; ++i) {
    model.centroids.assignment[i] = int(assign.data[i]);
  }
  return model;
}

}  // namespace cvpm
