#include "cvpm/synth.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cvpm/rng.hpp"
#include "cvpm/valence.hpp"

namespace cvpm {

const char* map_kind_name(MapKind k) {
  switch (k) {
    case MapKind::Identity: return "identity";
    case MapKind::Linear: return "linear";
    case MapKind::Tanh: return "tanh";
  }
  return "linear";
}

MapKind map_kind_from_name(const std::string& name) {
  if (name == "identity") return MapKind::Identity;
  if (name == "linear") return MapKind::Linear;
  if (name == "tanh") return MapKind::Tanh;
  throw ConfigError("synth: unknown map kind " + name);
}

namespace {

void validate(const SynthConfig& cfg) {
  if (cfg.n_users_src < 1 || cfg.n_users_tgt < 1) {
    throw ConfigError("synth: user counts must be >= 1");
  }
  if (cfg.n_items_src < 1 || cfg.n_items_tgt < 1) {
    throw ConfigError("synth: item counts must be >= 1");
  }
  if (cfg.dim < 1) throw ConfigError("synth: dim must be >= 1");
  int cap = cfg.overlap_side == OverlapSide::User
                ? std::min(cfg.n_users_src, cfg.n_users_tgt)
                : std::min(cfg.n_items_src, cfg.n_items_tgt);
  // Zero overlap is a valid generator setting; the pair builder is the one
  // that rejects it, with the structural no-anchor diagnosis.
  if (cfg.overlap_count < 0 || cfg.overlap_count > cap) {
    throw ConfigError("synth: overlap_count " +
                      std::to_string(cfg.overlap_count) +
                      " must lie in [0, " + std::to_string(cap) + "]");
  }
  if (cfg.density_src <= 0.0 || cfg.density_src > 1.0 ||
      cfg.density_tgt <= 0.0 || cfg.density_tgt > 1.0) {
    throw ConfigError("synth: densities must lie in (0, 1]");
  }
  if (cfg.rating_noise < 0.0 || cfg.map_noise < 0.0) {
    throw ConfigError("synth: noise levels must be >= 0");
  }
  if (cfg.max_rating <= cfg.min_rating) {
    throw ConfigError("synth: rating scale must have max > min");
  }
  if (cfg.popularity_exponent < 0.0) {
    throw ConfigError("synth: popularity_exponent must be >= 0");
  }
  auto total = [](double density, int u, int i) {
    return std::llround(density * double(u) * double(i));
  };
  if (total(cfg.density_src, cfg.n_users_src, cfg.n_items_src) < 1 ||
      total(cfg.density_tgt, cfg.n_users_tgt, cfg.n_items_tgt) < 1) {
    throw ConfigError("synth: density yields an empty domain");
  }
}

std::string padded_id(const char* prefix, int i) {
  std::ostringstream out;
  out << prefix << std::setw(4) << std::setfill('0') << i;
  return out.str();
}

Vec draw_latent(int dim, uint64_t seed) {
  Rng rng(seed);
  Vec v(dim);
  for (int c = 0; c < dim; ++c) v[c] = rng.normal();
  return v;
}

Vec apply_map(MapKind kind, const Mat& a, const Vec& u) {
  switch (kind) {
    case MapKind::Identity: return u;
    case MapKind::Linear: return matvec(a, u);
    case MapKind::Tanh: {
      Vec out = matvec(a, u);
      for (double& x : out) x = std::tanh(x);
      return out;
    }
  }
  return u;
}

}  // namespace

double ideal_rating(const Vec& u, const Vec& v, double min_rating,
                    double max_rating) {
  double mid = 0.5 * (min_rating + max_rating);
  double amp = 0.25 * (max_rating - min_rating);
  return mid + amp * dot(u, v) / std::sqrt(double(u.size()));
}

SynthData generate_synth(const SynthConfig& cfg) {
  validate(cfg);
  int d = cfg.dim;
  SynthData out;
  SynthTruth& truth = out.truth;
  truth.map_kind = cfg.map_kind;
  truth.overlap_side = cfg.overlap_side;

  truth.map_a = Mat(d, d);
  if (cfg.map_kind == MapKind::Identity) {
    for (int c = 0; c < d; ++c) truth.map_a.at(c, c) = 1.0;
  } else {
    Rng rng(derive_seed(cfg.seed, seed_tag("synth.map")));
    double std = 1.0 / std::sqrt(double(d));
    for (double& x : truth.map_a.data) x = rng.normal(0.0, std);
  }

  bool user_overlap = cfg.overlap_side == OverlapSide::User;
  std::vector<std::string> src_users(cfg.n_users_src);
  std::vector<std::string> tgt_users(cfg.n_users_tgt);
  std::vector<std::string> src_items(cfg.n_items_src);
  std::vector<std::string> tgt_items(cfg.n_items_tgt);
  truth.users_src = Mat(cfg.n_users_src, d);
  truth.users_tgt = Mat(cfg.n_users_tgt, d);
  truth.items_src = Mat(cfg.n_items_src, d);
  truth.items_tgt = Mat(cfg.n_items_tgt, d);

  // Overlapping entities take the first indices on both sides; the bridged
  // side's target latent is the mapped source latent plus map noise.
  auto bridged = [&](const Vec& src_latent, int i) {
    Vec v = apply_map(cfg.map_kind, truth.map_a, src_latent);
    if (cfg.map_noise > 0.0) {
      Rng rng(derive_seed(cfg.seed, seed_tag("synth.map_noise"), uint64_t(i)));
      for (double& x : v) x += cfg.map_noise * rng.normal();
    }
    return v;
  };

  if (user_overlap) {
    for (int u = 0; u < cfg.n_users_src; ++u) {
      bool ov = u < cfg.overlap_count;
      src_users[u] = ov ? padded_id("ou", u) : padded_id("su", u);
      truth.users_src.set_row(
          u, draw_latent(d, derive_seed(cfg.seed,
                                        seed_tag(ov ? "synth.user.overlap"
                                                    : "synth.user.src"),
                                        uint64_t(u))));
    }
    for (int u = 0; u < cfg.n_users_tgt; ++u) {
      bool ov = u < cfg.overlap_count;
      tgt_users[u] = ov ? padded_id("ou", u) : padded_id("tu", u);
      truth.users_tgt.set_row(
          u, ov ? bridged(truth.users_src.row(u), u)
                : draw_latent(d, derive_seed(cfg.seed,
                                             seed_tag("synth.user.tgt"),
                                             uint64_t(u))));
    }
    // Same item index, same latent across domains: with an identity map and
    // zero noise the two domains agree exactly on shared users.
    for (int j = 0; j < cfg.n_items_src; ++j) {
      src_items[j] = padded_id("si", j);
      truth.items_src.set_row(
          j, draw_latent(d, derive_seed(cfg.seed, seed_tag("synth.item"),
                                        uint64_t(j))));
    }
    for (int j = 0; j < cfg.n_items_tgt; ++j) {
      tgt_items[j] = padded_id("ti", j);
      truth.items_tgt.set_row(
          j, draw_latent(d, derive_seed(cfg.seed, seed_tag("synth.item"),
                                        uint64_t(j))));
    }
    for (int u = 0; u < cfg.overlap_count; ++u) {
      truth.overlap_ids.push_back(src_users[u]);
    }
  } else {
    for (int u = 0; u < cfg.n_users_src; ++u) {
      src_users[u] = padded_id("su", u);
      truth.users_src.set_row(
          u, draw_latent(d, derive_seed(cfg.seed, seed_tag("synth.user.src"),
                                        uint64_t(u))));
    }
    for (int u = 0; u < cfg.n_users_tgt; ++u) {
      tgt_users[u] = padded_id("tu", u);
      truth.users_tgt.set_row(
          u, draw_latent(d, derive_seed(cfg.seed, seed_tag("synth.user.tgt"),
                                        uint64_t(u))));
    }
    for (int j = 0; j < cfg.n_items_src; ++j) {
      bool ov = j < cfg.overlap_count;
      src_items[j] = ov ? padded_id("oi", j) : padded_id("si", j);
      truth.items_src.set_row(
          j, draw_latent(d, derive_seed(cfg.seed,
                                        seed_tag(ov ? "synth.item.overlap"
                                                    : "synth.item.src"),
                                        uint64_t(j))));
    }
    for (int j = 0; j < cfg.n_items_tgt; ++j) {
      bool ov = j < cfg.overlap_count;
      tgt_items[j] = ov ? padded_id("oi", j) : padded_id("ti", j);
      truth.items_tgt.set_row(
          j, ov ? bridged(truth.items_src.row(j), j)
                : draw_latent(d, derive_seed(cfg.seed,
                                             seed_tag("synth.item.tgt"),
                                             uint64_t(j))));
    }
    for (int j = 0; j < cfg.overlap_count; ++j) {
      truth.overlap_ids.push_back(src_items[j]);
    }
  }

  auto fill_domain = [&](InteractionSet& set, const char* tag,
                         const std::vector<std::string>& users,
                         const std::vector<std::string>& items,
                         const Mat& user_latents, const Mat& item_latents,
                         double density) {
    set.min_rating = cfg.min_rating;
    set.max_rating = cfg.max_rating;
    for (const std::string& id : users) set.add_user(id);
    for (const std::string& id : items) set.add_item(id);
    int n_users = int(users.size());
    int n_items = int(items.size());
    int64_t total = std::llround(density * double(n_users) * double(n_items));
    int64_t base = total / n_users;
    int64_t rem = total % n_users;
    Vec weights(n_items);
    for (int j = 0; j < n_items; ++j) {
      weights[j] = std::pow(double(j + 1), -cfg.popularity_exponent);
    }
    for (int u = 0; u < n_users; ++u) {
      int n_u = int(base + (u < rem ? 1 : 0));
      if (n_u == 0) continue;
      Rng rng(derive_seed(cfg.seed, seed_tag(std::string("synth.inter.") + tag),
                          uint64_t(u)));
      std::vector<int> picked =
          weighted_sample_without_replacement(weights, n_u, rng);
      for (size_t k = 0; k < picked.size(); ++k) {
        int j = picked[k];
        double r = ideal_rating(user_latents.row(u), item_latents.row(j),
                                cfg.min_rating, cfg.max_rating);
        if (cfg.rating_noise > 0.0) r += cfg.rating_noise * rng.normal();
        r = std::clamp(double(std::llround(r)), cfg.min_rating,
                       cfg.max_rating);
        set.records.push_back(Interaction{u, j, r, int64_t(k + 1)});
      }
    }
    set.popularity.assign(n_items, 0);
    for (const Interaction& r : set.records) ++set.popularity[r.item];
  };

  fill_domain(out.raw_source, "src", src_users, src_items, truth.users_src,
              truth.items_src, cfg.density_src);
  fill_domain(out.raw_target, "tgt", tgt_users, tgt_items, truth.users_tgt,
              truth.items_tgt, cfg.density_tgt);
  out.pair = build_domain_pair(out.raw_source, out.raw_target,
                               user_overlap ? Mode::CDR : Mode::CSR);
  return out;
}

namespace {

void write_mat_block(std::ostream& out, const char* name, const Mat& m) {
  out << '[' << name << "] " << m.rows << ' ' << m.cols << '\n';
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      if (j) out << ' ';
      out << format_double(m.at(i, j));
    }
    out << '\n';
  }
}

}  // namespace

void save_truth(const std::string& path, const SynthTruth& truth) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "cvpm-truth-v1\n";
  out << "map " << map_kind_name(truth.map_kind) << '\n';
  out << "overlap "
      << (truth.overlap_side == OverlapSide::User ? "user" : "item") << ' '
      << truth.overlap_ids.size() << '\n';
  for (const std::string& id : truth.overlap_ids) out << id << '\n';
  write_mat_block(out, "users_src", truth.users_src);
  write_mat_block(out, "users_tgt", truth.users_tgt);
  write_mat_block(out, "items_src", truth.items_src);
  write_mat_block(out, "items_tgt", truth.items_tgt);
  write_mat_block(out, "map_a", truth.map_a);
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace cvpm
