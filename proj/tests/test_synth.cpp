#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <utility>

#include "cvpm/synth.hpp"
#include "doctest.h"

using namespace cvpm;

namespace {

SynthConfig tiny_config() {
  SynthConfig cfg;
  cfg.n_users_src = 12;
  cfg.n_users_tgt = 10;
  cfg.overlap_count = 5;
  cfg.n_items_src = 8;
  cfg.n_items_tgt = 8;
  cfg.dim = 4;
  cfg.density_src = 0.5;
  cfg.density_tgt = 0.5;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("ideal ratings are centered and scale with alignment") {
  // Orthogonal latents sit at the midpoint of the scale.
  CHECK(ideal_rating({1.0, 0.0}, {0.0, 1.0}, 1.0, 5.0) == 3.0);
  // Aligned latents move a quarter of the range per unit of normalized dot.
  double r = ideal_rating({1.0, 0.0}, {1.0, 0.0}, 1.0, 5.0);
  CHECK(r == doctest::Approx(3.0 + 1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(ideal_rating({-2.0}, {1.0}, 1.0, 5.0) == 3.0 - 2.0);
}

TEST_CASE("identity bridge with no noise reproduces ratings across domains") {
  SynthConfig cfg = tiny_config();
  cfg.map_kind = MapKind::Identity;
  cfg.rating_noise = 0.0;
  cfg.map_noise = 0.0;
  cfg.density_src = 1.0;
  cfg.density_tgt = 1.0;
  SynthData data = generate_synth(cfg);

  // Item latents are shared per index, so an overlap user's rating of si_k
  // must equal their rating of ti_k.
  const InteractionSet& src = data.raw_source;
  const InteractionSet& tgt = data.raw_target;
  int compared = 0;
  for (const std::string& id : data.truth.overlap_ids) {
    int su = src.find_user(id);
    int tu = tgt.find_user(id);
    REQUIRE(su >= 0);
    REQUIRE(tu >= 0);
    std::map<int, double> by_index;
    for (const Interaction& r : src.records) {
      if (r.user != su) continue;
      by_index[std::stoi(src.item_ids[r.item].substr(2))] = r.rating;
    }
    for (const Interaction& r : tgt.records) {
      if (r.user != tu) continue;
      int idx = std::stoi(tgt.item_ids[r.item].substr(2));
      REQUIRE(by_index.count(idx) == 1);  // density 1: both sides complete
      CHECK(r.rating == by_index[idx]);
      ++compared;
    }
  }
  CHECK(compared == 5 * 8);
}

TEST_CASE("zero overlap flows through to the pair builder's diagnosis") {
  SynthConfig cfg = tiny_config();
  cfg.overlap_count = 0;
  CHECK_THROWS_WITH_AS(generate_synth(cfg), doctest::Contains("no overlapping"),
                       DataError);
}

TEST_CASE("invalid generator settings are configuration errors") {
  SynthConfig cfg = tiny_config();
  cfg.overlap_count = 11;  // > min(12, 10)
  CHECK_THROWS_AS(generate_synth(cfg), ConfigError);
  cfg = tiny_config();
  cfg.density_src = 0.0;
  CHECK_THROWS_AS(generate_synth(cfg), ConfigError);
  cfg = tiny_config();
  cfg.rating_noise = -0.1;
  CHECK_THROWS_AS(generate_synth(cfg), ConfigError);
  cfg = tiny_config();
  cfg.max_rating = cfg.min_rating;
  CHECK_THROWS_AS(generate_synth(cfg), ConfigError);
}

TEST_CASE("a steep popularity law concentrates interactions") {
  SynthConfig cfg;
  cfg.n_users_src = 400;
  cfg.n_users_tgt = 50;
  cfg.overlap_count = 20;
  cfg.n_items_src = 500;
  cfg.n_items_tgt = 100;
  cfg.dim = 4;
  cfg.density_src = 0.01;  // five interactions per source user
  cfg.density_tgt = 0.05;
  cfg.popularity_exponent = 1.5;
  cfg.seed = 3;
  SynthData data = generate_synth(cfg);
  const InteractionSet& src = data.raw_source;
  // Top 1% of items (5 of 500) must hold more than 10% of all interactions.
  std::vector<int64_t> pop = src.popularity;
  std::sort(pop.begin(), pop.end(), std::greater<int64_t>());
  int64_t top = 0;
  for (int i = 0; i < 5; ++i) top += pop[size_t(i)];
  int64_t all = 0;
  for (int64_t p : pop) all += p;
  CHECK(double(top) > 0.10 * double(all));
}

TEST_CASE("interaction counts hit the configured density") {
  SynthConfig cfg = tiny_config();
  cfg.density_src = 0.25;
  cfg.density_tgt = 0.4;
  SynthData data = generate_synth(cfg);
  auto expect = [](double density, int u, int i) {
    return double(std::llround(density * u * i));
  };
  double want_src = expect(cfg.density_src, 12, 8);
  double want_tgt = expect(cfg.density_tgt, 10, 8);
  CHECK(std::fabs(double(data.raw_source.records.size()) - want_src) <=
        0.01 * want_src);
  CHECK(std::fabs(double(data.raw_target.records.size()) - want_tgt) <=
        0.01 * want_tgt);
  // No duplicate (user, item) pairs: per-user draws are without replacement.
  std::map<std::pair<int, int>, int> seen;
  for (const Interaction& r : data.raw_source.records) {
    CHECK(++seen[{r.user, r.item}] == 1);
  }
}

TEST_CASE("ratings respect the configured scale") {
  SynthConfig cfg = tiny_config();
  cfg.rating_noise = 2.0;  // heavy noise still clamps
  SynthData data = generate_synth(cfg);
  for (const Interaction& r : data.raw_target.records) {
    CHECK(r.rating >= cfg.min_rating);
    CHECK(r.rating <= cfg.max_rating);
  }
}

TEST_CASE("regeneration from the same config is bit-identical") {
  SynthConfig cfg = tiny_config();
  SynthData a = generate_synth(cfg);
  SynthData b = generate_synth(cfg);
  CHECK(a.truth.users_src.data == b.truth.users_src.data);
  CHECK(a.truth.map_a.data == b.truth.map_a.data);
  REQUIRE(a.raw_source.records.size() == b.raw_source.records.size());
  for (size_t i = 0; i < a.raw_source.records.size(); ++i) {
    CHECK(a.raw_source.records[i].user == b.raw_source.records[i].user);
    CHECK(a.raw_source.records[i].item == b.raw_source.records[i].item);
    CHECK(a.raw_source.records[i].rating == b.raw_source.records[i].rating);
  }
  SynthConfig other = cfg;
  other.seed = 8;
  SynthData c = generate_synth(other);
  CHECK(a.truth.users_src.data != c.truth.users_src.data);
}

TEST_CASE("overlap naming and the prepared pair line up") {
  SynthConfig cfg = tiny_config();
  SynthData data = generate_synth(cfg);
  CHECK(data.truth.overlap_ids.size() == 5);
  for (const std::string& id : data.truth.overlap_ids) {
    CHECK(id.substr(0, 2) == "ou");
  }
  CHECK(data.pair.overlap_ids == data.truth.overlap_ids);
  CHECK(data.pair.mode == Mode::CDR);
  CHECK(data.pair.s_ratio == doctest::Approx(5.0 / 12.0));
}

TEST_CASE("item-side overlap generates a role-swapped pair") {
  SynthConfig cfg = tiny_config();
  cfg.overlap_side = OverlapSide::Item;
  cfg.overlap_count = 4;  // against min(8, 8) items
  SynthData data = generate_synth(cfg);
  CHECK(data.pair.mode == Mode::CSR);
  CHECK(data.truth.overlap_ids.size() == 4);
  for (const std::string& id : data.truth.overlap_ids) {
    CHECK(id.substr(0, 2) == "oi");
  }
  // Stored role-swapped: the shared items are the anchoring "users".
  for (const std::string& id : data.truth.overlap_ids) {
    CHECK(data.pair.source.find_user(id) >= 0);
    CHECK(data.pair.target.find_user(id) >= 0);
  }
}

TEST_CASE("identity map stores an identity bridge in the truth") {
  SynthConfig cfg = tiny_config();
  cfg.map_kind = MapKind::Identity;
  SynthData data = generate_synth(cfg);
  for (int r = 0; r < cfg.dim; ++r) {
    for (int c = 0; c < cfg.dim; ++c) {
      CHECK(data.truth.map_a.at(r, c) == (r == c ? 1.0 : 0.0));
    }
  }
  // Linear and tanh kinds draw a dense bridge instead.
  cfg.map_kind = MapKind::Tanh;
  SynthData t = generate_synth(cfg);
  double off_diag = 0.0;
  for (int r = 0; r < cfg.dim; ++r) {
    for (int c = 0; c < cfg.dim; ++c) {
      if (r != c) off_diag += std::fabs(t.truth.map_a.at(r, c));
    }
  }
  CHECK(off_diag > 0.0);
}

TEST_CASE("map kind names round-trip and reject junk") {
  for (MapKind k : {MapKind::Identity, MapKind::Linear, MapKind::Tanh}) {
    CHECK(map_kind_from_name(map_kind_name(k)) == k);
  }
  CHECK_THROWS_AS(map_kind_from_name("cubic"), ConfigError);
}

TEST_CASE("truth files carry the version header and latent blocks") {
  SynthConfig cfg = tiny_config();
  SynthData data = generate_synth(cfg);
  std::string path = "truth_test.txt";
  save_truth(path, data.truth);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  std::remove(path.c_str());
  CHECK(text.find("cvpm-truth-v1") != std::string::npos);
  CHECK(text.find("[users_src]") != std::string::npos);
  CHECK(text.find("[map_a]") != std::string::npos);
  CHECK(text.find("ou0000") != std::string::npos);
}
