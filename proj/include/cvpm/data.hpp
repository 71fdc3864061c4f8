#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cvpm/common.hpp"

namespace cvpm {

struct Interaction {
  int user = -1;
  int item = -1;
  double rating = 0.0;
  int64_t timestamp = 0;
};

struct ParseSchema {
  char delimiter = ',';
  int col_user = 0;
  int col_item = 1;
  int col_rating = 2;
  int col_time = 3;
  double min_rating = 1.0;
  double max_rating = 5.0;
};

struct InteractionSet {
  std::vector<Interaction> records;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, int> user_index;
  std::unordered_map<std::string, int> item_index;
  std::vector<int64_t> popularity;
  double min_rating = 1.0;
  double max_rating = 5.0;

  int user_count() const { return int(user_ids.size()); }
  int item_count() const { return int(item_ids.size()); }
  int add_user(const std::string& id);
  int add_item(const std::string& id);
  int find_user(const std::string& id) const;
  int find_item(const std::string& id) const;
};

InteractionSet parse_ratings(std::istream& in, const ParseSchema& schema = {});
InteractionSet parse_ratings_file(const std::string& path,
                                  const ParseSchema& schema = {});
void write_ratings(std::ostream& out, const InteractionSet& s);
void write_ratings_file(const std::string& path, const InteractionSet& s);

// Keeps both vocabularies intact, drops records failing pred, recomputes
// popularity. Embedding tables built on the result stay index-aligned with
// the original set.
InteractionSet filter_records(const InteractionSet& s,
                              const std::function<bool(const Interaction&)>& pred);

// Swap user and item roles; involution.
InteractionSet transpose(const InteractionSet& s);

// Lowercase + trim item ids; colliding items merge, duplicate (user,item)
// records resolve latest-timestamp-wins.
InteractionSet normalize_item_ids(const InteractionSet& s);

enum class Mode { CDR, CSR };
std::string mode_name(Mode m);

// For CSR the sets are stored role-swapped (items act as users), so every
// downstream module runs unchanged.
struct DomainPair {
  InteractionSet source;
  InteractionSet target;
  Mode mode = Mode::CDR;
  std::vector<std::string> overlap_ids;
  double s_ratio = 0.0;
};

DomainPair build_domain_pair(InteractionSet src, InteractionSet tgt, Mode mode);
// Transpose both sets back and recompute the overlap on the other side.
DomainPair role_swap(const DomainPair& pair);

// Record indices into target.records for one warm-start test user.
struct WarmSplit {
  std::vector<int> finetune_records;
  std::vector<int> eval_records;
};

struct SplitPlan {
  std::vector<std::string> train_overlap;
  std::vector<std::string> test_overlap;
  double train_ratio = 0.8;
  bool warm = false;
  std::map<std::string, WarmSplit> warm_splits;
  std::vector<std::string> excluded;
};

SplitPlan make_split(const DomainPair& pair, double train_ratio, bool warm,
                     uint64_t seed, std::ostream* log = nullptr);

void save_pair_snapshot(const std::string& path, const DomainPair& pair,
                        const SplitPlan& plan);
std::pair<DomainPair, SplitPlan> load_pair_snapshot(const std::string& path);

}  // namespace cvpm
