#include "cvpm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cvpm/rng.hpp"

namespace cvpm {

int InteractionSet::add_user(const std::string& id) {
  auto it = user_index.find(id);
  if (it != user_index.end()) return it->second;
  int idx = int(user_ids.size());
  user_ids.push_back(id);
  user_index.emplace(id, idx);
  return idx;
}

int InteractionSet::add_item(const std::string& id) {
  auto it = item_index.find(id);
  if (it != item_index.end()) return it->second;
  int idx = int(item_ids.size());
  item_ids.push_back(id);
  item_index.emplace(id, idx);
  popularity.push_back(0);
  return idx;
}

int InteractionSet::find_user(const std::string& id) const {
  auto it = user_index.find(id);
  return it == user_index.end() ? -1 : it->second;
}

int InteractionSet::find_item(const std::string& id) const {
  auto it = item_index.find(id);
  return it == item_index.end() ? -1 : it->second;
}

namespace {

struct RawRecord {
  std::string user;
  std::string item;
  double rating;
  int64_t timestamp;
};

// Vocab in first-appearance order, duplicates latest-timestamp-wins (ties go
// to the later record), popularity over the surviving records.
InteractionSet build_set(const std::vector<RawRecord>& raw, double min_rating,
                         double max_rating) {
  InteractionSet s;
  s.min_rating = min_rating;
  s.max_rating = max_rating;
  std::unordered_map<int64_t, int> slot;
  for (const RawRecord& r : raw) {
    int u = s.add_user(r.user);
    int i = s.add_item(r.item);
    int64_t key = int64_t(u) * (int64_t(1) << 32) + i;
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(key, int(s.records.size()));
      s.records.push_back({u, i, r.rating, r.timestamp});
    } else if (r.timestamp >= s.records[it->second].timestamp) {
      s.records[it->second] = {u, i, r.rating, r.timestamp};
    }
  }
  for (const Interaction& rec : s.records) ++s.popularity[rec.item];
  return s;
}

double parse_real(const std::string& field, int line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ParseError("line " + std::to_string(line_no) +
                     ": bad numeric field '" + field + "'");
  }
  return v;
}

int64_t parse_int(const std::string& field, int line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0') {
    throw ParseError("line " + std::to_string(line_no) +
                     ": bad integer field '" + field + "'");
  }
  return v;
}

}  // namespace

InteractionSet parse_ratings(std::istream& in, const ParseSchema& schema) {
  std::vector<RawRecord> raw;
  std::string line;
  int line_no = 0;
  int n_cols = 1 + std::max({schema.col_user, schema.col_item,
                             schema.col_rating, schema.col_time});
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, schema.delimiter)) {
      fields.push_back(field);
    }
    if (!line.empty() && line.back() == schema.delimiter) fields.push_back("");
    if (int(fields.size()) != n_cols) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(n_cols) + " fields, got " +
                       std::to_string(fields.size()));
    }
    RawRecord r;
    r.user = fields[schema.col_user];
    r.item = fields[schema.col_item];
    r.rating = parse_real(fields[schema.col_rating], line_no);
    r.timestamp = parse_int(fields[schema.col_time], line_no);
    if (r.user.empty() || r.item.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty id");
    }
    if (r.rating < schema.min_rating || r.rating > schema.max_rating) {
      throw ValidationError("line " + std::to_string(line_no) + ": rating " +
                            format_double(r.rating) + " outside scale [" +
                            format_double(schema.min_rating) + ", " +
                            format_double(schema.max_rating) + "]");
    }
    raw.push_back(std::move(r));
  }
  return build_set(raw, schema.min_rating, schema.max_rating);
}

InteractionSet parse_ratings_file(const std::string& path,
                                  const ParseSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ratings file: " + path);
  return parse_ratings(in, schema);
}

void write_ratings(std::ostream& out, const InteractionSet& s) {
  for (const Interaction& r : s.records) {
    out << s.user_ids[r.user] << ',' << s.item_ids[r.item] << ','
        << format_double(r.rating) << ',' << r.timestamp << '\n';
  }
}

void write_ratings_file(const std::string& path, const InteractionSet& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ratings file: " + path);
  write_ratings(out, s);
}

InteractionSet filter_records(
    const InteractionSet& s,
    const std::function<bool(const Interaction&)>& pred) {
  InteractionSet out = s;
  out.records.clear();
  std::fill(out.popularity.begin(), out.popularity.end(), 0);
  for (const Interaction& r : s.records) {
    if (pred(r)) {
      out.records.push_back(r);
      ++out.popularity[r.item];
    }
  }
  return out;
}

InteractionSet transpose(const InteractionSet& s) {
  InteractionSet out;
  out.min_rating = s.min_rating;
  out.max_rating = s.max_rating;
  out.user_ids = s.item_ids;
  out.user_index = s.item_index;
  out.item_ids = s.user_ids;
  out.item_index = s.user_index;
  out.popularity.assign(out.item_ids.size(), 0);
  out.records.reserve(s.records.size());
  for (const Interaction& r : s.records) {
    out.records.push_back({r.item, r.user, r.rating, r.timestamp});
    ++out.popularity[r.user];
  }
  return out;
}

namespace {

std::string normalize_id(const std::string& id) {
  size_t b = id.find_first_not_of(" \t");
  size_t e = id.find_last_not_of(" \t");
  if (b == std::string::npos) return "";
  std::string out = id.substr(b, e - b + 1);
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

InteractionSet normalize_item_ids(const InteractionSet& s) {
  std::vector<RawRecord> raw;
  raw.reserve(s.records.size());
  for (const Interaction& r : s.records) {
    raw.push_back({s.user_ids[r.user], normalize_id(s.item_ids[r.item]),
                   r.rating, r.timestamp});
  }
  return build_set(raw, s.min_rating, s.max_rating);
}

std::string mode_name(Mode m) { return m == Mode::CDR ? "cdr" : "csr"; }

namespace {

DomainPair pair_from_oriented(InteractionSet src, InteractionSet tgt,
                              Mode mode) {
  DomainPair pair;
  pair.mode = mode;
  pair.source = std::move(src);
  pair.target = std::move(tgt);
  for (const std::string& id : pair.source.user_ids) {
    if (pair.target.find_user(id) >= 0) pair.overlap_ids.push_back(id);
  }
  if (pair.overlap_ids.empty()) {
    throw DataError("no overlapping " +
                    std::string(mode == Mode::CDR ? "users" : "items") +
                    " between source and target");
  }
  pair.s_ratio = double(pair.overlap_ids.size()) / pair.source.user_count();
  return pair;
}

}  // namespace

DomainPair build_domain_pair(InteractionSet src, InteractionSet tgt,
                             Mode mode) {
  if (src.records.empty()) throw DataError("source set has no records");
  if (tgt.records.empty()) throw DataError("target set has no records");
  if (mode == Mode::CSR) {
    src = transpose(normalize_item_ids(src));
    tgt = transpose(normalize_item_ids(tgt));
  }
  return pair_from_oriented(std::move(src), std::move(tgt), mode);
}

DomainPair role_swap(const DomainPair& pair) {
  Mode flipped = pair.mode == Mode::CDR ? Mode::CSR : Mode::CDR;
  return pair_from_oriented(transpose(pair.source), transpose(pair.target),
                            flipped);
}

SplitPlan make_split(const DomainPair& pair, double train_ratio, bool warm,
                     uint64_t seed, std::ostream* log) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw ValidationError("train_ratio must lie in (0, 1), got " +
                          format_double(train_ratio));
  }
  SplitPlan plan;
  plan.train_ratio = train_ratio;
  plan.warm = warm;
  std::vector<std::string> ids = pair.overlap_ids;
  Rng rng(derive_seed(seed, seed_tag("split")));
  rng.shuffle(ids);
  size_t n_train = size_t(std::llround(train_ratio * double(ids.size())));
  plan.train_overlap.assign(ids.begin(), ids.begin() + n_train);
  plan.test_overlap.assign(ids.begin() + n_train, ids.end());
  if (!warm) return plan;

  std::vector<std::string> kept;
  for (const std::string& id : plan.test_overlap) {
    int u = pair.target.find_user(id);
    std::vector<int> recs;
    for (int i = 0; i < int(pair.target.records.size()); ++i) {
      if (pair.target.records[i].user == u) recs.push_back(i);
    }
    if (recs.size() < 2) {
      plan.excluded.push_back(id);
      if (log) {
        *log << "warm split: user " << id << " excluded ("
             << recs.size() << " target record"
             << (recs.size() == 1 ? "" : "s") << ")\n";
      }
      continue;
    }
    std::sort(recs.begin(), recs.end(), [&](int a, int b) {
      const Interaction& ra = pair.target.records[a];
      const Interaction& rb = pair.target.records[b];
      if (ra.timestamp != rb.timestamp) return ra.timestamp < rb.timestamp;
      return a < b;
    });
    size_t mid = (recs.size() + 1) / 2;
    WarmSplit ws;
    ws.finetune_records.assign(recs.begin(), recs.begin() + mid);
    ws.eval_records.assign(recs.begin() + mid, recs.end());
    plan.warm_splits.emplace(id, std::move(ws));
    kept.push_back(id);
  }
  plan.test_overlap = std::move(kept);
  return plan;
}

namespace {

void write_set_block(std::ostream& out, const char* name,
                     const InteractionSet& s) {
  out << '[' << name << "]\n";
  out << "scale " << format_double(s.min_rating) << ' '
      << format_double(s.max_rating) << '\n';
  out << "records " << s.records.size() << '\n';
  write_ratings(out, s);
}

InteractionSet read_set_block(std::istream& in, const std::string& name,
                              const std::string& path) {
  std::string line;
  if (!std::getline(in, line) || line != "[" + name + "]") {
    throw ParseError(path + ": expected [" + name + "] block");
  }
  ParseSchema schema;
  std::string word;
  {
    if (!std::getline(in, line)) throw ParseError(path + ": truncated");
    std::istringstream ls(line);
    ls >> word >> schema.min_rating >> schema.max_rating;
    if (word != "scale" || !ls) throw ParseError(path + ": bad scale line");
  }
  size_t n = 0;
  {
    if (!std::getline(in, line)) throw ParseError(path + ": truncated");
    std::istringstream ls(line);
    ls >> word >> n;
    if (word != "records" || !ls) throw ParseError(path + ": bad records line");
  }
  std::string body;
  for (size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ParseError(path + ": truncated records");
    body += line;
    body += '\n';
  }
  std::istringstream bs(body);
  return parse_ratings(bs, schema);
}

std::vector<std::string> read_id_list(std::istream& in, const std::string& key,
                                      const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": truncated");
  std::istringstream ls(line);
  std::string word;
  size_t n = 0;
  ls >> word >> n;
  if (word != key || !ls) throw ParseError(path + ": bad " + key + " line");
  std::vector<std::string> ids(n);
  for (size_t i = 0; i < n; ++i) {
    if (!std::getline(in, ids[i])) throw ParseError(path + ": truncated ids");
  }
  return ids;
}

}  // namespace

void save_pair_snapshot(const std::string& path, const DomainPair& pair,
                        const SplitPlan& plan) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write snapshot: " + path);
  out << "cvpm-pair-v1\n";
  out << "mode " << mode_name(pair.mode) << '\n';
  write_set_block(out, "source", pair.source);
  write_set_block(out, "target", pair.target);
  out << "[split]\n";
  out << "ratio " << format_double(plan.train_ratio) << '\n';
  out << "warm " << (plan.warm ? 1 : 0) << '\n';
  out << "train " << plan.train_overlap.size() << '\n';
  for (const auto& id : plan.train_overlap) out << id << '\n';
  out << "test " << plan.test_overlap.size() << '\n';
  for (const auto& id : plan.test_overlap) out << id << '\n';
  out << "excluded " << plan.excluded.size() << '\n';
  for (const auto& id : plan.excluded) out << id << '\n';
  out << "warm_users " << plan.warm_splits.size() << '\n';
  for (const auto& [id, ws] : plan.warm_splits) {
    out << id << '\n';
    out << ws.finetune_records.size() << ' ' << ws.eval_records.size();
    for (int i : ws.finetune_records) out << ' ' << i;
    for (int i : ws.eval_records) out << ' ' << i;
    out << '\n';
  }
}

std::pair<DomainPair, SplitPlan> load_pair_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open snapshot: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "cvpm-pair-v1") {
    throw ParseError(path + ": not a pair snapshot");
  }
  if (!std::getline(in, line)) throw ParseError(path + ": truncated");
  Mode mode;
  if (line == "mode cdr") {
    mode = Mode::CDR;
  } else if (line == "mode csr") {
    mode = Mode::CSR;
  } else {
    throw ParseError(path + ": bad mode line");
  }
  InteractionSet src = read_set_block(in, "source", path);
  InteractionSet tgt = read_set_block(in, "target", path);
  DomainPair pair = pair_from_oriented(std::move(src), std::move(tgt), mode);

  if (!std::getline(in, line) || line != "[split]") {
    throw ParseError(path + ": expected [split] block");
  }
  SplitPlan plan;
  std::string word;
  {
    if (!std::getline(in, line)) throw ParseError(path + ": truncated");
    std::istringstream ls(line);
    ls >> word >> plan.train_ratio;
    if (word != "ratio" || !ls) throw ParseError(path + ": bad ratio line");
  }
  {
    if (!std::getline(in, line)) throw ParseError(path + ": truncated");
    int w = 0;
    std::istringstream ls(line);
    ls >> word >> w;
    if (word != "warm" || !ls) throw ParseError(path + ": bad warm line");
    plan.warm = w != 0;
  }
  plan.train_overlap = read_id_list(in, "train", path);
  plan.test_overlap = read_id_list(in, "test", path);
  plan.excluded = read_id_list(in, "excluded", path);
  {
    if (!std::getline(in, line)) throw ParseError(path + ": truncated");
    std::istringstream ls(line);
    size_t n = 0;
    ls >> word >> n;
    if (word != "warm_users" || !ls) {
      throw ParseError(path + ": bad warm_users line");
    }
    for (size_t i = 0; i < n; ++i) {
      std::string id;
      if (!std::getline(in, id)) throw ParseError(path + ": truncated warm");
      if (!std::getline(in, line)) throw ParseError(path + ": truncated warm");
      std::istringstream ws_in(line);
      size_t nf = 0;
      size_t ne = 0;
      ws_in >> nf >> ne;
      if (!ws_in) throw ParseError(path + ": bad warm record counts");
      WarmSplit ws;
      ws.finetune_records.resize(nf);
      ws.eval_records.resize(ne);
      for (size_t k = 0; k < nf; ++k) ws_in >> ws.finetune_records[k];
      for (size_t k = 0; k < ne; ++k) ws_in >> ws.eval_records[k];
      if (!ws_in) throw ParseError(path + ": bad warm record indices");
      plan.warm_splits.emplace(id, std::move(ws));
    }
  }
  return {std::move(pair), std::move(plan)};
}

}  // namespace cvpm
