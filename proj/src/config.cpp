#include "cvpm/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cvpm/rng.hpp"

namespace cvpm {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& sec, const std::string& key,
                            const std::string& v, const char* want) {
  throw ConfigError("config: [" + sec + "] " + key + ": expected " + want +
                    ", got '" + v + "'");
}

double to_double(const std::string& sec, const std::string& key,
                 const std::string& v) {
  const char* s = v.c_str();
  char* end = nullptr;
  double x = std::strtod(s, &end);
  if (end == s || *end != '\0') bad_value(sec, key, v, "a number");
  return x;
}

int64_t to_int(const std::string& sec, const std::string& key,
               const std::string& v) {
  const char* s = v.c_str();
  char* end = nullptr;
  long long x = std::strtoll(s, &end, 10);
  if (end == s || *end != '\0') bad_value(sec, key, v, "an integer");
  return x;
}

uint64_t to_u64(const std::string& sec, const std::string& key,
                const std::string& v) {
  const char* s = v.c_str();
  char* end = nullptr;
  unsigned long long x = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0' || v.front() == '-') {
    bad_value(sec, key, v, "an unsigned integer");
  }
  return x;
}

bool to_bool(const std::string& sec, const std::string& key,
             const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  bad_value(sec, key, v, "a boolean");
}

std::vector<int> to_int_list(const std::string& sec, const std::string& key,
                             const std::string& v) {
  std::vector<int> out;
  std::istringstream in(v);
  std::string piece;
  while (std::getline(in, piece, ',')) {
    out.push_back(int(to_int(sec, key, trim(piece))));
  }
  if (out.empty()) bad_value(sec, key, v, "a comma-separated integer list");
  return out;
}

}  // namespace

KvMap parse_ini(std::istream& in) {
  KvMap kv;
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": malformed section header " + t);
      }
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty section name");
      }
      kv[section];
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value, got " + t);
    }
    std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key " +
                        key + " outside any section");
    }
    kv[section][key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KvMap parse_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_ini(in);
}

void write_ini(std::ostream& out, const KvMap& kv) {
  bool first = true;
  for (const auto& [section, keys] : kv) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    for (const auto& [key, value] : keys) {
      out << key << " = " << value << '\n';
    }
  }
}

void apply_overrides(KvMap& kv, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    size_t eq = s.find('=');
    size_t dotpos = s.find('.');
    if (eq == std::string::npos || dotpos == std::string::npos ||
        dotpos == 0 || dotpos + 1 >= eq || eq == s.size()) {
      throw ConfigError("override must look like section.key=value: " + s);
    }
    kv[trim(s.substr(0, dotpos))][trim(s.substr(dotpos + 1, eq - dotpos - 1))] =
        trim(s.substr(eq + 1));
  }
}

namespace {

// Tracks which keys the input provided and flags leftovers as typos.
class Section {
 public:
  Section(const KvMap& kv, std::string name) : name_(std::move(name)) {
    auto it = kv.find(name_);
    if (it != kv.end()) pending_ = it->second;
  }

  bool has(const std::string& key) {
    return pending_.find(key) != pending_.end();
  }
  std::string take(const std::string& key) {
    auto it = pending_.find(key);
    std::string v = it->second;
    pending_.erase(it);
    return v;
  }
  void get(const std::string& key, double& out) {
    if (has(key)) out = to_double(name_, key, take(key));
  }
  void get(const std::string& key, int& out) {
    if (has(key)) out = int(to_int(name_, key, take(key)));
  }
  void get(const std::string& key, bool& out) {
    if (has(key)) out = to_bool(name_, key, take(key));
  }
  void get(const std::string& key, uint64_t& out) {
    if (has(key)) out = to_u64(name_, key, take(key));
  }
  void get(const std::string& key, std::string& out) {
    if (has(key)) out = take(key);
  }
  const std::string& name() const { return name_; }

  void finish() {
    if (!pending_.empty()) {
      throw ConfigError("config: unknown key '" + pending_.begin()->first +
                        "' in section [" + name_ + "]");
    }
  }

 private:
  std::string name_;
  std::map<std::string, std::string> pending_;
};

}  // namespace

RunConfig config_from_kv(const KvMap& kv) {
  static const std::vector<std::string> known = {"run", "synth", "mf", "cvpm",
                                                 "eval", "emcdr"};
  for (const auto& [section, keys] : kv) {
    if (std::find(known.begin(), known.end(), section) == known.end()) {
      throw ConfigError("config: unknown section [" + section + "]");
    }
  }
  RunConfig rc;

  Section run(kv, "run");
  run.get("seed", rc.seed);
  if (run.has("mode")) {
    std::string m = run.take("mode");
    if (m == "cdr") rc.mode = Mode::CDR;
    else if (m == "csr") rc.mode = Mode::CSR;
    else bad_value("run", "mode", m, "cdr or csr");
  }
  run.get("dim", rc.dim);
  run.get("train_ratio", rc.train_ratio);
  run.get("warm", rc.warm);
  run.get("out_dir", rc.out_dir);
  run.get("source", rc.source_path);
  run.get("target", rc.target_path);
  run.get("tables_dir", rc.tables_dir);
  run.get("checkpoint", rc.checkpoint_path);
  run.get("model", rc.model);
  run.get("finetune_steps", rc.finetune_steps);
  run.get("finetune_lr", rc.finetune_lr);
  run.get("grid_param", rc.grid_param);
  run.finish();
  if (rc.model != "cvpm" && rc.model != "emcdr" && rc.model != "tgt") {
    bad_value("run", "model", rc.model, "cvpm, emcdr, or tgt");
  }

  Section synth(kv, "synth");
  rc.synth.dim = rc.dim;
  rc.synth.seed = derive_seed(rc.seed, seed_tag("synth"));
  rc.synth.overlap_side =
      rc.mode == Mode::CDR ? OverlapSide::User : OverlapSide::Item;
  synth.get("users_src", rc.synth.n_users_src);
  synth.get("users_tgt", rc.synth.n_users_tgt);
  synth.get("overlap", rc.synth.overlap_count);
  synth.get("items_src", rc.synth.n_items_src);
  synth.get("items_tgt", rc.synth.n_items_tgt);
  synth.get("dim", rc.synth.dim);
  if (synth.has("map")) {
    rc.synth.map_kind = map_kind_from_name(synth.take("map"));
  }
  synth.get("rating_noise", rc.synth.rating_noise);
  synth.get("map_noise", rc.synth.map_noise);
  synth.get("density_src", rc.synth.density_src);
  synth.get("density_tgt", rc.synth.density_tgt);
  synth.get("min_rating", rc.synth.min_rating);
  synth.get("max_rating", rc.synth.max_rating);
  synth.get("popularity_exponent", rc.synth.popularity_exponent);
  synth.get("seed", rc.synth.seed);
  synth.finish();

  Section mf(kv, "mf");
  rc.mf.dim = rc.dim;
  rc.mf.seed = derive_seed(rc.seed, seed_tag("mf"));
  mf.get("dim", rc.mf.dim);
  mf.get("reg", rc.mf.reg);
  mf.get("lr", rc.mf.lr);
  mf.get("weight_decay", rc.mf.weight_decay);
  mf.get("epochs", rc.mf.epochs);
  mf.get("batch_size", rc.mf.batch_size);
  mf.get("init_std", rc.mf.init_std);
  mf.get("early_stop_rel", rc.mf.early_stop_rel);
  mf.get("seed", rc.mf.seed);
  mf.finish();

  Section cvpm(kv, "cvpm");
  rc.cvpm.dim = rc.dim;
  rc.cvpm.seed = derive_seed(rc.seed, seed_tag("cvpm"));
  rc.cvpm.mode = rc.mode;
  cvpm.get("dim", rc.cvpm.dim);
  cvpm.get("n_dot_pos", rc.cvpm.n_dot_pos);
  cvpm.get("n_dot_neg", rc.cvpm.n_dot_neg);
  cvpm.get("n_ddot_pos", rc.cvpm.n_ddot_pos);
  cvpm.get("n_ddot_neg", rc.cvpm.n_ddot_neg);
  cvpm.get("centroids", rc.cvpm.centroids);
  cvpm.get("tau", rc.cvpm.tau);
  cvpm.get("gamma", rc.cvpm.gamma);
  cvpm.get("margin", rc.cvpm.margin);
  cvpm.get("lr", rc.cvpm.lr);
  cvpm.get("weight_decay", rc.cvpm.weight_decay);
  cvpm.get("batch_size", rc.cvpm.batch_size_meta);
  cvpm.get("epochs", rc.cvpm.epochs);
  cvpm.get("ablate_sampling", rc.cvpm.ablate_sampling);
  cvpm.get("ablate_encoder", rc.cvpm.ablate_encoder);
  cvpm.get("ablate_bias", rc.cvpm.ablate_bias);
  cvpm.get("ablate_aux", rc.cvpm.ablate_aux);
  cvpm.get("val_fraction", rc.cvpm.val_fraction);
  cvpm.get("patience", rc.cvpm.patience);
  cvpm.get("map_from_user_embedding", rc.cvpm.map_from_user_embedding);
  cvpm.get("project_centroids", rc.cvpm.project_centroids);
  cvpm.get("seed", rc.cvpm.seed);
  cvpm.finish();

  Section eval(kv, "eval");
  rc.eval.seed = derive_seed(rc.seed, seed_tag("eval"));
  if (eval.has("ks")) rc.eval.ks = to_int_list("eval", "ks", eval.take("ks"));
  eval.get("n_negatives", rc.eval.n_negatives);
  eval.get("seed", rc.eval.seed);
  eval.finish();

  Section emcdr(kv, "emcdr");
  rc.emcdr.seed = derive_seed(rc.seed, seed_tag("emcdr"));
  emcdr.get("hidden", rc.emcdr.hidden);
  emcdr.get("lr", rc.emcdr.lr);
  emcdr.get("weight_decay", rc.emcdr.weight_decay);
  emcdr.get("epochs", rc.emcdr.epochs);
  emcdr.get("batch_size", rc.emcdr.batch_size);
  emcdr.get("seed", rc.emcdr.seed);
  emcdr.finish();

  if (rc.train_ratio <= 0.0 || rc.train_ratio >= 1.0) {
    throw ConfigError("config: [run] train_ratio must lie in (0, 1)");
  }
  return rc;
}

KvMap kv_from_config(const RunConfig& rc) {
  KvMap kv;
  auto& run = kv["run"];
  run["seed"] = std::to_string(rc.seed);
  run["mode"] = mode_name(rc.mode);
  run["dim"] = std::to_string(rc.dim);
  run["train_ratio"] = format_double(rc.train_ratio);
  run["warm"] = rc.warm ? "1" : "0";
  run["out_dir"] = rc.out_dir;
  run["source"] = rc.source_path;
  run["target"] = rc.target_path;
  run["tables_dir"] = rc.tables_dir;
  run["checkpoint"] = rc.checkpoint_path;
  run["model"] = rc.model;
  run["finetune_steps"] = std::to_string(rc.finetune_steps);
  run["finetune_lr"] = format_double(rc.finetune_lr);
  run["grid_param"] = rc.grid_param;

  auto& synth = kv["synth"];
  synth["users_src"] = std::to_string(rc.synth.n_users_src);
  synth["users_tgt"] = std::to_string(rc.synth.n_users_tgt);
  synth["overlap"] = std::to_string(rc.synth.overlap_count);
  synth["items_src"] = std::to_string(rc.synth.n_items_src);
  synth["items_tgt"] = std::to_string(rc.synth.n_items_tgt);
  synth["dim"] = std::to_string(rc.synth.dim);
  synth["map"] = map_kind_name(rc.synth.map_kind);
  synth["rating_noise"] = format_double(rc.synth.rating_noise);
  synth["map_noise"] = format_double(rc.synth.map_noise);
  synth["density_src"] = format_double(rc.synth.density_src);
  synth["density_tgt"] = format_double(rc.synth.density_tgt);
  synth["min_rating"] = format_double(rc.synth.min_rating);
  synth["max_rating"] = format_double(rc.synth.max_rating);
  synth["popularity_exponent"] = format_double(rc.synth.popularity_exponent);
  synth["seed"] = std::to_string(rc.synth.seed);

  auto& mf = kv["mf"];
  mf["dim"] = std::to_string(rc.mf.dim);
  mf["reg"] = format_double(rc.mf.reg);
  mf["lr"] = format_double(rc.mf.lr);
  mf["weight_decay"] = format_double(rc.mf.weight_decay);
  mf["epochs"] = std::to_string(rc.mf.epochs);
  mf["batch_size"] = std::to_string(rc.mf.batch_size);
  mf["init_std"] = format_double(rc.mf.init_std);
  mf["early_stop_rel"] = format_double(rc.mf.early_stop_rel);
  mf["seed"] = std::to_string(rc.mf.seed);

  auto& cv = kv["cvpm"];
  cv["dim"] = std::to_string(rc.cvpm.dim);
  cv["n_dot_pos"] = std::to_string(rc.cvpm.n_dot_pos);
  cv["n_dot_neg"] = std::to_string(rc.cvpm.n_dot_neg);
  cv["n_ddot_pos"] = std::to_string(rc.cvpm.n_ddot_pos);
  cv["n_ddot_neg"] = std::to_string(rc.cvpm.n_ddot_neg);
  cv["centroids"] = std::to_string(rc.cvpm.centroids);
  cv["tau"] = format_double(rc.cvpm.tau);
  cv["gamma"] = format_double(rc.cvpm.gamma);
  cv["margin"] = format_double(rc.cvpm.margin);
  cv["lr"] = format_double(rc.cvpm.lr);
  cv["weight_decay"] = format_double(rc.cvpm.weight_decay);
  cv["batch_size"] = std::to_string(rc.cvpm.batch_size_meta);
  cv["epochs"] = std::to_string(rc.cvpm.epochs);
  cv["ablate_sampling"] = rc.cvpm.ablate_sampling ? "1" : "0";
  cv["ablate_encoder"] = rc.cvpm.ablate_encoder ? "1" : "0";
  cv["ablate_bias"] = rc.cvpm.ablate_bias ? "1" : "0";
  cv["ablate_aux"] = rc.cvpm.ablate_aux ? "1" : "0";
  cv["val_fraction"] = format_double(rc.cvpm.val_fraction);
  cv["patience"] = std::to_string(rc.cvpm.patience);
  cv["map_from_user_embedding"] = rc.cvpm.map_from_user_embedding ? "1" : "0";
  cv["project_centroids"] = rc.cvpm.project_centroids ? "1" : "0";
  cv["seed"] = std::to_string(rc.cvpm.seed);

  auto& ev = kv["eval"];
  std::string ks;
  for (int k : rc.eval.ks) {
    if (!ks.empty()) ks += ',';
    ks += std::to_string(k);
  }
  ev["ks"] = ks;
  ev["n_negatives"] = std::to_string(rc.eval.n_negatives);
  ev["seed"] = std::to_string(rc.eval.seed);

  auto& em = kv["emcdr"];
  em["hidden"] = std::to_string(rc.emcdr.hidden);
  em["lr"] = format_double(rc.emcdr.lr);
  em["weight_decay"] = format_double(rc.emcdr.weight_decay);
  em["epochs"] = std::to_string(rc.emcdr.epochs);
  em["batch_size"] = std::to_string(rc.emcdr.batch_size);
  em["seed"] = std::to_string(rc.emcdr.seed);
  return kv;
}

RunConfig load_run_config(const std::string& path) {
  return config_from_kv(parse_ini_file(path));
}

void save_run_config(const std::string& path, const RunConfig& rc) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path);
  write_ini(out, kv_from_config(rc));
  if (!out) throw ConfigError("failed writing config " + path);
}

}  // namespace cvpm
