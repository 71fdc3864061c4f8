#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cvpm/baselines.hpp"
#include "cvpm/config.hpp"
#include "cvpm/eval.hpp"
#include "cvpm/rng.hpp"
#include "cvpm/synth.hpp"
#include "cvpm/trainer.hpp"
#include "cvpm/transfer.hpp"

namespace fs = std::filesystem;
using namespace cvpm;

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
  std::string mode;
  std::string train_ratio;
  bool warm = false;
  std::string out_dir;
  std::string model;
  std::string grid_param;
  std::string finetune_steps;
  std::string finetune_lr;
  bool ablate_sampling = false;
  bool ablate_encoder = false;
  bool ablate_bias = false;
  bool ablate_aux = false;
  std::vector<std::string> ablations;

  CLI::Option* o_seed = nullptr;
  CLI::Option* o_mode = nullptr;
  CLI::Option* o_ratio = nullptr;
  CLI::Option* o_warm = nullptr;
  CLI::Option* o_out = nullptr;
  CLI::Option* o_model = nullptr;
  CLI::Option* o_grid = nullptr;
  CLI::Option* o_fsteps = nullptr;
  CLI::Option* o_flr = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "INI config file");
  cmd->add_option("--set", f.sets,
                  "Override a config value as section.key=value (repeatable)");
  f.o_seed = cmd->add_option("--seed", f.seed, "Master seed");
  f.o_mode = cmd->add_option("--mode", f.mode, "cdr or csr");
  f.o_ratio = cmd->add_option("--train-ratio", f.train_ratio,
                              "Overlap fraction used for training");
  f.o_warm = cmd->add_flag("--warm", f.warm, "Warm-start protocol");
  f.o_out = cmd->add_option("--out-dir", f.out_dir, "Output directory");
  f.o_model = cmd->add_option("--model", f.model, "cvpm, emcdr, or tgt");
  f.o_grid = cmd->add_option("--grid-param", f.grid_param,
                             "Swept parameter for the grid command");
  f.o_fsteps = cmd->add_option("--finetune-steps", f.finetune_steps,
                               "Warm finetuning steps");
  f.o_flr = cmd->add_option("--finetune-lr", f.finetune_lr,
                            "Warm finetuning learning rate");
  cmd->add_flag("--ablate-sampling", f.ablate_sampling,
                "Drop the sampling enhancement");
  cmd->add_flag("--ablate-encoder", f.ablate_encoder,
                "Replace the preference encoder with mean pooling");
  cmd->add_flag("--ablate-bias", f.ablate_bias,
                "Drop the personalized bias term");
  cmd->add_flag("--ablate-aux", f.ablate_aux,
                "Drop the contrastive objectives");
  cmd->add_option("--ablation", f.ablations,
                  "Ablation switch: ns, ne, nb, or na (repeatable)")
      ->check(CLI::IsMember({"ns", "ne", "nb", "na"}));
}

RunConfig resolve_config(const CommonFlags& f) {
  KvMap kv;
  if (!f.config_path.empty()) kv = parse_ini_file(f.config_path);
  apply_overrides(kv, f.sets);
  // Dedicated flags outrank --set and the file.
  if (f.o_seed->count()) kv["run"]["seed"] = f.seed;
  if (f.o_mode->count()) kv["run"]["mode"] = f.mode;
  if (f.o_ratio->count()) kv["run"]["train_ratio"] = f.train_ratio;
  if (f.o_warm->count()) kv["run"]["warm"] = "1";
  if (f.o_out->count()) kv["run"]["out_dir"] = f.out_dir;
  if (f.o_model->count()) kv["run"]["model"] = f.model;
  if (f.o_grid->count()) kv["run"]["grid_param"] = f.grid_param;
  if (f.o_fsteps->count()) kv["run"]["finetune_steps"] = f.finetune_steps;
  if (f.o_flr->count()) kv["run"]["finetune_lr"] = f.finetune_lr;
  if (f.ablate_sampling) kv["cvpm"]["ablate_sampling"] = "1";
  if (f.ablate_encoder) kv["cvpm"]["ablate_encoder"] = "1";
  if (f.ablate_bias) kv["cvpm"]["ablate_bias"] = "1";
  if (f.ablate_aux) kv["cvpm"]["ablate_aux"] = "1";
  for (const std::string& a : f.ablations) {
    if (a == "ns") kv["cvpm"]["ablate_sampling"] = "1";
    else if (a == "ne") kv["cvpm"]["ablate_encoder"] = "1";
    else if (a == "nb") kv["cvpm"]["ablate_bias"] = "1";
    else if (a == "na") kv["cvpm"]["ablate_aux"] = "1";
  }
  return config_from_kv(kv);
}

struct Workspace {
  RunConfig rc;
  DomainPair pair;
  SplitPlan split;
  SynthData synth;
  bool generated = false;
};

Workspace make_workspace(RunConfig rc, bool write_corpus) {
  Workspace w;
  w.rc = std::move(rc);
  fs::create_directories(w.rc.out_dir);
  if (w.rc.source_path.empty() != w.rc.target_path.empty()) {
    throw ConfigError("give both source and target paths, or neither");
  }
  if (w.rc.source_path.empty()) {
    w.synth = generate_synth(w.rc.synth);
    w.generated = true;
    w.pair = w.synth.pair;
    if (write_corpus) {
      write_ratings_file(w.rc.out_dir + "/source.csv", w.synth.raw_source);
      write_ratings_file(w.rc.out_dir + "/target.csv", w.synth.raw_target);
      save_truth(w.rc.out_dir + "/truth.txt", w.synth.truth);
    }
  } else {
    ParseSchema schema;
    schema.min_rating = w.rc.synth.min_rating;
    schema.max_rating = w.rc.synth.max_rating;
    w.pair = build_domain_pair(parse_ratings_file(w.rc.source_path, schema),
                               parse_ratings_file(w.rc.target_path, schema),
                               w.rc.mode);
  }
  w.split = make_split(w.pair, w.rc.train_ratio, w.rc.warm, w.rc.seed,
                       &std::cerr);
  return w;
}

std::string tables_dir_of(const RunConfig& rc) {
  return rc.tables_dir.empty() ? rc.out_dir + "/tables" : rc.tables_dir;
}

std::string checkpoint_of(const RunConfig& rc) {
  if (!rc.checkpoint_path.empty()) return rc.checkpoint_path;
  return rc.out_dir + "/" + rc.model + ".ckpt";
}

void save_tables(const std::string& dir, const PretrainedTables& t) {
  fs::create_directories(dir);
  save_table(dir + "/u_src.emb", t.u_src);
  save_table(dir + "/v_src.emb", t.v_src);
  save_table(dir + "/u_tgt.emb", t.u_tgt);
  save_table(dir + "/v_tgt.emb", t.v_tgt);
}

PretrainedTables load_tables(const std::string& dir) {
  PretrainedTables t;
  t.u_src = load_table(dir + "/u_src.emb");
  t.v_src = load_table(dir + "/v_src.emb");
  t.u_tgt = load_table(dir + "/u_tgt.emb");
  t.v_tgt = load_table(dir + "/v_tgt.emb");
  return t;
}

PretrainedTables get_tables(const Workspace& w) {
  std::string dir = tables_dir_of(w.rc);
  if (fs::exists(dir + "/u_src.emb")) return load_tables(dir);
  std::cerr << "pretraining embeddings into " << dir << '\n';
  PretrainedTables t = pretrain_pair(w.pair, w.split, w.rc.mf);
  save_tables(dir, t);
  return t;
}

void save_emcdr(const std::string& path, const MappingParams& theta) {
  std::vector<std::pair<std::string, const Mat*>> tensors;
  for (size_t l = 0; l < theta.layers.size(); ++l) {
    tensors.emplace_back("theta." + std::to_string(l) + ".w",
                         &theta.layers[l].w);
    tensors.emplace_back("theta." + std::to_string(l) + ".b",
                         &theta.layers[l].b);
  }
  save_tensors(path, "model emcdr\n", tensors);
}

MappingParams load_emcdr(const std::string& path) {
  TensorFile tf = load_tensors(path);
  MappingParams theta;
  theta.prefix = "theta";
  theta.layers = {{tf.get("theta.0.w"), tf.get("theta.0.b")},
                  {tf.get("theta.1.w"), tf.get("theta.1.b")}};
  return theta;
}

void cmd_synth_gen(const RunConfig& rc) {
  Workspace w = make_workspace(rc, true);
  if (!w.generated) {
    throw ConfigError("synth-gen: source/target paths are set; nothing to "
                      "generate");
  }
  save_pair_snapshot(w.rc.out_dir + "/pair.snapshot", w.pair, w.split);
  save_run_config(w.rc.out_dir + "/resolved.ini", w.rc);
  std::cout << "wrote " << w.rc.out_dir << "/source.csv ("
            << w.synth.raw_source.records.size() << " records), target.csv ("
            << w.synth.raw_target.records.size() << " records)\n";
}

void cmd_pretrain(const RunConfig& rc) {
  Workspace w = make_workspace(rc, false);
  PretrainedTables t = pretrain_pair(w.pair, w.split, w.rc.mf);
  std::string dir = tables_dir_of(w.rc);
  save_tables(dir, t);
  save_run_config(w.rc.out_dir + "/resolved.ini", w.rc);
  std::cout << "wrote embedding tables to " << dir << '\n';
}

void cmd_train(const RunConfig& rc) {
  Workspace w = make_workspace(rc, false);
  save_run_config(w.rc.out_dir + "/resolved.ini", w.rc);
  if (w.rc.model == "tgt") {
    TgtModel tm = train_tgt(w.pair, w.split, w.rc.mf);
    fs::create_directories(w.rc.out_dir + "/tgt");
    save_table(w.rc.out_dir + "/tgt/users.emb", tm.users);
    save_table(w.rc.out_dir + "/tgt/items.emb", tm.items);
    std::cout << "wrote target-only model to " << w.rc.out_dir << "/tgt\n";
    return;
  }
  PretrainedTables tables = get_tables(w);
  std::string ckpt = checkpoint_of(w.rc);
  if (w.rc.model == "emcdr") {
    std::vector<double> losses;
    MappingParams theta =
        train_emcdr(w.pair, w.split, tables, w.rc.emcdr, &losses);
    save_emcdr(ckpt, theta);
    std::ofstream tlog(w.rc.out_dir + "/train_log.txt");
    for (size_t i = 0; i < losses.size(); ++i) {
      tlog << "batch=" << i + 1 << " loss=" << format_double(losses[i])
           << '\n';
    }
  } else {
    std::ofstream tlog(w.rc.out_dir + "/train_log.txt");
    TrainedModel model =
        train_cvpm(w.pair, w.split, w.rc.cvpm, tables, nullptr, &tlog);
    save_checkpoint(ckpt, model);
  }
  std::cout << "wrote checkpoint " << ckpt << '\n';
}

MetricsReport cmd_evaluate(const RunConfig& rc) {
  if (rc.model != "tgt" && rc.checkpoint_path.empty() &&
      !fs::exists(rc.out_dir + "/" + rc.model + ".ckpt")) {
    throw ConfigError("evaluate: no checkpoint for model " + rc.model +
                      "; give run.checkpoint or train into " + rc.out_dir +
                      " first");
  }
  Workspace w = make_workspace(rc, false);
  const DomainPair& pair = w.pair;
  MetricsReport cold;
  MetricsReport warm;
  bool have_warm = false;

  if (w.rc.model == "tgt") {
    TgtModel tm;
    tm.users = load_table(w.rc.out_dir + "/tgt/users.emb");
    tm.items = load_table(w.rc.out_dir + "/tgt/items.emb");
    UserVecFn fn = [&](const std::string& id) {
      int tu = pair.target.find_user(id);
      if (tu < 0) throw EvalError("tgt: unknown user " + id);
      return tm.users.row(tu);
    };
    cold = evaluate_cold(pair, w.split, fn, tm.items, w.rc.eval);
    if (w.rc.warm) {
      warm = evaluate_warm(pair, w.split, fn, tm.items, w.rc.eval);
      have_warm = true;
    }
  } else if (w.rc.model == "emcdr") {
    PretrainedTables tables = get_tables(w);
    MappingParams theta = load_emcdr(checkpoint_of(w.rc));
    UserVecFn fn = [&](const std::string& id) {
      int su = pair.source.find_user(id);
      if (su < 0) throw EvalError("emcdr: unknown user " + id);
      return map_emcdr(theta, tables.u_src.row(su));
    };
    cold = evaluate_cold(pair, w.split, fn, tables.v_tgt, w.rc.eval);
    if (w.rc.warm) {
      warm = evaluate_warm(pair, w.split, fn, tables.v_tgt, w.rc.eval);
      have_warm = true;
    }
  } else {
    TrainedModel model = load_checkpoint(checkpoint_of(w.rc));
    if (model.tables.u_src.ids != pair.source.user_ids) {
      throw DataError("checkpoint does not match the corpus user vocabulary");
    }
    UserVecFn fn = [&](const std::string& id) {
      int su = pair.source.find_user(id);
      if (su < 0) throw EvalError("cvpm: unknown user " + id);
      return map_user_cold(model, pair, su);
    };
    cold = evaluate_cold(pair, w.split, fn, model.tables.v_tgt, w.rc.eval);
    if (w.rc.warm) {
      TrainedModel tuned = finetune_warm(model, pair, w.split,
                                         w.rc.finetune_steps,
                                         w.rc.finetune_lr);
      UserVecFn wfn = [&](const std::string& id) {
        int su = pair.source.find_user(id);
        if (su < 0) throw EvalError("cvpm: unknown user " + id);
        return map_user_cold(tuned, pair, su);
      };
      warm = evaluate_warm(pair, w.split, wfn, tuned.tables.v_tgt, w.rc.eval);
      have_warm = true;
    }
  }

  auto dump = [&](const MetricsReport& r, const std::string& stem) {
    std::ofstream txt(w.rc.out_dir + "/" + stem + ".txt");
    write_report_kv(txt, r);
    std::ofstream jl(w.rc.out_dir + "/" + stem + ".jsonl");
    write_report_jsonl(jl, r);
  };
  dump(cold, "report_cold");
  std::vector<std::pair<std::string, MetricsReport>> rows;
  rows.emplace_back(w.rc.model + "/cold", cold);
  if (have_warm) {
    dump(warm, "report_warm");
    rows.emplace_back(w.rc.model + "/warm", warm);
  }
  std::cout << report_table(rows);
  return cold;
}

MetricsReport run_all(const RunConfig& rc) {
  {
    Workspace w = make_workspace(rc, true);
    save_run_config(w.rc.out_dir + "/resolved.ini", w.rc);
  }
  cmd_train(rc);
  return cmd_evaluate(rc);
}

void cmd_grid(const RunConfig& rc) {
  struct GridSpec {
    const char* name;
    std::vector<double> values;
  };
  static const std::vector<GridSpec> grids = {
      {"dim", {5, 10, 20, 30}},
      {"centroids", {50, 100, 150, 200}},
      {"n_ddot", {5, 10, 15, 20}},
      {"gamma", {1e-2, 5e-3, 1e-3, 1e-4}},
  };
  const GridSpec* spec = nullptr;
  for (const GridSpec& g : grids) {
    if (rc.grid_param == g.name) spec = &g;
  }
  if (!spec) {
    throw ConfigError("grid: unknown parameter '" + rc.grid_param +
                      "' (dim, centroids, n_ddot, gamma)");
  }
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (double v : spec->values) {
    RunConfig sub = rc;
    std::string label;
    if (rc.grid_param == "dim") {
      int d = int(v);
      sub.dim = d;
      sub.synth.dim = d;
      sub.mf.dim = d;
      sub.cvpm.dim = d;
      label = std::to_string(d);
    } else if (rc.grid_param == "centroids") {
      sub.cvpm.centroids = int(v);
      label = std::to_string(int(v));
    } else if (rc.grid_param == "n_ddot") {
      sub.cvpm.n_ddot_pos = int(v);
      sub.cvpm.n_ddot_neg = int(v);
      label = std::to_string(int(v));
    } else {
      sub.cvpm.gamma = v;
      label = format_double(v);
    }
    sub.out_dir = rc.out_dir + "/" + rc.grid_param + "_" + label;
    sub.tables_dir.clear();
    std::cerr << "grid " << rc.grid_param << " = " << label << '\n';
    rows.emplace_back(rc.grid_param + "=" + label, run_all(sub));
  }
  std::string table = report_table(rows);
  fs::create_directories(rc.out_dir);
  std::ofstream out(rc.out_dir + "/grid_summary.txt");
  out << table;
  std::cout << table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain recommendation via valence preference mapping"};
  app.require_subcommand(1);

  CommonFlags fs_gen, fs_pre, fs_train, fs_eval, fs_all, fs_grid;
  CLI::App* c_gen =
      app.add_subcommand("synth-gen", "Generate a synthetic domain pair");
  add_common(c_gen, fs_gen);
  CLI::App* c_pre =
      app.add_subcommand("pretrain", "Factorize both domains into embeddings");
  add_common(c_pre, fs_pre);
  CLI::App* c_train = app.add_subcommand("train", "Train the selected model");
  add_common(c_train, fs_train);
  CLI::App* c_eval =
      app.add_subcommand("evaluate", "Score a trained model on the test split");
  add_common(c_eval, fs_eval);
  CLI::App* c_all = app.add_subcommand(
      "run-all", "Generate (or load) data, pretrain, train, evaluate");
  add_common(c_all, fs_all);
  CLI::App* c_grid =
      app.add_subcommand("grid", "Sweep one parameter end to end");
  add_common(c_grid, fs_grid);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (c_gen->parsed()) cmd_synth_gen(resolve_config(fs_gen));
    else if (c_pre->parsed()) cmd_pretrain(resolve_config(fs_pre));
    else if (c_train->parsed()) cmd_train(resolve_config(fs_train));
    else if (c_eval->parsed()) cmd_evaluate(resolve_config(fs_eval));
    else if (c_all->parsed()) run_all(resolve_config(fs_all));
    else if (c_grid->parsed()) cmd_grid(resolve_config(fs_grid));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
