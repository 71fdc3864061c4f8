#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cvpm/baselines.hpp"
#include "cvpm/eval.hpp"
#include "cvpm/mf.hpp"
#include "cvpm/synth.hpp"
#include "cvpm/trainer.hpp"

namespace cvpm {

// section -> key -> raw value
using KvMap = std::map<std::string, std::map<std::string, std::string>>;

KvMap parse_ini(std::istream& in);
KvMap parse_ini_file(const std::string& path);
void write_ini(std::ostream& out, const KvMap& kv);

// "section.key=value" command-line overrides.
void apply_overrides(KvMap& kv, const std::vector<std::string>& sets);

struct RunConfig {
  uint64_t seed = 0;
  Mode mode = Mode::CDR;
  int dim = 10;
  double train_ratio = 0.8;
  bool warm = false;
  std::string out_dir = "out";
  std::string source_path;
  std::string target_path;
  std::string tables_dir;
  std::string checkpoint_path;
  std::string model = "cvpm";
  int finetune_steps = 100;
  double finetune_lr = 1e-2;
  std::string grid_param;
  SynthConfig synth;
  MfConfig mf;
  CvpmConfig cvpm;
  EvalConfig eval;
  EmcdrConfig emcdr;
};

// Unknown sections or keys are errors. Section seeds and dims default off
// the run-level values; the resolved map written back is fully explicit, so
// a round trip through kv_from_config/config_from_kv is a fixpoint.
RunConfig config_from_kv(const KvMap& kv);
KvMap kv_from_config(const RunConfig& rc);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& rc);

}  // namespace cvpm
