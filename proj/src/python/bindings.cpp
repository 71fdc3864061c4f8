#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cvpm/baselines.hpp"
#include "cvpm/data.hpp"
#include "cvpm/eval.hpp"
#include "cvpm/numeric.hpp"
#include "cvpm/synth.hpp"
#include "cvpm/trainer.hpp"
#include "cvpm/valence.hpp"

namespace py = pybind11;
using namespace cvpm;

namespace {

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["protocol"] = r.protocol;
  d["mae"] = r.mae;
  d["rmse"] = r.rmse;
  d["n_users"] = r.n_users;
  d["n_instances"] = r.n_instances;
  py::dict hit, ndcg;
  for (const auto& [k, v] : r.hit) hit[py::int_(k)] = v;
  for (const auto& [k, v] : r.ndcg) ndcg[py::int_(k)] = v;
  d["hit"] = hit;
  d["ndcg"] = ndcg;
  return d;
}

SynthConfig synth_config_from_kwargs(const py::kwargs& kw) {
  SynthConfig cfg;
  for (auto item : kw) {
    std::string key = py::cast<std::string>(item.first);
    if (key == "n_users_src") cfg.n_users_src = py::cast<int>(item.second);
    else if (key == "n_users_tgt") cfg.n_users_tgt = py::cast<int>(item.second);
    else if (key == "overlap_count") cfg.overlap_count = py::cast<int>(item.second);
    else if (key == "n_items_src") cfg.n_items_src = py::cast<int>(item.second);
    else if (key == "n_items_tgt") cfg.n_items_tgt = py::cast<int>(item.second);
    else if (key == "dim") cfg.dim = py::cast<int>(item.second);
    else if (key == "map_kind") cfg.map_kind = map_kind_from_name(py::cast<std::string>(item.second));
    else if (key == "overlap_side") {
      std::string v = py::cast<std::string>(item.second);
      if (v == "user") cfg.overlap_side = OverlapSide::User;
      else if (v == "item") cfg.overlap_side = OverlapSide::Item;
      else throw ConfigError("synth: overlap_side must be user or item");
    }
    else if (key == "rating_noise") cfg.rating_noise = py::cast<double>(item.second);
    else if (key == "map_noise") cfg.map_noise = py::cast<double>(item.second);
    else if (key == "density_src") cfg.density_src = py::cast<double>(item.second);
    else if (key == "density_tgt") cfg.density_tgt = py::cast<double>(item.second);
    else if (key == "min_rating") cfg.min_rating = py::cast<double>(item.second);
    else if (key == "max_rating") cfg.max_rating = py::cast<double>(item.second);
    else if (key == "popularity_exponent") cfg.popularity_exponent = py::cast<double>(item.second);
    else if (key == "seed") cfg.seed = py::cast<uint64_t>(item.second);
    else throw ConfigError("generate_synth: unknown option " + key);
  }
  return cfg;
}

void apply_cvpm_overrides(CvpmConfig& cfg, const py::dict& d) {
  for (auto item : d) {
    std::string key = py::cast<std::string>(item.first);
    if (key == "dim") cfg.dim = py::cast<int>(item.second);
    else if (key == "n_dot_pos") cfg.n_dot_pos = py::cast<int>(item.second);
    else if (key == "n_dot_neg") cfg.n_dot_neg = py::cast<int>(item.second);
    else if (key == "n_ddot_pos") cfg.n_ddot_pos = py::cast<int>(item.second);
    else if (key == "n_ddot_neg") cfg.n_ddot_neg = py::cast<int>(item.second);
    else if (key == "centroids") cfg.centroids = py::cast<int>(item.second);
    else if (key == "tau") cfg.tau = py::cast<double>(item.second);
    else if (key == "gamma") cfg.gamma = py::cast<double>(item.second);
    else if (key == "margin") cfg.margin = py::cast<double>(item.second);
    else if (key == "lr") cfg.lr = py::cast<double>(item.second);
    else if (key == "weight_decay") cfg.weight_decay = py::cast<double>(item.second);
    else if (key == "batch_size") cfg.batch_size_meta = py::cast<int>(item.second);
    else if (key == "epochs") cfg.epochs = py::cast<int>(item.second);
    else if (key == "seed") cfg.seed = py::cast<uint64_t>(item.second);
    else if (key == "ablate_sampling") cfg.ablate_sampling = py::cast<bool>(item.second);
    else if (key == "ablate_encoder") cfg.ablate_encoder = py::cast<bool>(item.second);
    else if (key == "ablate_bias") cfg.ablate_bias = py::cast<bool>(item.second);
    else if (key == "ablate_aux") cfg.ablate_aux = py::cast<bool>(item.second);
    else if (key == "val_fraction") cfg.val_fraction = py::cast<double>(item.second);
    else if (key == "patience") cfg.patience = py::cast<int>(item.second);
    else throw ConfigError("train: unknown option " + key);
  }
}

UserVecFn wrap_user_vec(const TrainedModel& model, const DomainPair& pair) {
  return [&model, &pair](const std::string& id) {
    int su = pair.source.find_user(id);
    if (su < 0) throw EvalError("unknown user " + id);
    return map_user_cold(model, pair, su);
  };
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-domain valence preference mapping";

  py::register_exception<ConfigError>(m, "ConfigErrorPy");
  py::register_exception<DataError>(m, "DataErrorPy");

  py::class_<InteractionSet>(m, "InteractionSet")
      .def_property_readonly("n_users", &InteractionSet::user_count)
      .def_property_readonly("n_items", &InteractionSet::item_count)
      .def_property_readonly("n_records",
                             [](const InteractionSet& s) {
                               return s.records.size();
                             })
      .def_property_readonly("user_ids",
                             [](const InteractionSet& s) { return s.user_ids; })
      .def_property_readonly("item_ids",
                             [](const InteractionSet& s) { return s.item_ids; });

  py::class_<DomainPair>(m, "DomainPair")
      .def_property_readonly("overlap_ids",
                             [](const DomainPair& p) { return p.overlap_ids; })
      .def_property_readonly("s_ratio",
                             [](const DomainPair& p) { return p.s_ratio; })
      .def_property_readonly("mode",
                             [](const DomainPair& p) {
                               return mode_name(p.mode);
                             })
      .def_property_readonly("source",
                             [](const DomainPair& p) { return p.source; })
      .def_property_readonly("target",
                             [](const DomainPair& p) { return p.target; });

  py::class_<SplitPlan>(m, "SplitPlan")
      .def_property_readonly("train_overlap",
                             [](const SplitPlan& s) { return s.train_overlap; })
      .def_property_readonly("test_overlap",
                             [](const SplitPlan& s) { return s.test_overlap; })
      .def_property_readonly("excluded",
                             [](const SplitPlan& s) { return s.excluded; })
      .def_property_readonly("warm", [](const SplitPlan& s) { return s.warm; });

  py::class_<PretrainedTables>(m, "PretrainedTables");
  py::class_<TrainedModel>(m, "TrainedModel");
  py::class_<SynthData>(m, "SynthData")
      .def_property_readonly("pair", [](const SynthData& s) { return s.pair; });

  m.def("softmax", [](const Vec& v) { return softmax(v); });
  m.def("sampling_probs_negative", [](const std::vector<int64_t>& counts) {
    return sampling_probs_negative(counts, nullptr);
  });
  m.def("sampling_probs_positive",
        [](const std::vector<int64_t>& counts, const std::vector<int>& df,
           int n_users) {
          return sampling_probs_positive(counts, df, n_users);
        });
  m.def("mae", &mae);
  m.def("rmse", &rmse);
  m.def("hit_at_k", &hit_at_k);
  m.def("ndcg_at_k", &ndcg_at_k);

  m.def("parse_ratings", [](const std::string& text) {
    std::istringstream in(text);
    return parse_ratings(in);
  });
  m.def(
      "build_pair",
      [](const InteractionSet& src, const InteractionSet& tgt,
         const std::string& mode) {
        if (mode != "cdr" && mode != "csr") {
          throw ConfigError("mode must be cdr or csr");
        }
        return build_domain_pair(src, tgt,
                                 mode == "cdr" ? Mode::CDR : Mode::CSR);
      },
      py::arg("source"), py::arg("target"), py::arg("mode") = "cdr");
  m.def(
      "make_split",
      [](const DomainPair& pair, double ratio, bool warm, uint64_t seed) {
        return make_split(pair, ratio, warm, seed);
      },
      py::arg("pair"), py::arg("train_ratio") = 0.8, py::arg("warm") = false,
      py::arg("seed") = 0);
  m.def("generate_synth", [](const py::kwargs& kw) {
    return generate_synth(synth_config_from_kwargs(kw));
  });
  m.def(
      "pretrain",
      [](const DomainPair& pair, const SplitPlan& split, int dim, int epochs,
         uint64_t seed) {
        MfConfig cfg;
        cfg.dim = dim;
        cfg.epochs = epochs;
        cfg.seed = seed;
        return pretrain_pair(pair, split, cfg);
      },
      py::arg("pair"), py::arg("split"), py::arg("dim") = 10,
      py::arg("epochs") = 100, py::arg("seed") = 0);
  m.def(
      "train",
      [](const DomainPair& pair, const SplitPlan& split,
         const PretrainedTables& tables, const py::dict& options) {
        CvpmConfig cfg;
        cfg.dim = tables.u_src.dim;
        cfg.mode = pair.mode;
        apply_cvpm_overrides(cfg, options);
        return train_cvpm(pair, split, cfg, tables);
      },
      py::arg("pair"), py::arg("split"), py::arg("tables"),
      py::arg("options") = py::dict());
  m.def(
      "evaluate_cold",
      [](const TrainedModel& model, const DomainPair& pair,
         const SplitPlan& split, int n_negatives, uint64_t seed) {
        EvalConfig cfg;
        cfg.n_negatives = n_negatives;
        cfg.seed = seed;
        return report_dict(evaluate_cold(pair, split,
                                         wrap_user_vec(model, pair),
                                         model.tables.v_tgt, cfg));
      },
      py::arg("model"), py::arg("pair"), py::arg("split"),
      py::arg("n_negatives") = 4, py::arg("seed") = 0);
  m.def(
      "evaluate_warm",
      [](const TrainedModel& model, const DomainPair& pair,
         const SplitPlan& split, int steps, double lr, int n_negatives,
         uint64_t seed) {
        TrainedModel tuned = finetune_warm(model, pair, split, steps, lr);
        EvalConfig cfg;
        cfg.n_negatives = n_negatives;
        cfg.seed = seed;
        return report_dict(evaluate_warm(pair, split,
                                         wrap_user_vec(tuned, pair),
                                         tuned.tables.v_tgt, cfg));
      },
      py::arg("model"), py::arg("pair"), py::arg("split"),
      py::arg("steps") = 20, py::arg("lr") = 1e-2, py::arg("n_negatives") = 4,
      py::arg("seed") = 0);
  m.def("map_user", [](const TrainedModel& model, const DomainPair& pair,
                       const std::string& user_id) {
    int su = pair.source.find_user(user_id);
    if (su < 0) throw DataError("unknown user " + user_id);
    return map_user_cold(model, pair, su);
  });
  m.def(
      "recommend",
      [](const TrainedModel& model, const DomainPair& pair,
         const std::string& user_id, int k) {
        std::vector<int> cands(pair.target.item_count());
        for (size_t i = 0; i < cands.size(); ++i) cands[i] = int(i);
        auto scored = recommend(model, pair, user_id, k, cands);
        py::list out;
        for (const auto& [item, score] : scored) {
          out.append(py::make_tuple(pair.target.item_ids[item], score));
        }
        return out;
      },
      py::arg("model"), py::arg("pair"), py::arg("user_id"), py::arg("k") = 5);
}
