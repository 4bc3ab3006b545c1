// Copyright 2026 The DeCoOp Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "decoop/experiment.hpp"

#include "text_format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

namespace decoop {
namespace fs = std::filesystem;

namespace {

struct KeyBinding {
  std::function<void(ExperimentConfig &, std::string_view)> set;
  std::function<std::string(const ExperimentConfig &)> get;
};

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  try {
    if constexpr (std::is_floating_point_v<T>)
      return text::parse_double(v);
    else
      return text::parse_int<T>(v);
  } catch (const FormatError &) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(v) + "'",
                      std::string(key));
  }
}

template <typename T>
KeyBinding number(std::string key, T ExperimentConfig::*outer) {
  return {[outer, key](ExperimentConfig &c, std::string_view v) {
            c.*outer = parse_number<T>(key, v);
          },
          [outer](const ExperimentConfig &c) {
            if constexpr (std::is_floating_point_v<T>)
              return text::format_double(c.*outer);
            else
              return std::to_string(c.*outer);
          }};
}

template <typename Section, typename T>
KeyBinding nested(std::string key, Section ExperimentConfig::*section, T Section::*field) {
  return {[section, field, key](ExperimentConfig &c, std::string_view v) {
            c.*section.*field = parse_number<T>(key, v);
          },
          [section, field](const ExperimentConfig &c) {
            if constexpr (std::is_floating_point_v<T>)
              return text::format_double(c.*section.*field);
            else
              return std::to_string(c.*section.*field);
          }};
}

template <typename T>
KeyBinding dims(std::string key, T EncoderDims::*field) {
  return {[field, key](ExperimentConfig &c, std::string_view v) {
            c.model.dims.*field = parse_number<T>(key, v);
          },
          [field](const ExperimentConfig &c) { return std::to_string(c.model.dims.*field); }};
}

template <typename T>
std::string join_list(const std::vector<T> &values) {
  std::string out;
  for (const auto &v : values) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_same_v<T, std::string>)
      out += v;
    else
      out += std::to_string(v);
  }
  return out;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  for (auto part : text::split(v, ',')) {
    auto t = text::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

const std::map<std::string, KeyBinding> &bindings() {
  static const std::map<std::string, KeyBinding> table = [] {
    std::map<std::string, KeyBinding> t;
    t["run.id"] = {[](ExperimentConfig &c, std::string_view v) { c.run_id = std::string(v); },
                   [](const ExperimentConfig &c) { return c.run_id; }};
    t["run.methods"] = {
        [](ExperimentConfig &c, std::string_view v) {
          c.methods = split_list(v);
          for (const auto &m : c.methods)
            if (std::find(all_methods().begin(), all_methods().end(), m) == all_methods().end())
              throw ConfigError("unknown method '" + m + "' in run.methods", "run.methods");
        },
        [](const ExperimentConfig &c) { return join_list(c.methods); }};
    t["run.seeds"] = {[](ExperimentConfig &c, std::string_view v) {
                        c.seeds.clear();
                        for (const auto &s : split_list(v))
                          c.seeds.push_back(parse_number<std::uint64_t>("run.seeds", s));
                      },
                      [](const ExperimentConfig &c) { return join_list(c.seeds); }};
    t["run.output_dir"] = {
        [](ExperimentConfig &c, std::string_view v) { c.output_dir = std::string(v); },
        [](const ExperimentConfig &c) { return c.output_dir; }};
    t["run.save_artifacts"] = {
        [](ExperimentConfig &c, std::string_view v) {
          if (v == "true") c.save_artifacts = true;
          else if (v == "false") c.save_artifacts = false;
          else throw ConfigError("run.save_artifacts must be true or false", "run.save_artifacts");
        },
        [](const ExperimentConfig &c) { return std::string(c.save_artifacts ? "true" : "false"); }};

    t["model.seed"] = nested("model.seed", &ExperimentConfig::model, &ModelConfig::seed);
    t["model.token_dim"] = dims("model.token_dim", &EncoderDims::token_dim);
    t["model.embed_dim"] = dims("model.embed_dim", &EncoderDims::embed_dim);
    t["model.temperature"] =
        nested("model.temperature", &ExperimentConfig::model, &ModelConfig::temperature);
    t["model.ensemble_prompts"] =
        nested("model.ensemble_prompts", &ExperimentConfig::model, &ModelConfig::ensemble_prompts);
    t["model.zs_seed"] = nested("model.zs_seed", &ExperimentConfig::model, &ModelConfig::zs_seed);

    using D = DatasetSpec;
    const auto ds = &ExperimentConfig::dataset;
    t["dataset.num_classes"] = nested("dataset.num_classes", ds, &D::num_classes);
    t["dataset.feature_dim"] = nested("dataset.feature_dim", ds, &D::feature_dim);
    t["dataset.noise_sigma"] = nested("dataset.noise_sigma", ds, &D::noise_sigma);
    t["dataset.min_separation"] = nested("dataset.min_separation", ds, &D::min_separation);
    t["dataset.shots_per_class"] = nested("dataset.shots_per_class", ds, &D::shots_per_class);
    t["dataset.test_per_class"] = nested("dataset.test_per_class", ds, &D::test_per_class);
    t["dataset.mixing_ratio"] = nested("dataset.mixing_ratio", ds, &D::mixing_ratio);
    t["dataset.base_fraction"] = nested("dataset.base_fraction", ds, &D::base_fraction);
    t["dataset.alignment"] = nested("dataset.alignment", ds, &D::alignment);
    t["dataset.seed"] = nested("dataset.seed", ds, &D::seed);

    for (auto [prefix, section] : {std::pair{"detector.", &ExperimentConfig::detector},
                                   std::pair{"classifier.", &ExperimentConfig::classifier}}) {
      const std::string p = prefix;
      t[p + "epochs"] = nested(p + "epochs", section, &TrainConfig::epochs);
      t[p + "lr"] = nested(p + "lr", section, &TrainConfig::lr);
      t[p + "batch_size"] = nested(p + "batch_size", section, &TrainConfig::batch_size);
      t[p + "prompt_length"] = nested(p + "prompt_length", section, &TrainConfig::prompt_length);
      t[p + "init_scale"] = nested(p + "init_scale", section, &TrainConfig::init_scale);
    }
    t["detector.margin"] = nested("detector.margin", &ExperimentConfig::detector,
                                  &TrainConfig::margin);
    t["decoop.folds"] = number("decoop.folds", &ExperimentConfig::folds);
    return t;
  }();
  return table;
}

double mean_of(const std::vector<double> &v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

SummaryStat summarize(const std::vector<double> &v) {
  SummaryStat s;
  s.mean = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

bool wants(const ExperimentConfig &c, const std::string &method) {
  return std::find(c.methods.begin(), c.methods.end(), method) != c.methods.end();
}

struct EmbeddedTest {
  std::vector<Vector> z;
  std::vector<ClassId> labels;
  std::vector<SpaceTag> spaces;
};

EmbeddedTest embed_test(const FrozenEncoder &enc, const OpenWorldDataset &ds) {
  EmbeddedTest t;
  for (const auto &ex : ds.test) {
    t.z.push_back(image_embedding(enc, ex.feature));
    t.labels.push_back(ex.label);
    t.spaces.push_back(ex.space);
  }
  return t;
}

// Scores one method: `predict` maps an embedding to a class, `score` to a base score.
MethodResult score_method(const std::string &method, const EmbeddedTest &test,
                          const std::vector<LabeledExample> &examples,
                          const std::function<ClassId(const Vector &)> &predict,
                          const std::function<double(const Vector &)> &score) {
  MethodResult r;
  r.method = method;
  std::vector<ClassId> predicted(test.z.size());
  for (std::size_t i = 0; i < test.z.size(); ++i) {
    predicted[i] = predict(test.z[i]);
    (test.spaces[i] == SpaceTag::kBase ? r.base_scores : r.new_scores).push_back(score(test.z[i]));
  }
  std::size_t cursor = 0;
  const LabeledExample *first = examples.data();
  r.report = evaluate(
      [&](const LabeledExample &ex) {
        cursor = static_cast<std::size_t>(&ex - first);
        return predicted[cursor];
      },
      examples);
  if (!r.base_scores.empty() && !r.new_scores.empty())
    r.report.auroc = auroc(r.base_scores, r.new_scores);
  return r;
}

double base_msp(const ProbabilityDistribution &full, const ClassSpace &space) {
  return msp_space_scores(full, space).base;
}

void ensure_dir(const fs::path &p) { fs::create_directories(p); }

void write_file(const fs::path &path, const std::function<void(std::ostream &)> &body) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  body(out);
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("run.methods must be nonempty", "run.methods");
  if (seeds.empty()) throw ConfigError("run.seeds must be nonempty", "run.seeds");
  if (folds < 2) throw ConfigError("decoop.folds must be >= 2", "decoop.folds");
  if (model.ensemble_prompts < 1)
    throw ConfigError("model.ensemble_prompts must be >= 1", "model.ensemble_prompts");
  if (model.dims.token_dim < 1 || model.dims.embed_dim < 1)
    throw ConfigError("model dimensions must be positive", "model.token_dim");
  if (!(model.temperature > 0.0))
    throw ConfigError("model.temperature must be positive", "model.temperature");
  try {
    dataset.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(std::string("dataset: ") + e.what(), "dataset");
  }
  try {
    detector.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(std::string("detector: ") + e.what(), "detector");
  }
  try {
    classifier.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(std::string("classifier: ") + e.what(), "classifier");
  }
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto &[key, b] : bindings()) out[key] = b.get(*this);
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto &[key, value] : to_map()) out += key + "=" + value + "\n";
  return out;
}

ExperimentConfig parse_config(std::istream &in) {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = text::trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key(text::trim(body.substr(0, eq)));
    const auto value = text::trim(body.substr(eq + 1));
    static const std::map<std::string, std::string> aliases{
        {"dataset.C", "dataset.num_classes"}, {"dataset.d_feat", "dataset.feature_dim"},
        {"K", "decoop.folds"}};
    auto alias = aliases.find(key);
    auto it = bindings().find(alias == aliases.end() ? key : alias->second);
    if (it == bindings().end()) throw ConfigError("unknown config key '" + key + "'", key);
    it->second.set(c, value);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

fs::path resolve_output_dir(const ExperimentConfig &config) {
  if (const char *env = std::getenv(kOutputDirEnv); env && *env) return fs::path(env);
  return fs::path(config.output_dir);
}

EncoderPtr make_encoder(const ExperimentConfig &config) {
  EncoderDims d = config.model.dims;
  d.num_classes = config.dataset.num_classes;
  d.feature_dim = config.dataset.feature_dim;
  return std::make_shared<const FrozenEncoder>(d, config.model.seed);
}

OpenWorldDataset make_dataset(const ExperimentConfig &config, const FrozenEncoder &enc,
                              std::uint64_t seed) {
  DatasetSpec spec = config.dataset;
  spec.seed = config.dataset.seed + seed;
  return generate(spec, enc);
}

SeedRun run_seed(const ExperimentConfig &config, const EncoderPtr &enc, std::uint64_t seed,
                 const RunOptions &options) {
  const Temperature temp(config.model.temperature);
  SeedRun run{seed, make_dataset(config, *enc, seed), {}, {}, {}, {}, {}};
  const OpenWorldDataset &ds = run.dataset;
  const ClassSpace &space = ds.class_space;
  const auto test = embed_test(*enc, ds);

  const int prompt_length = config.classifier.prompt_length;
  const auto zs = ZeroShotModel::seeded(enc, 1, prompt_length, config.model.zs_seed, temp);
  const auto ens = ZeroShotModel::seeded(enc, config.model.ensemble_prompts, prompt_length,
                                         config.model.zs_seed, temp);
  const auto zs_head = zs.head(space.all());
  const auto ens_head = ens.head(space.all());

  if (wants(config, "zs"))
    run.results.push_back(score_method(
        "zs", test, ds.test, [&](const Vector &z) { return zs_head.predict(z).argmax(); },
        [&](const Vector &z) { return base_msp(zs_head.predict(z), space); }));
  if (wants(config, "prompt-ens"))
    run.results.push_back(score_method(
        "prompt-ens", test, ds.test, [&](const Vector &z) { return ens_head.predict(z).argmax(); },
        [&](const Vector &z) { return base_msp(ens_head.predict(z), space); }));

  const bool need_coop = wants(config, "coop") || wants(config, "dept") || options.theorem;
  if (need_coop) {
    TrainConfig cfg = config.classifier;
    cfg.seed = seed;
    run.coop = tune_prompt(*enc, ds.train, space.base(), cfg, temp);
    const auto head = TextHead::from_prompt(*enc, run.coop->prompt, space.all(), temp);
    if (wants(config, "coop"))
      run.results.push_back(score_method(
          "coop", test, ds.test, [&](const Vector &z) { return head.predict(z).argmax(); },
          [&](const Vector &z) { return base_msp(head.predict(z), space); }));

    const DeptModel dept(zs, *run.coop, space);
    if (wants(config, "dept"))
      run.results.push_back(score_method(
          "dept", test, ds.test, [&](const Vector &z) { return dept_predict(dept, z).label; },
          [&](const Vector &z) { return base_msp(dept.zs_full(z), space); }));
    if (options.theorem) run.theorem = check_theorem(dept, ds.test);
  }

  if (wants(config, "decoop")) {
    DecoopConfig dc;
    dc.folds = config.folds;
    dc.detector = config.detector;
    dc.detector.seed = seed;
    if (options.margin) dc.detector.margin = *options.margin;
    dc.classifier = config.classifier;
    dc.classifier.seed = seed;
    run.decoop = train_decoop(*enc, ds, ens, dc, temp);
    const DecoopModel &model = *run.decoop;
    run.results.push_back(score_method(
        "decoop", test, ds.test, [&](const Vector &z) { return decoop_predict(model, z).label; },
        [&](const Vector &z) { return decoop_new_score(model, z); }));
  }

  // Keep the configured method order.
  std::vector<MethodResult> ordered;
  for (const auto &m : config.methods)
    for (auto &r : run.results)
      if (r.method == m) ordered.push_back(std::move(r));
  run.results = std::move(ordered);
  return run;
}

const MethodResult &find_result(const SeedRun &run, const std::string &method) {
  for (const auto &r : run.results)
    if (r.method == method) return r;
  throw std::out_of_range("no result for method " + method);
}

RunManifest cmd_run(const ExperimentConfig &config) {
  config.validate();
  const fs::path out_dir = resolve_output_dir(config);
  ensure_dir(out_dir);
  const auto enc = make_encoder(config);

  RunManifest manifest;
  manifest.config = config;
  for (auto seed : config.seeds) {
    SeedRun run = run_seed(config, enc, seed);
    if (config.save_artifacts) {
      const fs::path dir = out_dir / seed_dir(seed);
      const fs::path data = dir / "dataset.txt";
      write_file(data, [&](std::ostream &o) { write_dataset(o, run.dataset); });
      run.artifacts["dataset"] = data.string();
      if (run.coop) {
        const fs::path p = dir / "coop_prompt.txt";
        TrainConfig cfg = config.classifier;
        cfg.seed = seed;
        write_file(p, [&](std::ostream &o) { save_checkpoint(o, *run.coop, cfg); });
        run.artifacts["coop_prompt"] = p.string();
      }
      if (run.decoop) {
        const fs::path p = dir / "decoop_bundle.txt";
        write_file(p, [&](std::ostream &o) { save_bundle(o, *run.decoop); });
        run.artifacts["decoop_bundle"] = p.string();
      }
    }
    manifest.runs.push_back(std::move(run));
  }

  manifest.results_csv = out_dir / "results.csv";
  write_file(manifest.results_csv, [&](std::ostream &o) {
    o << kEvalCsvHeader << '\n';
    for (const auto &run : manifest.runs)
      for (const auto &r : run.results) write_eval_csv_row(o, config.run_id, r.method, run.seed, r.report);
  });

  for (const auto &method : config.methods) {
    std::map<std::string, std::vector<double>> cols;
    for (const auto &run : manifest.runs) {
      const auto &rep = find_result(run, method).report;
      cols["acc_base"].push_back(rep.acc_base);
      cols["acc_new"].push_back(rep.acc_new);
      cols["acc_overall"].push_back(rep.acc_overall);
      cols["h"].push_back(rep.h_metric);
      cols["auroc"].push_back(rep.auroc);
    }
    for (const auto &[metric, values] : cols) manifest.summary[method][metric] = summarize(values);
  }

  nlohmann::ordered_json j;
  j["run_id"] = config.run_id;
  j["config"] = config.to_map();
  j["results_csv"] = manifest.results_csv.string();
  j["std_formula"] = "population";
  for (const auto &run : manifest.runs) {
    nlohmann::ordered_json s;
    s["seed"] = run.seed;
    s["artifacts"] = run.artifacts;
    for (const auto &r : run.results)
      s["reports"][r.method] = {{"acc_base", r.report.acc_base},
                                {"acc_new", r.report.acc_new},
                                {"acc_overall", r.report.acc_overall},
                                {"h", r.report.h_metric},
                                {"auroc", r.report.auroc},
                                {"n_base", r.report.n_base},
                                {"n_new", r.report.n_new}};
    j["seeds"].push_back(s);
  }
  for (const auto &[method, metrics] : manifest.summary)
    for (const auto &[metric, stat] : metrics)
      j["summary"][method][metric] = {{"mean", stat.mean}, {"std", stat.std}};
  write_file(out_dir / "manifest.json", [&](std::ostream &o) { o << j.dump(2) << '\n'; });
  return manifest;
}

TheoremRun cmd_theorem(const ExperimentConfig &config) {
  config.validate();
  const fs::path out_dir = resolve_output_dir(config);
  const auto enc = make_encoder(config);
  ExperimentConfig trimmed = config;
  trimmed.methods = {"dept"};
  TheoremRun tr;
  tr.all_hold = true;
  tr.all_valid = true;
  for (auto seed : config.seeds) {
    RunOptions opts;
    opts.theorem = true;
    const SeedRun run = run_seed(trimmed, enc, seed, opts);
    const TheoremReport &rep = *run.theorem;
    const fs::path file = out_dir / ("theorem_seed_" + std::to_string(seed) + ".txt");
    write_file(file, [&](std::ostream &o) { write_theorem_report(o, rep); });
    tr.all_hold = tr.all_hold && rep.bound_zs_holds && rep.bound_dept_holds;
    tr.all_valid = tr.all_valid && rep.valid;
    tr.reports.push_back(rep);
    tr.files.push_back(file);
  }
  return tr;
}

std::vector<SweepRow> cmd_sweep_gamma(const ExperimentConfig &config,
                                      const std::vector<double> &margins) {
  config.validate();
  if (margins.empty()) throw ConfigError("sweep needs at least one margin", "gammas");
  for (double m : margins)
    if (!(m >= 0.0)) throw ConfigError("margins must be >= 0", "gammas");
  const fs::path out_dir = resolve_output_dir(config);
  const auto enc = make_encoder(config);
  ExperimentConfig trimmed = config;
  trimmed.methods = {"decoop"};
  std::vector<SweepRow> rows;
  for (double m : margins)
    for (auto seed : config.seeds) {
      RunOptions opts;
      opts.margin = m;
      const SeedRun run = run_seed(trimmed, enc, seed, opts);
      rows.push_back({m, seed, find_result(run, "decoop").report});
    }
  write_file(out_dir / "sweep_gamma.csv", [&](std::ostream &o) {
    o << "gamma," << kEvalCsvHeader << '\n';
    for (const auto &r : rows) {
      o << text::format_double(r.margin) << ',';
      write_eval_csv_row(o, config.run_id, "decoop", r.seed, r.report);
    }
  });
  return rows;
}

std::vector<RocExport> cmd_roc(const ExperimentConfig &config) {
  config.validate();
  const fs::path out_dir = resolve_output_dir(config);
  const auto enc = make_encoder(config);
  ExperimentConfig trimmed = config;
  trimmed.methods = {"zs", "coop", "decoop"};
  const std::map<std::string, std::string> labels{
      {"zs", "zs_msp"}, {"coop", "coop_msp"}, {"decoop", "decoop"}};
  std::vector<RocExport> out;
  for (auto seed : config.seeds) {
    const SeedRun run = run_seed(trimmed, enc, seed);
    for (const auto &r : run.results) {
      RocExport e{labels.at(r.method), seed, roc_points(r.base_scores, r.new_scores),
                  r.report.auroc, {}};
      e.file = out_dir / ("roc_" + e.method + "_seed_" + std::to_string(seed) + ".csv");
      write_file(e.file, [&](std::ostream &o) { write_roc_csv(o, e.curve); });
      out.push_back(std::move(e));
    }
  }
  write_file(out_dir / "roc_summary.csv", [&](std::ostream &o) {
    o << "method,seed,auroc\n";
    for (const auto &e : out)
      o << e.method << ',' << e.seed << ',' << text::format_double(e.auroc) << '\n';
  });
  return out;
}

std::vector<fs::path> cmd_gen_data(const ExperimentConfig &config) {
  config.validate();
  const fs::path out_dir = resolve_output_dir(config);
  const auto enc = make_encoder(config);
  std::vector<fs::path> files;
  for (auto seed : config.seeds) {
    const auto ds = make_dataset(config, *enc, seed);
    const fs::path file = out_dir / ("dataset_seed_" + std::to_string(seed) + ".txt");
    write_file(file, [&](std::ostream &o) { write_dataset(o, ds); });
    files.push_back(file);
  }
  return files;
}

}  // namespace decoop
