#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "toml.hpp"

#include "eafd/agent.hpp"
#include "eafd/core/error.hpp"
#include "eafd/core/parallel.hpp"
#include "eafd/core/text.hpp"
#include "eafd/dataset.hpp"
#include "eafd/erasure.hpp"
#include "eafd/fdsl/eval.hpp"
#include "eafd/scoring.hpp"
#include "eafd/synthbench.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace eafd;

namespace {

// ---------------------------------------------------------------- config plumbing

json load_toml(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::exists(path)) throw_config("config file not found: " + path);
  try {
    const auto table = toml::parse_file(path);
    std::ostringstream os;
    os << toml::json_formatter{table};
    return json::parse(os.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config " << path << ": " << e.description() << " at line " << e.source().begin.line;
    throw_config(msg.str());
  }
}

json section(const json& j, const char* key) { return j.contains(key) ? j.at(key) : json::object(); }

void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw_config(std::string("missing --") + what);
  if (!fs::is_directory(path)) throw_config(std::string(what) + " directory not found: " + path);
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw_config(std::string("missing --") + what);
  if (!fs::is_regular_file(path)) throw_config(std::string(what) + " file not found: " + path);
}

std::string out_path(const std::string& dir, const char* name) {
  fs::create_directories(dir);
  return (fs::path(dir) / name).string();
}

void write_json(const std::string& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

/// Header embedded in every report. `resolved` excludes the worker count.
json report_header(const std::string& command, const json& resolved, const json& seeds, const json& probe) {
  return {{"tool", "eafd"},
          {"version", EAFD_VERSION},
          {"command", command},
          {"config_hash", hex64(fnv1a64(resolved.dump()))},
          {"seeds", seeds},
          {"probe", probe},
          {"config", resolved}};
}

struct Common {
  std::string config_path;
  std::string store;
  std::string out;
  std::string target;
  std::optional<std::uint64_t> seed;
  int workers = 0;
};

void add_common(CLI::App* cmd, Common& c, bool with_store = true) {
  cmd->add_option("--config", c.config_path, "TOML configuration file");
  if (with_store) cmd->add_option("--store", c.store, "dataset store directory");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "seed for folds, probes and subsampling");
}

/// Run-level settings: file values overridden by flags.
struct RunSettings {
  json file;
  std::string store;
  std::string out;
  std::string target;
  std::uint64_t seed = 0;
  scoring::ScoringConfig scoring;
};

RunSettings resolve_run(const Common& c) {
  RunSettings r;
  r.file = load_toml(c.config_path);
  r.store = c.store.empty() ? r.file.value("store", std::string()) : c.store;
  r.out = c.out.empty() ? r.file.value("out", std::string()) : c.out;
  r.target = c.target.empty() ? r.file.value("target", std::string()) : c.target;
  r.seed = c.seed ? *c.seed : r.file.value("seed", std::uint64_t{0});
  auto sc = section(r.file, "scoring");
  if (!sc.contains("seed")) sc["seed"] = r.seed;
  if (r.file.contains("probe")) sc["probe"] = r.file["probe"];
  r.scoring = scoring::ScoringConfig::from_json(sc);
  r.scoring.workers = c.workers;
  require_dir(r.store, "store");
  if (r.out.empty()) throw_config("missing --out");
  return r;
}

json seeds_json(const RunSettings& r) {
  return {{"run", r.seed}, {"folds", r.scoring.seed}, {"probe", r.scoring.probe.seed}};
}

data::Dataset load_dataset(const std::string& store, const std::string& embeddings, const std::string& labels) {
  auto ds = data::load_store(store);
  if (!embeddings.empty()) {
    require_file(embeddings, "embeddings");
    ds = data::import_embeddings(ds, embeddings);
  }
  if (!labels.empty()) {
    require_file(labels, "labels");
    ds = data::import_labels(ds, labels, ds.schema().target_kinds);
  }
  return ds;
}

std::vector<scoring::CatalogEntry> load_catalog(const std::string& path, const data::Dataset& ds, int workers) {
  require_file(path, "catalog");
  const auto specs = fdsl::parse_feature_list(read_file(path));
  const auto compiled = fdsl::compile_all(specs, ds.schema());
  const auto fm = fdsl::evaluate_batch(compiled, ds, workers);
  std::vector<scoring::CatalogEntry> out;
  for (std::size_t i = 0; i < compiled.size(); ++i) {
    const auto col = fm.column(i);
    out.push_back({specs[i].name, compiled[i].canonical(), compiled[i].category(), {col.begin(), col.end()}});
  }
  return out;
}

probe::GbtConfig regression_probe(const scoring::ScoringConfig& s) {
  auto p = s.probe;
  p.loss = probe::Loss::Squared;
  return p;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> n_users, int workers) {
  auto j = load_toml(config_path);
  if (j.contains("synth")) j = j["synth"];
  if (seed) j["seed"] = *seed;
  if (n_users) j["n_users"] = *n_users;
  const auto config = synth::SynthConfig::from_json(j);
  if (out.empty()) throw_config("missing --out");
  const auto result = synth::generate(config, workers);
  synth::write_output(result, config, out);
  const auto resolved = config.resolved().to_json();
  json rep = report_header("synth", resolved, {{"run", config.seed}}, nullptr);
  rep["n_users"] = result.dataset.size();
  rep["n_manifest_features"] = result.manifest.features.size();
  write_json(out_path(out, "synth_report.json"), rep);
  return 0;
}

// ---------------------------------------------------------------- ingest

int cmd_ingest(const std::string& events, const std::string& schema, const std::string& labels,
               const std::string& embeddings, const std::vector<std::string>& kinds, const std::string& out) {
  require_file(events, "events");
  require_file(schema, "schema");
  if (out.empty()) throw_config("missing --out");
  auto ds = data::ingest_events(events, schema);
  std::map<std::string, data::TaskKind> kind_map = ds.schema().target_kinds;
  for (const auto& k : kinds) {
    const auto eq = k.find('=');
    if (eq == std::string::npos) throw_config("--target-kind expects name=kind, got '" + k + "'");
    kind_map[k.substr(0, eq)] = data::task_kind_from_string(k.substr(eq + 1));
  }
  std::vector<std::string> warnings;
  std::size_t dropped = 0;
  if (!labels.empty()) {
    require_file(labels, "labels");
    data::ImportReport r;
    ds = data::import_labels(ds, labels, kind_map, &r);
    warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
    dropped += r.dropped_extra_ids;
  }
  if (!embeddings.empty()) {
    require_file(embeddings, "embeddings");
    data::ImportReport r;
    ds = data::import_embeddings(ds, embeddings, &r);
    warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
    dropped += r.dropped_extra_ids;
  }
  data::save_store(ds, out);
  const json resolved = {{"events", events}, {"schema", schema}, {"labels", labels}, {"embeddings", embeddings},
                         {"target_kinds", kinds}};
  json rep = report_header("ingest", resolved, json::object(), nullptr);
  rep["n_sequences"] = ds.size();
  rep["targets"] = json::array();
  for (const auto& t : ds.targets()) rep["targets"].push_back(t.name);
  rep["embedding_dim"] = ds.embeddings() ? ds.embeddings()->dim() : 0;
  rep["dropped_extra_ids"] = dropped;
  rep["warnings"] = warnings;
  write_json(out_path(out, "ingest_report.json"), rep);
  return 0;
}

// ---------------------------------------------------------------- discover

struct DiscoverFlags {
  std::optional<int> iterations;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> batch_size;
  std::string script;
};

int cmd_discover(const Common& c, const DiscoverFlags& f) {
  auto run = resolve_run(c);
  auto dj = section(run.file, "discovery");
  if (f.iterations) dj["iterations"] = *f.iterations;
  if (f.budget) dj["budget"] = *f.budget;
  if (f.batch_size) dj["batch_size"] = *f.batch_size;
  dj.erase("scoring");
  auto config = agent::DiscoveryConfig::from_json(dj);
  config.target = run.target;
  config.scoring = run.scoring;

  json gj = section(run.file, "generator");
  if (!f.script.empty()) gj = {{"mock", {{"script", f.script}}}};
  const auto gspec = agent::GeneratorSpec::from_json(gj);
  if (gspec.mock) require_file(gspec.mock->script_path, "generator script");
  auto generator = agent::make_generator(gspec);

  const auto ds = data::load_store(run.store);
  const auto rep = agent::run_discovery(ds, config, *generator);
  json resolved = rep.config;
  resolved["generator"] = gspec.to_json();
  json out = report_header("discover", resolved, seeds_json(run), config.scoring.probe.to_json());
  out.update(rep.to_json());
  write_json(out_path(run.out, "report.json"), out);
  write_file(out_path(run.out, "trajectory.csv"), rep.trajectory_csv());
  write_file(out_path(run.out, "features.json"), rep.features_json());
  if (!rep.complete) throw Error(ErrorKind::GeneratorUnreachable, rep.abort_reason + " (partial report written)");
  return 0;
}

// ---------------------------------------------------------------- eval

json cv_block(const scoring::ScoringConfig& sc, const data::Target& t, const data::FoldPlan& folds,
              const ColumnView& x) {
  const auto cv = probe::cross_val_loss(sc.probe, t.kind, t.n_classes, x, t.values, folds, sc.workers);
  json j = probe::evaluate_metrics(t.kind, t.n_classes, t.values, cv.oof).to_json();
  j["metric"] = probe::task_metric(t.kind, t.n_classes, t.values, cv.oof);
  j["cv_loss"] = cv.mean_loss;
  j["cv_loss_per_fold"] = cv.per_fold;
  j["n_columns"] = x.size();
  return j;
}

int cmd_eval(const Common& c, const std::string& features_path, const std::string& embeddings,
             const std::string& labels) {
  auto run = resolve_run(c);
  require_file(features_path, "features");
  const auto ds = load_dataset(run.store, embeddings, labels);
  const auto specs = fdsl::parse_feature_list(read_file(features_path));
  const auto compiled = fdsl::compile_all(specs, ds.schema());
  const auto fm = fdsl::evaluate_batch(compiled, ds, c.workers);
  const ColumnView fcols = view_of(fm.table);

  std::vector<const data::Target*> targets;
  if (!run.target.empty()) {
    if (!ds.has_target(run.target)) throw_config("unknown target '" + run.target + "'");
    targets.push_back(&ds.target(run.target));
  } else {
    for (const auto& t : ds.targets()) targets.push_back(&t);
  }
  if (targets.empty()) throw_data("eval: the dataset has no target labels");
  if (!ds.embeddings() && specs.empty()) throw_data("eval: no embeddings and no features to evaluate");

  json results = json::object();
  for (const auto* t : targets) {
    const auto folds = data::split_folds(t->values, t->kind, run.scoring.folds, run.scoring.seed);
    json r = {{"kind", data::to_string(t->kind)}, {"metric_name", probe::metric_name(t->kind)}};
    r["embeddings_only"] = nullptr;
    r["features_only"] = nullptr;
    if (ds.embeddings()) {
      std::vector<std::vector<double>> storage;
      r["embeddings_only"] = cv_block(run.scoring, *t, folds, scoring::design(ds.embeddings()->values, storage));
      std::vector<std::vector<double>> storage2;
      r["joint"] = cv_block(run.scoring, *t, folds, scoring::design(ds.embeddings()->values, storage2, fcols));
    }
    if (!specs.empty()) r["features_only"] = cv_block(run.scoring, *t, folds, fcols);
    if (!ds.embeddings()) r["joint"] = r["features_only"];
    results[t->name] = r;
  }
  json resolved = {{"features", json::parse(fdsl::feature_list_json(specs))},
                   {"target", run.target},
                   {"scoring", run.scoring.to_json()}};
  json out = report_header("eval", resolved, seeds_json(run), run.scoring.probe.to_json());
  out["n_sequences"] = ds.size();
  out["results"] = results;
  write_json(out_path(run.out, "eval_report.json"), out);
  return 0;
}

// ---------------------------------------------------------------- probe-report

int cmd_probe_report(const Common& c, const std::string& catalog_path) {
  auto run = resolve_run(c);
  const auto ds = data::load_store(run.store);
  const auto catalog = load_catalog(catalog_path, ds, c.workers);
  const auto folds = data::split_folds_plain(ds.size(), run.scoring.folds, run.scoring.seed);
  const auto probe = regression_probe(run.scoring);
  const auto rep = scoring::group_report(catalog, ds.require_embeddings().values, folds, probe, run.scoring.min_rows,
                                         c.workers);
  json feats = json::array();
  for (const auto& e : catalog) feats.push_back({{"name", e.name}, {"dsl", e.dsl}, {"category", std::string(fdsl::to_string(e.category))}});
  json resolved = {{"catalog", feats}, {"scoring", run.scoring.to_json()}};
  json out = report_header("probe-report", resolved, seeds_json(run), probe.to_json());
  out.update(rep.to_json());
  write_json(out_path(run.out, "probe_report.json"), out);
  return 0;
}

// ---------------------------------------------------------------- erase

struct EraseFlags {
  std::string catalog;
  std::string group;
  std::optional<double> lambda;
  std::optional<int> steps;
  std::optional<double> learning_rate;
};

int cmd_erase(const Common& c, const EraseFlags& f) {
  auto run = resolve_run(c);
  auto ej = section(run.file, "erasure");
  if (f.lambda) ej["lambda"] = *f.lambda;
  if (f.steps) ej["steps"] = *f.steps;
  if (f.learning_rate) ej["learning_rate"] = *f.learning_rate;
  if (!ej.contains("hsic")) ej["hsic"] = json::object();
  if (!ej["hsic"].contains("seed")) ej["hsic"]["seed"] = run.seed;
  std::string group_name = f.group.empty() ? ej.value("sensitive_group", std::string()) : f.group;
  ej.erase("sensitive_group");
  const auto config = erasure::EraserConfig::from_json(ej);
  const auto group = fdsl::category_from_string(group_name);
  if (!group) throw_config("--sensitive-group must be one of Amount, Categories, Time, Activity");

  const auto ds = data::load_store(run.store);
  const auto& z = ds.require_embeddings().values;
  if (ds.targets().empty()) throw_data("erase: the dataset has no target labels");
  const std::string tname = run.target.empty() ? ds.targets().front().name : run.target;
  if (!ds.has_target(tname)) throw_config("unknown target '" + tname + "'");
  const auto& target = ds.target(tname);
  const auto catalog = load_catalog(f.catalog, ds, c.workers);
  const auto s = erasure::sensitive_columns(catalog, *group);
  const auto res = erasure::fit_eraser(z, s, config, c.workers);
  write_file(out_path(run.out, "trace.csv"), res.trace_csv());
  if (res.diverged) {
    throw_config("erase: optimization diverged (objective above 10x its initial value); trace.csv written");
  }
  write_file(out_path(run.out, "embeddings_erased.csv"), data::export_embeddings_csv(ds.ids(), res.erased));

  const auto recon_folds = data::split_folds_plain(ds.size(), run.scoring.folds, run.scoring.seed);
  const auto target_folds = data::split_folds(target.values, target.kind, run.scoring.folds, run.scoring.seed);
  const auto rep = erasure::erasure_report(z, res.erased, catalog, *group, target, recon_folds, target_folds,
                                           run.scoring.probe, run.scoring.min_rows, c.workers);
  json feats = json::array();
  for (const auto& e : catalog) feats.push_back({{"name", e.name}, {"dsl", e.dsl}, {"category", std::string(fdsl::to_string(e.category))}});
  json resolved = {{"catalog", feats},
                   {"sensitive_group", group_name},
                   {"target", tname},
                   {"eraser", config.to_json()},
                   {"scoring", run.scoring.to_json()}};
  json seeds = seeds_json(run);
  seeds["hsic"] = config.hsic.seed;
  json out = report_header("erase", resolved, seeds, run.scoring.probe.to_json());
  out["report"] = rep.to_json();
  out["eraser"] = {{"hsic_before", res.hsic_before},
                   {"hsic_after", res.hsic_after},
                   {"bandwidth_x", res.bandwidth_x},
                   {"bandwidth_s", res.bandwidth_s},
                   {"steps_run", res.trace.empty() ? 0 : res.trace.back().step},
                   {"warnings", res.warnings}};
  write_json(out_path(run.out, "erasure_report.json"), out);
  return 0;
}

int emit_error(ErrorKind kind, const std::string& message) {
  const json err = {{"error", {{"kind", to_string(kind)}, {"message", message}, {"exit_code", static_cast<int>(kind)}}}};
  std::cerr << err.dump() << "\n";
  return static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedding-aware feature discovery for event sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(EAFD_VERSION));
  int workers = 0;
  app.add_option("--workers", workers, "maximum worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  std::string synth_config, synth_out;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_users;
  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark store and manifest");
  synth->add_option("--config", synth_config, "TOML synthetic-data configuration");
  synth->add_option("--out", synth_out, "output store directory");
  synth->add_option("--seed", synth_seed, "override the configured seed");
  synth->add_option("--n-users", synth_users, "override the number of users");

  std::string ing_events, ing_schema, ing_labels, ing_embeddings, ing_out;
  std::vector<std::string> ing_kinds;
  auto* ingest = app.add_subcommand("ingest", "ingest JSONL events, labels and embeddings into a store");
  ingest->add_option("--events", ing_events, "events JSONL file")->required();
  ingest->add_option("--schema", ing_schema, "schema JSON file")->required();
  ingest->add_option("--labels", ing_labels, "labels CSV (id column first)");
  ingest->add_option("--embeddings", ing_embeddings, "embeddings CSV (id column first)");
  ingest->add_option("--target-kind", ing_kinds, "label kind as name=binary|multiclass|regression");
  ingest->add_option("--out", ing_out, "output store directory")->required();

  Common disc_c;
  DiscoverFlags disc_f;
  auto* discover = app.add_subcommand("discover", "run the iterative discovery loop");
  add_common(discover, disc_c);
  discover->add_option("--target", disc_c.target, "target label name");
  discover->add_option("--iterations", disc_f.iterations, "number of iterations");
  discover->add_option("--budget", disc_f.budget, "maximum accepted features");
  discover->add_option("--batch-size", disc_f.batch_size, "candidates requested per iteration");
  discover->add_option("--generator-script", disc_f.script, "mock generator script (JSON)");

  Common eval_c;
  std::string eval_features, eval_embeddings, eval_labels;
  auto* eval = app.add_subcommand("eval", "cross-validated metrics for embeddings, features and both");
  add_common(eval, eval_c);
  eval->add_option("--target", eval_c.target, "target label name (default: all)");
  eval->add_option("--features", eval_features, "feature list JSON")->required();
  eval->add_option("--embeddings", eval_embeddings, "embeddings CSV replacing the stored embeddings");
  eval->add_option("--labels", eval_labels, "labels CSV replacing the stored labels");

  Common pr_c;
  std::string pr_catalog;
  auto* probe_report = app.add_subcommand("probe-report", "per-group reconstruction scores of a feature catalog");
  add_common(probe_report, pr_c);
  probe_report->add_option("--catalog", pr_catalog, "feature list JSON")->required();

  Common er_c;
  EraseFlags er_f;
  auto* erase = app.add_subcommand("erase", "erase a feature group from the embeddings");
  add_common(erase, er_c);
  erase->add_option("--target", er_c.target, "target label for the downstream metric");
  erase->add_option("--catalog", er_f.catalog, "feature list JSON")->required();
  erase->add_option("--sensitive-group", er_f.group, "Amount, Categories, Time or Activity");
  erase->add_option("--lambda", er_f.lambda, "dependence penalty weight");
  erase->add_option("--steps", er_f.steps, "gradient steps");
  erase->add_option("--learning-rate", er_f.learning_rate, "initial step size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error(ErrorKind::Config, e.what());
  }

  try {
    set_default_workers(workers > 0 ? workers : default_workers());
    const int w = workers;
    for (auto* c : {&disc_c, &eval_c, &pr_c, &er_c}) c->workers = w;
    if (*synth) return cmd_synth(synth_config, synth_out, synth_seed, synth_users, w);
    if (*ingest) return cmd_ingest(ing_events, ing_schema, ing_labels, ing_embeddings, ing_kinds, ing_out);
    if (*discover) return cmd_discover(disc_c, disc_f);
    if (*eval) return cmd_eval(eval_c, eval_features, eval_embeddings, eval_labels);
    if (*probe_report) return cmd_probe_report(pr_c, pr_catalog);
    if (*erase) return cmd_erase(er_c, er_f);
  } catch (const Error& e) {
    return emit_error(e.kind(), e.what());
  } catch (const json::exception& e) {
    return emit_error(ErrorKind::Config, std::string("configuration: ") + e.what());
  } catch (const fs::filesystem_error& e) {
    return emit_error(ErrorKind::Data, e.what());
  } catch (const std::exception& e) {
    return emit_error(ErrorKind::Invariant, e.what());
  }
  return emit_error(ErrorKind::Config, "no subcommand");
}
