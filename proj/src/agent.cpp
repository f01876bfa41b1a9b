#include <algorithm>
#include <cmath>
#include <numeric>

#include "eafd/agent.hpp"
#include "eafd/core/error.hpp"
#include "eafd/core/parallel.hpp"
#include "eafd/core/text.hpp"
#include "eafd/fdsl/parser.hpp"

namespace eafd::agent {

using json = nlohmann::json;

// ---------------------------------------------------------------- validation and repair

Validation validate_candidate(const std::string& dsl, const data::Dataset& dataset, std::size_t probe_sequences) {
  Validation v;
  try {
    const auto expr = fdsl::parse(dsl, dataset.schema());
    auto feature = fdsl::compile(expr, dataset.schema());
    const auto seqs = dataset.sequences();
    const std::size_t m = std::min(probe_sequences, seqs.size());
    for (std::size_t i = 0; i < m; ++i) feature.evaluate(seqs[i]);
    v.feature = std::move(feature);
  } catch (const fdsl::DslError& e) {
    v.diagnostic = e.diagnostic().render();
  } catch (const std::exception& e) {
    v.diagnostic = std::string("evaluation error: ") + e.what();
  }
  return v;
}

namespace {

std::vector<ChatMessage> repair_messages(const std::string& candidate, const std::string& diagnostic) {
  const auto& p = prompts();
  return {{"system", p.system}, {"user", render_template(p.repair, {{"candidate", candidate}, {"diagnostic", diagnostic}})}};
}

bool unreachable(const Error& e) { return e.kind() == ErrorKind::GeneratorUnreachable; }

}  // namespace

RepairOutcome repair(Generator& generator, const std::string& candidate_text, const std::string& diagnostic,
                     const data::Dataset& dataset, int iteration, int max_rounds, std::size_t probe_sequences) {
  RepairOutcome out;
  out.final_text = candidate_text;
  out.diagnostics.push_back(diagnostic);
  std::string text = candidate_text;
  std::string diag = diagnostic;
  for (int round = 1; round <= max_rounds; ++round) {
    RepairRequest req{iteration, round, text, diag, repair_messages(text, diag)};
    std::string response;
    try {
      response = generator.repair(req);
    } catch (const Error& e) {
      if (!unreachable(e)) throw;
      out.transport_failure = true;
      out.diagnostics.push_back(std::string("transport: ") + e.what());
      return out;
    }
    out.rounds = round;
    text = extract_repaired_dsl(response);
    out.final_text = text;
    auto v = validate_candidate(text, dataset, probe_sequences);
    if (v.feature) {
      out.feature = std::move(v.feature);
      return out;
    }
    diag = v.diagnostic;
    out.diagnostics.push_back(diag);
  }
  return out;
}

// ---------------------------------------------------------------- config

void DiscoveryConfig::validate() const {
  if (iterations < 0) throw_config("discovery: iterations must be >= 0");
  if (batch_size < 1) throw_config("discovery: batch_size must be >= 1");
  if (max_repair_rounds < 0) throw_config("discovery: max_repair_rounds must be >= 0");
  if (reflection_tokens < 1) throw_config("discovery: reflection_tokens must be >= 1");
  scoring.validate();
}

json DiscoveryConfig::to_json() const {
  return {{"target", target},
          {"iterations", iterations},
          {"budget", budget},
          {"batch_size", batch_size},
          {"max_repair_rounds", max_repair_rounds},
          {"probe_sequences", probe_sequences},
          {"reflection_tokens", reflection_tokens},
          {"sample_sequences", sample_sequences},
          {"sample_events", sample_events},
          {"prompt_version", prompts().version},
          {"scoring", scoring.to_json()}};
}

DiscoveryConfig DiscoveryConfig::from_json(const json& j) {
  DiscoveryConfig c;
  c.target = j.value("target", c.target);
  c.iterations = j.value("iterations", c.iterations);
  c.budget = j.value("budget", c.budget);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_repair_rounds = j.value("max_repair_rounds", c.max_repair_rounds);
  c.probe_sequences = j.value("probe_sequences", c.probe_sequences);
  c.reflection_tokens = j.value("reflection_tokens", c.reflection_tokens);
  c.sample_sequences = j.value("sample_sequences", c.sample_sequences);
  c.sample_events = j.value("sample_events", c.sample_events);
  if (j.contains("scoring")) c.scoring = scoring::ScoringConfig::from_json(j.at("scoring"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------- state

json Rejection::to_json() const {
  return {{"name", name}, {"text", text}, {"iteration", iteration}, {"reason", reason}, {"diagnostics", diagnostics}};
}

namespace {

json type_counts_json(const TypeCounts& counts) {
  json j = json::object();
  for (auto c : fdsl::kAllCategories) {
    const auto it = counts.find(c);
    j[std::string(fdsl::to_string(c))] = it == counts.end() ? 0 : it->second;
  }
  return j;
}

}  // namespace

json IterationSummary::to_json() const {
  json v = json::object();
  for (auto k : {scoring::Verdict::Complementary, scoring::Verdict::Aligned, scoring::Verdict::Uninformative}) {
    const auto it = verdicts.find(k);
    v[scoring::to_string(k)] = it == verdicts.end() ? 0 : it->second;
  }
  return {{"iteration", iteration},     {"metric", metric},
          {"n_accepted", n_accepted},   {"n_generated", n_generated},
          {"n_scored", n_scored},       {"n_rejected", n_rejected},
          {"accepted_now", accepted_now}, {"scored_types", type_counts_json(scored_types)},
          {"accepted_types", type_counts_json(accepted_types)}, {"verdicts", v}};
}

std::size_t IterationState::remaining_budget(const DiscoveryConfig& config) const {
  return accepted.size() >= config.budget ? 0 : config.budget - accepted.size();
}

bool IterationState::in_ledger(const std::string& canonical) const {
  return std::any_of(ledger.begin(), ledger.end(), [&](const auto& r) { return r.dsl == canonical; });
}

// ---------------------------------------------------------------- reflection

namespace {

json schema_summary(const data::Dataset& ds) {
  const auto& schema = ds.schema();
  json fields = json::array();
  std::size_t total_events = 0;
  for (const auto& s : ds.sequences()) total_events += s.size();
  for (const auto& f : schema.fields) {
    json item = {{"name", f.name}, {"kind", f.kind == data::FieldKind::Categorical ? "categorical" : "numeric"}};
    if (f.kind == data::FieldKind::Categorical) {
      const auto& vocab = schema.vocabulary(f.name);
      const auto slot = *schema.categorical_slot(f.name);
      std::vector<std::size_t> counts(vocab.size(), 0);
      for (const auto& s : ds.sequences()) {
        for (auto c : s.categorical[slot]) {
          if (c < counts.size()) ++counts[c];
        }
      }
      std::vector<std::size_t> order(vocab.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });
      json top = json::array();
      for (std::size_t i = 0; i < std::min<std::size_t>(order.size(), 12); ++i) {
        top.push_back({{"value", vocab[order[i]]}, {"share", total_events ? double(counts[order[i]]) / double(total_events) : 0.0}});
      }
      item["vocabulary_size"] = vocab.size();
      item["top_values"] = top;
    } else {
      const auto slot = *schema.numeric_slot(f.name);
      double sum = 0.0;
      std::size_t n = 0;
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& s : ds.sequences()) {
        for (double v : s.numeric[slot]) {
          if (std::isnan(v)) continue;
          sum += v;
          ++n;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      if (n > 0) item["summary"] = {{"mean", sum / double(n)}, {"min", lo}, {"max", hi}};
    }
    fields.push_back(item);
  }
  return {{"fields", fields},
          {"n_sequences", ds.size()},
          {"mean_events", ds.size() ? double(total_events) / double(ds.size()) : 0.0},
          {"timestamp_unit", "seconds"}};
}

json label_summary(const data::Target& t) {
  json j = {{"name", t.name}, {"kind", data::to_string(t.kind)}, {"n", t.values.size()}};
  const double n = static_cast<double>(t.values.size());
  if (t.kind == data::TaskKind::Regression) {
    double m = 0.0, ss = 0.0;
    for (double v : t.values) m += v / n;
    for (double v : t.values) ss += (v - m) * (v - m) / n;
    j["mean"] = m;
    j["sd"] = std::sqrt(ss);
  } else {
    const std::size_t k = t.kind == data::TaskKind::Binary ? 2 : t.n_classes;
    std::vector<std::size_t> counts(k, 0);
    for (double v : t.values) {
      const auto c = static_cast<std::size_t>(v);
      if (c < k) ++counts[c];
    }
    j["class_counts"] = counts;
  }
  return j;
}

json sample_sequences(const data::Dataset& ds, std::size_t n_seq, std::size_t n_events) {
  const auto& schema = ds.schema();
  json out = json::array();
  const auto seqs = ds.sequences();
  for (std::size_t i = 0; i < std::min(n_seq, seqs.size()); ++i) {
    const auto& s = seqs[i];
    json events = json::array();
    for (std::size_t e = 0; e < std::min(n_events, s.size()); ++e) {
      json ev = {{schema.timestamp_field, s.timestamps[e]}};
      for (const auto& f : schema.fields) {
        if (f.kind == data::FieldKind::Categorical) {
          const auto c = s.categorical[*schema.categorical_slot(f.name)][e];
          const auto& vocab = schema.vocabulary(f.name);
          ev[f.name] = c < vocab.size() ? json(vocab[c]) : json(nullptr);
        } else {
          const double v = s.numeric[*schema.numeric_slot(f.name)][e];
          ev[f.name] = std::isnan(v) ? json(nullptr) : json(v);
        }
      }
      events.push_back(ev);
    }
    out.push_back({{"id", s.id}, {"n_events", s.size()}, {"events", events}});
  }
  return out;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::size_t token_estimate(const json& j) { return j.dump(2).size() / 4; }

}  // namespace

json build_reflection(const IterationState& state, const data::Dataset& dataset, const DiscoveryConfig& config) {
  json r;
  r["iteration"] = state.iteration + 1;
  r["schema"] = schema_summary(dataset);
  const std::string target = config.target.empty() && !dataset.targets().empty() ? dataset.targets().front().name
                                                                                   : config.target;
  if (dataset.has_target(target)) {
    const auto& t = dataset.target(target);
    r["labels"] = label_summary(t);
    r["metric"] = {{"name", probe::metric_name(t.kind)}, {"value", state.metric},
                   {"higher_is_better", probe::metric_higher_is_better(t.kind)}};
  }
  json accepted = json::array();
  for (auto idx : state.accepted) {
    const auto& rec = state.ledger[idx];
    accepted.push_back({{"name", rec.name},
                        {"dsl", rec.dsl},
                        {"alignment", opt(rec.alignment_fe)},
                        {"utility", rec.utility},
                        {"verdict", scoring::to_string(rec.verdict)},
                        {"importance_rank", rec.importance_rank ? json(*rec.importance_rank) : json(nullptr)}});
  }
  r["accepted"] = accepted;

  std::vector<std::size_t> scored;
  for (std::size_t i = 0; i < state.ledger.size(); ++i) {
    if (state.ledger[i].reconstruction_ef) scored.push_back(i);
  }
  auto recon = [&](std::size_t i) { return *state.ledger[i].reconstruction_ef; };
  std::vector<std::size_t> by_recon = scored;
  std::stable_sort(by_recon.begin(), by_recon.end(), [&](auto a, auto b) { return recon(a) > recon(b); });
  json aligned = json::array(), orthogonal = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(3, by_recon.size()); ++i) {
    const auto& rec = state.ledger[by_recon[i]];
    aligned.push_back({{"dsl", rec.dsl}, {"reconstruction", recon(by_recon[i])}, {"utility", rec.utility}});
  }
  for (std::size_t i = 0; i < std::min<std::size_t>(3, by_recon.size()); ++i) {
    const auto k = by_recon[by_recon.size() - 1 - i];
    const auto& rec = state.ledger[k];
    orthogonal.push_back({{"dsl", rec.dsl}, {"reconstruction", recon(k)}, {"utility", rec.utility}});
  }
  r["exemplars"] = {{"aligned", aligned}, {"orthogonal", orthogonal}};

  json last = json::array();
  for (const auto& rec : state.ledger) {
    if (rec.iteration != state.iteration) continue;
    last.push_back({{"dsl", rec.dsl},
                    {"utility", rec.utility},
                    {"p_value", rec.p_value},
                    {"verdict", scoring::to_string(rec.verdict)},
                    {"category", std::string(fdsl::to_string(rec.category))}});
  }
  r["last_iteration"] = last;
  r["remaining_budget"] = state.remaining_budget(config);

  json errors = json::array();
  const std::size_t first = state.rejected.size() > 10 ? state.rejected.size() - 10 : 0;
  for (std::size_t i = first; i < state.rejected.size(); ++i) {
    const auto& rej = state.rejected[i];
    errors.push_back({{"text", rej.text}, {"reason", rej.reason},
                      {"diagnostic", rej.diagnostics.empty() ? std::string() : rej.diagnostics.back()}});
  }
  r["errors"] = errors;

  std::size_t n_events = config.sample_events;
  std::size_t n_seq = config.sample_sequences;
  r["samples"] = sample_sequences(dataset, n_seq, n_events);
  bool truncated = false;
  while (token_estimate(r) > config.reflection_tokens) {
    truncated = true;
    if (n_events > 0 && n_seq > 0) {
      n_events /= 2;
      if (n_events == 0) n_seq = 0;
      r["samples"] = sample_sequences(dataset, n_seq, n_events);
    } else if (!r["errors"].empty()) {
      r["errors"].erase(r["errors"].begin());
    } else if (!r["last_iteration"].empty()) {
      r["last_iteration"].erase(r["last_iteration"].size() - 1);
    } else if (!r["exemplars"]["orthogonal"].empty() || !r["exemplars"]["aligned"].empty()) {
      r["exemplars"] = {{"aligned", json::array()}, {"orthogonal", json::array()}};
    } else {
      break;
    }
  }
  r["truncated"] = truncated;
  return r;
}

// ---------------------------------------------------------------- loop

LoopContext LoopContext::make(const data::Dataset& dataset, const DiscoveryConfig& config) {
  LoopContext ctx;
  ctx.dataset = &dataset;
  dataset.require_embeddings();
  if (dataset.targets().empty()) throw_data("discovery: the dataset has no target labels");
  const std::string name = config.target.empty() ? dataset.targets().front().name : config.target;
  if (!dataset.has_target(name)) throw_config("discovery: unknown target '" + name + "'");
  ctx.target = &dataset.target(name);
  ctx.target_folds = data::split_folds(ctx.target->values, ctx.target->kind, config.scoring.folds, config.scoring.seed);
  ctx.recon_folds = data::split_folds_plain(dataset.size(), config.scoring.folds, config.scoring.seed);
  ctx.task_probe = config.scoring.probe;
  return ctx;
}

double LoopContext::cv_metric(const std::vector<std::span<const double>>& columns, int workers) const {
  std::vector<std::vector<double>> storage;
  const auto x = scoring::design(dataset->require_embeddings().values, storage, columns);
  const auto cv = probe::cross_val_loss(task_probe, target->kind, target->n_classes, x, target->values, target_folds,
                                        workers);
  return probe::task_metric(target->kind, target->n_classes, target->values, cv.oof);
}

namespace {

std::vector<std::span<const double>> accepted_columns(const IterationState& s) {
  std::vector<std::span<const double>> cols;
  for (auto idx : s.accepted) cols.emplace_back(s.ledger_values[idx]);
  return cols;
}

TypeCounts accepted_types(const IterationState& s) {
  TypeCounts t;
  for (auto idx : s.accepted) ++t[s.ledger[idx].category];
  return t;
}

struct Pending {
  std::string name;
  fdsl::CompiledFeature feature;
};

}  // namespace

IterationState initial_state(const LoopContext& ctx, const DiscoveryConfig& config) {
  IterationState s;
  s.metric = ctx.cv_metric({}, config.scoring.workers);
  IterationSummary summary;
  summary.metric = s.metric;
  s.history.push_back(summary);
  return s;
}

IterationState run_iteration(const IterationState& state, const LoopContext& ctx, const DiscoveryConfig& config,
                             Generator& generator) {
  const auto& dataset = *ctx.dataset;
  const auto& z = dataset.require_embeddings().values;
  const int workers = config.scoring.workers;
  IterationState next = state;
  next.iteration = state.iteration + 1;
  const int it = next.iteration;
  IterationSummary summary;
  summary.iteration = it;
  const std::size_t rejected_before = next.rejected.size();

  const auto reflection = build_reflection(state, dataset, config);
  const auto& p = prompts();
  ProposeRequest request{it, config.batch_size,
                         {{"system", p.system},
                          {"user", render_template(p.propose, {{"iteration", std::to_string(it)},
                                                               {"batch_size", std::to_string(config.batch_size)},
                                                               {"reflection", reflection.dump(2)}})}}};
  std::string response = generator.propose(request);
  auto extraction = extract_candidates(response, config.batch_size);
  if (extraction.diagnostic) {
    Rejection rej{"response", response, it, "format", {*extraction.diagnostic}};
    for (int round = 1; round <= config.max_repair_rounds && extraction.diagnostic; ++round) {
      RepairRequest req{it, round, response, *extraction.diagnostic, repair_messages(response, *extraction.diagnostic)};
      try {
        response = generator.repair(req);
      } catch (const Error& e) {
        if (!unreachable(e)) throw;
        rej.reason = "transport";
        rej.diagnostics.push_back(std::string("transport: ") + e.what());
        break;
      }
      extraction = extract_candidates(response, config.batch_size);
      if (extraction.diagnostic) rej.diagnostics.push_back(*extraction.diagnostic);
    }
    if (extraction.diagnostic) {
      extraction.candidates.clear();
      next.rejected.push_back(std::move(rej));
    }
  }
  summary.n_generated = extraction.candidates.size();

  std::vector<Pending> pending;
  std::vector<std::string> seen;
  for (std::size_t j = 0; j < extraction.candidates.size(); ++j) {
    const auto& raw = extraction.candidates[j];
    const std::string name = raw.name.empty() ? "it" + std::to_string(it) + "_" + std::to_string(j + 1) : raw.name;
    auto v = validate_candidate(raw.dsl, dataset, config.probe_sequences);
    if (!v.feature) {
      auto outcome = repair(generator, raw.dsl, v.diagnostic, dataset, it, config.max_repair_rounds,
                            config.probe_sequences);
      if (!outcome.feature) {
        next.rejected.push_back({name, raw.dsl, it, outcome.transport_failure ? "transport" : "invalid",
                                 std::move(outcome.diagnostics)});
        continue;
      }
      v.feature = std::move(outcome.feature);
    }
    const auto& canonical = v.feature->canonical();
    if (next.in_ledger(canonical) || std::find(seen.begin(), seen.end(), canonical) != seen.end()) {
      next.rejected.push_back({name, raw.dsl, it, "duplicate", {"duplicate of an earlier candidate: " + canonical}});
      continue;
    }
    seen.push_back(canonical);
    pending.push_back({name, std::move(*v.feature)});
  }

  std::vector<fdsl::CompiledFeature> features;
  for (const auto& pnd : pending) features.push_back(pnd.feature);
  const auto fm = fdsl::evaluate_batch(features, dataset, workers);
  const auto accepted = accepted_columns(state);
  const auto base = scoring::baseline_cv(accepted, z, *ctx.target, ctx.target_folds, ctx.task_probe, workers);
  probe::GbtConfig recon_probe = config.scoring.probe;
  recon_probe.loss = probe::Loss::Squared;

  std::vector<scoring::CandidateRecord> records(pending.size());
  parallel_for(pending.size(), workers > 0 ? workers : default_workers(), [&](std::size_t k) {
    auto& rec = records[k];
    const ColumnView candidate{fm.column(k)};
    rec.name = pending[k].name;
    rec.dsl = pending[k].feature.canonical();
    rec.category = pending[k].feature.category();
    rec.iteration = it;
    rec.alignment_fe = scoring::alignment_fe(candidate, z, ctx.recon_folds, recon_probe, 1);
    rec.reconstruction_ef =
        scoring::reconstruction_ef(fm.column(k), z, ctx.recon_folds, recon_probe, config.scoring.min_rows, 1);
    const auto u = scoring::utility(candidate, accepted, z, *ctx.target, ctx.target_folds, ctx.task_probe, &base, 1);
    rec.utility = u.utility;
    rec.utility_per_fold = u.per_fold;
    rec.p_value = u.p_value;
    rec.verdict = scoring::categorize(rec.reconstruction_ef, rec.utility, rec.p_value, config.scoring);
  });

  const std::size_t offset = next.ledger.size();
  for (std::size_t k = 0; k < records.size(); ++k) {
    next.ledger.push_back(records[k]);
    const auto col = fm.column(k);
    next.ledger_values.emplace_back(col.begin(), col.end());
    ++summary.scored_types[records[k].category];
    ++summary.verdicts[records[k].verdict];
  }

  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (records[k].verdict == scoring::Verdict::Complementary) order.push_back(offset + k);
  }
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    const auto& ra = next.ledger[a];
    const auto& rb = next.ledger[b];
    return ra.utility != rb.utility ? ra.utility > rb.utility : ra.dsl < rb.dsl;
  });
  const bool higher = probe::metric_higher_is_better(ctx.target->kind);
  double current = state.metric;
  for (auto idx : order) {
    if (next.remaining_budget(config) == 0) break;
    auto cols = accepted_columns(next);
    cols.emplace_back(next.ledger_values[idx]);
    const double m = ctx.cv_metric(cols, workers);
    if (higher ? m > current : m < current) {
      next.accepted.push_back(idx);
      current = m;
      summary.accepted_now.push_back(next.ledger[idx].dsl);
    }
  }
  next.metric = current;

  if (!next.accepted.empty()) {
    std::vector<std::vector<double>> storage;
    const auto cols = accepted_columns(next);
    const auto x = scoring::design(z, storage, cols);
    const auto model = probe::fit_task(ctx.task_probe, ctx.target->kind, ctx.target->n_classes, x, ctx.target->values);
    const auto ranks = scoring::feature_importance(model);
    std::vector<int> rank_of(x.size(), 0);
    for (const auto& e : ranks) rank_of[e.column] = e.rank;
    for (std::size_t p2 = 0; p2 < next.accepted.size(); ++p2) {
      next.ledger[next.accepted[p2]].importance_rank = rank_of[z.cols() + p2];
    }
  }

  summary.metric = next.metric;
  summary.n_accepted = next.accepted.size();
  summary.n_scored = records.size();
  summary.n_rejected = next.rejected.size() - rejected_before;
  summary.accepted_types = accepted_types(next);
  next.history.push_back(std::move(summary));
  return next;
}

// ---------------------------------------------------------------- report

json DiscoveryReport::to_json() const {
  const auto& s = final_state;
  json trajectory = json::array();
  for (const auto& h : s.history) trajectory.push_back(h.to_json());
  json accepted = json::array();
  for (auto idx : s.accepted) accepted.push_back(s.ledger[idx].to_json());
  json ledger = json::array();
  for (const auto& rec : s.ledger) ledger.push_back(rec.to_json());
  json rejected = json::array();
  for (const auto& r : s.rejected) rejected.push_back(r.to_json());
  return {{"config", config},
          {"metric", metric_name},
          {"baseline_metric", baseline_metric},
          {"final_metric", s.metric},
          {"uplift", s.metric - baseline_metric},
          {"iterations_run", s.iteration},
          {"trajectory", trajectory},
          {"accepted", accepted},
          {"ledger", ledger},
          {"rejected", rejected},
          {"group_report", groups.to_json()},
          {"complete", complete},
          {"abort_reason", abort_reason}};
}

std::string DiscoveryReport::trajectory_csv() const {
  std::string out = "iteration,metric,n_accepted";
  for (auto c : fdsl::kAllCategories) out += "," + std::string(fdsl::to_string(c));
  out += "\n";
  for (const auto& h : final_state.history) {
    out += std::to_string(h.iteration) + "," + format_double(h.metric) + "," + std::to_string(h.n_accepted);
    for (auto c : fdsl::kAllCategories) {
      const auto it = h.accepted_types.find(c);
      out += "," + std::to_string(it == h.accepted_types.end() ? 0 : it->second);
    }
    out += "\n";
  }
  return out;
}

std::string DiscoveryReport::features_json() const {
  std::vector<fdsl::FeatureSpec> specs;
  for (auto idx : final_state.accepted) {
    specs.push_back({final_state.ledger[idx].name, final_state.ledger[idx].dsl, final_state.ledger[idx].category});
  }
  return fdsl::feature_list_json(specs);
}

DiscoveryReport run_discovery(const data::Dataset& dataset, const DiscoveryConfig& config, Generator& generator) {
  config.validate();
  const auto ctx = LoopContext::make(dataset, config);
  DiscoveryConfig resolved = config;
  resolved.target = ctx.target->name;

  DiscoveryReport rep;
  rep.config = resolved.to_json();
  rep.metric_name = probe::metric_name(ctx.target->kind);
  auto state = initial_state(ctx, resolved);
  rep.baseline_metric = state.metric;
  for (int i = 0; i < resolved.iterations; ++i) {
    try {
      state = run_iteration(state, ctx, resolved, generator);
    } catch (const Error& e) {
      if (!unreachable(e)) throw;
      rep.complete = false;
      rep.abort_reason = e.what();
      break;
    }
  }

  std::vector<scoring::CatalogEntry> catalog;
  for (std::size_t i = 0; i < state.ledger.size(); ++i) {
    const bool accepted = std::find(state.accepted.begin(), state.accepted.end(), i) != state.accepted.end();
    if (!accepted && state.ledger[i].verdict != scoring::Verdict::Aligned) continue;
    catalog.push_back({state.ledger[i].name, state.ledger[i].dsl, state.ledger[i].category, state.ledger_values[i]});
  }
  probe::GbtConfig recon_probe = resolved.scoring.probe;
  recon_probe.loss = probe::Loss::Squared;
  rep.groups = scoring::group_report(catalog, dataset.require_embeddings().values, ctx.recon_folds, recon_probe,
                                     resolved.scoring.min_rows, resolved.scoring.workers);
  rep.final_state = std::move(state);
  return rep;
}

}  // namespace eafd::agent
