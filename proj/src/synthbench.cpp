#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "eafd/core/error.hpp"
#include "eafd/core/parallel.hpp"
#include "eafd/core/rng.hpp"
#include "eafd/core/text.hpp"
#include "eafd/fdsl/ast.hpp"
#include "eafd/fdsl/parser.hpp"
#include "eafd/synthbench.hpp"

namespace eafd::synth {

using nlohmann::json;

namespace {

constexpr std::size_t kFirstEncodedCategory = 1;
constexpr std::size_t kFirstBlindCategory = 7;
constexpr double kEncodedLabelWeights[] = {1.0, -0.8, 0.6};
constexpr double kEncodedRegressionWeights[] = {0.8, 0.5, -0.6};
constexpr double kBlindLabelWeights[] = {1.2, -1.2};
constexpr double kBlindRegressionWeights[] = {1.0, -1.0};

std::string category_name(std::size_t i) { return "c" + std::to_string(i); }

FactorRole role_from_string(const std::string& s) {
  if (s == "share") return FactorRole::Share;
  if (s == "amount") return FactorRole::Amount;
  if (s == "rate") return FactorRole::Rate;
  throw_config("synth: unknown factor role '" + s + "'");
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const char* to_string(FactorRole role) noexcept {
  switch (role) {
    case FactorRole::Share: return "share";
    case FactorRole::Amount: return "amount";
    case FactorRole::Rate: return "rate";
  }
  return "?";
}

std::vector<std::size_t> SynthConfig::blind() const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < n_factors; ++f) {
    if (!contains(encoded, f)) out.push_back(f);
  }
  return out;
}

SynthConfig SynthConfig::resolved() const {
  SynthConfig c = *this;
  std::sort(c.encoded.begin(), c.encoded.end());
  if (c.encoded.empty()) throw_config("synth: the encoded factor set is empty");
  for (auto f : c.encoded) {
    if (f >= c.n_factors) throw_config("synth: encoded factor index out of range");
  }
  if (std::adjacent_find(c.encoded.begin(), c.encoded.end()) != c.encoded.end()) {
    throw_config("synth: duplicate encoded factor index");
  }
  const auto blind_set = c.blind();
  if (blind_set.empty()) throw_config("synth: the blind factor set is empty");

  if (c.wiring.empty()) {
    static constexpr FactorRole kEncodedRoles[] = {FactorRole::Amount, FactorRole::Share, FactorRole::Rate};
    std::size_t next_encoded = kFirstEncodedCategory, next_blind = kFirstBlindCategory;
    c.wiring.resize(c.n_factors);
    for (std::size_t i = 0; i < c.encoded.size(); ++i) {
      auto& w = c.wiring[c.encoded[i]];
      w.role = i < 3 ? kEncodedRoles[i] : FactorRole::Share;
      w.strength = w.role == FactorRole::Share ? 1.0 : (w.role == FactorRole::Amount ? 0.5 : 0.3);
      if (w.role == FactorRole::Share) {
        if (next_encoded >= kFirstBlindCategory) throw_config("synth: too many encoded factors for the default wiring");
        w.category = category_name(next_encoded++);
      }
    }
    for (auto f : blind_set) {
      auto& w = c.wiring[f];
      w.role = FactorRole::Share;
      w.strength = 1.0;
      if (next_blind >= c.n_categories) throw_config("synth: too many blind factors for the default wiring");
      w.category = category_name(next_blind++);
    }
  }
  if (c.label_weights.empty() || c.regression_weights.empty()) {
    std::vector<double> lw(c.n_factors, 0.0), rw(c.n_factors, 0.0);
    for (std::size_t i = 0; i < c.encoded.size(); ++i) {
      lw[c.encoded[i]] = kEncodedLabelWeights[i % 3];
      rw[c.encoded[i]] = kEncodedRegressionWeights[i % 3];
    }
    // The last blind factor is a decoy when there are at least two.
    const std::size_t weighted = blind_set.size() >= 2 ? blind_set.size() - 1 : blind_set.size();
    for (std::size_t i = 0; i < weighted; ++i) {
      lw[blind_set[i]] = kBlindLabelWeights[i % 2];
      rw[blind_set[i]] = kBlindRegressionWeights[i % 2];
    }
    if (c.label_weights.empty()) c.label_weights = lw;
    if (c.regression_weights.empty()) c.regression_weights = rw;
  }
  c.validate();
  return c;
}

void SynthConfig::validate() const {
  if (n_users < 10) throw_config("synth: n_users must be >= 10");
  if (n_factors < 2) throw_config("synth: n_factors must be >= 2");
  if (encoded.empty() || blind().empty()) throw_config("synth: both encoded and blind factor sets must be non-empty");
  if (wiring.size() != n_factors) throw_config("synth: wiring needs one entry per factor");
  if (label_weights.size() != n_factors || regression_weights.size() != n_factors) {
    throw_config("synth: weight vectors need one entry per factor");
  }
  if (n_categories < 2) throw_config("synth: n_categories must be >= 2");
  int amount = 0, rate = 0;
  std::vector<std::string> used;
  for (const auto& w : wiring) {
    if (w.role == FactorRole::Amount) ++amount;
    if (w.role == FactorRole::Rate) ++rate;
    if (w.role != FactorRole::Share) continue;
    const bool known = [&] {
      for (std::size_t i = 0; i < n_categories; ++i) {
        if (category_name(i) == w.category) return true;
      }
      return false;
    }();
    if (!known) throw_config("synth: share factor category '" + w.category + "' is not in the vocabulary");
    if (std::find(used.begin(), used.end(), w.category) != used.end()) {
      throw_config("synth: category '" + w.category + "' is wired to two factors");
    }
    used.push_back(w.category);
  }
  if (amount > 1 || rate > 1) throw_config("synth: at most one amount factor and one rate factor");
  if (!(mean_events >= 1.0)) throw_config("synth: mean_events must be >= 1");
  if (!(mean_gap_days > 0.0)) throw_config("synth: mean_gap_days must be positive");
  if (!(amount_sigma >= 0.0) || !(sigma_z >= 0.0) || !(regression_noise >= 0.0)) {
    throw_config("synth: noise scales must be non-negative");
  }
  if (embedding_dim < 1) throw_config("synth: embedding_dim must be >= 1");
}

json SynthConfig::to_json() const {
  json wires = json::array();
  for (const auto& w : wiring) {
    json o = {{"role", to_string(w.role)}, {"strength", w.strength}};
    if (w.role == FactorRole::Share) o["category"] = w.category;
    wires.push_back(o);
  }
  return {{"n_users", n_users},
          {"n_factors", n_factors},
          {"encoded", encoded},
          {"wiring", wires},
          {"n_categories", n_categories},
          {"mean_events", mean_events},
          {"mean_gap_days", mean_gap_days},
          {"amount_mu", amount_mu},
          {"amount_sigma", amount_sigma},
          {"embedding_dim", embedding_dim},
          {"encoder_gain", encoder_gain},
          {"sigma_z", sigma_z},
          {"label_weights", label_weights},
          {"regression_weights", regression_weights},
          {"regression_noise", regression_noise},
          {"seed", seed},
          {"start_time", start_time}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  if (!j.is_object()) throw_config("synth config: expected an object");
  static const char* kKnown[] = {"n_users",       "n_factors",   "encoded",  "wiring",        "n_categories",
                                 "mean_events",   "mean_gap_days", "amount_mu", "amount_sigma", "embedding_dim",
                                 "encoder_gain",  "sigma_z",     "label_weights", "regression_weights",
                                 "regression_noise", "seed",     "start_time"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return key == k; }) == std::end(kKnown)) {
      throw_config("synth config: unknown key '" + key + "'");
    }
  }
  try {
    c.n_users = j.value("n_users", c.n_users);
    c.n_factors = j.value("n_factors", c.n_factors);
    c.encoded = j.value("encoded", c.encoded);
    if (j.contains("wiring")) {
      for (const auto& w : j.at("wiring")) {
        FactorWiring fw;
        fw.role = role_from_string(w.at("role").get<std::string>());
        fw.category = w.value("category", std::string());
        fw.strength = w.value("strength", 1.0);
        c.wiring.push_back(fw);
      }
    }
    c.n_categories = j.value("n_categories", c.n_categories);
    c.mean_events = j.value("mean_events", c.mean_events);
    c.mean_gap_days = j.value("mean_gap_days", c.mean_gap_days);
    c.amount_mu = j.value("amount_mu", c.amount_mu);
    c.amount_sigma = j.value("amount_sigma", c.amount_sigma);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.encoder_gain = j.value("encoder_gain", c.encoder_gain);
    c.sigma_z = j.value("sigma_z", c.sigma_z);
    c.label_weights = j.value("label_weights", c.label_weights);
    c.regression_weights = j.value("regression_weights", c.regression_weights);
    c.regression_noise = j.value("regression_noise", c.regression_noise);
    c.seed = j.value("seed", c.seed);
    c.start_time = j.value("start_time", c.start_time);
  } catch (const json::exception& e) {
    throw_config(std::string("synth config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------- manifest

json ManifestEntry::to_json() const {
  return {{"name", name},
          {"dsl", dsl},
          {"expected", scoring::to_string(expected)},
          {"factor", factor},
          {"role", synth::to_string(role)},
          {"encoded", encoded},
          {"label_weight", label_weight},
          {"linkage", linkage}};
}

std::vector<const ManifestEntry*> Manifest::with_verdict(scoring::Verdict v) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : features) {
    if (e.expected == v) out.push_back(&e);
  }
  return out;
}

json Manifest::to_json() const {
  json arr = json::array();
  for (const auto& e : features) arr.push_back(e.to_json());
  return {{"seed", seed}, {"features", arr}};
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& f : j.at("features")) {
      ManifestEntry e;
      e.name = f.at("name").get<std::string>();
      e.dsl = f.at("dsl").get<std::string>();
      e.expected = scoring::verdict_from_string(f.at("expected").get<std::string>());
      e.factor = f.value("factor", std::size_t{0});
      e.role = role_from_string(f.value("role", std::string("share")));
      e.encoded = f.value("encoded", false);
      e.label_weight = f.value("label_weight", 0.0);
      e.linkage = f.value("linkage", std::string());
      m.features.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw_data(std::string("manifest: ") + e.what());
  }
  return m;
}

namespace {

std::vector<std::string> catalog_for(const FactorWiring& w) {
  switch (w.role) {
    case FactorRole::Amount:
      return {"mean(amount)", "median(amount)", "mean(amount, window=last_events(20))"};
    case FactorRole::Rate:
      return {"count()", "mean_interevent_days()", "count(window=last_days(30))"};
    case FactorRole::Share: {
      const std::string p = "where mcc == \"" + w.category + "\"";
      return {"count(" + p + ") / count()",
              "count(" + p + ", window=last_events(20)) / count(window=last_events(20))",
              "count(" + p + ", window=last_days(30)) / count(window=last_days(30))"};
    }
  }
  return {};
}

Manifest build_manifest(const SynthConfig& c) {
  Manifest m;
  m.seed = c.seed;
  for (std::size_t f = 0; f < c.n_factors; ++f) {
    const auto& w = c.wiring[f];
    const bool enc = contains(c.encoded, f);
    const bool weighted = c.label_weights[f] != 0.0 || c.regression_weights[f] != 0.0;
    const auto verdict = enc ? scoring::Verdict::Aligned
                             : (weighted ? scoring::Verdict::Complementary : scoring::Verdict::Uninformative);
    std::string linkage = "u" + std::to_string(f) + " drives " + to_string(w.role);
    if (w.role == FactorRole::Share) linkage += " of " + w.category;
    linkage += enc ? "; encoded" : "; blind";
    linkage += weighted ? "; label-weighted" : "; not in any label";
    const auto texts = catalog_for(w);
    for (std::size_t k = 0; k < texts.size(); ++k) {
      ManifestEntry e;
      e.name = std::string(to_string(w.role)) + "_u" + std::to_string(f) + "_" + std::to_string(k);
      e.dsl = fdsl::canonical_print(fdsl::parse(texts[k]));
      e.expected = verdict;
      e.factor = f;
      e.role = w.role;
      e.encoded = enc;
      e.label_weight = c.label_weights[f];
      e.linkage = linkage;
      m.features.push_back(std::move(e));
    }
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------- generation

SynthOutput generate(const SynthConfig& config, int workers) {
  const SynthConfig c = config.resolved();
  const std::size_t n = c.n_users, F = c.n_factors, K = c.n_categories, d = c.embedding_dim;
  const std::size_t e_count = c.encoded.size();

  // Encoder z = A tanh(gain u_E) + noise; row r of A loads mainly on
  // encoded factor r mod |E| with small random mixing.
  Rng global = Rng::stream(c.seed, 0);
  Matrix A(d, e_count);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t s = 0; s < e_count; ++s) A(r, s) = 3.0 * ((r % e_count == s ? 1.0 : 0.0) + 0.1 * global.normal());
  }

  int amount_factor = -1, rate_factor = -1;
  std::vector<std::pair<std::size_t, std::size_t>> share;  // (factor, category id)
  for (std::size_t f = 0; f < F; ++f) {
    const auto& w = c.wiring[f];
    if (w.role == FactorRole::Amount) amount_factor = static_cast<int>(f);
    if (w.role == FactorRole::Rate) rate_factor = static_cast<int>(f);
    if (w.role == FactorRole::Share) share.emplace_back(f, std::stoul(w.category.substr(1)));
  }

  const std::size_t width = std::max<std::size_t>(5, std::to_string(n - 1).size());
  std::vector<data::EventSequence> seqs(n);
  Matrix latents(n, F), z(n, d);
  std::vector<double> y(n), y_reg(n);

  parallel_for(n, workers > 0 ? workers : default_workers(), [&](std::size_t i) {
    Rng rng = Rng::stream(c.seed, i + 1);
    std::vector<double> u(F);
    for (auto& v : u) v = rng.normal();
    for (std::size_t f = 0; f < F; ++f) latents(i, f) = u[f];

    const double rate = rate_factor >= 0 ? std::exp(c.wiring[rate_factor].strength * u[rate_factor]) : 1.0;
    const double mu = c.amount_mu + (amount_factor >= 0 ? c.wiring[amount_factor].strength * u[amount_factor] : 0.0);
    std::vector<double> cum(K, 0.0);
    {
      std::vector<double> logits(K, 0.0);
      for (const auto& [f, cat] : share) logits[cat] += c.wiring[f].strength * u[f];
      const double mx = *std::max_element(logits.begin(), logits.end());
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        acc += std::exp(logits[k] - mx);
        cum[k] = acc;
      }
      for (auto& v : cum) v /= acc;
    }

    auto& seq = seqs[i];
    char buf[32];
    std::snprintf(buf, sizeof buf, "u%0*zu", static_cast<int>(width), i);
    seq.id = buf;
    const std::size_t events = std::max<std::uint64_t>(1, rng.poisson(c.mean_events * rate));
    seq.categorical.assign(1, std::vector<std::uint32_t>(events));
    seq.numeric.assign(1, std::vector<double>(events));
    seq.timestamps.resize(events);
    double t = c.start_time + rng.uniform() * 30.0 * data::kSecondsPerDay;
    for (std::size_t e = 0; e < events; ++e) {
      if (e > 0) t += rng.exponential(rate / c.mean_gap_days) * data::kSecondsPerDay;
      seq.timestamps[e] = std::round(t);
      const double q = rng.uniform();
      seq.categorical[0][e] = static_cast<std::uint32_t>(std::upper_bound(cum.begin(), cum.end() - 1, q) - cum.begin());
      seq.numeric[0][e] = std::round(rng.lognormal(mu, c.amount_sigma) * 100.0) / 100.0;
    }

    double logit = 0.0, reg = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      logit += c.label_weights[f] * u[f];
      reg += c.regression_weights[f] * u[f];
    }
    y[i] = rng.bernoulli(sigmoid(logit)) ? 1.0 : 0.0;
    y_reg[i] = reg + c.regression_noise * rng.normal();

    std::vector<double> h(e_count);
    for (std::size_t r = 0; r < e_count; ++r) {
      h[r] = std::tanh(c.encoder_gain * u[c.encoded[r]]);
    }
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t q = 0; q < e_count; ++q) s += A(r, q) * h[q];
      z(i, r) = s + c.sigma_z * rng.normal();
    }
  });

  data::EventSchema schema;
  schema.id_field = "id";
  schema.timestamp_field = "ts";
  schema.fields = {{"mcc", data::FieldKind::Categorical}, {"amount", data::FieldKind::Numeric}};
  for (std::size_t k = 0; k < K; ++k) schema.vocabularies["mcc"].push_back(category_name(k));
  schema.target_kinds = {{"y", data::TaskKind::Binary}, {"y_reg", data::TaskKind::Regression}};

  std::vector<data::Target> targets(2);
  targets[0] = {"y", data::TaskKind::Binary, std::move(y), 2};
  targets[1] = {"y_reg", data::TaskKind::Regression, std::move(y_reg), 0};

  SynthOutput out;
  out.dataset = data::Dataset::create(std::move(schema), std::move(seqs), std::move(targets),
                                      data::EmbeddingMatrix{std::move(z)});
  out.manifest = build_manifest(c);
  out.latents = std::move(latents);
  return out;
}

void write_output(const SynthOutput& out, const SynthConfig& config, const std::string& dir) {
  data::save_store(out.dataset, dir);
  const auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  write_file(path("manifest.json"), out.manifest.to_json().dump(2) + "\n");
  write_file(path("events.jsonl"), data::export_events_jsonl(out.dataset));
  write_file(path("synth_config.json"), config.resolved().to_json().dump(2) + "\n");
}

}  // namespace eafd::synth
