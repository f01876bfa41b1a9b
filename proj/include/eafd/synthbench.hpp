#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "eafd/dataset.hpp"
#include "eafd/scoring.hpp"

namespace eafd::synth {

/// Observable event statistic driven by one latent factor.
enum class FactorRole { Share, Amount, Rate };
const char* to_string(FactorRole role) noexcept;

struct FactorWiring {
  FactorRole role = FactorRole::Share;
  std::string category;  // Share only
  double strength = 1.0;
};

struct SynthConfig {
  std::size_t n_users = 5000;
  std::size_t n_factors = 6;
  /// Factor indices (0-based) visible to the synthetic encoder; the rest are blind.
  std::vector<std::size_t> encoded = {0, 1, 2};
  /// One entry per factor; empty means the default wiring.
  std::vector<FactorWiring> wiring;
  std::size_t n_categories = 12;
  double mean_events = 60.0;
  double mean_gap_days = 1.0;
  double amount_mu = 3.5;
  double amount_sigma = 0.5;
  std::size_t embedding_dim = 8;
  double encoder_gain = 0.6;
  double sigma_z = 0.1;
  /// Binary logit weights per factor; empty means the default.
  std::vector<double> label_weights;
  std::vector<double> regression_weights;
  double regression_noise = 0.5;
  std::uint64_t seed = 0;
  double start_time = 1.6e9;

  std::vector<std::size_t> blind() const;
  /// Copy with defaults filled in; throws on an invalid config.
  SynthConfig resolved() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct ManifestEntry {
  std::string name;
  std::string dsl;  // canonical text
  scoring::Verdict expected = scoring::Verdict::Uninformative;
  std::size_t factor = 0;
  FactorRole role = FactorRole::Share;
  bool encoded = false;
  double label_weight = 0.0;
  std::string linkage;

  nlohmann::json to_json() const;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> features;

  std::vector<const ManifestEntry*> with_verdict(scoring::Verdict v) const;
  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

struct SynthOutput {
  data::Dataset dataset;
  Manifest manifest;
  /// Latent factors, n_users × n_factors, in dataset row order.
  Matrix latents;
};

/// Deterministic under the seed; users are generated in parallel from
/// per-user streams.
SynthOutput generate(const SynthConfig& config, int workers = 0);

/// Writes the store plus manifest.json, events.jsonl and synth_config.json.
void write_output(const SynthOutput& out, const SynthConfig& config, const std::string& dir);

}  // namespace eafd::synth
