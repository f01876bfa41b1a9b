#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eafd/dataset.hpp"
#include "eafd/fdsl/eval.hpp"
#include "eafd/scoring.hpp"

namespace eafd::agent {

// ---------------------------------------------------------------- prompts

struct PromptSet {
  std::string version;
  std::string system;
  std::string propose;  // placeholders: {{iteration}} {{batch_size}} {{reflection}}
  std::string repair;   // placeholders: {{candidate}} {{diagnostic}}
};

/// Prompt templates compiled in from the text assets.
const PromptSet& prompts();

/// Replaces every `{{key}}` with its value.
std::string render_template(std::string text, const std::map<std::string, std::string>& values);

// ---------------------------------------------------------------- generators

struct HttpGeneratorSpec {
  /// Full chat-completions URL, e.g. http://127.0.0.1:8000/v1/chat/completions.
  std::string endpoint;
  std::string model;
  int max_output_tokens = 16384;
  double temperature = 0.2;
  double timeout_seconds = 300.0;
  /// Name of the environment variable holding the bearer token; empty for none.
  std::string api_key_env;
  int max_attempts = 3;
  double backoff_seconds = 1.0;
};

struct MockGeneratorSpec {
  std::string script_path;
};

/// Exactly one of `http` and `mock` is set.
struct GeneratorSpec {
  std::optional<HttpGeneratorSpec> http;
  std::optional<MockGeneratorSpec> mock;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ProposeRequest {
  int iteration = 1;
  std::size_t batch_size = 10;
  std::vector<ChatMessage> messages;
};

struct RepairRequest {
  int iteration = 1;
  int round = 1;
  std::string candidate;
  std::string diagnostic;
  std::vector<ChatMessage> messages;
};

/// Source of raw response text. Transport failures throw
/// Error(GeneratorUnreachable).
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string propose(const ProposeRequest& request) = 0;
  virtual std::string repair(const RepairRequest& request) = 0;
};

/// `{"iterations": [[dsl | {name, dsl, rationale}, ...] | "raw text", ...],
///   "repairs": {bad_text: fixed_text}}`. Iteration i uses entry i-1; a
/// missing entry yields an empty batch. A string entry is returned verbatim.
struct MockScript {
  std::vector<nlohmann::json> iterations;
  std::map<std::string, std::string> repairs;

  static MockScript from_json(const nlohmann::json& j);
  static MockScript load(const std::string& path);
};

class MockGenerator : public Generator {
 public:
  explicit MockGenerator(MockScript script) : script_(std::move(script)) {}
  std::string propose(const ProposeRequest& request) override;
  /// The scripted fix for the candidate text, or the text unchanged.
  std::string repair(const RepairRequest& request) override;

 private:
  MockScript script_;
};

/// Chat-completions client with bounded exponential-backoff retries.
class HttpGenerator : public Generator {
 public:
  explicit HttpGenerator(HttpGeneratorSpec spec);
  std::string propose(const ProposeRequest& request) override;
  std::string repair(const RepairRequest& request) override;
  std::string complete(const std::vector<ChatMessage>& messages);

 private:
  HttpGeneratorSpec spec_;
};

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec);

// ---------------------------------------------------------------- extraction

struct RawCandidate {
  std::string name;
  std::string dsl;
  std::string rationale;
};

struct Extraction {
  std::vector<RawCandidate> candidates;
  /// Set when no usable array was found.
  std::optional<std::string> diagnostic;
};

/// The first fenced block if it holds a JSON array, else the first
/// parseable array in the text. At most `limit` items are returned.
Extraction extract_candidates(const std::string& response, std::size_t limit);

/// DSL text from a repair response: a fenced block or JSON `{dsl}`,
/// `[{dsl}]`, `"dsl"`, falling back to the trimmed text.
std::string extract_repaired_dsl(const std::string& response);

// ---------------------------------------------------------------- validation and repair

struct Validation {
  std::optional<fdsl::CompiledFeature> feature;
  std::string diagnostic;
};

/// Parses, type-checks and evaluates on the first `probe_sequences`
/// sequences.
Validation validate_candidate(const std::string& dsl, const data::Dataset& dataset, std::size_t probe_sequences = 10);

struct RepairOutcome {
  std::optional<fdsl::CompiledFeature> feature;
  std::string final_text;
  /// The initial diagnostic followed by one per failed round.
  std::vector<std::string> diagnostics;
  int rounds = 0;
  bool transport_failure = false;
};

RepairOutcome repair(Generator& generator, const std::string& candidate_text, const std::string& diagnostic,
                     const data::Dataset& dataset, int iteration, int max_rounds = 3,
                     std::size_t probe_sequences = 10);

// ---------------------------------------------------------------- loop state

struct DiscoveryConfig {
  std::string target;
  int iterations = 5;
  std::size_t budget = 40;
  std::size_t batch_size = 10;
  int max_repair_rounds = 3;
  std::size_t probe_sequences = 10;
  /// Reflection size cap in estimated tokens (bytes / 4).
  std::size_t reflection_tokens = 32000;
  std::size_t sample_sequences = 3;
  std::size_t sample_events = 20;
  scoring::ScoringConfig scoring;

  void validate() const;
  nlohmann::json to_json() const;
  static DiscoveryConfig from_json(const nlohmann::json& j);
};

struct Rejection {
  std::string name;
  std::string text;
  int iteration = 0;
  std::string reason;  // "invalid", "duplicate", "format", "transport"
  std::vector<std::string> diagnostics;
  nlohmann::json to_json() const;
};

using TypeCounts = std::map<fdsl::Category, std::size_t>;

struct IterationSummary {
  int iteration = 0;
  double metric = 0.0;
  std::size_t n_accepted = 0;  // cumulative
  std::size_t n_generated = 0;
  std::size_t n_scored = 0;
  std::size_t n_rejected = 0;
  std::vector<std::string> accepted_now;
  /// Categories of candidates scored this iteration and of the cumulative
  /// accepted set.
  TypeCounts scored_types;
  TypeCounts accepted_types;
  std::map<scoring::Verdict, std::size_t> verdicts;
  nlohmann::json to_json() const;
};

struct IterationState {
  int iteration = 0;
  /// Ledger indices of accepted features in acceptance order.
  std::vector<std::size_t> accepted;
  std::vector<scoring::CandidateRecord> ledger;
  std::vector<std::vector<double>> ledger_values;
  std::vector<Rejection> rejected;
  double metric = 0.0;
  std::vector<IterationSummary> history;

  std::size_t remaining_budget(const DiscoveryConfig& config) const;
  bool in_ledger(const std::string& canonical) const;
};

/// Reflection document shown to the generator.
nlohmann::json build_reflection(const IterationState& state, const data::Dataset& dataset,
                                const DiscoveryConfig& config);

/// Prepared per-run inputs shared by all iterations.
struct LoopContext {
  const data::Dataset* dataset = nullptr;
  const data::Target* target = nullptr;
  data::FoldPlan target_folds;
  data::FoldPlan recon_folds;
  probe::GbtConfig task_probe;

  static LoopContext make(const data::Dataset& dataset, const DiscoveryConfig& config);
  /// CV metric of [z, columns].
  double cv_metric(const std::vector<std::span<const double>>& columns, int workers) const;
};

IterationState initial_state(const LoopContext& ctx, const DiscoveryConfig& config);

IterationState run_iteration(const IterationState& state, const LoopContext& ctx, const DiscoveryConfig& config,
                             Generator& generator);

struct DiscoveryReport {
  nlohmann::json config;
  std::string metric_name;
  double baseline_metric = 0.0;
  IterationState final_state;
  scoring::GroupReport groups;
  bool complete = true;
  std::string abort_reason;

  nlohmann::json to_json() const;
  std::string trajectory_csv() const;
  /// Accepted features as a list loadable by `eval`.
  std::string features_json() const;
};

DiscoveryReport run_discovery(const data::Dataset& dataset, const DiscoveryConfig& config, Generator& generator);

}  // namespace eafd::agent
