#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eafd/core/matrix.hpp"

namespace eafd::data {

enum class FieldKind { Categorical, Numeric };

/// Sentinel category id for a missing categorical value.
inline constexpr std::uint32_t kMissingCategory = std::numeric_limits<std::uint32_t>::max();

inline constexpr double kSecondsPerDay = 86400.0;

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::Numeric;
  bool operator==(const FieldSpec&) const = default;
};

enum class TaskKind { Binary, Multiclass, Regression };

const char* to_string(TaskKind kind) noexcept;
TaskKind task_kind_from_string(const std::string& s);

class EventSchema {
 public:
  std::string id_field = "id";
  std::string timestamp_field = "ts";
  std::vector<FieldSpec> fields;
  /// Ordered category strings per categorical field; the index is the category id.
  std::map<std::string, std::vector<std::string>> vocabularies;
  /// Declared label kinds, persisted with the store.
  std::map<std::string, TaskKind> target_kinds;

  /// Throws on a duplicate field name, a field colliding with the id or
  /// timestamp field, or a vocabulary with duplicates.
  void validate() const;

  const FieldSpec* find(const std::string& name) const;
  /// Position of a field among fields of its own kind.
  std::optional<std::size_t> categorical_slot(const std::string& name) const;
  std::optional<std::size_t> numeric_slot(const std::string& name) const;
  std::vector<std::string> categorical_fields() const;
  std::vector<std::string> numeric_fields() const;

  const std::vector<std::string>& vocabulary(const std::string& field) const;
  std::optional<std::uint32_t> category_id(const std::string& field, const std::string& value) const;

  nlohmann::json to_json() const;
  static EventSchema from_json(const nlohmann::json& j);

  bool operator==(const EventSchema&) const = default;
};

/// One entity's time-ordered events. Column vectors are indexed by the
/// field's slot in the schema (see EventSchema::categorical_slot).
struct EventSequence {
  std::string id;
  std::vector<double> timestamps;
  std::vector<std::vector<std::uint32_t>> categorical;
  std::vector<std::vector<double>> numeric;

  std::size_t size() const noexcept { return timestamps.size(); }
  bool operator==(const EventSequence&) const = default;
};

struct Target {
  std::string name;
  TaskKind kind = TaskKind::Binary;
  std::vector<double> values;
  /// Class count for classification targets (labels are 0..n_classes-1).
  std::size_t n_classes = 0;

  bool operator==(const Target&) const = default;
};

struct EmbeddingMatrix {
  Matrix values;
  std::size_t dim() const noexcept { return values.cols(); }
  bool operator==(const EmbeddingMatrix&) const = default;
};

/// Immutable aligned collection of sequences, labels and embeddings.
/// Copies share storage.
class Dataset {
 public:
  Dataset() = default;
  static Dataset create(EventSchema schema, std::vector<EventSequence> sequences,
                        std::vector<Target> targets = {},
                        std::optional<EmbeddingMatrix> embeddings = std::nullopt);

  const EventSchema& schema() const { return state_->schema; }
  std::span<const EventSequence> sequences() const { return state_->sequences; }
  std::size_t size() const { return state_ ? state_->sequences.size() : 0; }
  const std::vector<Target>& targets() const { return state_->targets; }
  const Target& target(const std::string& name) const;
  bool has_target(const std::string& name) const;
  const std::optional<EmbeddingMatrix>& embeddings() const { return state_->embeddings; }
  const EmbeddingMatrix& require_embeddings() const;
  std::vector<std::string> ids() const;

  Dataset with_targets(std::vector<Target> targets) const;
  Dataset with_embeddings(EmbeddingMatrix embeddings) const;

  bool operator==(const Dataset& other) const;

 private:
  struct State {
    EventSchema schema;
    std::vector<EventSequence> sequences;
    std::vector<Target> targets;
    std::optional<EmbeddingMatrix> embeddings;
  };
  std::shared_ptr<const State> state_;
};

// ------------------------------------------------------------------ ingest

Dataset ingest_events(const std::string& events_path, const std::string& schema_path);
/// Ingest from in-memory JSON-lines text. Error messages name the 1-based line.
Dataset ingest_events_text(const std::string& jsonl, EventSchema schema);
/// Re-serializes sequences as JSON lines (dataset order, one event per line).
std::string export_events_jsonl(const Dataset& dataset);

struct ImportReport {
  std::size_t dropped_extra_ids = 0;
  std::vector<std::string> warnings;
};

Dataset import_embeddings(const Dataset& dataset, const std::string& csv_path,
                          ImportReport* report = nullptr);
Dataset import_embeddings_text(const Dataset& dataset, const std::string& csv,
                               ImportReport* report = nullptr);
std::string export_embeddings_csv(const Dataset& dataset);
std::string export_embeddings_csv(const std::vector<std::string>& ids, const Matrix& values);

/// Labels CSV `id,target1,...`. Kinds not listed are inferred: {0,1} → binary,
/// small non-negative integers → multiclass, anything else → regression.
Dataset import_labels_text(const Dataset& dataset, const std::string& csv,
                           const std::map<std::string, TaskKind>& kinds = {},
                           ImportReport* report = nullptr);
Dataset import_labels(const Dataset& dataset, const std::string& csv_path,
                      const std::map<std::string, TaskKind>& kinds = {},
                      ImportReport* report = nullptr);
std::string export_labels_csv(const Dataset& dataset);

// ------------------------------------------------------------------ store

/// Writes schema.json, events.bin, and labels.csv / embeddings.csv when present.
void save_store(const Dataset& dataset, const std::string& dir);
Dataset load_store(const std::string& dir);

std::string encode_events_bin(const Dataset& dataset);
std::vector<EventSequence> decode_events_bin(const std::string& bytes, const EventSchema& schema);

// ------------------------------------------------------------------ folds

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::uint32_t> assignments;
  std::uint64_t seed = 0;
  bool stratified = false;
  std::vector<std::string> warnings;

  std::vector<std::size_t> train_rows(std::size_t fold) const;
  std::vector<std::size_t> test_rows(std::size_t fold) const;
  /// Stable fingerprint of (k, assignments), used to assert paired folds.
  std::uint64_t fingerprint() const;
};

FoldPlan split_folds(std::span<const double> labels, TaskKind kind, std::size_t k, std::uint64_t seed);
FoldPlan split_folds(const Dataset& dataset, const std::string& target, std::size_t k,
                     std::uint64_t seed);
/// Unstratified plan for n rows.
FoldPlan split_folds_plain(std::size_t n, std::size_t k, std::uint64_t seed);

}  // namespace eafd::data
