#include "eafd/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "eafd/core/error.hpp"
#include "eafd/core/rng.hpp"
#include "eafd/core/text.hpp"

namespace eafd::data {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::Binary: return "binary";
    case TaskKind::Multiclass: return "multiclass";
    case TaskKind::Regression: return "regression";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "binary") return TaskKind::Binary;
  if (s == "multiclass") return TaskKind::Multiclass;
  if (s == "regression") return TaskKind::Regression;
  throw_config("unknown task kind '" + s + "' (expected binary, multiclass or regression)");
}

// ------------------------------------------------------------------ schema

void EventSchema::validate() const {
  if (timestamp_field.empty()) throw_config("schema: timestamp field name is empty");
  if (id_field.empty()) throw_config("schema: id field name is empty");
  if (id_field == timestamp_field) throw_config("schema: id and timestamp fields coincide");
  std::set<std::string> seen;
  for (const auto& f : fields) {
    if (f.name.empty()) throw_config("schema: empty field name");
    if (f.name == timestamp_field || f.name == id_field) {
      throw_config("schema: field '" + f.name + "' collides with the id/timestamp field");
    }
    if (!seen.insert(f.name).second) throw_config("schema: duplicate field '" + f.name + "'");
  }
  for (const auto& [name, vocab] : vocabularies) {
    const FieldSpec* f = find(name);
    if (!f || f->kind != FieldKind::Categorical) {
      throw_config("schema: vocabulary for non-categorical field '" + name + "'");
    }
    std::set<std::string> uniq(vocab.begin(), vocab.end());
    if (uniq.size() != vocab.size()) throw_config("schema: duplicate category in vocabulary '" + name + "'");
    if (vocab.size() >= kMissingCategory) throw_config("schema: vocabulary too large");
  }
}

const FieldSpec* EventSchema::find(const std::string& name) const {
  for (const auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::optional<std::size_t> EventSchema::categorical_slot(const std::string& name) const {
  std::size_t slot = 0;
  for (const auto& f : fields) {
    if (f.kind != FieldKind::Categorical) continue;
    if (f.name == name) return slot;
    ++slot;
  }
  return std::nullopt;
}

std::optional<std::size_t> EventSchema::numeric_slot(const std::string& name) const {
  std::size_t slot = 0;
  for (const auto& f : fields) {
    if (f.kind != FieldKind::Numeric) continue;
    if (f.name == name) return slot;
    ++slot;
  }
  return std::nullopt;
}

std::vector<std::string> EventSchema::categorical_fields() const {
  std::vector<std::string> out;
  for (const auto& f : fields) {
    if (f.kind == FieldKind::Categorical) out.push_back(f.name);
  }
  return out;
}

std::vector<std::string> EventSchema::numeric_fields() const {
  std::vector<std::string> out;
  for (const auto& f : fields) {
    if (f.kind == FieldKind::Numeric) out.push_back(f.name);
  }
  return out;
}

const std::vector<std::string>& EventSchema::vocabulary(const std::string& field) const {
  static const std::vector<std::string> kEmpty;
  auto it = vocabularies.find(field);
  return it == vocabularies.end() ? kEmpty : it->second;
}

std::optional<std::uint32_t> EventSchema::category_id(const std::string& field,
                                                      const std::string& value) const {
  const auto& vocab = vocabulary(field);
  auto it = std::find(vocab.begin(), vocab.end(), value);
  if (it == vocab.end()) return std::nullopt;
  return static_cast<std::uint32_t>(it - vocab.begin());
}

json EventSchema::to_json() const {
  json j;
  j["id_field"] = id_field;
  j["timestamp_field"] = timestamp_field;
  j["fields"] = json::array();
  for (const auto& f : fields) {
    j["fields"].push_back({{"name", f.name},
                           {"kind", f.kind == FieldKind::Categorical ? "categorical" : "numeric"}});
  }
  j["vocabularies"] = json::object();
  for (const auto& [name, vocab] : vocabularies) j["vocabularies"][name] = vocab;
  if (!target_kinds.empty()) {
    j["targets"] = json::object();
    for (const auto& [name, kind] : target_kinds) j["targets"][name] = to_string(kind);
  }
  return j;
}

EventSchema EventSchema::from_json(const json& j) {
  EventSchema s;
  try {
    if (!j.is_object()) throw_config("schema: expected a JSON object");
    s.id_field = j.value("id_field", std::string("id"));
    if (!j.contains("timestamp_field")) throw_config("schema: missing 'timestamp_field'");
    s.timestamp_field = j.at("timestamp_field").get<std::string>();
    for (const auto& f : j.value("fields", json::array())) {
      FieldSpec spec;
      spec.name = f.at("name").get<std::string>();
      const auto kind = f.at("kind").get<std::string>();
      if (kind == "categorical") {
        spec.kind = FieldKind::Categorical;
      } else if (kind == "numeric") {
        spec.kind = FieldKind::Numeric;
      } else {
        throw_config("schema: field '" + spec.name + "' has unknown kind '" + kind + "'");
      }
      s.fields.push_back(spec);
    }
    if (j.contains("vocabularies")) {
      for (const auto& [name, vocab] : j.at("vocabularies").items()) {
        s.vocabularies[name] = vocab.get<std::vector<std::string>>();
      }
    }
    if (j.contains("targets")) {
      for (const auto& [name, kind] : j.at("targets").items()) {
        s.target_kinds[name] = task_kind_from_string(kind.get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw_config(std::string("schema: ") + e.what());
  }
  for (const auto& f : s.fields) {
    if (f.kind == FieldKind::Categorical) s.vocabularies.try_emplace(f.name);
  }
  s.validate();
  return s;
}

// ------------------------------------------------------------------ dataset

namespace {

void validate_sequence(const EventSchema& schema, const EventSequence& seq, std::size_t n_cat,
                       std::size_t n_num) {
  const std::size_t n = seq.size();
  if (seq.categorical.size() != n_cat || seq.numeric.size() != n_num) {
    throw_data("sequence '" + seq.id + "': column count does not match schema");
  }
  for (const auto& c : seq.categorical) {
    if (c.size() != n) throw_data("sequence '" + seq.id + "': ragged categorical column");
  }
  for (const auto& c : seq.numeric) {
    if (c.size() != n) throw_data("sequence '" + seq.id + "': ragged numeric column");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(seq.timestamps[i])) throw_data("sequence '" + seq.id + "': non-finite timestamp");
    if (i > 0 && seq.timestamps[i] < seq.timestamps[i - 1]) {
      throw_data("sequence '" + seq.id + "': timestamps not sorted");
    }
  }
  const auto cats = schema.categorical_fields();
  for (std::size_t c = 0; c < n_cat; ++c) {
    const auto vocab_size = schema.vocabulary(cats[c]).size();
    for (auto id : seq.categorical[c]) {
      if (id != kMissingCategory && id >= vocab_size) {
        throw_data("sequence '" + seq.id + "': category id out of vocabulary for '" + cats[c] + "'");
      }
    }
  }
}

void validate_target(const Target& t, std::size_t n) {
  if (t.values.size() != n) throw_data("target '" + t.name + "': row count does not match sequences");
  for (double v : t.values) {
    if (!std::isfinite(v)) throw_data("target '" + t.name + "': non-finite label");
    if (t.kind != TaskKind::Regression) {
      if (v < 0 || v != std::floor(v) || v >= static_cast<double>(t.n_classes)) {
        throw_data("target '" + t.name + "': class label out of range");
      }
    }
  }
  if (t.kind == TaskKind::Binary && t.n_classes != 2) throw_data("target '" + t.name + "': binary needs 2 classes");
}

void validate_embeddings(const EmbeddingMatrix& e, std::size_t n) {
  if (e.dim() < 1) throw_data("embeddings: dimension must be >= 1");
  if (e.values.rows() != n) throw_data("embeddings: row count does not match sequences");
  for (double v : e.values.data()) {
    if (!std::isfinite(v)) throw_data("embeddings: non-finite entry");
  }
}

}  // namespace

Dataset Dataset::create(EventSchema schema, std::vector<EventSequence> sequences,
                        std::vector<Target> targets, std::optional<EmbeddingMatrix> embeddings) {
  schema.validate();
  const std::size_t n_cat = schema.categorical_fields().size();
  const std::size_t n_num = schema.numeric_fields().size();
  std::set<std::string> ids;
  for (const auto& s : sequences) {
    if (!ids.insert(s.id).second) throw_data("duplicate sequence id '" + s.id + "'");
    validate_sequence(schema, s, n_cat, n_num);
  }
  std::set<std::string> names;
  for (const auto& t : targets) {
    if (!names.insert(t.name).second) throw_data("duplicate target '" + t.name + "'");
    validate_target(t, sequences.size());
  }
  if (embeddings) validate_embeddings(*embeddings, sequences.size());
  Dataset d;
  d.state_ = std::make_shared<const State>(
      State{std::move(schema), std::move(sequences), std::move(targets), std::move(embeddings)});
  return d;
}

const Target& Dataset::target(const std::string& name) const {
  for (const auto& t : state_->targets) {
    if (t.name == name) return t;
  }
  throw_config("unknown target '" + name + "'");
}

bool Dataset::has_target(const std::string& name) const {
  return std::any_of(state_->targets.begin(), state_->targets.end(),
                     [&](const Target& t) { return t.name == name; });
}

const EmbeddingMatrix& Dataset::require_embeddings() const {
  if (!state_->embeddings) throw_config("dataset has no embeddings");
  return *state_->embeddings;
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(size());
  for (const auto& s : state_->sequences) out.push_back(s.id);
  return out;
}

Dataset Dataset::with_targets(std::vector<Target> targets) const {
  std::set<std::string> names;
  for (const auto& t : targets) {
    if (!names.insert(t.name).second) throw_data("duplicate target '" + t.name + "'");
    validate_target(t, size());
  }
  Dataset d;
  d.state_ = std::make_shared<const State>(
      State{state_->schema, state_->sequences, std::move(targets), state_->embeddings});
  return d;
}

Dataset Dataset::with_embeddings(EmbeddingMatrix embeddings) const {
  validate_embeddings(embeddings, size());
  Dataset d;
  d.state_ = std::make_shared<const State>(
      State{state_->schema, state_->sequences, state_->targets, std::move(embeddings)});
  return d;
}

bool Dataset::operator==(const Dataset& other) const {
  if (state_ == other.state_) return true;
  if (!state_ || !other.state_) return false;
  return state_->schema == other.state_->schema && state_->sequences == other.state_->sequences &&
         state_->targets == other.state_->targets && state_->embeddings == other.state_->embeddings;
}

// ------------------------------------------------------------------ ingest

namespace {

std::string category_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  throw_data("categorical value must be a string or number");
}

std::optional<double> numeric_value(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return parse_double(v.get<std::string>());
  return std::nullopt;
}

struct PendingEvent {
  double ts;
  std::vector<std::uint32_t> cats;
  std::vector<double> nums;
};

}  // namespace

Dataset ingest_events_text(const std::string& jsonl, EventSchema schema) {
  schema.validate();
  const auto cat_fields = schema.categorical_fields();
  const auto num_fields = schema.numeric_fields();
  std::vector<std::unordered_map<std::string, std::uint32_t>> lookup(cat_fields.size());
  for (std::size_t c = 0; c < cat_fields.size(); ++c) {
    const auto& vocab = schema.vocabularies[cat_fields[c]];
    for (std::size_t i = 0; i < vocab.size(); ++i) lookup[c][vocab[i]] = static_cast<std::uint32_t>(i);
  }

  std::map<std::string, std::vector<PendingEvent>> groups;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "events line " + std::to_string(line_no) + ": ";
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw_data(where + "malformed JSON (" + e.what() + ")");
    }
    if (!rec.is_object()) throw_data(where + "expected a JSON object");
    for (const auto& [key, _] : rec.items()) {
      if (key != schema.id_field && key != schema.timestamp_field && !schema.find(key)) {
        throw_data(where + "unknown field '" + key + "'");
      }
    }
    if (!rec.contains(schema.id_field)) throw_data(where + "missing sequence id '" + schema.id_field + "'");
    const auto& idv = rec[schema.id_field];
    std::string id;
    try {
      id = category_text(idv);
    } catch (const Error&) {
      throw_data(where + "sequence id must be a string or number");
    }
    if (!rec.contains(schema.timestamp_field)) throw_data(where + "missing timestamp '" + schema.timestamp_field + "'");
    auto ts = numeric_value(rec[schema.timestamp_field]);
    if (!ts) throw_data(where + "timestamp is not numeric");
    if (!std::isfinite(*ts)) throw_data(where + "non-finite timestamp");

    PendingEvent ev{*ts, std::vector<std::uint32_t>(cat_fields.size(), kMissingCategory),
                    std::vector<double>(num_fields.size(), kMissing)};
    for (std::size_t c = 0; c < cat_fields.size(); ++c) {
      auto it = rec.find(cat_fields[c]);
      if (it == rec.end() || it->is_null()) continue;
      std::string text;
      try {
        text = category_text(*it);
      } catch (const Error& e) {
        throw_data(where + "field '" + cat_fields[c] + "': " + e.what());
      }
      auto [pos, inserted] = lookup[c].try_emplace(text, static_cast<std::uint32_t>(lookup[c].size()));
      if (inserted) schema.vocabularies[cat_fields[c]].push_back(text);
      ev.cats[c] = pos->second;
    }
    for (std::size_t c = 0; c < num_fields.size(); ++c) {
      auto it = rec.find(num_fields[c]);
      if (it == rec.end() || it->is_null()) continue;
      auto v = numeric_value(*it);
      if (!v) throw_data(where + "field '" + num_fields[c] + "' is not numeric");
      ev.nums[c] = std::isfinite(*v) ? *v : kMissing;
    }
    groups[id].push_back(std::move(ev));
  }

  std::vector<EventSequence> sequences;
  sequences.reserve(groups.size());
  for (auto& [id, events] : groups) {
    std::stable_sort(events.begin(), events.end(),
                     [](const PendingEvent& a, const PendingEvent& b) { return a.ts < b.ts; });
    EventSequence seq;
    seq.id = id;
    seq.categorical.assign(cat_fields.size(), {});
    seq.numeric.assign(num_fields.size(), {});
    for (const auto& ev : events) {
      seq.timestamps.push_back(ev.ts);
      for (std::size_t c = 0; c < cat_fields.size(); ++c) seq.categorical[c].push_back(ev.cats[c]);
      for (std::size_t c = 0; c < num_fields.size(); ++c) seq.numeric[c].push_back(ev.nums[c]);
    }
    sequences.push_back(std::move(seq));
  }
  return Dataset::create(std::move(schema), std::move(sequences));
}

Dataset ingest_events(const std::string& events_path, const std::string& schema_path) {
  json schema_json;
  try {
    schema_json = json::parse(read_file(schema_path));
  } catch (const json::exception& e) {
    throw_config("schema file " + schema_path + ": " + e.what());
  }
  return ingest_events_text(read_file(events_path), EventSchema::from_json(schema_json));
}

std::string export_events_jsonl(const Dataset& dataset) {
  const auto& schema = dataset.schema();
  const auto cat_fields = schema.categorical_fields();
  const auto num_fields = schema.numeric_fields();
  std::string out;
  for (const auto& seq : dataset.sequences()) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      json rec = json::object();
      rec[schema.id_field] = seq.id;
      rec[schema.timestamp_field] = seq.timestamps[i];
      for (std::size_t c = 0; c < cat_fields.size(); ++c) {
        const auto id = seq.categorical[c][i];
        if (id != kMissingCategory) rec[cat_fields[c]] = schema.vocabulary(cat_fields[c])[id];
      }
      for (std::size_t c = 0; c < num_fields.size(); ++c) {
        const double v = seq.numeric[c][i];
        if (!is_missing(v)) rec[num_fields[c]] = v;
      }
      out += rec.dump();
      out += '\n';
    }
  }
  return out;
}

// ------------------------------------------------------------------ embeddings / labels

namespace {

std::unordered_map<std::string, std::size_t> row_index(const Dataset& dataset) {
  std::unordered_map<std::string, std::size_t> index;
  const auto seqs = dataset.sequences();
  for (std::size_t i = 0; i < seqs.size(); ++i) index.emplace(seqs[i].id, i);
  return index;
}

}  // namespace

Dataset import_embeddings_text(const Dataset& dataset, const std::string& csv, ImportReport* report) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw_data("embeddings: empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "id") throw_data("embeddings: header must be id,e0,...,e{d-1}");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 1] != "e" + std::to_string(j)) {
      throw_data("embeddings: header column " + std::to_string(j + 1) + " must be e" + std::to_string(j));
    }
  }
  const auto index = row_index(dataset);
  Matrix values(dataset.size(), d, kMissing);
  std::vector<char> seen(dataset.size(), 0);
  ImportReport local;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    const std::string where = "embeddings line " + std::to_string(line_no) + ": ";
    if (cells.size() != d + 1) throw_data(where + "expected " + std::to_string(d + 1) + " cells");
    auto it = index.find(cells[0]);
    if (it == index.end()) {
      ++local.dropped_extra_ids;
      continue;
    }
    if (seen[it->second]) throw_data(where + "duplicate embedding id '" + cells[0] + "'");
    seen[it->second] = 1;
    for (std::size_t j = 0; j < d; ++j) {
      auto v = parse_double(cells[j + 1]);
      if (!v) throw_data(where + "non-numeric cell '" + cells[j + 1] + "'");
      if (!std::isfinite(*v)) throw_data(where + "non-finite embedding value '" + cells[j + 1] + "'");
      values(it->second, j) = *v;
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw_data("embeddings: missing id '" + dataset.sequences()[i].id + "'");
  }
  if (local.dropped_extra_ids > 0) {
    local.warnings.push_back("embeddings: dropped " + std::to_string(local.dropped_extra_ids) +
                             " rows with ids not in the dataset");
  }
  if (report) *report = local;
  return dataset.with_embeddings(EmbeddingMatrix{std::move(values)});
}

Dataset import_embeddings(const Dataset& dataset, const std::string& csv_path, ImportReport* report) {
  return import_embeddings_text(dataset, read_file(csv_path), report);
}

std::string export_embeddings_csv(const std::vector<std::string>& ids, const Matrix& values) {
  std::string out = "id";
  for (std::size_t j = 0; j < values.cols(); ++j) out += ",e" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < values.rows(); ++i) {
    out += csv_escape(ids[i]);
    for (std::size_t j = 0; j < values.cols(); ++j) {
      out += ',';
      out += format_double(values(i, j));
    }
    out += '\n';
  }
  return out;
}

std::string export_embeddings_csv(const Dataset& dataset) {
  return export_embeddings_csv(dataset.ids(), dataset.require_embeddings().values);
}

Dataset import_labels_text(const Dataset& dataset, const std::string& csv,
                           const std::map<std::string, TaskKind>& kinds, ImportReport* report) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw_data("labels: empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "id") throw_data("labels: header must be id,target1,...");
  const std::size_t t = header.size() - 1;
  const auto index = row_index(dataset);
  std::vector<std::vector<double>> values(t, std::vector<double>(dataset.size(), kMissing));
  std::vector<char> seen(dataset.size(), 0);
  ImportReport local;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    const std::string where = "labels line " + std::to_string(line_no) + ": ";
    if (cells.size() != t + 1) throw_data(where + "expected " + std::to_string(t + 1) + " cells");
    auto it = index.find(cells[0]);
    if (it == index.end()) {
      ++local.dropped_extra_ids;
      continue;
    }
    if (seen[it->second]) throw_data(where + "duplicate label id '" + cells[0] + "'");
    seen[it->second] = 1;
    for (std::size_t j = 0; j < t; ++j) {
      auto v = parse_double(cells[j + 1]);
      if (!v || !std::isfinite(*v)) throw_data(where + "invalid label value '" + cells[j + 1] + "'");
      values[j][it->second] = *v;
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw_data("labels: missing id '" + dataset.sequences()[i].id + "'");
  }
  std::vector<Target> targets;
  for (std::size_t j = 0; j < t; ++j) {
    Target target;
    target.name = header[j + 1];
    target.values = std::move(values[j]);
    const bool integral = std::all_of(target.values.begin(), target.values.end(),
                                      [](double v) { return v >= 0 && v == std::floor(v); });
    const double max_label =
        target.values.empty() ? 0.0 : *std::max_element(target.values.begin(), target.values.end());
    auto k = kinds.find(target.name);
    if (k != kinds.end()) {
      target.kind = k->second;
    } else if (integral && max_label <= 1.0) {
      target.kind = TaskKind::Binary;
    } else if (integral && max_label < 50.0) {
      target.kind = TaskKind::Multiclass;
    } else {
      target.kind = TaskKind::Regression;
    }
    if (target.kind == TaskKind::Binary) target.n_classes = 2;
    if (target.kind == TaskKind::Multiclass) target.n_classes = static_cast<std::size_t>(max_label) + 1;
    targets.push_back(std::move(target));
  }
  if (report) *report = local;
  return dataset.with_targets(std::move(targets));
}

Dataset import_labels(const Dataset& dataset, const std::string& csv_path,
                      const std::map<std::string, TaskKind>& kinds, ImportReport* report) {
  return import_labels_text(dataset, read_file(csv_path), kinds, report);
}

std::string export_labels_csv(const Dataset& dataset) {
  std::string out = "id";
  for (const auto& t : dataset.targets()) out += "," + csv_escape(t.name);
  out += '\n';
  const auto seqs = dataset.sequences();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out += csv_escape(seqs[i].id);
    for (const auto& t : dataset.targets()) out += "," + format_double(t.values[i]);
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------------ store

namespace {

constexpr char kMagic[8] = {'E', 'A', 'F', 'D', 'E', 'V', 'T', '1'};

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (sizeof(T) == 8) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(value));
  }
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  if (offset + sizeof(T) > in.size()) throw_data("events.bin: truncated data block");
  std::uint64_t bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  if constexpr (sizeof(T) == 8) {
    return std::bit_cast<T>(bits);
  } else {
    return std::bit_cast<T>(static_cast<std::uint32_t>(bits));
  }
}

}  // namespace

std::string encode_events_bin(const Dataset& dataset) {
  const auto& schema = dataset.schema();
  const auto seqs = dataset.sequences();
  std::size_t n_events = 0;
  json index;
  index["sequences"] = json::array();
  for (const auto& s : seqs) {
    index["sequences"].push_back({{"id", s.id}, {"offset", n_events}, {"length", s.size()}});
    n_events += s.size();
  }
  index["n_events"] = n_events;

  std::string data;
  index["blocks"] = json::array();
  auto block = [&](const std::string& name, const char* dtype) {
    index["blocks"].push_back({{"name", name}, {"dtype", dtype}, {"offset", data.size()}, {"count", n_events}});
  };
  block(schema.timestamp_field, "f64");
  for (const auto& s : seqs) {
    for (double t : s.timestamps) put_le(data, t);
  }
  const auto cats = schema.categorical_fields();
  for (std::size_t c = 0; c < cats.size(); ++c) {
    block(cats[c], "u32");
    for (const auto& s : seqs) {
      for (auto v : s.categorical[c]) put_le(data, v);
    }
  }
  const auto nums = schema.numeric_fields();
  for (std::size_t c = 0; c < nums.size(); ++c) {
    block(nums[c], "f64");
    for (const auto& s : seqs) {
      for (double v : s.numeric[c]) put_le(data, v);
    }
  }
  const std::string index_text = index.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_le(out, static_cast<std::uint64_t>(index_text.size()));
  out += index_text;
  out += data;
  return out;
}

std::vector<EventSequence> decode_events_bin(const std::string& bytes, const EventSchema& schema) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw_data("events.bin: bad magic");
  }
  const auto index_len = get_le<std::uint64_t>(bytes, 8);
  if (16 + index_len > bytes.size()) throw_data("events.bin: truncated index");
  json index;
  try {
    index = json::parse(bytes.substr(16, index_len));
  } catch (const json::exception& e) {
    throw_data(std::string("events.bin: bad index: ") + e.what());
  }
  const std::size_t base = 16 + index_len;
  const std::size_t n_events = index.at("n_events").get<std::size_t>();
  std::map<std::string, json> blocks;
  for (const auto& b : index.at("blocks")) blocks[b.at("name").get<std::string>()] = b;
  auto block_offset = [&](const std::string& name, const char* dtype) {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw_data("events.bin: missing block '" + name + "'");
    if (it->second.at("dtype").get<std::string>() != dtype) throw_data("events.bin: dtype mismatch for '" + name + "'");
    if (it->second.at("count").get<std::size_t>() != n_events) throw_data("events.bin: count mismatch for '" + name + "'");
    return base + it->second.at("offset").get<std::size_t>();
  };
  const auto ts_off = block_offset(schema.timestamp_field, "f64");
  const auto cats = schema.categorical_fields();
  const auto nums = schema.numeric_fields();
  std::vector<std::size_t> cat_off, num_off;
  for (const auto& c : cats) cat_off.push_back(block_offset(c, "u32"));
  for (const auto& c : nums) num_off.push_back(block_offset(c, "f64"));

  std::vector<EventSequence> out;
  for (const auto& s : index.at("sequences")) {
    EventSequence seq;
    seq.id = s.at("id").get<std::string>();
    const auto offset = s.at("offset").get<std::size_t>();
    const auto length = s.at("length").get<std::size_t>();
    if (offset + length > n_events) throw_data("events.bin: sequence range out of bounds");
    seq.timestamps.resize(length);
    seq.categorical.assign(cats.size(), std::vector<std::uint32_t>(length));
    seq.numeric.assign(nums.size(), std::vector<double>(length));
    for (std::size_t i = 0; i < length; ++i) {
      seq.timestamps[i] = get_le<double>(bytes, ts_off + 8 * (offset + i));
      for (std::size_t c = 0; c < cats.size(); ++c) {
        seq.categorical[c][i] = get_le<std::uint32_t>(bytes, cat_off[c] + 4 * (offset + i));
      }
      for (std::size_t c = 0; c < nums.size(); ++c) {
        seq.numeric[c][i] = get_le<double>(bytes, num_off[c] + 8 * (offset + i));
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void save_store(const Dataset& dataset, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw_data("cannot create store directory " + dir + ": " + ec.message());
  EventSchema schema = dataset.schema();
  schema.target_kinds.clear();
  for (const auto& t : dataset.targets()) schema.target_kinds[t.name] = t.kind;
  write_file((fs::path(dir) / "schema.json").string(), schema.to_json().dump(2) + "\n");
  write_file((fs::path(dir) / "events.bin").string(), encode_events_bin(dataset));
  const auto labels = fs::path(dir) / "labels.csv";
  const auto embeddings = fs::path(dir) / "embeddings.csv";
  if (!dataset.targets().empty()) {
    write_file(labels.string(), export_labels_csv(dataset));
  } else {
    fs::remove(labels, ec);
  }
  if (dataset.embeddings()) {
    write_file(embeddings.string(), export_embeddings_csv(dataset));
  } else {
    fs::remove(embeddings, ec);
  }
}

Dataset load_store(const std::string& dir) {
  const auto schema_path = fs::path(dir) / "schema.json";
  if (!fs::exists(schema_path)) throw_config("store " + dir + " has no schema.json");
  json schema_json;
  try {
    schema_json = json::parse(read_file(schema_path.string()));
  } catch (const json::exception& e) {
    throw_data(std::string("schema.json: ") + e.what());
  }
  auto schema = EventSchema::from_json(schema_json);
  auto sequences = decode_events_bin(read_file((fs::path(dir) / "events.bin").string()), schema);
  const auto kinds = schema.target_kinds;
  Dataset dataset = Dataset::create(std::move(schema), std::move(sequences));
  const auto labels = fs::path(dir) / "labels.csv";
  if (fs::exists(labels)) dataset = import_labels(dataset, labels.string(), kinds);
  const auto embeddings = fs::path(dir) / "embeddings.csv";
  if (fs::exists(embeddings)) dataset = import_embeddings(dataset, embeddings.string());
  return dataset;
}

// ------------------------------------------------------------------ folds

std::vector<std::size_t> FoldPlan::train_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] != fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::test_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == fold) rows.push_back(i);
  }
  return rows;
}

std::uint64_t FoldPlan::fingerprint() const {
  std::string bytes = std::to_string(k) + ":";
  for (auto a : assignments) bytes.push_back(static_cast<char>('0' + (a % 64)));
  return fnv1a64(bytes);
}

FoldPlan split_folds_plain(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw_config("fold count must be >= 2");
  if (n < 2 * k) throw_data("need at least 2k rows for " + std::to_string(k) + " folds (have " + std::to_string(n) + ")");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) plan.assignments[order[i]] = static_cast<std::uint32_t>(i % k);
  return plan;
}

FoldPlan split_folds(std::span<const double> labels, TaskKind kind, std::size_t k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (kind == TaskKind::Regression) return split_folds_plain(n, k, seed);
  if (k < 2) throw_config("fold count must be >= 2");
  if (n < 2 * k) throw_data("need at least 2k rows for " + std::to_string(k) + " folds (have " + std::to_string(n) + ")");

  std::map<double, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) classes[labels[i]].push_back(i);
  for (const auto& [label, rows] : classes) {
    if (rows.size() < k) {
      FoldPlan plan = split_folds_plain(n, k, seed);
      plan.warnings.push_back("class " + format_double(label) + " has " + std::to_string(rows.size()) +
                              " members (< " + std::to_string(k) +
                              " folds); falling back to unstratified folds");
      return plan;
    }
  }
  Rng rng(seed);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.stratified = true;
  plan.assignments.assign(n, 0);
  // Deal each shuffled class round-robin, continuing the counter across
  // classes so fold sizes stay balanced as well.
  std::size_t counter = 0;
  for (auto& [label, rows] : classes) {
    rng.shuffle(rows);
    for (auto r : rows) plan.assignments[r] = static_cast<std::uint32_t>(counter++ % k);
  }
  return plan;
}

FoldPlan split_folds(const Dataset& dataset, const std::string& target, std::size_t k, std::uint64_t seed) {
  const auto& t = dataset.target(target);
  return split_folds(t.values, t.kind, k, seed);
}

}  // namespace eafd::data
