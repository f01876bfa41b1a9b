#include <algorithm>
#include <atomic>
#include <cmath>

#include "eafd/core/error.hpp"
#include "eafd/core/rng.hpp"
#include "eafd/probe.hpp"

namespace eafd::probe {

using nlohmann::json;

namespace {

std::atomic<std::size_t> g_violations{0};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double train_loss(Loss loss, std::span<const double> f, std::span<const double> y) {
  double s = 0.0;
  if (loss == Loss::Squared) {
    for (std::size_t i = 0; i < y.size(); ++i) s += (f[i] - y[i]) * (f[i] - y[i]);
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) s += softplus(f[i]) - y[i] * f[i];
  }
  return y.empty() ? 0.0 : s / static_cast<double>(y.size());
}

double base_score_for(Loss loss, std::span<const double> y) {
  if (y.empty()) return 0.0;
  const bool constant = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
  if (loss == Loss::Squared) {
    if (constant) return y[0];
    double s = 0.0;
    for (double v : y) s += v;
    return s / static_cast<double>(y.size());
  }
  double pos = 0.0;
  for (double v : y) pos += v;
  double p = pos / static_cast<double>(y.size());
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool missing_left = true;
};

// Sorted non-missing rows and missing rows of one column.
struct ColumnIndex {
  std::vector<std::uint32_t> order;
  std::vector<double> sorted;  // values in `order`
  std::vector<std::uint32_t> missing;
};

// Running sums of one node while scanning one column.
struct NodeScan {
  double gl = 0, hl = 0, gm = 0, hm = 0, prev = 0;
  std::size_t nl = 0, nm = 0;
  double g_total = 0, h_total = 0, parent = 0;
  std::size_t cover = 0;
  void reset() {
    gl = hl = gm = hm = prev = 0;
    nl = nm = 0;
  }
};

// Per-row state read in the split scan, packed for locality.
struct RowStat {
  double g;
  double h;
  int slot;
};

ColumnIndex index_column(std::span<const double> col) {
  ColumnIndex ix;
  ix.order.reserve(col.size());
  for (std::uint32_t r = 0; r < col.size(); ++r) {
    if (std::isnan(col[r])) {
      ix.missing.push_back(r);
    } else {
      ix.order.push_back(r);
    }
  }
  std::sort(ix.order.begin(), ix.order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return col[a] < col[b] || (col[a] == col[b] && a < b);
  });
  ix.sorted.reserve(ix.order.size());
  for (auto r : ix.order) ix.sorted.push_back(col[r]);
  return ix;
}

double split_point(double lo, double hi) {
  const double t = lo * 0.5 + hi * 0.5;
  return (t >= lo && t < hi) ? t : lo;
}

class TreeBuilder {
 public:
  TreeBuilder(const GbtConfig& cfg, const ColumnView& x, const std::vector<ColumnIndex>& index)
      : cfg_(cfg), x_(x), index_(index) {}

  // Grows one tree on (g, h) and leaves each row's leaf id in node_of.
  Tree build(std::span<const double> g, std::span<const double> h, const std::vector<int>& features,
             std::vector<int>& node_of) {
    const std::size_t n = g.size();
    Tree tree;
    tree.nodes.emplace_back();
    node_g_.assign(1, 0.0);
    node_h_.assign(1, 0.0);
    node_of.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      node_g_[0] += g[r];
      node_h_[0] += h[r];
    }
    tree.nodes[0].cover = n;

    const double lambda = cfg_.l2;
    const std::size_t min_leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
    std::vector<int> frontier = {0};
    for (int depth = 0; depth < cfg_.max_depth && !frontier.empty(); ++depth) {
      std::vector<int> slot(tree.nodes.size(), -1);
      std::vector<int> active;
      for (int node : frontier) {
        if (tree.nodes[node].cover >= 2 * min_leaf) {
          slot[node] = static_cast<int>(active.size());
          active.push_back(node);
        }
      }
      if (active.empty()) break;
      const std::size_t a = active.size();
      std::vector<SplitCandidate> best(a);
      std::vector<NodeScan> scan(a);
      for (std::size_t k = 0; k < a; ++k) {
        const int node = active[k];
        scan[k].g_total = node_g_[node];
        scan[k].h_total = node_h_[node];
        scan[k].cover = tree.nodes[node].cover;
        scan[k].parent = node_g_[node] * node_g_[node] / (node_h_[node] + lambda);
      }
      rows_.resize(n);
      for (std::size_t r = 0; r < n; ++r) rows_[r] = {g[r], h[r], slot[node_of[r]]};

      for (int f : features) {
        for (auto& sc : scan) sc.reset();
        const auto& ix = index_[static_cast<std::size_t>(f)];
        for (auto r : ix.missing) {
          const auto& rs = rows_[r];
          if (rs.slot < 0) continue;
          auto& sc = scan[rs.slot];
          sc.gm += rs.g;
          sc.hm += rs.h;
          ++sc.nm;
        }
        const std::size_t m = ix.order.size();
        const std::uint32_t* order = ix.order.data();
        const double* sorted = ix.sorted.data();
        for (std::size_t i = 0; i < m; ++i) {
          const RowStat rs = rows_[order[i]];
          if (rs.slot < 0) continue;
          NodeScan& sc = scan[rs.slot];
          const double v = sorted[i];
          // Count checks first; most positions never reach a division.
          if (sc.nl > 0 && v > sc.prev && sc.nl + sc.nm >= min_leaf && sc.nl + min_leaf <= sc.cover) {
            auto& b = best[rs.slot];
            for (int dir = 0; dir < 2; ++dir) {
              const bool miss_left = dir == 0;
              if (!miss_left && sc.nm == 0) break;
              const std::size_t n_left = sc.nl + (miss_left ? sc.nm : 0);
              if (n_left < min_leaf || sc.cover - n_left < min_leaf) continue;
              const double g_left = sc.gl + (miss_left ? sc.gm : 0.0);
              const double h_left = sc.hl + (miss_left ? sc.hm : 0.0);
              const double g_right = sc.g_total - g_left;
              const double h_right = sc.h_total - h_left;
              const double gain =
                  g_left * g_left / (h_left + lambda) + g_right * g_right / (h_right + lambda) - sc.parent;
              if (gain > b.gain) b = {gain, f, split_point(sc.prev, v), miss_left};
            }
          }
          sc.gl += rs.g;
          sc.hl += rs.h;
          ++sc.nl;
          sc.prev = v;
        }
      }

      std::vector<int> split_of(tree.nodes.size(), -1);
      std::vector<int> next;
      for (std::size_t k = 0; k < a; ++k) {
        if (best[k].feature < 0) continue;
        const int node = active[k];
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& nd = tree.nodes[node];
        nd.feature = best[k].feature;
        nd.threshold = best[k].threshold;
        nd.missing_left = best[k].missing_left;
        nd.gain = best[k].gain;
        nd.left = left;
        nd.right = left + 1;
        split_of[node] = node;
        next.push_back(left);
        next.push_back(left + 1);
      }
      if (next.empty()) break;
      node_g_.resize(tree.nodes.size(), 0.0);
      node_h_.resize(tree.nodes.size(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        const int node = node_of[r];
        if (split_of[node] < 0) continue;
        const auto& nd = tree.nodes[node];
        const double v = x_[static_cast<std::size_t>(nd.feature)][r];
        const bool go_left = std::isnan(v) ? nd.missing_left : v <= nd.threshold;
        const int child = go_left ? nd.left : nd.right;
        node_of[r] = child;
        node_g_[child] += g[r];
        node_h_[child] += h[r];
        ++tree.nodes[child].cover;
      }
      frontier = std::move(next);
    }

    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      auto& nd = tree.nodes[i];
      if (nd.feature < 0) nd.value = -node_g_[i] / (node_h_[i] + lambda) * cfg_.learning_rate;
    }
    return tree;
  }

 private:
  const GbtConfig& cfg_;
  const ColumnView& x_;
  const std::vector<ColumnIndex>& index_;
  std::vector<double> node_g_, node_h_;
  std::vector<RowStat> rows_;
};

const char* loss_name(Loss l) { return l == Loss::Squared ? "squared" : "logistic"; }

Loss loss_from_name(const std::string& s) {
  if (s == "squared") return Loss::Squared;
  if (s == "logistic") return Loss::Logistic;
  throw_config("unknown loss '" + s + "'");
}

}  // namespace

void GbtConfig::validate() const {
  if (n_trees < 1) throw_config("gbt: n_trees must be >= 1");
  if (max_depth < 1) throw_config("gbt: max_depth must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw_config("gbt: learning_rate must be in (0, 1]");
  if (min_samples_leaf < 1) throw_config("gbt: min_samples_leaf must be >= 1");
  if (!(feature_subsample > 0.0 && feature_subsample <= 1.0)) throw_config("gbt: feature_subsample must be in (0, 1]");
  if (!(l2 >= 0.0)) throw_config("gbt: l2 must be >= 0");
}

json GbtConfig::to_json() const {
  return {{"n_trees", n_trees},
          {"max_depth", max_depth},
          {"learning_rate", learning_rate},
          {"min_samples_leaf", min_samples_leaf},
          {"loss", loss_name(loss)},
          {"seed", seed},
          {"feature_subsample", feature_subsample},
          {"l2", l2}};
}

GbtConfig GbtConfig::from_json(const json& j) {
  GbtConfig c;
  c.n_trees = j.value("n_trees", c.n_trees);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
  c.loss = loss_from_name(j.value("loss", std::string("squared")));
  c.seed = j.value("seed", c.seed);
  c.feature_subsample = j.value("feature_subsample", c.feature_subsample);
  c.l2 = j.value("l2", c.l2);
  c.validate();
  return c;
}

double Tree::predict(const ColumnView& x, std::size_t row) const {
  int i = 0;
  while (nodes[i].feature >= 0) {
    const auto& nd = nodes[i];
    const double v = x[static_cast<std::size_t>(nd.feature)][row];
    i = (std::isnan(v) ? nd.missing_left : v <= nd.threshold) ? nd.left : nd.right;
  }
  return nodes[i].value;
}

std::vector<double> GbtModel::predict_raw(const ColumnView& x) const {
  if (x.size() != n_features) throw_data("gbt: predict expects " + std::to_string(n_features) + " columns");
  const std::size_t n = x.empty() ? 0 : x[0].size();
  std::vector<double> out(n, base_score);
  for (const auto& t : trees) {
    for (std::size_t r = 0; r < n; ++r) out[r] += t.predict(x, r);
  }
  return out;
}

std::vector<double> GbtModel::predict(const ColumnView& x) const {
  auto out = predict_raw(x);
  if (loss == Loss::Logistic) {
    for (auto& v : out) v = sigmoid(v);
  }
  return out;
}

std::vector<double> GbtModel::split_gain() const {
  std::vector<double> g(n_features, 0.0);
  for (const auto& t : trees) {
    for (const auto& nd : t.nodes) {
      if (nd.feature >= 0) g[static_cast<std::size_t>(nd.feature)] += nd.gain;
    }
  }
  return g;
}

json GbtModel::to_json() const {
  json jt = json::array();
  for (const auto& t : trees) {
    json nodes = json::array();
    for (const auto& nd : t.nodes) {
      if (nd.feature < 0) {
        nodes.push_back({{"leaf", nd.value}, {"cover", nd.cover}});
      } else {
        nodes.push_back({{"feature", nd.feature},
                         {"threshold", nd.threshold},
                         {"missing_left", nd.missing_left},
                         {"left", nd.left},
                         {"right", nd.right},
                         {"gain", nd.gain},
                         {"cover", nd.cover}});
      }
    }
    jt.push_back(std::move(nodes));
  }
  return {{"loss", loss_name(loss)}, {"base_score", base_score}, {"n_features", n_features}, {"trees", jt}};
}

GbtModel GbtModel::from_json(const json& j) {
  GbtModel m;
  try {
    m.loss = loss_from_name(j.at("loss").get<std::string>());
    m.base_score = j.at("base_score").get<double>();
    m.n_features = j.at("n_features").get<std::size_t>();
    for (const auto& jt : j.at("trees")) {
      Tree t;
      for (const auto& jn : jt) {
        TreeNode nd;
        nd.cover = jn.value("cover", std::size_t{0});
        if (jn.contains("leaf")) {
          nd.value = jn.at("leaf").get<double>();
        } else {
          nd.feature = jn.at("feature").get<int>();
          nd.threshold = jn.at("threshold").get<double>();
          nd.missing_left = jn.at("missing_left").get<bool>();
          nd.left = jn.at("left").get<int>();
          nd.right = jn.at("right").get<int>();
          nd.gain = jn.value("gain", 0.0);
        }
        t.nodes.push_back(nd);
      }
      const int size = static_cast<int>(t.nodes.size());
      for (const auto& nd : t.nodes) {
        if (nd.feature >= 0 && (nd.left <= 0 || nd.left >= size || nd.right <= 0 || nd.right >= size ||
                                static_cast<std::size_t>(nd.feature) >= m.n_features)) {
          throw_data("gbt model: node reference out of range");
        }
      }
      if (t.nodes.empty()) throw_data("gbt model: empty tree");
      m.trees.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw_data(std::string("gbt model: ") + e.what());
  }
  return m;
}

std::size_t monotonicity_violations() noexcept { return g_violations.load(); }

GbtModel fit(const GbtConfig& config, const ColumnView& x, std::span<const double> y, FitStats* stats) {
  config.validate();
  const std::size_t n = y.size();
  if (n < 2 * static_cast<std::size_t>(config.min_samples_leaf)) {
    throw_data("gbt: need at least " + std::to_string(2 * config.min_samples_leaf) + " rows (have " +
               std::to_string(n) + ")");
  }
  for (const auto& col : x) {
    if (col.size() != n) throw_data("gbt: column length does not match labels");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw_data("gbt: non-finite label");
    if (config.loss == Loss::Logistic && v != 0.0 && v != 1.0) throw_data("gbt: logistic loss needs 0/1 labels");
  }

  GbtModel model;
  model.loss = config.loss;
  model.n_features = x.size();
  model.base_score = base_score_for(config.loss, y);

  std::vector<ColumnIndex> index;
  index.reserve(x.size());
  for (const auto& col : x) index.push_back(index_column(col));

  std::vector<double> f(n, model.base_score), g(n), h(n), trial(n);
  double loss = train_loss(config.loss, f, y);
  if (stats) stats->train_loss.push_back(loss);

  std::vector<int> all_features(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) all_features[j] = static_cast<int>(j);
  const std::size_t n_pick =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.feature_subsample * x.size())));

  TreeBuilder builder(config, x, index);
  std::vector<int> node_of;
  for (int t = 0; t < config.n_trees; ++t) {
    if (config.loss == Loss::Squared) {
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = f[i] - y[i];
        h[i] = 1.0;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = sigmoid(f[i]);
        g[i] = p - y[i];
        h[i] = std::max(p * (1.0 - p), 1e-16);
      }
    }
    std::vector<int> features = all_features;
    if (n_pick < features.size()) {
      Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(t));
      rng.shuffle(features);
      features.resize(n_pick);
      std::sort(features.begin(), features.end());
    }
    Tree tree = builder.build(g, h, features, node_of);

    // Shorten the step until the training loss does not rise.
    double scale = 1.0;
    double next = loss;
    for (int attempt = 0; attempt < 40; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = f[i] + scale * tree.nodes[node_of[i]].value;
      next = train_loss(config.loss, trial, y);
      if (next <= loss) break;
      scale *= 0.5;
    }
    if (next > loss) scale = 0.0;
    if (scale != 1.0) {
      if (stats) ++stats->backtracked_rounds;
      for (auto& nd : tree.nodes) nd.value *= scale;
      for (std::size_t i = 0; i < n; ++i) trial[i] = f[i] + tree.nodes[node_of[i]].value;
      next = train_loss(config.loss, trial, y);
    }
    if (next > loss) g_violations.fetch_add(1);
    f.swap(trial);
    loss = next;
    model.trees.push_back(std::move(tree));
    if (stats) stats->train_loss.push_back(loss);
    // A zeroed round means no further progress is possible.
    if (scale == 0.0) break;
  }
  return model;
}

// ---------------------------------------------------------------- task models

TaskModel fit_task(const GbtConfig& config, data::TaskKind kind, std::size_t n_classes, const ColumnView& x,
                   std::span<const double> y) {
  TaskModel m;
  m.kind = kind;
  GbtConfig c = config;
  switch (kind) {
    case data::TaskKind::Regression:
      c.loss = Loss::Squared;
      m.models.push_back(fit(c, x, y));
      break;
    case data::TaskKind::Binary:
      c.loss = Loss::Logistic;
      m.n_classes = 2;
      m.models.push_back(fit(c, x, y));
      break;
    case data::TaskKind::Multiclass: {
      if (n_classes < 2) throw_data("multiclass target needs at least 2 classes");
      c.loss = Loss::Logistic;
      m.n_classes = n_classes;
      std::vector<double> yc(y.size());
      for (std::size_t k = 0; k < n_classes; ++k) {
        for (std::size_t i = 0; i < y.size(); ++i) yc[i] = y[i] == static_cast<double>(k) ? 1.0 : 0.0;
        m.models.push_back(fit(c, x, yc));
      }
      break;
    }
  }
  return m;
}

std::vector<double> TaskModel::predict(const ColumnView& x) const {
  if (kind != data::TaskKind::Multiclass) return models.at(0).predict(x);
  const std::size_t n = x.empty() ? 0 : x[0].size();
  const std::size_t k = models.size();
  std::vector<double> out(n * k);
  for (std::size_t c = 0; c < k; ++c) {
    const auto raw = models[c].predict_raw(x);
    for (std::size_t i = 0; i < n; ++i) out[i * k + c] = raw[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < k; ++c) row[c] /= z;
  }
  return out;
}

std::vector<double> TaskModel::importance() const {
  std::vector<double> total;
  for (const auto& m : models) {
    const auto g = m.split_gain();
    if (total.empty()) total.assign(g.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) total[j] += g[j];
  }
  double sum = 0.0;
  for (double v : total) sum += v;
  if (sum > 0.0) {
    for (auto& v : total) v /= sum;
  }
  return total;
}

json TaskModel::to_json() const {
  json jm = json::array();
  for (const auto& m : models) jm.push_back(m.to_json());
  return {{"kind", data::to_string(kind)}, {"n_classes", n_classes}, {"models", jm}};
}

TaskModel TaskModel::from_json(const json& j) {
  TaskModel m;
  try {
    m.kind = data::task_kind_from_string(j.at("kind").get<std::string>());
    m.n_classes = j.at("n_classes").get<std::size_t>();
    for (const auto& jm : j.at("models")) m.models.push_back(GbtModel::from_json(jm));
  } catch (const json::exception& e) {
    throw_data(std::string("task model: ") + e.what());
  }
  if (m.models.empty()) throw_data("task model: no models");
  return m;
}

}  // namespace eafd::probe
