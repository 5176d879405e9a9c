#include "qrfsel/quantile_forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "qrfsel/parallel.hpp"
#include "qrfsel/random.hpp"

namespace qrfsel {

namespace {

// Relative slack when comparing cumulative weight against tau, so that sums
// like 0.25 + 0.25 that land a rounding error below 0.5 still count.
constexpr double kCumulativeSlack = 1e-12;

using u128 = unsigned __int128;

double split_midpoint(double lo, double hi) {
  double mid = std::midpoint(lo, hi);
  if (!(mid < hi)) mid = lo;
  return mid;
}

struct DatasetRow {
  const Dataset* data;
  const IndexSet* covariates;
  std::size_t i;
  double operator[](std::size_t slot) const { return data->x(i, (*covariates)[slot]); }
};

// Exact search for the split maximising the multi-class criterion along
// features scanned in ascending order. Scores are compared as u128
// fractions against the best so far, which starts at the unsplit node.
struct SplitScanner {
  std::vector<std::uint64_t> total, left, right;
  std::uint64_t total_sq = 0;
  std::size_t min_node_size;
  u128 best_num, best_den;
  std::optional<SplitChoice> best;

  SplitScanner(std::span<const std::uint32_t> labels, std::size_t min_node) : min_node_size(min_node) {
    const std::uint32_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
    total.assign(classes, 0);
    for (auto z : labels) ++total[z];
    for (auto c : total) total_sq += c * c;
    best_num = total_sq;
    best_den = labels.size();
    left.resize(classes);
  }

  template <typename XAt, typename LabelAt>
  void scan(std::size_t feature, std::size_t m, XAt x_at, LabelAt label_at) {
    std::fill(left.begin(), left.end(), 0);
    right = total;
    std::uint64_t left_sq = 0, right_sq = total_sq;
    for (std::size_t k = 0; k + 1 < m; ++k) {
      const auto c = label_at(k);
      left_sq += 2 * left[c] + 1;
      ++left[c];
      right_sq -= 2 * right[c] - 1;
      --right[c];
      const double here = x_at(k), next = x_at(k + 1);
      if (here == next) continue;
      const std::uint64_t n_left = k + 1, n_right = m - n_left;
      if (n_left < min_node_size || n_right < min_node_size) continue;
      const u128 num = static_cast<u128>(left_sq) * n_right + static_cast<u128>(right_sq) * n_left;
      const u128 den = static_cast<u128>(n_left) * n_right;
      if (num * best_den > best_num * den) {
        best_num = num;
        best_den = den;
        best = SplitChoice{feature, split_midpoint(here, next),
                           static_cast<double>(left_sq) / static_cast<double>(n_left) +
                               static_cast<double>(right_sq) / static_cast<double>(n_right)};
      }
    }
  }
};

// Observation indices sorted by the response (list 0) and by each covariate
// column (list 1 + slot); shared by all trees of a forest.
using Presorted = std::vector<std::vector<std::uint32_t>>;

Presorted presort(const Dataset& data, const IndexSet& covariates) {
  Presorted out(covariates.size() + 1);
  for (std::size_t l = 0; l <= covariates.size(); ++l) {
    const auto col = l == 0 ? data.response() : data.column(covariates[l - 1]);
    auto& order = out[l];
    order.resize(data.n());
    std::iota(order.begin(), order.end(), std::uint32_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return col[a] < col[b]; });
  }
  return out;
}

// Equivalent to repeated relabel + best_split on the structure rows of each
// node, but node rows are kept as contiguous segments of the presorted lists
// and stably partitioned on every split instead of sorted per node.
Tree grow_tree(const Dataset& data, const IndexSet& covariates, const ForestParams& params, const Presorted& sorted,
               std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = data.n();
  const auto s = static_cast<std::size_t>(std::floor(params.subsample_fraction * static_cast<double>(n)));
  if (s < 2) throw std::invalid_argument("subsample too small: need at least two observations per tree");

  auto sample = rng.sample_without_replacement(n, s);
  Tree tree;
  tree.structure.assign(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(s / 2));
  tree.estimation.assign(sample.begin() + static_cast<std::ptrdiff_t>(s / 2), sample.end());
  std::sort(tree.structure.begin(), tree.structure.end());
  std::sort(tree.estimation.begin(), tree.estimation.end());

  const std::size_t p = covariates.size();
  const std::size_t mtry = params.resolved_mtry(p);
  const std::size_t h = tree.structure.size();
  std::vector<char> flag(n, 0);
  for (auto i : tree.structure) flag[i] = 1;
  std::vector<std::vector<std::uint32_t>> lists(p + 1);
  for (std::size_t l = 0; l <= p; ++l) {
    lists[l].reserve(h);
    for (auto i : sorted[l])
      if (flag[i]) lists[l].push_back(i);
  }
  const auto y = data.response();
  std::vector<std::uint32_t> label(n, 0);
  std::vector<std::uint32_t> node_labels, buffer(h);
  std::vector<double> node_quantiles(params.split_levels.size());

  tree.nodes.emplace_back();
  struct Pending {
    std::size_t node, begin, end;
  };
  std::vector<Pending> stack{{0, 0, h}};
  while (!stack.empty()) {
    const auto [node_id, begin, end] = stack.back();
    stack.pop_back();
    const std::size_t m = end - begin;

    std::optional<SplitChoice> split;
    if (m >= 2 * params.min_node_size && m >= 2) {
      const auto* by_y = lists[0].data() + begin;
      for (std::size_t k = 0; k < node_quantiles.size(); ++k)
        node_quantiles[k] = y[by_y[empirical_quantile_rank(m, params.split_levels[k]) - 1]];
      node_labels.resize(m);
      for (std::size_t r = 0; r < m; ++r) {
        std::uint32_t z = 0;
        for (double q : node_quantiles) z += y[by_y[r]] <= q ? 1u : 0u;
        label[by_y[r]] = z;
        node_labels[r] = z;
      }

      auto slots = rng.sample_without_replacement(p, mtry);
      std::sort(slots.begin(), slots.end(), [&](auto a, auto b) { return covariates[a] < covariates[b]; });
      SplitScanner scanner(node_labels, params.min_node_size);
      for (auto slot : slots) {
        const auto col = data.column(covariates[slot]);
        const auto* rows = lists[slot + 1].data() + begin;
        scanner.scan(
            covariates[slot], m, [&](std::size_t k) { return col[rows[k]]; },
            [&](std::size_t k) { return label[rows[k]]; });
      }
      split = scanner.best;
    }

    if (split) {
      const auto col = data.column(split->feature);
      std::size_t n_left = 0;
      for (std::size_t k = begin; k < end; ++k) {
        const auto r = lists[0][k];
        flag[r] = col[r] <= split->threshold ? 1 : 0;
        n_left += flag[r];
      }
      for (auto& list : lists) {
        std::size_t l = begin, r = 0;
        for (std::size_t k = begin; k < end; ++k) {
          if (flag[list[k]])
            list[l++] = list[k];
          else
            buffer[r++] = list[k];
        }
        std::copy_n(buffer.begin(), r, list.begin() + static_cast<std::ptrdiff_t>(l));
      }
      const auto left_id = static_cast<std::uint32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[node_id];
      node.slot = static_cast<std::int32_t>(std::find(covariates.begin(), covariates.end(), split->feature) -
                                            covariates.begin());
      node.threshold = split->threshold;
      node.left = left_id;
      node.right = left_id + 1;
      stack.push_back({left_id + 1u, begin + n_left, end});
      stack.push_back({left_id, begin, begin + n_left});
      continue;
    }
    tree.nodes[node_id].leaf = static_cast<std::uint32_t>(tree.leaves.size());
    tree.leaves.emplace_back();
  }

  for (auto i : tree.estimation) tree.leaves[tree.leaf_of(DatasetRow{&data, &covariates, i})].push_back(i);
  return tree;
}

}  // namespace

double WeightVector::sum() const { return std::accumulate(w.begin(), w.end(), 0.0); }

std::vector<std::uint32_t> relabel(std::span<const double> node_responses, std::span<const double> split_levels) {
  if (node_responses.empty()) throw std::invalid_argument("relabel needs a nonempty node");
  std::vector<double> sorted(node_responses.begin(), node_responses.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> node_quantiles;
  node_quantiles.reserve(split_levels.size());
  for (double tau : split_levels) node_quantiles.push_back(sorted[empirical_quantile_rank(sorted.size(), tau) - 1]);

  std::vector<std::uint32_t> labels(node_responses.size());
  for (std::size_t i = 0; i < node_responses.size(); ++i) {
    std::uint32_t z = 0;
    for (double q : node_quantiles) z += node_responses[i] <= q ? 1u : 0u;
    labels[i] = z;
  }
  return labels;
}

std::optional<SplitChoice> best_split(const Dataset& data, std::span<const std::size_t> rows,
                                      std::span<const std::uint32_t> labels, const IndexSet& candidates,
                                      std::size_t min_node_size) {
  const std::size_t m = rows.size();
  if (labels.size() != m) throw std::invalid_argument("best_split: labels and rows differ in length");
  if (m < 2 * min_node_size || m < 2) return std::nullopt;

  SplitScanner scanner(labels, min_node_size);
  std::vector<std::pair<double, std::uint32_t>> pairs(m);
  for (auto feature : candidates.sorted()) {
    for (std::size_t r = 0; r < m; ++r) pairs[r] = {data.x(rows[r], feature), labels[r]};
    std::sort(pairs.begin(), pairs.end());
    scanner.scan(
        feature, m, [&](std::size_t k) { return pairs[k].first; }, [&](std::size_t k) { return pairs[k].second; });
  }
  return scanner.best;
}

double weighted_quantile(std::span<const double> values, std::span<const double> weights, double tau) {
  if (values.size() != weights.size()) throw std::invalid_argument("weighted_quantile: length mismatch");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("weighted_quantile: tau must lie in (0, 1)");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("weighted_quantile: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("weighted_quantile: all weights are zero");

  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  const double target = tau * total - kCumulativeSlack * total;
  double running = 0.0;
  for (auto idx : order) {
    running += weights[idx];
    if (weights[idx] > 0.0 && running >= target) return values[idx];
  }
  return values[order.back()];
}

QuantileForest QuantileForest::fit(const Dataset& data, const IndexSet& covariates, const ForestParams& params,
                                   std::uint64_t seed, std::size_t threads) {
  params.validate();
  if (covariates.empty()) throw std::invalid_argument("cannot fit a forest on an empty covariate set");
  covariates.validate(data.d());
  if (data.n() < 4) throw std::invalid_argument("need at least 4 observations to fit an honest forest");

  QuantileForest forest;
  forest.params_ = params;
  forest.covariates_ = covariates;
  forest.seed_ = seed;
  forest.dimension_ = data.d();
  forest.responses_.assign(data.response().begin(), data.response().end());
  forest.local_x_.resize(data.n() * covariates.size());
  for (std::size_t i = 0; i < data.n(); ++i)
    for (std::size_t s = 0; s < covariates.size(); ++s)
      forest.local_x_[i * covariates.size() + s] = data.x(i, covariates[s]);

  forest.trees_.resize(params.trees);
  const auto sorted = presort(data, covariates);
  parallel_for(params.trees, threads, [&](std::size_t b) {
    forest.trees_[b] = grow_tree(data, covariates, params, sorted, derive_seed(seed, {b}));
  });
  forest.rebuild_lookup();
  forest.validate();
  return forest;
}

void QuantileForest::rebuild_lookup() {
  const std::size_t n = responses_.size();
  inbag_.assign(trees_.size(), std::vector<char>(n, 0));
  for (std::size_t b = 0; b < trees_.size(); ++b) {
    for (auto i : trees_[b].structure) inbag_[b][i] = 1;
    for (auto i : trees_[b].estimation) inbag_[b][i] = 1;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return responses_[a] < responses_[b]; });
  response_rank_.assign(n, 0);
  sorted_responses_.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    response_rank_[order[r]] = r;
    sorted_responses_[r] = responses_[order[r]];
  }
}

std::vector<double> QuantileForest::local_row(std::span<const double> x) const {
  if (x.size() != dimension_)
    throw std::invalid_argument("covariate vector has length " + std::to_string(x.size()) + ", expected " +
                                std::to_string(dimension_));
  std::vector<double> local(covariates_.size());
  for (std::size_t s = 0; s < covariates_.size(); ++s) local[s] = x[covariates_[s]];
  return local;
}

WeightVector QuantileForest::weights(std::span<const double> x) const {
  const auto local = local_row(x);
  WeightVector out{std::vector<double>(responses_.size(), 0.0)};
  const double per_tree = 1.0 / static_cast<double>(trees_.size());
  for (const auto& tree : trees_) {
    const auto& leaf = tree.leaves[tree.leaf_of(local)];
    if (leaf.empty()) continue;
    const double w = per_tree / static_cast<double>(leaf.size());
    for (auto i : leaf) out.w[i] += w;
  }
  return out;
}

std::optional<std::vector<double>> QuantileForest::quantiles_from_trees(std::span<const double> local,
                                                                        std::span<const std::size_t> tree_ids,
                                                                        std::span<const double> levels) const {
  // (rank of response, weight) for every estimation member of a reached leaf.
  std::vector<std::pair<std::size_t, double>> entries;
  for (auto b : tree_ids) {
    const auto& tree = trees_[b];
    const auto& leaf = tree.leaves[tree.leaf_of(local)];
    if (leaf.empty()) continue;
    const double w = 1.0 / static_cast<double>(leaf.size());
    for (auto i : leaf) entries.emplace_back(response_rank_[i], w);
  }
  if (entries.empty()) return std::nullopt;
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  // Collapse to distinct ranks with running cumulative weight.
  std::vector<std::size_t> ranks;
  std::vector<double> cumulative;
  double running = 0.0;
  for (const auto& [rank, w] : entries) {
    running += w;
    if (!ranks.empty() && ranks.back() == rank) {
      cumulative.back() = running;
    } else {
      ranks.push_back(rank);
      cumulative.push_back(running);
    }
  }

  std::vector<double> out(levels.size());
  for (std::size_t t = 0; t < levels.size(); ++t) {
    const double target = levels[t] * running - kCumulativeSlack * running;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
    if (it == cumulative.end()) --it;
    out[t] = sorted_responses_[ranks[static_cast<std::size_t>(it - cumulative.begin())]];
  }
  return out;
}

std::vector<double> QuantileForest::predict_quantiles(std::span<const double> x, const QuantileGrid& grid) const {
  return predict_quantiles(x, grid.levels());
}

std::vector<double> QuantileForest::predict_quantiles(std::span<const double> x, std::span<const double> levels) const {
  for (double tau : levels)
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("quantile levels must lie in (0, 1)");
  const auto local = local_row(x);
  std::vector<std::size_t> all(trees_.size());
  std::iota(all.begin(), all.end(), 0);
  auto out = quantiles_from_trees(local, all, levels);
  if (!out) throw std::domain_error("degenerate forest weights: no tree has a populated leaf at x");
  return *out;
}

StepCDF QuantileForest::predict_distribution(std::span<const double> x) const {
  const auto w = weights(x);
  if (!(w.sum() > 0.0)) throw std::domain_error("degenerate forest weights: no tree has a populated leaf at x");
  return StepCDF::weighted(responses_, w.w);
}

std::size_t QuantileForest::oob_tree_count(std::size_t i) const {
  if (i >= n()) throw std::out_of_range("observation index out of range");
  std::size_t count = 0;
  for (const auto& bag : inbag_) count += bag[i] ? 0 : 1;
  return count;
}

std::optional<std::vector<double>> QuantileForest::oob_predict_quantiles(std::size_t i,
                                                                         const QuantileGrid& grid) const {
  if (i >= n()) throw std::out_of_range("observation index out of range");
  std::vector<std::size_t> sub_forest;
  for (std::size_t b = 0; b < trees_.size(); ++b)
    if (!inbag_[b][i]) sub_forest.push_back(b);
  if (sub_forest.empty()) return std::nullopt;
  const std::span<const double> local(local_x_.data() + i * covariates_.size(), covariates_.size());
  return quantiles_from_trees(local, sub_forest, grid.levels());
}

std::vector<std::optional<std::vector<double>>> QuantileForest::oob_predict_all(const QuantileGrid& grid,
                                                                                std::size_t threads) const {
  std::vector<std::optional<std::vector<double>>> out(n());
  parallel_for(n(), threads, [&](std::size_t i) { out[i] = oob_predict_quantiles(i, grid); });
  return out;
}

void QuantileForest::validate() const {
  const std::size_t n = responses_.size();
  const std::size_t width = covariates_.size();
  for (std::size_t b = 0; b < trees_.size(); ++b) {
    const auto& tree = trees_[b];
    const std::string where = "tree " + std::to_string(b) + ": ";
    std::vector<char> role(n, 0);  // 1 structure, 2 estimation
    for (auto i : tree.structure) {
      if (i >= n || role[i]) throw std::logic_error(where + "structure sample invalid or repeated");
      role[i] = 1;
    }
    for (auto i : tree.estimation) {
      if (i >= n || role[i]) throw std::logic_error(where + "structure and estimation samples overlap");
      role[i] = 2;
    }
    const auto a = tree.structure.size(), e = tree.estimation.size();
    if ((a > e ? a - e : e - a) > 1) throw std::logic_error(where + "subsample halves differ by more than one");
    for (std::size_t i = 0; i < n; ++i)
      if ((role[i] != 0) != (inbag_[b][i] != 0)) throw std::logic_error(where + "in-bag bookkeeping mismatch");

    // Every split must separate structure observations: both children hold
    // at least min_node_size of them.
    std::vector<std::size_t> structure_count(tree.nodes.size(), 0);
    for (auto i : tree.structure) {
      const double* row = local_x_.data() + i * width;
      std::size_t node = 0;
      ++structure_count[0];
      while (!tree.is_leaf(node)) {
        const auto& nd = tree.nodes[node];
        node = row[nd.slot] <= nd.threshold ? nd.left : nd.right;
        ++structure_count[node];
      }
    }
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      const auto& nd = tree.nodes[k];
      if (nd.slot < 0) continue;
      if (static_cast<std::size_t>(nd.slot) >= width) throw std::logic_error(where + "split feature out of range");
      if (structure_count[nd.left] < params_.min_node_size || structure_count[nd.right] < params_.min_node_size)
        throw std::logic_error(where + "split not supported by the structure sample");
    }

    std::size_t stored = 0;
    for (std::size_t leaf = 0; leaf < tree.leaves.size(); ++leaf) {
      for (auto i : tree.leaves[leaf]) {
        if (i >= n || role[i] != 2) throw std::logic_error(where + "leaf holds a non-estimation observation");
        const std::span<const double> row(local_x_.data() + i * width, width);
        if (tree.leaf_of(row) != leaf) throw std::logic_error(where + "leaf membership inconsistent with splits");
        ++stored;
      }
    }
    if (stored != tree.estimation.size()) throw std::logic_error(where + "estimation sample not fully stored");
  }
}

// Serialised layout (JSON):
// { "format": "qrfsel-forest", "version": 1, "seed", "dimension",
//   "covariates": [...], "params": {...}, "responses": [...],
//   "covariate_rows": [...]  (n x |covariates|, row-major),
//   "trees": [ { "structure", "estimation", "slot", "threshold", "left",
//                "right", "leaf", "leaves" } ] }
void QuantileForest::save(const std::filesystem::path& path) const {
  nlohmann::json doc;
  doc["format"] = "qrfsel-forest";
  doc["version"] = 1;
  doc["seed"] = seed_;
  doc["dimension"] = dimension_;
  doc["covariates"] = covariates_.items();
  doc["params"] = {{"trees", params_.trees},
                   {"subsample_fraction", params_.subsample_fraction},
                   {"mtry", params_.mtry},
                   {"min_node_size", params_.min_node_size},
                   {"split_levels", params_.split_levels}};
  doc["responses"] = responses_;
  doc["covariate_rows"] = local_x_;
  auto& trees = doc["trees"] = nlohmann::json::array();
  for (const auto& tree : trees_) {
    nlohmann::json t;
    t["structure"] = tree.structure;
    t["estimation"] = tree.estimation;
    std::vector<std::int32_t> slot;
    std::vector<double> threshold;
    std::vector<std::uint32_t> left, right, leaf;
    for (const auto& nd : tree.nodes) {
      slot.push_back(nd.slot);
      threshold.push_back(nd.threshold);
      left.push_back(nd.left);
      right.push_back(nd.right);
      leaf.push_back(nd.leaf);
    }
    t["slot"] = slot;
    t["threshold"] = threshold;
    t["left"] = left;
    t["right"] = right;
    t["leaf"] = leaf;
    t["leaves"] = tree.leaves;
    trees.push_back(std::move(t));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write forest file '" + path.string() + "'");
  out << doc.dump() << '\n';
}

QuantileForest QuantileForest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open forest file '" + path.string() + "'");
  const auto doc = nlohmann::json::parse(in);
  if (doc.value("format", "") != "qrfsel-forest") throw std::runtime_error("not a forest file");
  if (doc.at("version").get<int>() != 1) throw std::runtime_error("unsupported forest file version");

  QuantileForest forest;
  forest.seed_ = doc.at("seed").get<std::uint64_t>();
  forest.dimension_ = doc.at("dimension").get<std::size_t>();
  forest.covariates_ = IndexSet(doc.at("covariates").get<std::vector<std::size_t>>());
  const auto& p = doc.at("params");
  forest.params_.trees = p.at("trees").get<std::size_t>();
  forest.params_.subsample_fraction = p.at("subsample_fraction").get<double>();
  forest.params_.mtry = p.at("mtry").get<std::size_t>();
  forest.params_.min_node_size = p.at("min_node_size").get<std::size_t>();
  forest.params_.split_levels = p.at("split_levels").get<std::vector<double>>();
  forest.responses_ = doc.at("responses").get<std::vector<double>>();
  forest.local_x_ = doc.at("covariate_rows").get<std::vector<double>>();
  for (const auto& t : doc.at("trees")) {
    Tree tree;
    tree.structure = t.at("structure").get<std::vector<std::size_t>>();
    tree.estimation = t.at("estimation").get<std::vector<std::size_t>>();
    const auto slot = t.at("slot").get<std::vector<std::int32_t>>();
    const auto threshold = t.at("threshold").get<std::vector<double>>();
    const auto left = t.at("left").get<std::vector<std::uint32_t>>();
    const auto right = t.at("right").get<std::vector<std::uint32_t>>();
    const auto leaf = t.at("leaf").get<std::vector<std::uint32_t>>();
    tree.nodes.resize(slot.size());
    for (std::size_t k = 0; k < slot.size(); ++k) tree.nodes[k] = {slot[k], threshold[k], left[k], right[k], leaf[k]};
    tree.leaves = t.at("leaves").get<std::vector<std::vector<std::size_t>>>();
    forest.trees_.push_back(std::move(tree));
  }
  forest.rebuild_lookup();
  forest.validate();
  return forest;
}

}  // namespace qrfsel
