#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "qrfsel/baselines.hpp"
#include "qrfsel/parallel.hpp"
#include "qrfsel/random.hpp"

namespace qrfsel {

namespace {

struct LocalRow {
  const Dataset* data;
  const IndexSet* covariates;
  std::size_t i;
  double operator[](std::size_t slot) const { return data->x(i, (*covariates)[slot]); }
};

// Row whose value in one slot comes from another observation.
struct PermutedRow {
  const Dataset* data;
  const IndexSet* covariates;
  std::size_t i;
  std::size_t slot;
  double replacement;
  double operator[](std::size_t s) const { return s == slot ? replacement : data->x(i, (*covariates)[s]); }
};

// Observation indices of every covariate column sorted by value, shared by
// all trees of a forest.
using Presorted = std::vector<std::vector<std::uint32_t>>;

Presorted presort(const Dataset& data, const IndexSet& covariates) {
  Presorted out(covariates.size());
  for (std::size_t s = 0; s < covariates.size(); ++s) {
    const auto col = data.column(covariates[s]);
    auto& order = out[s];
    order.resize(data.n());
    std::iota(order.begin(), order.end(), std::uint32_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return col[a] < col[b]; });
  }
  return out;
}

// Node rows live in contiguous segments of one list per covariate (sorted by
// that covariate) plus one list in draw order; a split stably partitions
// every list, so no node ever sorts.
MeanTree grow_mean_tree(const Dataset& data, const IndexSet& covariates, const MeanForestParams& params,
                        const Presorted& sorted, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = data.n();
  const std::size_t p = covariates.size();
  std::vector<std::vector<std::uint32_t>> lists(p + 1, std::vector<std::uint32_t>(n));
  std::vector<std::uint32_t> counts(n, 0);
  for (auto& r : lists[0]) {
    r = static_cast<std::uint32_t>(rng.below(n));
    ++counts[r];
  }
  MeanTree tree;
  for (std::size_t i = 0; i < n; ++i)
    if (!counts[i]) tree.oob.push_back(i);
  for (std::size_t s = 0; s < p; ++s) {
    std::size_t k = 0;
    for (auto i : sorted[s])
      for (std::uint32_t c = 0; c < counts[i]; ++c) lists[s + 1][k++] = i;
  }

  const std::size_t mtry = params.resolved_mtry(p);
  const std::size_t min_leaf = std::max<std::size_t>(1, params.min_leaf_size);
  std::vector<char> goes_left(n, 0);
  std::vector<std::uint32_t> buffer(n);

  tree.nodes.emplace_back();
  struct Pending {
    std::size_t node, begin, end;
  };
  std::vector<Pending> stack{{0, 0, n}};
  while (!stack.empty()) {
    const auto [node_id, begin, end] = stack.back();
    stack.pop_back();
    const std::size_t m = end - begin;
    double sum = 0.0;
    for (std::size_t k = begin; k < end; ++k) sum += data.y(lists[0][k]);

    bool split = false;
    if (m >= 2 * min_leaf) {
      const double parent = sum * sum / static_cast<double>(m);
      double best_score = parent + 1e-12 * (std::abs(parent) + 1.0);
      std::size_t best_slot = 0;
      double best_threshold = 0.0;
      auto slots = rng.sample_without_replacement(p, mtry);
      std::sort(slots.begin(), slots.end());
      for (auto slot : slots) {
        const auto col = data.column(covariates[slot]);
        const auto* rows = lists[slot + 1].data();
        double left_sum = 0.0;
        for (std::size_t k = begin; k + 1 < end; ++k) {
          left_sum += data.y(rows[k]);
          const double here = col[rows[k]], next = col[rows[k + 1]];
          if (here == next) continue;
          const std::size_t n_left = k + 1 - begin, n_right = m - n_left;
          if (n_left < min_leaf || n_right < min_leaf) continue;
          const double right_sum = sum - left_sum;
          const double score =
              left_sum * left_sum / static_cast<double>(n_left) + right_sum * right_sum / static_cast<double>(n_right);
          if (score > best_score) {
            best_score = score;
            best_slot = slot;
            double mid = std::midpoint(here, next);
            best_threshold = mid < next ? mid : here;
            split = true;
          }
        }
      }
      if (split) {
        const auto col = data.column(covariates[best_slot]);
        std::size_t n_left = 0;
        for (std::size_t k = begin; k < end; ++k) {
          const auto r = lists[0][k];
          goes_left[r] = col[r] <= best_threshold;
          n_left += goes_left[r];
        }
        for (auto& list : lists) {
          std::size_t l = begin, r = 0;
          for (std::size_t k = begin; k < end; ++k) {
            if (goes_left[list[k]])
              list[l++] = list[k];
            else
              buffer[r++] = list[k];
          }
          std::copy(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(r),
                    list.begin() + static_cast<std::ptrdiff_t>(l));
        }
        const auto left_id = static_cast<std::uint32_t>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[node_id];
        node.slot = static_cast<std::int32_t>(best_slot);
        node.threshold = best_threshold;
        node.left = left_id;
        node.right = left_id + 1;
        stack.push_back({left_id + 1u, begin + n_left, end});
        stack.push_back({left_id, begin, begin + n_left});
      }
    }
    if (!split) tree.nodes[node_id].value = sum / static_cast<double>(m);
  }
  return tree;
}

}  // namespace

std::size_t MeanForestParams::resolved_mtry(std::size_t covariates) const {
  if (mtry == 0) return std::max<std::size_t>(1, (covariates + 2) / 3);
  return std::min(mtry, covariates);
}

bool MeanTree::uses_slot(std::size_t slot) const {
  return std::any_of(nodes.begin(), nodes.end(),
                     [&](const Node& nd) { return nd.slot >= 0 && static_cast<std::size_t>(nd.slot) == slot; });
}

MeanForest MeanForest::fit(const Dataset& data, const IndexSet& covariates, const MeanForestParams& params,
                           std::uint64_t seed, std::size_t threads) {
  if (covariates.empty()) throw std::invalid_argument("cannot fit a mean forest on an empty covariate set");
  covariates.validate(data.d());
  if (params.trees < 1) throw std::invalid_argument("mean forest needs at least one tree");
  MeanForest forest;
  forest.covariates_ = covariates;
  forest.params_ = params;
  forest.dimension_ = data.d();
  forest.trees_.resize(params.trees);
  const auto sorted = presort(data, covariates);
  parallel_for(params.trees, threads, [&](std::size_t b) {
    forest.trees_[b] = grow_mean_tree(data, covariates, params, sorted, derive_seed(seed, {b}));
  });
  return forest;
}

double MeanForest::predict(std::span<const double> x) const {
  if (x.size() != dimension_) throw std::invalid_argument("covariate vector has the wrong dimension");
  std::vector<double> local(covariates_.size());
  for (std::size_t s = 0; s < covariates_.size(); ++s) local[s] = x[covariates_[s]];
  double sum = 0.0;
  for (const auto& tree : trees_) sum += tree.predict(local);
  return sum / static_cast<double>(trees_.size());
}

double MeanForest::oob_mse(const Dataset& data) const {
  std::vector<double> sum(data.n(), 0.0);
  std::vector<std::size_t> count(data.n(), 0);
  for (const auto& tree : trees_) {
    for (auto i : tree.oob) {
      sum[i] += tree.predict(LocalRow{&data, &covariates_, i});
      ++count[i];
    }
  }
  double sse = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (!count[i]) continue;
    const double err = data.y(i) - sum[i] / static_cast<double>(count[i]);
    sse += err * err;
    ++used;
  }
  if (!used) throw std::runtime_error("no observation is out-of-bag for any tree");
  return sse / static_cast<double>(used);
}

namespace {

// Importance contribution of one tree for every slot at once. A row's
// prediction can only change if its unpermuted path visits a node splitting
// on the permuted slot, so other rows are skipped and the rest re-descend
// from the first such node.
void tree_importances(const MeanTree& tree, const Dataset& data, const IndexSet& covariates,
                      std::span<const std::size_t> slots, std::uint64_t seed, std::size_t tree_index,
                      PermutationMode mode, std::span<double> totals) {
  const auto& oob = tree.oob;
  const std::size_t p = covariates.size();
  constexpr auto kNone = std::numeric_limits<std::uint32_t>::max();
  // first[r * p + slot]: first node on row r's path that splits on slot
  std::vector<std::uint32_t> first(oob.size() * p, kNone);
  std::vector<double> base(oob.size());
  for (std::size_t r = 0; r < oob.size(); ++r) {
    const LocalRow row{&data, &covariates, oob[r]};
    std::size_t node = 0;
    while (tree.nodes[node].slot >= 0) {
      const auto& nd = tree.nodes[node];
      auto& f = first[r * p + static_cast<std::size_t>(nd.slot)];
      if (f == kNone) f = static_cast<std::uint32_t>(node);
      node = row[static_cast<std::size_t>(nd.slot)] <= nd.threshold ? nd.left : nd.right;
    }
    base[r] = tree.nodes[node].value;
  }

  std::vector<std::size_t> perm(oob.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto slot = slots[k];
    const auto feature = covariates[slot];
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (mode == PermutationMode::kRandom) {
      Rng rng(derive_seed(seed, {tree_index, feature}));
      rng.shuffle(std::span<std::size_t>(perm));
    }
    double diff = 0.0;
    for (std::size_t r = 0; r < oob.size(); ++r) {
      std::size_t node = first[r * p + slot];
      if (node == kNone) continue;
      const PermutedRow row{&data, &covariates, oob[r], slot, data.x(oob[perm[r]], feature)};
      while (tree.nodes[node].slot >= 0) {
        const auto& nd = tree.nodes[node];
        node = row[static_cast<std::size_t>(nd.slot)] <= nd.threshold ? nd.left : nd.right;
      }
      const double e1 = data.y(oob[r]) - tree.nodes[node].value;
      const double e0 = data.y(oob[r]) - base[r];
      diff += e1 * e1 - e0 * e0;
    }
    totals[k] += diff / static_cast<double>(oob.size());
  }
}

}  // namespace

double permutation_importance(const MeanForest& forest, const Dataset& data, std::size_t j, std::uint64_t seed,
                              PermutationMode mode) {
  const auto& cov = forest.covariates();
  auto it = std::find(cov.begin(), cov.end(), j);
  if (it == cov.end()) throw std::invalid_argument("covariate " + std::to_string(j) + " is not in the forest");
  const std::size_t slot[] = {static_cast<std::size_t>(it - cov.begin())};
  double total = 0.0;
  std::size_t trees = 0;
  for (std::size_t b = 0; b < forest.trees().size(); ++b) {
    const auto& tree = forest.trees()[b];
    if (tree.oob.empty()) continue;
    ++trees;
    tree_importances(tree, data, cov, slot, seed, b, mode, std::span<double>(&total, 1));
  }
  return trees ? total / static_cast<double>(trees) : 0.0;
}

std::map<std::size_t, double> permutation_importances(const MeanForest& forest, const Dataset& data,
                                                      std::uint64_t seed) {
  const auto& cov = forest.covariates();
  std::vector<std::size_t> slots(cov.size());
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::vector<double> totals(cov.size(), 0.0);
  std::size_t trees = 0;
  for (std::size_t b = 0; b < forest.trees().size(); ++b) {
    const auto& tree = forest.trees()[b];
    if (tree.oob.empty()) continue;
    ++trees;
    tree_importances(tree, data, cov, slots, seed, b, PermutationMode::kRandom, totals);
  }
  std::map<std::size_t, double> out;
  for (std::size_t slot = 0; slot < cov.size(); ++slot)
    out[cov[slot]] = trees ? totals[slot] / static_cast<double>(trees) : 0.0;
  return out;
}

double null_model_mse(const Dataset& data) {
  const std::size_t n = data.n();
  if (n < 2) throw std::invalid_argument("null model needs at least two observations");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += data.y(i);
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double loo_mean = (sum - data.y(i)) / static_cast<double>(n - 1);
    const double err = data.y(i) - loo_mean;
    sse += err * err;
  }
  return sse / static_cast<double>(n);
}

BackwardResult backward_select_mse(const Dataset& data, const BackwardOptions& options) {
  if (options.replicates < 1) throw std::invalid_argument("backward selection needs at least one replicate forest");
  BackwardResult result;
  IndexSet current = complement(IndexSet{}, data.d());
  const std::size_t r_count = options.replicates;

  for (std::size_t step = 0; !current.empty(); ++step) {
    const bool last = current.size() == 1;
    std::vector<double> mse(r_count);
    std::vector<std::map<std::size_t, double>> importance(r_count);
    parallel_for(r_count, options.threads, [&](std::size_t r) {
      const auto forest = MeanForest::fit(data, current, options.forest, derive_seed(options.seed, {step, r, 0}), 1);
      mse[r] = forest.oob_mse(data);
      if (!last) importance[r] = permutation_importances(forest, data, derive_seed(options.seed, {step, r, 1}));
    });

    EliminationStep rec;
    rec.covariates = current;
    for (double v : mse) rec.oob_mse += v;
    rec.oob_mse /= static_cast<double>(r_count);
    if (!last) {
      for (auto j : current) {
        double total = 0.0;
        for (const auto& imp : importance) total += imp.at(j);
        rec.importance[j] = total / static_cast<double>(r_count);
      }
      // least important goes; ties to the lowest index
      std::size_t worst = current.sorted().front();
      for (const auto& [j, v] : rec.importance)
        if (v < rec.importance.at(worst)) worst = j;
      rec.removed = worst;
      IndexSet next;
      for (auto j : current)
        if (j != worst) next.insert(j);
      current = std::move(next);
    } else {
      rec.removed = current[0];
      current = IndexSet{};
    }
    result.path.push_back(std::move(rec));
  }

  result.null_mse = null_model_mse(data);
  // Minimum OOB MSE along the path; ties favour the smaller set, and the
  // grand-mean model competes as the empty set.
  double best = result.path.front().oob_mse;
  result.selected = result.path.front().covariates;
  for (const auto& rec : result.path) {
    if (rec.oob_mse <= best) {
      best = rec.oob_mse;
      result.selected = rec.covariates;
    }
  }
  if (result.null_mse <= best) {
    result.selected = IndexSet{};
    result.selected_null = true;
  }
  return result;
}

}  // namespace qrfsel
