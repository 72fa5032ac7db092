#include "ccverify/branch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ccv {
namespace {

double gain(double child, double parent) {
  if (std::isinf(child) && child > 0.0) return kInfeasibleBound;
  return std::max(0.0, child - parent);
}

}  // namespace

std::vector<std::pair<NeuronId, double>> BaseScores::scores() const {
  std::vector<std::pair<NeuronId, double>> out;
  for (std::size_t i = 0; i < neurons.size(); ++i) out.emplace_back(neurons[i], stage_one[i]);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    out[candidates[c]].second = std::min(gain[c][0], gain[c][1]);
  }
  return out;
}

BaseScores base_scores(const VerificationInstance& instance, const LayerBounds& root,
                       const SplitSet& splits, const BranchOptions& options) {
  BaseScores out;
  const auto coeffs = backward_coefficients(instance, root, splits);
  const LayerBounds& dom = coeffs ? coeffs->domain : root;
  for (int k = 0; k < dom.num_layers(); ++k) {
    for (Eigen::Index j = 0; j < dom.lower[k].size(); ++j) {
      const NeuronId id{k, static_cast<int>(j)};
      if (splits.contains(id) || !dom.is_unstable(id)) continue;
      const double l = dom.lo(id);
      const double u = dom.hi(id);
      const double lam = coeffs ? std::abs(coeffs->lambda[k][j]) : 0.0;
      out.neurons.push_back(id);
      out.stage_one.push_back(lam * (-u * l) / (u - l));
    }
  }
  if (out.neurons.empty()) throw std::invalid_argument("no unstable neurons");

  std::vector<std::size_t> order(out.neurons.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.stage_one[a] > out.stage_one[b];
  });
  const std::size_t k = std::min(order.size(), static_cast<std::size_t>(std::max(1, options.top_k)));
  out.candidates.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.candidates.begin(), out.candidates.end());

  out.parent_lower = crown_lower_bound(instance, root, splits).lower;
  for (const std::size_t c : out.candidates) {
    const NeuronId id = out.neurons[c];
    const double off = crown_lower_bound(instance, root, splits.with(id, Phase::inactive)).lower;
    const double on = crown_lower_bound(instance, root, splits.with(id, Phase::active)).lower;
    out.bound_evaluations += 2;
    out.gain.push_back({gain(off, out.parent_lower), gain(on, out.parent_lower)});
  }
  return out;
}

double alignment_fraction(const SplitSet& splits, const SplitSet& a_nlp,
                          const std::vector<NeuronId>& unstable) {
  if (unstable.empty()) return 0.0;
  std::size_t matches = 0;
  for (const NeuronId id : unstable) {
    const auto mine = splits.phase(id);
    const auto theirs = a_nlp.phase(id);
    if (mine && theirs && *mine == *theirs) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(unstable.size());
}

std::vector<BranchScore> pattern_aligned_scores(const BaseScores& base, const SplitSet& splits,
                                                const std::optional<SplitSet>& a_nlp,
                                                const std::vector<NeuronId>& unstable,
                                                double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
  std::vector<BranchScore> out;
  for (std::size_t c = 0; c < base.candidates.size(); ++c) {
    const NeuronId id = base.neurons[base.candidates[c]];
    std::optional<BranchScore> binding;
    for (const Phase ph : {Phase::inactive, Phase::active}) {
      BranchScore s;
      s.neuron = id;
      s.binding_child = ph;
      s.base = base.gain[c][ph == Phase::active ? 1 : 0];
      s.alignment = a_nlp ? alignment_fraction(splits.with(id, ph), *a_nlp, unstable) : 0.0;
      s.combined = s.base + lambda * s.alignment;
      if (!binding || s.combined < binding->combined) binding = s;
    }
    out.push_back(*binding);
  }
  return out;
}

const BranchScore& select_split(const std::vector<BranchScore>& scores) {
  if (scores.empty()) throw std::invalid_argument("no unstable neurons");
  const BranchScore* best = &scores.front();
  for (const auto& s : scores) {
    if (s.combined > best->combined || (s.combined == best->combined && s.neuron < best->neuron)) {
      best = &s;
    }
  }
  return *best;
}

void DomainQueue::push(Domain domain) {
  domain.insertion_seq = next_seq_++;
  const auto key = std::make_pair(domain.lower, domain.insertion_seq);
  items_.emplace(key, std::move(domain));
}

std::optional<Domain> DomainQueue::pop() {
  if (items_.empty()) return std::nullopt;
  auto node = items_.extract(items_.begin());
  return std::move(node.mapped());
}

const Domain* DomainQueue::peek() const {
  return items_.empty() ? nullptr : &items_.begin()->second;
}

double DomainQueue::min_lower() const {
  return items_.empty() ? kInfeasibleBound : items_.begin()->first.first;
}

std::optional<std::size_t> select_domain(const std::vector<Domain>& domains) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& d = domains[i];
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = domains[*best];
    if (d.lower < b.lower || (d.lower == b.lower && d.insertion_seq < b.insertion_seq)) best = i;
  }
  return best;
}

}  // namespace ccv
