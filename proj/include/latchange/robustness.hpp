#pragma once

// Radiometric perturbation harness: rescales embedding channels and measures how much the
// selected change set moves.

#include <cstdint>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "latchange/error.hpp"
#include "latchange/grid.hpp"
#include "latchange/records.hpp"
#include "latchange/synthetic.hpp"

namespace latchange {

/// Multiplies channel k of every position by factors[k] (all factors must be positive).
inline EmbeddingGrid rescale_channels(const EmbeddingGrid& grid, std::span<const double> factors) {
  if (factors.size() != static_cast<std::size_t>(grid.channels())) {
    throw Error(ErrorKind::shape_mismatch, "one factor per channel is required");
  }
  for (double f : factors)
    if (!(f > 0.0)) throw Error(ErrorKind::invalid_argument, "channel factors must be positive");
  EmbeddingGrid out = grid;
  auto v = out.values();
  const std::size_t d = factors.size();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(v[i] * factors[i % d]);
  return out;
}

/// Per-channel factors: `uniform` draws one factor in [lo, hi] shared by all channels;
/// otherwise every channel draws its own.
inline std::vector<double> jitter_factors(synthetic::Rng& rng, int channels, double lo, double hi, bool uniform) {
  std::vector<double> f(static_cast<std::size_t>(channels));
  const double shared = rng.uniform(lo, hi);
  for (auto& x : f) x = uniform ? shared : rng.uniform(lo, hi);
  return f;
}

struct SelectionDelta {
  std::size_t added = 0;
  std::size_t removed = 0;
  std::size_t total() const noexcept { return added + removed; }
};

/// Symmetric difference of two selections, identified by (source time, proposal id).
inline SelectionDelta selection_delta(const std::vector<ChangeProposal>& base,
                                      const std::vector<ChangeProposal>& perturbed) {
  auto keys = [](const std::vector<ChangeProposal>& v) {
    std::set<std::pair<int, std::int64_t>> s;
    for (const auto& c : v) s.insert({static_cast<int>(c.source_time), c.proposal_id});
    return s;
  };
  const auto a = keys(base), b = keys(perturbed);
  SelectionDelta d;
  for (const auto& k : b) d.added += a.count(k) == 0;
  for (const auto& k : a) d.removed += b.count(k) == 0;
  return d;
}

}  // namespace latchange
