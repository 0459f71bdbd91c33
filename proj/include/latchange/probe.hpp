#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "latchange/error.hpp"
#include "latchange/grid.hpp"
#include "latchange/matching.hpp"
#include "latchange/proposal_ops.hpp"
#include "latchange/raster.hpp"
#include "latchange/records.hpp"

namespace latchange {

/// Mean and leading principal directions of a grid's position-vector cloud.
struct PcaBasis {
  std::vector<double> mean;
  std::vector<std::vector<double>> directions;  // orthonormal, by decreasing eigenvalue
  std::vector<double> eigenvalues;
  std::vector<double> explained_share;  // eigenvalue / total variance
};

struct PcaOptions {
  double tolerance = 1e-8;
  int max_iterations = 1000;
  double rank_epsilon = 1e-10;  // eigenvalues below rank_epsilon × total variance count as zero
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0.0)
    for (auto& x : v) x /= n;
}

inline void orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  // Two passes of Gram-Schmidt keep the directions orthogonal to working precision.
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& u : basis) {
      const double p = dot(v, u);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * u[i];
    }
  }
}

inline void fix_sign(std::vector<double>& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  if (v[arg] < 0.0)
    for (auto& x : v) x = -x;
}

inline std::vector<double> covariance(const EmbeddingGrid& grid, const std::vector<double>& mean) {
  const std::size_t d = mean.size();
  std::vector<double> cov(d * d, 0.0);
  std::vector<double> centered(d);
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      const auto v = grid.at(r, c);
      for (std::size_t i = 0; i < d; ++i) centered[i] = static_cast<double>(v[i]) - mean[i];
      for (std::size_t i = 0; i < d; ++i) {
        const double ci = centered[i];
        if (ci == 0.0) continue;
        for (std::size_t j = i; j < d; ++j) cov[i * d + j] += ci * centered[j];
      }
    }
  }
  const double n = static_cast<double>(grid.shape().cells());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov[i * d + j] /= n;
      cov[j * d + i] = cov[i * d + j];
    }
  }
  return cov;
}

}  // namespace detail

/// Principal directions via power iteration with deflation. Sign convention: the
/// largest-magnitude coordinate of each direction is positive.
inline PcaBasis fit_pca(const EmbeddingGrid& grid, int components = 3, const PcaOptions& options = {}) {
  if (components < 1) throw Error(ErrorKind::invalid_argument, "at least one component is required");
  if (grid.shape().cells() < static_cast<std::size_t>(components)) {
    throw Error(ErrorKind::invalid_argument, "grid has fewer positions than requested components");
  }
  const std::size_t d = static_cast<std::size_t>(grid.channels());
  PcaBasis basis;
  basis.mean.assign(d, 0.0);
  for (int r = 0; r < grid.height(); ++r)
    for (int c = 0; c < grid.width(); ++c) {
      const auto v = grid.at(r, c);
      for (std::size_t i = 0; i < d; ++i) basis.mean[i] += v[i];
    }
  for (auto& m : basis.mean) m /= static_cast<double>(grid.shape().cells());

  const std::vector<double> cov = detail::covariance(grid, basis.mean);
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += cov[i * d + i];
  if (!(total > 0.0)) throw Error(ErrorKind::rank_deficient, "position cloud has zero variance");

  auto apply = [&](const std::vector<double>& v) {
    std::vector<double> w(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) w[i] = detail::dot(std::span<const double>(cov).subspan(i * d, d), v);
    return w;
  };

  std::mt19937_64 rng(0x5eedULL);
  for (int k = 0; k < components; ++k) {
    std::vector<double> v(d);
    for (auto& x : v) x = 1.0 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
    detail::orthogonalize(v, basis.directions);
    detail::normalize(v);

    double lambda = 0.0;
    for (int it = 0; it < options.max_iterations; ++it) {
      std::vector<double> w = apply(v);
      detail::orthogonalize(w, basis.directions);
      const double norm = std::sqrt(detail::dot(w, w));
      if (norm <= options.rank_epsilon * total) {
        lambda = 0.0;
        break;
      }
      for (auto& x : w) x /= norm;
      double delta = 0.0;
      for (std::size_t i = 0; i < d; ++i) delta = std::max(delta, std::abs(w[i] - v[i]));
      v = std::move(w);
      lambda = norm;
      if (delta < options.tolerance) break;
    }
    if (lambda <= options.rank_epsilon * total) {
      throw Error(ErrorKind::rank_deficient, "position cloud has rank " + std::to_string(k) + ", " +
                                                 std::to_string(components) + " components requested");
    }
    detail::fix_sign(v);
    lambda = detail::dot(v, apply(v));
    basis.directions.push_back(std::move(v));
    basis.eigenvalues.push_back(lambda);
    basis.explained_share.push_back(lambda / total);
  }
  return basis;
}

/// Fits as many of the leading `max_components` components as the cloud's rank allows.
inline PcaBasis fit_pca_up_to(const EmbeddingGrid& grid, int max_components = 3, const PcaOptions& options = {}) {
  std::optional<PcaBasis> best;
  for (int k = 1; k <= max_components; ++k) {
    try {
      best = fit_pca(grid, k, options);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::rank_deficient && e.kind() != ErrorKind::invalid_argument) throw;
      break;
    }
  }
  if (!best) throw Error(ErrorKind::rank_deficient, "position cloud has zero variance");
  return *best;
}

/// Coordinates of one position in the basis.
inline std::vector<double> pca_project(std::span<const float> v, const PcaBasis& basis) {
  std::vector<double> out(basis.directions.size(), 0.0);
  for (std::size_t k = 0; k < basis.directions.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (static_cast<double>(v[i]) - basis.mean[i]) * basis.directions[k][i];
    out[k] = s;
  }
  return out;
}

/// Renders the first three principal coordinates as RGB, each channel min-max scaled to
/// [0, 255]. Constant channels, and channels beyond the basis size, are 0.
inline RgbImage pca_rgb(const EmbeddingGrid& grid, const PcaBasis& basis) {
  if (basis.mean.size() != static_cast<std::size_t>(grid.channels())) {
    throw Error(ErrorKind::shape_mismatch, "PCA basis fitted on a different channel count");
  }
  const std::size_t n = grid.shape().cells();
  const std::size_t used = std::min<std::size_t>(3, basis.directions.size());
  std::vector<std::array<double, 3>> coords(n, {0.0, 0.0, 0.0});
  for (int r = 0; r < grid.height(); ++r)
    for (int c = 0; c < grid.width(); ++c) {
      const auto p = pca_project(grid.at(r, c), basis);
      for (std::size_t k = 0; k < used; ++k) coords[static_cast<std::size_t>(r) * grid.width() + c][k] = p[k];
    }

  RgbImage img({grid.height(), grid.width()}, 0);
  for (std::size_t k = 0; k < used; ++k) {
    double lo = coords[0][k], hi = coords[0][k];
    for (const auto& cc : coords) {
      lo = std::min(lo, cc[k]);
      hi = std::max(hi, cc[k]);
    }
    const double scale = std::max(std::abs(lo), std::abs(hi));
    if (!(hi - lo > 1e-12 * std::max(scale, 1e-300))) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = (coords[i][k] - lo) / (hi - lo);
      img.data[i * 3 + k] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

struct RankedProposal {
  ProposalRecord record;
  double similarity = 0.0;
};

/// Ranks proposals by cosine similarity of their mask embeddings to the query proposal's.
/// Without `pool_grid`/`pool` the ranking covers the query's own list minus the query; with
/// them it covers the other image's proposals pooled on its grid.
inline std::vector<RankedProposal> semantic_query(const EmbeddingGrid& grid, std::span<const ProposalRecord> proposals,
                                                  std::int64_t query_id, std::size_t top_n,
                                                  const EmbeddingGrid* pool_grid = nullptr,
                                                  std::span<const ProposalRecord> pool = {}) {
  const ProposalRecord* query = nullptr;
  for (const auto& p : proposals)
    if (p.id == query_id) query = &p;
  if (!query) throw Error(ErrorKind::not_found, "query proposal " + std::to_string(query_id) + " not present");
  const bool cross = pool_grid != nullptr;
  if (cross && pool_grid->channels() != grid.channels()) {
    throw Error(ErrorKind::shape_mismatch, "cross-image query on grids with different channel counts");
  }

  const auto q = pool_embedding(grid, project_mask_to_grid(query->mask, grid.shape()));
  if (squared_norm(q) == 0.0) throw Error(ErrorKind::degenerate, "query embedding has zero norm");
  const EmbeddingGrid& target = cross ? *pool_grid : grid;
  const std::span<const ProposalRecord> candidates = cross ? pool : proposals;

  std::vector<RankedProposal> ranked;
  for (const auto& p : candidates) {
    if (!cross && p.id == query_id) continue;
    const auto e = pool_embedding(target, project_mask_to_grid(p.mask, target.shape()));
    if (squared_norm(e) == 0.0) throw Error(ErrorKind::degenerate, "proposal " + std::to_string(p.id) + " embedding has zero norm");
    ranked.push_back({p, -change_score(q, e).score});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedProposal& a, const RankedProposal& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.record.id < b.record.id;
  });
  if (ranked.size() > top_n) ranked.resize(top_n);
  return ranked;
}

}  // namespace latchange
