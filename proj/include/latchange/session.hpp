#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latchange/error.hpp"
#include "latchange/grid.hpp"
#include "latchange/image_io.hpp"
#include "latchange/proposal_ops.hpp"
#include "latchange/records.hpp"
#include "latchange/tensor_archive.hpp"

namespace latchange {

/// Describes one bitemporal pair on disk. Relative paths resolve against `base_dir`.
///
///   {"image_size":[h,w], "embedding_size":[He,We], "d_m":256, "demodulated":true,
///    "pre_image":"pre.png", "post_image":"post.png",
///    "pre_embedding":"pre.act", "post_embedding":"post.act",
///    "pre_proposals":"pre.jsonl", "post_proposals":"post.jsonl"}
///
/// Image paths are optional; everything else is required.
struct SessionManifest {
  ImageSize image_size{};
  int embedding_height = 0;
  int embedding_width = 0;
  int channels = 0;  // d_m
  std::array<std::filesystem::path, 2> images;
  std::array<std::filesystem::path, 2> embeddings;
  std::array<std::filesystem::path, 2> proposals;
  bool demodulated = false;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.empty() || p.is_absolute() ? p : base_dir / p;
  }
};

inline SessionManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  SessionManifest m;
  m.base_dir = base_dir;
  try {
    const auto& is = j.at("image_size");
    const auto& es = j.at("embedding_size");
    m.image_size = {is.at(0).get<int>(), is.at(1).get<int>()};
    m.embedding_height = es.at(0).get<int>();
    m.embedding_width = es.at(1).get<int>();
    m.channels = j.at("d_m").get<int>();
    m.demodulated = j.value("demodulated", false);
    auto opt_path = [&](const char* key) -> std::filesystem::path {
      if (!j.contains(key) || j[key].is_null()) return {};
      return j[key].get<std::string>();
    };
    m.images = {opt_path("pre_image"), opt_path("post_image")};
    m.embeddings = {j.at("pre_embedding").get<std::string>(), j.at("post_embedding").get<std::string>()};
    m.proposals = {j.at("pre_proposals").get<std::string>(), j.at("post_proposals").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed manifest: ") + e.what());
  }
  if (m.image_size.height <= 0 || m.image_size.width <= 0 || m.embedding_height <= 0 ||
      m.embedding_width <= 0 || m.channels <= 0) {
    throw Error(ErrorKind::format, "manifest sizes must be positive");
  }
  return m;
}

inline nlohmann::ordered_json to_json(const SessionManifest& m) {
  nlohmann::ordered_json j;
  j["image_size"] = {m.image_size.height, m.image_size.width};
  j["embedding_size"] = {m.embedding_height, m.embedding_width};
  j["d_m"] = m.channels;
  j["demodulated"] = m.demodulated;
  auto put = [&](const char* key, const std::filesystem::path& p) {
    if (p.empty()) j[key] = nullptr;
    else j[key] = p.generic_string();
  };
  put("pre_image", m.images[0]);
  put("post_image", m.images[1]);
  put("pre_embedding", m.embeddings[0]);
  put("post_embedding", m.embeddings[1]);
  put("pre_proposals", m.proposals[0]);
  put("post_proposals", m.proposals[1]);
  return j;
}

inline SessionManifest read_manifest(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, "cannot parse manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

/// Summary of the per-position demodulation check.
struct DemodulationReport {
  std::size_t positions_checked = 0;
  std::size_t violations = 0;
  double max_mean_deviation = 0.0;
  double max_norm_deviation = 0.0;  // |‖v‖ − √d_m|
};

/// Every position vector of a demodulated grid has channel mean within `mean_tol` of 0 and
/// ℓ2 norm within `norm_rel_tol`·√d_m of √d_m.
inline DemodulationReport check_demodulation(const EmbeddingGrid& grid, double mean_tol = 1e-3,
                                             double norm_rel_tol = 1e-2) {
  DemodulationReport rep;
  const double d = static_cast<double>(grid.channels());
  const double target = std::sqrt(d);
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      double sum = 0.0, sq = 0.0;
      for (float v : grid.at(r, c)) {
        sum += v;
        sq += static_cast<double>(v) * v;
      }
      const double mean_dev = std::abs(sum / d);
      const double norm_dev = std::abs(std::sqrt(sq) - target);
      rep.max_mean_deviation = std::max(rep.max_mean_deviation, mean_dev);
      rep.max_norm_deviation = std::max(rep.max_norm_deviation, norm_dev);
      if (mean_dev > mean_tol || norm_dev > norm_rel_tol * target) ++rep.violations;
      ++rep.positions_checked;
    }
  }
  return rep;
}

/// Proposal post-processing applied at load time (quality filter, then NMS).
struct ProposalFilter {
  QualityThresholds quality{};
  double nms_iou = 0.7;
};

struct LoadOptions {
  std::optional<ProposalFilter> filter;  // nullopt keeps proposals as stored
  bool strict_demodulation = false;      // violation → error instead of warning
  bool load_images = true;
  ScanOrder rle_order = ScanOrder::row_major;
};

/// Immutable bitemporal pair: both grids, both proposal lists and optional images.
class Session {
 public:
  Session(SessionManifest manifest, std::array<EmbeddingGrid, 2> grids,
          std::array<std::vector<ProposalRecord>, 2> proposals,
          std::array<std::optional<RgbImage>, 2> images = {}, std::vector<std::string> warnings = {})
      : manifest_(std::move(manifest)),
        grids_(std::move(grids)),
        proposals_(std::move(proposals)),
        images_(std::move(images)),
        warnings_(std::move(warnings)) {
    if (grids_[0].shape() != grids_[1].shape()) {
      throw Error(ErrorKind::shape_mismatch, "pre grid " + to_string(grids_[0].shape()) + " vs post grid " +
                                                 to_string(grids_[1].shape()));
    }
    for (const auto& side : proposals_)
      for (const auto& p : side)
        if (p.mask.size != manifest_.image_size)
          throw Error(ErrorKind::shape_mismatch, "proposal mask size differs from the image size");
  }

  const SessionManifest& manifest() const noexcept { return manifest_; }
  ImageSize image_size() const noexcept { return manifest_.image_size; }
  const GridShape& grid_shape() const noexcept { return grids_[0].shape(); }
  int channels() const noexcept { return grids_[0].channels(); }

  const EmbeddingGrid& grid(Time t) const noexcept { return grids_[index_of(t)]; }
  const std::vector<ProposalRecord>& proposals(Time t) const noexcept { return proposals_[index_of(t)]; }
  const std::optional<RgbImage>& image(Time t) const noexcept { return images_[index_of(t)]; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  /// Same pair with the two acquisition times exchanged.
  Session swapped() const {
    SessionManifest m = manifest_;
    std::swap(m.images[0], m.images[1]);
    std::swap(m.embeddings[0], m.embeddings[1]);
    std::swap(m.proposals[0], m.proposals[1]);
    auto props = std::array<std::vector<ProposalRecord>, 2>{proposals_[1], proposals_[0]};
    for (auto& p : props[0]) p.source_time = Time::t0;
    for (auto& p : props[1]) p.source_time = Time::t1;
    return Session(std::move(m), {grids_[1], grids_[0]}, std::move(props), {images_[1], images_[0]},
                   warnings_);
  }

 private:
  SessionManifest manifest_;
  std::array<EmbeddingGrid, 2> grids_;
  std::array<std::vector<ProposalRecord>, 2> proposals_;
  std::array<std::optional<RgbImage>, 2> images_;
  std::vector<std::string> warnings_;
};

inline std::vector<ProposalRecord> apply_filter(const std::vector<ProposalRecord>& raw, const ProposalFilter& f) {
  const auto kept = quality_filter(raw, f.quality);
  return nms(kept, f.nms_iou);
}

inline Session load_session(const SessionManifest& manifest, const LoadOptions& options = {}) {
  std::array<EmbeddingGrid, 2> grids;
  std::array<std::vector<ProposalRecord>, 2> props;
  std::array<std::optional<RgbImage>, 2> images;
  std::vector<std::string> warnings;

  for (Time t : {Time::t0, Time::t1}) {
    const std::size_t i = index_of(t);
    grids[i] = read_tensor_archive(manifest.resolve(manifest.embeddings[i]));
    grids[i].set_demodulated(manifest.demodulated);
  }
  if (grids[0].shape() != grids[1].shape()) {
    throw Error(ErrorKind::shape_mismatch, "pre grid " + to_string(grids[0].shape()) + " vs post grid " +
                                               to_string(grids[1].shape()));
  }
  const GridShape declared{manifest.embedding_height, manifest.embedding_width, manifest.channels};
  if (grids[0].shape() != declared) {
    throw Error(ErrorKind::shape_mismatch, "manifest declares " + to_string(declared) + " but archives hold " +
                                               to_string(grids[0].shape()));
  }

  for (Time t : {Time::t0, Time::t1}) {
    const std::size_t i = index_of(t);
    auto raw = read_proposal_file(manifest.resolve(manifest.proposals[i]), t, manifest.image_size, options.rle_order);
    props[i] = options.filter ? apply_filter(raw, *options.filter) : std::move(raw);

    const auto& img_path = manifest.images[i];
    if (!img_path.empty()) {
      const auto resolved = manifest.resolve(img_path);
      if (!std::filesystem::exists(resolved)) throw Error(ErrorKind::io, "missing image " + resolved.string());
      if (options.load_images) {
        images[i] = read_rgb_image(resolved);
        if (images[i]->size != manifest.image_size) {
          throw Error(ErrorKind::shape_mismatch, "image " + resolved.string() + " differs from image_size");
        }
      }
    }
  }

  if (manifest.demodulated) {
    for (Time t : {Time::t0, Time::t1}) {
      const auto rep = check_demodulation(grids[index_of(t)]);
      if (rep.violations > 0) {
        std::string msg = std::string(to_string(t)) + " grid: " + std::to_string(rep.violations) + " of " +
                          std::to_string(rep.positions_checked) +
                          " positions violate the demodulation invariant (max norm deviation " +
                          std::to_string(rep.max_norm_deviation) + ")";
        if (options.strict_demodulation) throw Error(ErrorKind::demodulation, msg);
        warnings.push_back(std::move(msg));
      }
    }
  }
  return Session(manifest, std::move(grids), std::move(props), std::move(images), std::move(warnings));
}

inline Session load_session(const std::filesystem::path& manifest_path, const LoadOptions& options = {}) {
  return load_session(read_manifest(manifest_path), options);
}

/// Writes grids, proposals and a manifest for an in-memory pair; used by fixtures and tools.
inline SessionManifest write_session(const std::filesystem::path& dir, const std::string& stem,
                                     const std::array<EmbeddingGrid, 2>& grids,
                                     const std::array<std::vector<ProposalRecord>, 2>& proposals,
                                     ImageSize image_size, bool demodulated) {
  std::filesystem::create_directories(dir);
  SessionManifest m;
  m.base_dir = dir;
  m.image_size = image_size;
  m.embedding_height = grids[0].height();
  m.embedding_width = grids[0].width();
  m.channels = grids[0].channels();
  m.demodulated = demodulated;
  m.embeddings = {stem + ".pre.act", stem + ".post.act"};
  m.proposals = {stem + ".pre.jsonl", stem + ".post.jsonl"};
  for (std::size_t i = 0; i < 2; ++i) {
    write_tensor_archive(grids[i], dir / m.embeddings[i]);
    write_file_bytes(dir / m.proposals[i], format_proposals(proposals[i]));
  }
  write_file_bytes(dir / (stem + ".json"), to_json(m).dump(2) + "\n");
  return m;
}

}  // namespace latchange
