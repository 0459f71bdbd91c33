#pragma once

// Line-oriented proposal files: one JSON object per line.
//   {"id":3,"size":[h,w],"counts":[...],"predicted_iou":0.93,"stability_score":0.97,
//    "source_time":"T0","prompt_point":[x,y]}
// Change proposal files use the same record with "score" and "angle_deg" in place of the
// quality fields.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latchange/error.hpp"
#include "latchange/grid.hpp"
#include "latchange/rle.hpp"

namespace latchange {

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

/// Object proposal m_{t,i} with the segmentation model's quality scores.
struct ProposalRecord {
  std::int64_t id = 0;
  RleMask mask;
  double predicted_iou = 1.0;
  double stability_score = 1.0;
  Time source_time = Time::t0;
  std::optional<PixelPoint> prompt_point;

  friend bool operator==(const ProposalRecord&, const ProposalRecord&) = default;
};

/// A mask asserted to have changed, with its change confidence and angle.
struct ChangeProposal {
  RleMask mask;
  Time source_time = Time::t0;
  double score = 0.0;      // in [-1, 1] under cosine scoring
  double angle_deg = 0.0;  // in [0, 180]
  std::int64_t proposal_id = 0;

  friend bool operator==(const ChangeProposal&, const ChangeProposal&) = default;
};

namespace detail {

inline RleMask mask_from_json(const nlohmann::json& j, ScanOrder order) {
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2) throw Error(ErrorKind::format, "size must be [h, w]");
  const ImageSize sz{size[0].get<int>(), size[1].get<int>()};
  if (sz.height <= 0 || sz.width <= 0) throw Error(ErrorKind::format, "mask size must be positive");
  auto counts = j.at("counts").get<std::vector<std::uint32_t>>();
  RleMask mask{sz, std::move(counts)};
  validate_rle(mask);
  if (order == ScanOrder::column_major) mask = from_column_major(sz, mask.counts);
  return mask;
}

template <typename Json>
void mask_to_json(Json& j, const RleMask& mask, ScanOrder order) {
  j["size"] = {mask.size.height, mask.size.width};
  j["counts"] = order == ScanOrder::row_major ? mask.counts : to_column_major(mask);
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const ProposalRecord& r, ScanOrder order = ScanOrder::row_major) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  detail::mask_to_json(j, r.mask, order);
  j["predicted_iou"] = r.predicted_iou;
  j["stability_score"] = r.stability_score;
  j["source_time"] = std::string(to_string(r.source_time));
  if (r.prompt_point) j["prompt_point"] = {r.prompt_point->x, r.prompt_point->y};
  return j;
}

inline nlohmann::ordered_json to_json(const ChangeProposal& c, ScanOrder order = ScanOrder::row_major) {
  nlohmann::ordered_json j;
  j["id"] = c.proposal_id;
  detail::mask_to_json(j, c.mask, order);
  j["source_time"] = std::string(to_string(c.source_time));
  j["score"] = c.score;
  j["angle_deg"] = c.angle_deg;
  return j;
}

inline ProposalRecord proposal_from_json(const nlohmann::json& j, ScanOrder order = ScanOrder::row_major) {
  ProposalRecord r;
  r.id = j.at("id").get<std::int64_t>();
  r.mask = detail::mask_from_json(j, order);
  r.predicted_iou = j.value("predicted_iou", 1.0);
  r.stability_score = j.value("stability_score", 1.0);
  if (j.contains("source_time")) r.source_time = parse_time(j["source_time"].get<std::string>());
  if (j.contains("prompt_point") && !j["prompt_point"].is_null()) {
    const auto& p = j["prompt_point"];
    r.prompt_point = PixelPoint{p.at(0).get<double>(), p.at(1).get<double>()};
  }
  if (!(r.predicted_iou >= 0.0 && r.predicted_iou <= 1.0) ||
      !(r.stability_score >= 0.0 && r.stability_score <= 1.0)) {
    throw Error(ErrorKind::format, "quality scores must lie in [0, 1]");
  }
  if (mask_area(r.mask) == 0) throw Error(ErrorKind::format, "proposal mask is empty");
  return r;
}

inline ChangeProposal change_from_json(const nlohmann::json& j, ScanOrder order = ScanOrder::row_major) {
  ChangeProposal c;
  c.proposal_id = j.at("id").get<std::int64_t>();
  c.mask = detail::mask_from_json(j, order);
  c.source_time = parse_time(j.value("source_time", std::string("T0")));
  c.score = j.at("score").get<double>();
  c.angle_deg = j.value("angle_deg", 0.0);
  return c;
}

namespace detail {

template <typename Record, typename Parse>
std::vector<Record> read_lines(const std::filesystem::path& path, Parse&& parse) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename Range>
std::string write_lines(const Range& records, ScanOrder order) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r, order).dump();
    out += '\n';
  }
  return out;
}

}  // namespace detail

/// Reads a proposal file for one side of a pair. Ids must be unique and every mask must
/// have the expected size; a record's source_time, when present, must match `side`.
inline std::vector<ProposalRecord> read_proposal_file(const std::filesystem::path& path, Time side,
                                                      std::optional<ImageSize> expected = std::nullopt,
                                                      ScanOrder order = ScanOrder::row_major) {
  std::set<std::int64_t> seen;
  return detail::read_lines<ProposalRecord>(path, [&](const nlohmann::json& j) {
    const bool has_time = j.contains("source_time");
    ProposalRecord r = proposal_from_json(j, order);
    if (has_time && r.source_time != side) {
      throw Error(ErrorKind::format, "proposal " + std::to_string(r.id) + " is tagged " +
                                         std::string(to_string(r.source_time)) + " but listed for " +
                                         std::string(to_string(side)));
    }
    r.source_time = side;
    if (!seen.insert(r.id).second) {
      throw Error(ErrorKind::format, "duplicate proposal id " + std::to_string(r.id));
    }
    if (expected && r.mask.size != *expected) {
      throw Error(ErrorKind::shape_mismatch, "proposal " + std::to_string(r.id) +
                                                 " mask size differs from the image size");
    }
    return r;
  });
}

inline std::vector<ChangeProposal> read_change_file(const std::filesystem::path& path,
                                                    ScanOrder order = ScanOrder::row_major) {
  return detail::read_lines<ChangeProposal>(
      path, [&](const nlohmann::json& j) { return change_from_json(j, order); });
}

inline std::string format_proposals(const std::vector<ProposalRecord>& records,
                                    ScanOrder order = ScanOrder::row_major) {
  return detail::write_lines(records, order);
}

inline std::string format_changes(const std::vector<ChangeProposal>& changes,
                                  ScanOrder order = ScanOrder::row_major) {
  return detail::write_lines(changes, order);
}

}  // namespace latchange
