#pragma once

// Session service core: request routing and handlers, independent of the HTTP transport.
// Sessions live in memory behind an LRU cap; each holds an immutable Session and the scored
// candidate list computed once at creation. All GET handlers only read that state.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "latchange/error.hpp"
#include "latchange/image_io.hpp"
#include "latchange/matching.hpp"
#include "latchange/probe.hpp"
#include "latchange/render.hpp"
#include "latchange/session.hpp"

namespace latchange::service {

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct SessionState {
  std::string id;
  Session session;
  std::vector<ScoredCandidate> scored;
  std::vector<ChangeProposal> candidates;  // in scoring order

  mutable std::mutex config_mutex;
  mutable MatchConfig last_config;

  SessionState(std::string id_, Session s, unsigned jobs)
      : id(std::move(id_)),
        session(std::move(s)),
        scored(score_candidates(session, Scoring::cosine, Direction::bidirectional, jobs)),
        candidates(candidate_changes(scored)) {}
};

/// In-memory sessions with least-recently-used eviction.
class SessionStore {
 public:
  explicit SessionStore(std::size_t capacity = 8) : capacity_(std::max<std::size_t>(1, capacity)) {}

  std::shared_ptr<const SessionState> insert(Session session, unsigned jobs) {
    std::lock_guard lock(mutex_);
    const std::string id = "s" + std::to_string(++counter_);
    auto state = std::make_shared<const SessionState>(id, std::move(session), jobs);
    order_.push_front(id);
    entries_[id] = {state, order_.begin()};
    while (entries_.size() > capacity_) {
      entries_.erase(order_.back());
      order_.pop_back();
    }
    return state;
  }

  std::shared_ptr<const SessionState> get(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second.position);
    return it->second.state;
  }

  bool erase(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return false;
    order_.erase(it->second.position);
    entries_.erase(it);
    return true;
  }

  std::vector<std::string> ids() const {
    std::lock_guard lock(mutex_);
    return {order_.begin(), order_.end()};
  }

  std::size_t capacity() const noexcept { return capacity_; }

 private:
  struct Entry {
    std::shared_ptr<const SessionState> state;
    std::list<std::string>::iterator position;
  };
  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::uint64_t counter_ = 0;
  std::list<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

struct ServiceOptions {
  std::filesystem::path session_dir = ".";
  std::size_t max_sessions = 8;
  LoadOptions load{ProposalFilter{}};
  unsigned jobs = 1;
};

inline int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::truncated:
    case ErrorKind::unsupported:
    case ErrorKind::invalid_argument:
      return 400;
    case ErrorKind::not_found:
      return 404;
    case ErrorKind::shape_mismatch:
    case ErrorKind::demodulation:
    case ErrorKind::rank_deficient:
    case ErrorKind::unresolvable_point:
    case ErrorKind::degenerate:
    case ErrorKind::empty_mask:
      return 422;
    case ErrorKind::invariant:
      return 500;
  }
  return 500;
}

inline Response json_response(int status, const nlohmann::ordered_json& body) {
  return {status, "application/json", body.dump()};
}

inline Response error_response(int status, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = message;
  return json_response(status, j);
}

/// Serialised change list; identical bytes to the CLI's change file lines inside a JSON array.
inline nlohmann::ordered_json changes_json(const std::vector<ChangeProposal>& changes) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& c : changes) arr.push_back(to_json(c));
  return arr;
}

/// Selection config from request parameters; absent fields keep the defaults.
inline MatchConfig config_from_params(const std::map<std::string, std::string>& params) {
  MatchConfig cfg;
  auto num = [&](const char* key) -> std::optional<double> {
    auto it = params.find(key);
    if (it == params.end() || it->second.empty()) return std::nullopt;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_argument, std::string("parameter ") + key + " is not a number");
    }
  };
  if (auto it = params.find("mode"); it != params.end() && !it->second.empty()) cfg.mode = parse_selection_mode(it->second);
  if (auto v = num("angle")) cfg.angle_threshold_deg = *v;
  if (auto v = num("k")) {
    if (*v != static_cast<double>(static_cast<long long>(*v))) throw Error(ErrorKind::invalid_argument, "k must be an integer");
    cfg.k = static_cast<int>(*v);
  }
  if (auto v = num("dedupe")) cfg.dedupe_iou = *v;
  cfg.validate();
  return cfg;
}

class ServiceCore {
 public:
  explicit ServiceCore(ServiceOptions options = {})
      : options_(std::move(options)), store_(options_.max_sessions) {}

  SessionStore& store() noexcept { return store_; }
  const ServiceOptions& options() const noexcept { return options_; }

  Response handle(const Request& req) {
    try {
      return route(req);
    } catch (const Error& e) {
      return error_response(status_for(e.kind()), e.what());
    } catch (const nlohmann::json::exception& e) {
      return error_response(400, std::string("malformed request body: ") + e.what());
    } catch (const std::exception& e) {
      return error_response(500, e.what());
    }
  }

  /// Creates a session from an already-loaded pair.
  std::shared_ptr<const SessionState> add_session(Session s) { return store_.insert(std::move(s), options_.jobs); }

 private:
  static std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string item;
    while (std::getline(ss, item, '/'))
      if (!item.empty()) parts.push_back(item);
    return parts;
  }

  Response route(const Request& req) {
    const auto parts = split_path(req.path);
    if (parts.empty() || parts[0] != "sessions") return error_response(404, "no such endpoint");
    if (parts.size() == 1) {
      if (req.method == "POST") return create_session(req);
      if (req.method == "GET") {
        nlohmann::ordered_json j;
        j["sessions"] = store_.ids();
        return json_response(200, j);
      }
      return error_response(405, "method not allowed");
    }
    auto state = store_.get(parts[1]);
    if (!state) return error_response(404, "unknown session " + parts[1]);
    if (parts.size() == 2) {
      if (req.method == "DELETE") {
        store_.erase(parts[1]);
        return {204, "application/json", ""};
      }
      if (req.method == "GET") return json_response(200, session_summary(*state));
      return error_response(405, "method not allowed");
    }
    const std::string& leaf = parts[2];
    if (parts.size() == 3 && req.method == "GET") {
      if (leaf == "changes") return get_changes(*state, req);
      if (leaf == "proposals") return get_proposals(*state, req);
      if (leaf == "overlay") return get_overlay(*state, req);
      if (leaf == "latent") return get_latent(*state, req);
    }
    if (parts.size() == 3 && req.method == "POST" && leaf == "query") return post_query(*state, req);
    return error_response(404, "no such endpoint");
  }

  static nlohmann::ordered_json session_summary(const SessionState& s) {
    nlohmann::ordered_json j;
    j["session_id"] = s.id;
    j["image_size"] = {s.session.image_size().height, s.session.image_size().width};
    j["n_t"] = s.session.proposals(Time::t0).size();
    j["n_t1"] = s.session.proposals(Time::t1).size();
    j["candidates"] = s.candidates.size();
    j["warnings"] = s.session.warnings();
    return j;
  }

  Response create_session(const Request& req) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      return error_response(400, std::string("request body is not JSON: ") + e.what());
    }
    SessionManifest manifest;
    if (body.contains("manifest_path")) {
      const std::filesystem::path p = body["manifest_path"].get<std::string>();
      manifest = read_manifest(p.is_absolute() ? p : options_.session_dir / p);
    } else if (body.contains("manifest") && body["manifest"].is_object()) {
      manifest = manifest_from_json(body["manifest"], options_.session_dir);
    } else {
      return error_response(400, "body needs manifest_path or an inline manifest object");
    }
    auto state = add_session(load_session(manifest, options_.load));
    return json_response(201, session_summary(*state));
  }

  static void remember(const SessionState& s, const MatchConfig& cfg) {
    std::lock_guard lock(s.config_mutex);
    s.last_config = cfg;
  }

  static nlohmann::ordered_json selection_json(const SessionState& s, const Selection& sel, const MatchConfig& cfg) {
    nlohmann::ordered_json j;
    j["mode"] = cfg.mode == SelectionMode::topk ? "topk" : cfg.mode == SelectionMode::auto_otsu ? "auto" : "threshold";
    if (sel.threshold_deg) j["threshold_deg"] = *sel.threshold_deg;
    else j["threshold_deg"] = nullptr;
    j["candidates"] = s.candidates.size();
    j["count"] = sel.changes.size();
    j["changes"] = changes_json(sel.changes);
    return j;
  }

  Response get_changes(const SessionState& s, const Request& req) {
    const MatchConfig cfg = config_from_params(req.query);
    const Selection sel = select_changes(s.candidates, cfg);
    remember(s, cfg);
    return json_response(200, selection_json(s, sel, cfg));
  }

  Response get_proposals(const SessionState& s, const Request& req) {
    const Time t = parse_time(param(req, "time", "T0"));
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : s.session.proposals(t)) arr.push_back(to_json(p));
    nlohmann::ordered_json j;
    j["time"] = std::string(to_string(t));
    j["proposals"] = std::move(arr);
    return json_response(200, j);
  }

  Response post_query(const SessionState& s, const Request& req) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body.empty() ? "{}" : req.body);
    } catch (const nlohmann::json::exception& e) {
      return error_response(400, std::string("request body is not JSON: ") + e.what());
    }
    if (!body.contains("points") || !body["points"].is_array() || body["points"].empty()) {
      return error_response(400, "points must be a non-empty array");
    }
    PointQuery query;
    for (const auto& p : body["points"]) {
      QueryPoint qp;
      qp.x = p.at("x").get<double>();
      qp.y = p.at("y").get<double>();
      qp.time = parse_time(p.contains("t") ? p["t"].get<std::string>() : p.value("time", std::string("T0")));
      query.points.push_back(qp);
    }
    query.semantic_angle_deg = body.value("semantic_angle", kDefaultSemanticAngle);
    if (!(query.semantic_angle_deg >= 0.0 && query.semantic_angle_deg <= 180.0)) {
      return error_response(400, "semantic_angle must lie in [0, 180]");
    }
    std::map<std::string, std::string> params;
    for (const char* key : {"mode", "angle", "k", "dedupe"}) {
      if (!body.contains(key)) continue;
      const auto& v = body[key];
      params[key] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    const MatchConfig cfg = config_from_params(params);
    Selection sel = select_changes(s.candidates, cfg);
    sel.changes = point_query_filter(sel.changes, query, s.session, options_.jobs);
    remember(s, cfg);
    auto j = selection_json(s, sel, cfg);
    j["semantic_angle"] = query.semantic_angle_deg;
    return json_response(200, j);
  }

  static std::string param(const Request& req, const std::string& key, const std::string& fallback) {
    auto it = req.query.find(key);
    return it == req.query.end() || it->second.empty() ? fallback : it->second;
  }

  Response get_overlay(const SessionState& s, const Request& req) {
    const Time t = parse_time(param(req, "time", "T0"));
    std::vector<RleMask> masks;
    const std::string ids = param(req, "ids", "");
    std::stringstream ss(ids);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      Time owner = t;
      std::string num = tok;
      if (auto colon = tok.find(':'); colon != std::string::npos) {
        owner = parse_time(tok.substr(0, colon));
        num = tok.substr(colon + 1);
      }
      std::int64_t id = 0;
      try {
        std::size_t used = 0;
        id = std::stoll(num, &used);
        if (used != num.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        return error_response(400, "bad proposal id '" + tok + "'");
      }
      const auto& props = s.session.proposals(owner);
      auto it = std::find_if(props.begin(), props.end(), [&](const ProposalRecord& p) { return p.id == id; });
      if (it == props.end()) return error_response(404, "unknown proposal " + tok);
      masks.push_back(it->mask);
    }
    const auto& image = s.session.image(t);
    RgbImage base = image ? *image : RgbImage(s.session.image_size(), 96);
    return {200, "image/png", encode_rgb_png(overlay_masks(std::move(base), masks))};
  }

  Response get_latent(const SessionState& s, const Request& req) {
    const Time t = parse_time(param(req, "time", "T0"));
    const PcaBasis basis = fit_pca_up_to(s.session.grid(t), 3);
    const RgbImage small = pca_rgb(s.session.grid(t), basis);
    return {200, "image/png", encode_rgb_png(upscale_nearest(small, s.session.image_size()))};
  }

  ServiceOptions options_;
  SessionStore store_;
};

}  // namespace latchange::service
