// latchange: batch front end for change detection, point queries, baselines, evaluation,
// pseudo-label export, latent probing and the session service.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "latchange/baselines.hpp"
#include "latchange/http_server.hpp"
#include "latchange/latchange.hpp"
#include "latchange/service.hpp"
#include "latchange/synthetic.hpp"

namespace fs = std::filesystem;
using namespace latchange;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitInvariant = 3;

template <typename... Args>
void log(const char* fmt, Args... args) {
  std::fprintf(stderr, "latchange: ");
  if constexpr (sizeof...(Args) == 0) std::fputs(fmt, stderr);
  else std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

// ---------------------------------------------------------------------------------------------
// Shared flag groups

struct LoadFlags {
  bool no_filter = false;
  double min_predicted_iou = 0.5;
  double min_stability = 0.8;
  double nms_iou = 0.7;
  std::vector<std::string> stability_overrides;  // name=value
  std::string dataset;
  std::string rle_order = "row";
  bool strict_demodulation = false;

  void add(CLI::App* cmd) {
    auto* g = cmd->add_option_group("Proposals");
    g->add_flag("--no-filter", no_filter, "Use proposals as stored (skip quality filter and NMS)");
    g->add_option("--min-predicted-iou", min_predicted_iou, "Quality filter: minimum predicted IoU")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    g->add_option("--min-stability", min_stability, "Quality filter: minimum stability score")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    g->add_option("--nms-iou", nms_iou, "Mask NMS IoU threshold")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    g->add_option("--stability-override", stability_overrides,
                  "Per-dataset stability threshold, NAME=VALUE (repeatable); applied with --dataset");
    g->add_option("--dataset", dataset, "Dataset name selecting a --stability-override entry");
    g->add_option("--rle-order", rle_order, "Scan order of RLE counts in proposal files")
        ->check(CLI::IsMember({"row", "col"}))
        ->capture_default_str();
    g->add_flag("--strict-demodulation", strict_demodulation, "Fail instead of warn on demodulation violations");
  }

  LoadOptions options() const {
    LoadOptions o;
    o.rle_order = rle_order == "col" ? ScanOrder::column_major : ScanOrder::row_major;
    o.strict_demodulation = strict_demodulation;
    if (!no_filter) {
      ProposalFilter f;
      f.quality.min_predicted_iou = min_predicted_iou;
      f.quality.min_stability = min_stability;
      f.nms_iou = nms_iou;
      for (const auto& entry : stability_overrides) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw Error(ErrorKind::invalid_argument, "--stability-override expects NAME=VALUE, got '" + entry + "'");
        }
        double v = 0.0;
        try {
          v = std::stod(entry.substr(eq + 1));
        } catch (const std::exception&) {
          throw Error(ErrorKind::invalid_argument, "bad --stability-override value in '" + entry + "'");
        }
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::invalid_argument, "stability override must lie in [0, 1]");
        if (entry.substr(0, eq) == dataset) f.quality.min_stability = v;
      }
      o.filter = f;
    }
    return o;
  }

  Session load(const fs::path& manifest) const {
    Session s = load_session(manifest, options());
    for (const auto& w : s.warnings()) log("warning: %s", w.c_str());
    return s;
  }
};

struct SelectFlags {
  std::string mode = "threshold";
  double angle = kDefaultChangeAngle;
  int k = 100;
  std::string scoring = "cosine";
  std::string direction = "bidirectional";
  std::optional<double> dedupe;

  void add(CLI::App* cmd) {
    auto* g = cmd->add_option_group("Selection");
    g->add_option("--mode", mode, "Selection mode: threshold, topk or auto")
        ->check(CLI::IsMember({"threshold", "topk", "auto"}))
        ->capture_default_str();
    g->add_option("--angle", angle, "Change angle threshold in degrees")->capture_default_str();
    g->add_option("--k", k, "Number of proposals kept in topk mode")->capture_default_str();
    g->add_option("--scoring", scoring, "Score definition: cosine or eq1_raw")
        ->check(CLI::IsMember({"cosine", "eq1_raw"}))
        ->capture_default_str();
    g->add_option("--direction", direction, "bidirectional, t_to_t1 or t1_to_t")
        ->check(CLI::IsMember({"bidirectional", "t_to_t1", "t1_to_t"}))
        ->capture_default_str();
    g->add_option("--dedupe", dedupe, "Suppress changes overlapping a higher-ranked one above this IoU");
  }

  MatchConfig config(unsigned jobs) const {
    MatchConfig c;
    c.mode = parse_selection_mode(mode);
    c.angle_threshold_deg = angle;
    c.k = k;
    c.scoring = parse_scoring(scoring);
    c.direction = parse_direction(direction);
    c.dedupe_iou = dedupe;
    c.jobs = jobs;
    c.validate();
    return c;
  }
};

/// Internal consistency of a selection; a violation is a bug, not an input problem.
void check_selection(const std::vector<ChangeProposal>& changes, ImageSize size) {
  for (std::size_t i = 0; i < changes.size(); ++i) {
    const auto& c = changes[i];
    if (!(c.angle_deg >= 0.0 && c.angle_deg <= 180.0) || c.mask.size != size) {
      throw Error(ErrorKind::invariant, "change " + std::to_string(c.proposal_id) + " is malformed");
    }
    if (i > 0 && ranks_before(c, changes[i - 1])) {
      throw Error(ErrorKind::invariant, "selection is not in ranking order");
    }
  }
}

void write_outputs(const std::vector<ChangeProposal>& changes, ImageSize size, const fs::path& out_dir,
                   const std::string& stem, ScanOrder order) {
  fs::create_directories(out_dir);
  write_file_bytes(out_dir / (stem + ".jsonl"), format_changes(changes, order));
  write_change_map_png(rasterize_changes(changes, size), out_dir / (stem + ".png"));
}

std::string stem_of(const fs::path& manifest, const std::string& explicit_stem) {
  return explicit_stem.empty() ? manifest.stem().string() : explicit_stem;
}

QueryPoint parse_point(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    parts.push_back(text.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (parts.size() != 3) throw Error(ErrorKind::invalid_argument, "--point expects x,y,t, got '" + text + "'");
  QueryPoint p;
  try {
    p.x = std::stod(parts[0]);
    p.y = std::stod(parts[1]);
  } catch (const std::exception&) {
    throw Error(ErrorKind::invalid_argument, "--point coordinates are not numbers: '" + text + "'");
  }
  p.time = parse_time(parts[2]);
  return p;
}

// ---------------------------------------------------------------------------------------------
// Evaluation helpers

std::vector<RleMask> read_instance_masks(const fs::path& path) {
  std::vector<RleMask> out;
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(detail::mask_from_json(nlohmann::json::parse(line), ScanOrder::row_major));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::format, path.string() + ": " + e.what());
    }
  }
  return out;
}

/// Expands directories to their files with `ext`, sorted by name.
std::vector<fs::path> expand(const std::vector<std::string>& inputs, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else if (fs::path(in).extension() == ext) {
      out.emplace_back(in);
    }
  }
  return out;
}

/// Pairs ground truth with predictions. Directory inputs pair by file stem (a missing prediction
/// counts as empty); explicit file lists pair by position and must have equal length.
std::vector<std::pair<std::optional<fs::path>, fs::path>> pair_files(const std::vector<std::string>& preds,
                                                                      const std::vector<std::string>& gts,
                                                                      const std::string& ext) {
  const auto gt_files = expand(gts, ext);
  const auto pred_files = expand(preds, ext);
  std::vector<std::pair<std::optional<fs::path>, fs::path>> out;
  const bool by_stem = preds.size() == 1 && gts.size() == 1 && fs::is_directory(preds[0]) && fs::is_directory(gts[0]);
  if (by_stem) {
    std::map<std::string, fs::path> by_name;
    for (const auto& p : pred_files) by_name[p.stem().string()] = p;
    for (const auto& g : gt_files) {
      auto it = by_name.find(g.stem().string());
      out.emplace_back(it == by_name.end() ? std::nullopt : std::optional<fs::path>(it->second), g);
    }
    return out;
  }
  if (gt_files.size() != pred_files.size()) {
    throw Error(ErrorKind::invalid_argument, "prediction and ground-truth lists differ in length (" +
                                                 std::to_string(pred_files.size()) + " vs " +
                                                 std::to_string(gt_files.size()) + ")");
  }
  for (std::size_t i = 0; i < gt_files.size(); ++i) out.emplace_back(pred_files[i], gt_files[i]);
  return out;
}

// ---------------------------------------------------------------------------------------------

struct Cli {
  CLI::App app{"Zero-shot change detection by bitemporal latent matching", "latchange"};
  unsigned jobs = default_jobs();

  // detect / query / baseline / probe
  std::string manifest;
  std::string out_dir = ".";
  std::string stem;
  LoadFlags load;
  SelectFlags select;
  std::vector<std::string> points;
  double semantic_angle = kDefaultSemanticAngle;
  std::string method;
  bool on_images = false;
  double vote = 0.5;
  double match_iou = 0.5;
  std::optional<double> cva_threshold;

  // eval
  std::vector<std::string> preds, gts;
  std::string level = "both";
  std::string report_path;
  std::string method_name = "method";

  // export-labels
  std::string manifest_dir;

  // probe
  bool pca = false;
  std::optional<std::int64_t> query_id;
  std::size_t top_n = 10;
  bool cross = false;
  std::string probe_time = "T0";
  std::string out_file;

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string session_dir = ".";
  std::string static_dir;
  std::size_t max_sessions = 8;

  // synth
  std::string kind = "cluster";
  std::string synth_stem = "pair";
  std::uint64_t seed = 7;
  bool with_images = false;

  CLI::App *detect, *query, *eval, *baseline, *export_labels, *probe, *serve, *synth;

  Cli() {
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with default flag values")->envname("LATCHANGE_CONFIG");
    app.add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);

    detect = app.add_subcommand("detect", "Select change proposals for one bitemporal pair");
    detect->add_option("--manifest,-m", manifest, "Session manifest")->required()->check(CLI::ExistingFile);
    detect->add_option("--out,-o", out_dir, "Output directory")->capture_default_str();
    detect->add_option("--stem", stem, "Output file stem (default: manifest stem)");
    load.add(detect);
    select.add(detect);

    query = app.add_subcommand("query", "Filter change proposals by clicked example points");
    query->add_option("--manifest,-m", manifest, "Session manifest")->required()->check(CLI::ExistingFile);
    query->add_option("--point,-p", points, "Query point x,y,t (t is T0 or T1); repeatable")->required();
    query->add_option("--semantic-angle", semantic_angle, "Semantic angle threshold in degrees")
        ->check(CLI::Range(0.0, 180.0))
        ->capture_default_str();
    query->add_option("--out,-o", out_dir, "Output directory")->capture_default_str();
    query->add_option("--stem", stem, "Output file stem (default: manifest stem)");
    load.add(query);
    select.add(query);

    eval = app.add_subcommand("eval", "Score predictions against ground truth");
    eval->add_option("--pred", preds, "Prediction files or one directory")->required();
    eval->add_option("--gt", gts, "Ground-truth files or one directory")->required();
    eval->add_option("--level", level, "pixel (PNG maps), instance (JSONL masks) or both")
        ->check(CLI::IsMember({"pixel", "instance", "both"}))
        ->capture_default_str();
    eval->add_option("--report", report_path, "Also write the report as JSON to this path");
    eval->add_option("--name", method_name, "Method name for the table row")->capture_default_str();

    baseline = app.add_subcommand("baseline", "Run a reference method on one pair");
    baseline->add_option("--method", method, "cva, cva-match or mask-match")
        ->required()
        ->check(CLI::IsMember({"cva", "cva-match", "mask-match"}));
    baseline->add_option("--manifest,-m", manifest, "Session manifest")->required()->check(CLI::ExistingFile);
    baseline->add_option("--out,-o", out_dir, "Output directory")->capture_default_str();
    baseline->add_option("--stem", stem, "Output file stem (default: manifest stem)");
    baseline->add_flag("--on-images", on_images, "CVA over RGB pixels instead of embedding grids");
    baseline->add_option("--threshold", cva_threshold, "Fixed CVA threshold (default: Otsu)");
    baseline->add_option("--vote", vote, "cva-match: flagged fraction a proposal must exceed")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    baseline->add_option("--match-iou", match_iou, "mask-match: IoU above which proposals match")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    load.add(baseline);

    export_labels = app.add_subcommand("export-labels", "Write pseudo-label change maps for a directory of pairs");
    export_labels->add_option("--manifests", manifest_dir, "Directory of session manifests")
        ->required()
        ->check(CLI::ExistingDirectory);
    export_labels->add_option("--out,-o", out_dir, "Output directory")->required();
    load.add(export_labels);
    select.add(export_labels);

    probe = app.add_subcommand("probe", "Latent-space views: PCA rendering or semantic query");
    probe->add_option("--manifest,-m", manifest, "Session manifest")->required()->check(CLI::ExistingFile);
    probe->add_option("--time", probe_time, "Image to probe (T0 or T1)")->capture_default_str();
    auto* pca_flag = probe->add_flag("--pca", pca, "Render the first three principal components as PNG");
    auto* q = probe->add_option("--query", query_id, "Rank proposals by similarity to this proposal id");
    pca_flag->excludes(q);
    probe->add_option("--top-n", top_n, "Ranking length")->capture_default_str();
    probe->add_flag("--cross", cross, "Rank the other image's proposals instead");
    probe->add_option("--out,-o", out_file, "Output file (PNG for --pca, JSONL for --query)")->required();
    load.add(probe);

    serve = app.add_subcommand("serve", "Run the interactive session service");
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    serve->add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535))->capture_default_str();
    serve->add_option("--session-dir", session_dir, "Base directory for relative manifest paths")->capture_default_str();
    serve->add_option("--static-dir", static_dir, "Directory of UI assets served at /");
    serve->add_option("--max-sessions", max_sessions, "LRU capacity")->check(CLI::PositiveNumber)->capture_default_str();
    load.add(serve);

    synth = app.add_subcommand("synth", "Write a synthetic fixture pair");
    synth->add_option("--kind", kind, "cluster, random or no-change")
        ->check(CLI::IsMember({"cluster", "random", "no-change"}))
        ->capture_default_str();
    synth->add_option("--seed", seed, "Random seed")->capture_default_str();
    synth->add_option("--out,-o", out_dir, "Output directory")->required();
    synth->add_option("--stem", synth_stem, "File stem")->capture_default_str();
    synth->add_flag("--images", with_images, "Also write preview images");
  }

  int run_detect() {
    const Session s = load.load(manifest);
    const MatchConfig cfg = select.config(jobs);
    const auto cands = candidate_changes(score_candidates(s, cfg.scoring, cfg.direction, jobs));
    const Selection sel = select_changes(cands, cfg);
    check_selection(sel.changes, s.image_size());
    write_outputs(sel.changes, s.image_size(), out_dir, stem_of(manifest, stem), load.options().rle_order);
    if (sel.threshold_deg) log("threshold=%.4f", *sel.threshold_deg);
    log("candidates=%zu kept=%zu", cands.size(), sel.changes.size());
    return kExitOk;
  }

  int run_query() {
    const Session s = load.load(manifest);
    const MatchConfig cfg = select.config(jobs);
    PointQuery pq;
    pq.semantic_angle_deg = semantic_angle;
    for (const auto& p : points) pq.points.push_back(parse_point(p));
    const auto cands = candidate_changes(score_candidates(s, cfg.scoring, cfg.direction, jobs));
    const Selection sel = select_changes(cands, cfg);
    const auto kept = point_query_filter(sel.changes, pq, s, jobs);
    check_selection(kept, s.image_size());
    write_outputs(kept, s.image_size(), out_dir, stem_of(manifest, stem), load.options().rle_order);
    log("candidates=%zu selected=%zu kept=%zu", cands.size(), sel.changes.size(), kept.size());
    return kExitOk;
  }

  int run_baseline() {
    const Session s = load.load(manifest);
    const fs::path dir = out_dir;
    const std::string name = stem_of(manifest, stem);
    const auto order = load.options().rle_order;
    if (method == "cva") {
      CvaResult res;
      if (on_images) {
        if (!s.image(Time::t0) || !s.image(Time::t1)) {
          throw Error(ErrorKind::invalid_argument, "--on-images needs pre_image and post_image in the manifest");
        }
        res = cva_change_map(rgb_as_grid(*s.image(Time::t0)), rgb_as_grid(*s.image(Time::t1)), s.image_size(),
                             cva_threshold);
      } else {
        res = cva_change_map(s.grid(Time::t0), s.grid(Time::t1), s.image_size(), cva_threshold);
      }
      fs::create_directories(dir);
      write_change_map_png(res.change, dir / (name + ".png"));
      std::size_t flagged = 0;
      for (auto v : res.change.pixels()) flagged += v;
      if (res.threshold) log("threshold=%.6f", *res.threshold);
      else log("no intensity contrast; empty change map");
      log("flagged=%zu of %zu pixels", flagged, res.change.pixels().size());
      return kExitOk;
    }
    std::vector<ChangeProposal> out;
    if (method == "mask-match") {
      out = mask_match(s, match_iou);
    } else {
      ChangeMap map;
      if (on_images) {
        if (!s.image(Time::t0) || !s.image(Time::t1)) {
          throw Error(ErrorKind::invalid_argument, "--on-images needs pre_image and post_image in the manifest");
        }
        map = cva_change_map(rgb_as_grid(*s.image(Time::t0)), rgb_as_grid(*s.image(Time::t1)), s.image_size(),
                             cva_threshold).change;
      } else {
        map = cva_change_map(s.grid(Time::t0), s.grid(Time::t1), s.image_size(), cva_threshold).change;
      }
      out = vote_on_map(s, map, vote, jobs);
    }
    check_selection(out, s.image_size());
    write_outputs(out, s.image_size(), dir, name, order);
    log("candidates=%zu kept=%zu", s.proposals(Time::t0).size() + s.proposals(Time::t1).size(), out.size());
    return kExitOk;
  }

  int run_eval() {
    nlohmann::ordered_json report;
    TableRow row{method_name, std::nullopt, std::nullopt};
    if (level != "instance") {
      EvalAccumulator acc;
      for (const auto& [pred, gt] : pair_files(preds, gts, ".png")) {
        const ChangeMap g = read_change_map_png(gt);
        const ChangeMap p = pred ? read_change_map_png(*pred) : ChangeMap(g.size(), 0);
        acc.add_pixel(pixel_prf(p, g));
      }
      if (acc.pixel_pairs() == 0) throw Error(ErrorKind::invalid_argument, "no PNG ground truth found");
      const auto micro = acc.micro();
      report["pixel"] = {{"pairs", acc.pixel_pairs()}, {"micro", to_json(micro)}, {"macro", to_json(acc.macro())}};
      row.pixel = micro;
      std::printf("pixel f1 %.4f precision %.4f recall %.4f\n", micro.f1, micro.precision, micro.recall);
    }
    if (level != "pixel") {
      EvalAccumulator acc;
      nlohmann::ordered_json per_pair = nlohmann::ordered_json::array();
      for (const auto& [pred, gt] : pair_files(preds, gts, ".jsonl")) {
        const auto gt_masks = read_instance_masks(gt);
        if (gt_masks.empty()) {
          log("skipping %s: no ground-truth instances", gt.string().c_str());
          continue;
        }
        const auto p = pred ? read_change_file(*pred) : std::vector<ChangeProposal>{};
        const auto r = mask_ar(p, gt_masks);
        acc.add_instance(r);
        per_pair.push_back({{"gt", gt.filename().string()}, {"ar", r.ar}});
      }
      if (acc.instance_pairs() == 0) throw Error(ErrorKind::invalid_argument, "no instance ground truth found");
      report["instance"] = {{"pairs", acc.instance_pairs()}, {"ar", acc.mean_ar()}, {"per_pair", per_pair}};
      row.ar = acc.mean_ar();
      std::printf("ar %.4f\n", acc.mean_ar());
    }
    std::printf("\n%s", format_table({row}).c_str());
    if (!report_path.empty()) write_file_bytes(report_path, report.dump(2) + "\n");
    return kExitOk;
  }

  int run_export_labels() {
    std::vector<fs::path> manifests;
    for (const auto& e : fs::directory_iterator(manifest_dir))
      if (e.is_regular_file() && e.path().extension() == ".json") manifests.push_back(e.path());
    std::sort(manifests.begin(), manifests.end());
    if (manifests.empty()) throw Error(ErrorKind::invalid_argument, "no manifests in " + manifest_dir);
    fs::create_directories(out_dir);
    const MatchConfig cfg = select.config(1);

    struct Outcome {
      std::optional<double> coverage;
      std::string error;
    };
    std::vector<Outcome> outcomes(manifests.size());
    // Pairs are independent and write their own files; within a pair work runs serially.
    parallel_for(manifests.size(), jobs, [&](std::size_t i) {
      try {
        const Session s = load.load(manifests[i]);
        const auto changes = bitemporal_latent_match(s, cfg);
        const ChangeMap map = rasterize_changes(changes, s.image_size());
        write_change_map_png(map, fs::path(out_dir) / (manifests[i].stem().string() + ".png"));
        std::size_t n = 0;
        for (auto v : map.pixels()) n += v;
        outcomes[i].coverage = static_cast<double>(n) / static_cast<double>(map.pixels().size());
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    });

    nlohmann::ordered_json summary;
    summary["pairs"] = nlohmann::ordered_json::array();
    summary["failed"] = nlohmann::ordered_json::array();
    std::size_t ok = 0;
    double covered = 0.0;
    for (std::size_t i = 0; i < manifests.size(); ++i) {
      const std::string name = manifests[i].stem().string();
      if (outcomes[i].coverage) {
        ++ok;
        covered += *outcomes[i].coverage;
        summary["pairs"].push_back({{"name", name}, {"coverage", *outcomes[i].coverage}});
      } else {
        log("warning: skipping %s: %s", manifests[i].filename().string().c_str(), outcomes[i].error.c_str());
        summary["failed"].push_back({{"name", name}, {"error", outcomes[i].error}});
      }
    }
    summary["mean_coverage"] = ok ? covered / static_cast<double>(ok) : 0.0;
    write_file_bytes(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    log("exported=%zu failed=%zu", ok, manifests.size() - ok);
    return ok == 0 ? kExitInput : kExitOk;
  }

  int run_probe() {
    const Session s = load.load(manifest);
    const Time t = parse_time(probe_time);
    if (pca) {
      const PcaBasis basis = fit_pca_up_to(s.grid(t), 3);
      if (basis.directions.size() < 3) log("grid has rank %zu; remaining channels render as 0", basis.directions.size());
      write_rgb_png(pca_rgb(s.grid(t), basis), out_file);
      return kExitOk;
    }
    if (!query_id) throw Error(ErrorKind::invalid_argument, "probe needs --pca or --query");
    const auto ranked = cross ? semantic_query(s.grid(t), s.proposals(t), *query_id, top_n, &s.grid(other(t)),
                                               s.proposals(other(t)))
                              : semantic_query(s.grid(t), s.proposals(t), *query_id, top_n);
    std::string out;
    for (const auto& r : ranked) {
      nlohmann::ordered_json j;
      j["id"] = r.record.id;
      j["source_time"] = std::string(to_string(r.record.source_time));
      j["similarity"] = r.similarity;
      out += j.dump() + "\n";
    }
    write_file_bytes(out_file, out);
    return kExitOk;
  }

  int run_serve() {
    service::ServiceOptions opts;
    opts.session_dir = session_dir;
    opts.max_sessions = max_sessions;
    opts.load = load.options();
    opts.jobs = jobs;
    service::ServiceCore core(opts);
    httplib::Server server;
    service::install_routes(server, core);
    if (!static_dir.empty()) service::mount_static(server, static_dir);
    const int bound = service::bind_server(server, host, port);
    log("listening on http://%s:%d", host.c_str(), bound);
    std::fflush(stderr);
    return server.listen_after_bind() ? kExitOk : kExitInput;
  }

  int run_synth() {
    synthetic::Pair pair;
    if (kind == "cluster") {
      pair = synthetic::cluster_fixture(seed).pair;
    } else if (kind == "no-change") {
      pair = synthetic::no_change_pair(seed);
    } else {
      synthetic::Rng rng(seed);
      pair = synthetic::random_pair(rng);
    }
    fs::create_directories(out_dir);
    if (with_images) synthetic::write_with_images(pair, out_dir, synth_stem);
    else pair.write(out_dir, synth_stem);
    log("wrote %s", (fs::path(out_dir) / (synth_stem + ".json")).string().c_str());
    return kExitOk;
  }

  int dispatch() {
    if (*detect) return run_detect();
    if (*query) return run_query();
    if (*eval) return run_eval();
    if (*baseline) return run_baseline();
    if (*export_labels) return run_export_labels();
    if (*probe) return run_probe();
    if (*serve) return run_serve();
    if (*synth) return run_synth();
    return kExitInput;
  }
};

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  try {
    cli.app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return cli.app.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.app.exit(e);
    return kExitInput;
  }
  try {
    return cli.dispatch();
  } catch (const Error& e) {
    log("error: %s", e.what());
    return e.kind() == ErrorKind::invariant ? kExitInvariant : kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    log("error: %s", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    log("internal error: %s", e.what());
    return kExitInvariant;
  }
}
