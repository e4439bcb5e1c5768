#include "radarvel/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "radarvel/heads.hpp"

namespace radarvel {

void EvalConfig::validate() const {
  if (thresholds.empty()) throw ValidationError("at least one distance threshold is required");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0)) throw ValidationError("distance thresholds must be positive");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
      throw ValidationError("distance thresholds must be ascending");
  }
  if (!(ave_threshold > 0.0)) throw ValidationError("ave_threshold must be positive");
  if (!(min_recall >= 0.0 && min_recall < 1.0)) throw ValidationError("min_recall must lie in [0, 1)");
  if (!(min_precision >= 0.0 && min_precision < 1.0))
    throw ValidationError("min_precision must lie in [0, 1)");
  if (!(score_threshold >= 0.0 && score_threshold < 1.0))
    throw ValidationError("score_threshold must lie in [0, 1)");
}

EvalMatch match_for_eval(const std::vector<OBB>& preds, const std::vector<OBB>& gts, double threshold) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return preds[a].score_fg > preds[b].score_fg; });
  EvalMatch m;
  std::vector<char> claimed(gts.size(), 0);
  for (int p : order) {
    int best = -1;
    double best_d = threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g]) continue;
      const double d = bev_distance(preds[p], gts[g]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(g);
      }
    }
    if (best < 0) {
      m.fp.push_back(p);
    } else {
      claimed[best] = 1;
      m.tp.emplace_back(p, best);
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!claimed[g]) m.fn.push_back(static_cast<int>(g));
  return m;
}

double average_precision(const std::vector<EvalFrame>& frames, double threshold, const EvalConfig& cfg) {
  struct Ranked {
    double score;
    std::size_t frame;
    int index;
    bool tp;
  };
  std::vector<Ranked> ranked;
  std::size_t npos = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    npos += frames[f].gts.size();
    const EvalMatch m = match_for_eval(frames[f].preds, frames[f].gts, threshold);
    std::vector<char> is_tp(frames[f].preds.size(), 0);
    for (const auto& [p, g] : m.tp) is_tp[p] = 1;
    for (std::size_t i = 0; i < frames[f].preds.size(); ++i)
      ranked.push_back({frames[f].preds[i].score_fg, f, static_cast<int>(i), is_tp[i] != 0});
  }
  if (npos == 0 || ranked.empty()) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.index < b.index;
  });

  std::vector<double> rec, prec;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    tp += ranked[k].tp ? 1 : 0;
    rec.push_back(static_cast<double>(tp) / static_cast<double>(npos));
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
  }
  // Monotone envelope: precision at recall r is the best precision reached
  // at any recall >= r; zero beyond the largest recall.
  for (std::size_t k = prec.size() - 1; k > 0; --k) prec[k - 1] = std::max(prec[k - 1], prec[k]);

  double area = 0.0;
  double lo = 0.0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    const double hi = rec[k];
    if (hi <= lo) continue;
    const double a = std::max(lo, cfg.min_recall), b = std::min(hi, 1.0);
    if (b > a) area += (b - a) * std::max(prec[k] - cfg.min_precision, 0.0);
    lo = hi;
  }
  const double ap = area / (1.0 - cfg.min_precision) / (1.0 - cfg.min_recall);
  return std::clamp(ap, 0.0, 1.0);
}

std::optional<double> average_velocity_error(const std::vector<VelocityPair>& pairs) {
  if (pairs.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& p : pairs) sum += (p.pred - p.gt).norm();
  return sum / static_cast<double>(pairs.size());
}

MotionClass motion_class(const OBB& gt, const EvalConfig& cfg) {
  const double speed = gt.vel.norm();
  const Vec2 los(gt.center.x(), gt.center.y());
  const double range = los.norm();
  if (speed < cfg.min_speed || range < 1e-9) return MotionClass::kNone;
  const double c = std::clamp(std::abs(gt.vel.dot(los)) / (speed * range), 0.0, 1.0);
  const double angle = std::acos(c) * 180.0 / kPi;
  if (angle > cfg.tangential_deg) return MotionClass::kTangential;
  if (angle < cfg.radial_deg) return MotionClass::kRadial;
  return MotionClass::kNone;
}

EvalReport evaluate_frames(const std::vector<EvalFrame>& frames, const EvalConfig& cfg) {
  cfg.validate();
  EvalReport r;
  for (double t : cfg.thresholds) r.ap_per_threshold.push_back(average_precision(frames, t, cfg));
  r.ap = std::accumulate(r.ap_per_threshold.begin(), r.ap_per_threshold.end(), 0.0) /
         static_cast<double>(r.ap_per_threshold.size());
  r.ap4 = average_precision(frames, 4.0, cfg);
  for (std::size_t i = 0; i < cfg.thresholds.size(); ++i)
    if (cfg.thresholds[i] == 4.0) r.ap4 = r.ap_per_threshold[i];

  std::vector<VelocityPair> all, tang, rad;
  for (const auto& f : frames) {
    const EvalMatch m = match_for_eval(f.preds, f.gts, cfg.ave_threshold);
    r.tp += static_cast<int>(m.tp.size());
    r.fp += static_cast<int>(m.fp.size());
    r.fn += static_cast<int>(m.fn.size());
    for (const auto& [p, g] : m.tp) {
      const VelocityPair vp{f.preds[p].vel, f.gts[g].vel};
      all.push_back(vp);
      switch (motion_class(f.gts[g], cfg)) {
        case MotionClass::kTangential: tang.push_back(vp); break;
        case MotionClass::kRadial: rad.push_back(vp); break;
        case MotionClass::kNone: break;
      }
    }
  }
  r.ave = average_velocity_error(all);
  r.ave_tangential = average_velocity_error(tang);
  r.ave_radial = average_velocity_error(rad);
  return r;
}

std::vector<EvalFrame> predict(const Checkpoint& ckpt, const std::vector<FramePairRecord>& records,
                               const EvalConfig& cfg) {
  const Detector<float> det(ckpt.model);
  if (ckpt.params.size() != det.param_count()) throw ShapeMismatch("checkpoint parameter count mismatch");
  std::vector<EvalFrame> frames;
  frames.reserve(records.size());
  for (const auto& rec : records) {
    const Frame f = keep_newest_scans(rec.pair.det, ckpt.model.n_scans);
    const DetectorInput in = prepare_input(f, ckpt.model);
    auto pass = det.forward(in, ckpt.params);
    EvalFrame ef;
    ef.preds = boxes_of(decode_detections(pass->out, cfg.score_threshold, cfg.nms_radius));
    ef.gts = f.labels;
    frames.push_back(std::move(ef));
  }
  return frames;
}

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<FramePairRecord>& records,
                    const EvalConfig& cfg) {
  return evaluate_frames(predict(ckpt, records, cfg), cfg);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "arm,AP,AP4.0,AVE,AVE_tangential,AVE_radial,TP,FP,FN\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out << row.arm << ',' << fmt(r.ap) << ',' << fmt(r.ap4) << ',' << fmt(r.ave) << ','
        << fmt(r.ave_tangential) << ',' << fmt(r.ave_radial) << ',' << r.tp << ',' << r.fp << ',' << r.fn
        << '\n';
  }
  return out.str();
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << report_csv(rows);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<AblationArm> preset_arms(const std::string& preset) {
  using nlohmann::json;
  if (preset == "extensions")
    return {{"no v_r pre-training", json{{"use_vr_pretrain", false}}},
            {"no TemporalPillars", json{{"use_temporal_pillars", false}}},
            {"no v_r-map", json{{"use_vr_map", false}, {"use_shortcut", false}}},
            {"Proposed", json::object()}};
  if (preset == "scans") {
    std::vector<AblationArm> arms;
    for (int n : {1, 3, 5, 7}) arms.push_back({"n_scans=" + std::to_string(n), json{{"n_scans", n}}});
    return arms;
  }
  if (preset == "methods")
    return {{"label", json{{"supervision", "label"}}},
            {"self-supervised", json::object()},
            {"projected Doppler", json{{"phase2_epochs", 0}}}};
  throw ValidationError("unknown ablation preset: " + preset);
}

AblationGrid load_ablation_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed ablation grid: ") + ex.what());
  }
  AblationGrid g;
  try {
    if (j.contains("base")) g.base = j["base"];
    if (j.contains("preset")) g.arms = preset_arms(j["preset"].get<std::string>());
    if (j.contains("arms"))
      for (const auto& a : j["arms"])
        g.arms.push_back({a.at("name").get<std::string>(), a.value("overrides", nlohmann::json::object())});
    if (j.contains("seeds")) g.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("scenario")) g.scenario = j["scenario"].get<ScenarioConfig>();
    if (j.contains("split")) {
      g.split.n_pairs = j["split"].value("n_pairs", g.split.n_pairs);
      g.split.train_fraction = j["split"].value("train_fraction", g.split.train_fraction);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      g.eval.thresholds = e.value("thresholds", g.eval.thresholds);
      g.eval.ave_threshold = e.value("ave_threshold", g.eval.ave_threshold);
      g.eval.min_recall = e.value("min_recall", g.eval.min_recall);
      g.eval.min_precision = e.value("min_precision", g.eval.min_precision);
      g.eval.score_threshold = e.value("score_threshold", g.eval.score_threshold);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad ablation grid: ") + ex.what());
  }
  if (g.arms.empty()) throw ValidationError("ablation grid defines no arms");
  if (g.seeds.empty()) throw ValidationError("ablation grid defines no seeds");
  g.scenario.validate();
  g.eval.validate();
  return g;
}

namespace {

std::optional<double> median_of(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EvalReport median_report(const std::vector<EvalReport>& reports) {
  EvalReport m;
  if (reports.empty()) return m;
  auto collect = [&](auto get) {
    std::vector<double> v;
    for (const auto& r : reports)
      if (auto x = get(r)) v.push_back(*x);
    return median_of(v);
  };
  m.ap = collect([](const EvalReport& r) { return std::optional<double>(r.ap); }).value_or(0.0);
  m.ap4 = collect([](const EvalReport& r) { return std::optional<double>(r.ap4); }).value_or(0.0);
  for (std::size_t i = 0; i < reports.front().ap_per_threshold.size(); ++i)
    m.ap_per_threshold.push_back(
        collect([i](const EvalReport& r) { return std::optional<double>(r.ap_per_threshold.at(i)); })
            .value_or(0.0));
  m.ave = collect([](const EvalReport& r) { return r.ave; });
  m.ave_tangential = collect([](const EvalReport& r) { return r.ave_tangential; });
  m.ave_radial = collect([](const EvalReport& r) { return r.ave_radial; });
  m.tp = static_cast<int>(std::lround(
      collect([](const EvalReport& r) { return std::optional<double>(r.tp); }).value_or(0.0)));
  m.fp = static_cast<int>(std::lround(
      collect([](const EvalReport& r) { return std::optional<double>(r.fp); }).value_or(0.0)));
  m.fn = static_cast<int>(std::lround(
      collect([](const EvalReport& r) { return std::optional<double>(r.fn); }).value_or(0.0)));
  return m;
}

std::vector<ArmResult> run_ablation(const AblationGrid& grid, const ArmCallback& on_arm) {
  grid.eval.validate();
  std::vector<ArmResult> results(grid.arms.size());
  for (std::size_t a = 0; a < grid.arms.size(); ++a) results[a].arm = grid.arms[a].name;
  for (std::uint64_t seed : grid.seeds) {
    ScenarioConfig sc = grid.scenario;
    sc.seed = seed;
    const Dataset data = build_dataset(sc, grid.split);
    for (std::size_t a = 0; a < grid.arms.size(); ++a) {
      nlohmann::json j = grid.base;
      j.merge_patch(grid.arms[a].overrides);
      j["seed"] = seed;
      if (!j.contains("dt_gap")) j["dt_gap"] = sc.dt_gap;
      TrainConfig tc;
      try {
        tc = j.get<TrainConfig>();
      } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("bad arm '" + grid.arms[a].name + "': " + ex.what());
      }
      tc.validate();
      const TrainResult tr = train_model(tc, data);
      results[a].per_seed.push_back(evaluate(tr.final, data.val, grid.eval));
      if (on_arm) on_arm(grid.arms[a].name, seed, results[a].per_seed.back());
    }
  }
  for (auto& r : results) r.median = median_report(r.per_seed);
  return results;
}

std::vector<ReportRow> ablation_rows(const std::vector<ArmResult>& results) {
  std::vector<ReportRow> rows;
  for (const auto& r : results) rows.push_back({r.arm, r.median});
  return rows;
}

namespace {

constexpr double kCanvas = 800.0;

struct SvgMap {
  double extent;
  double scale() const { return 0.5 * kCanvas / extent; }
  // Forward (+x) points up, left (+y) points left.
  double u(double y) const { return (extent - y) * scale(); }
  double v(double x) const { return (extent - x) * scale(); }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string vr_color(double vr) {
  const double t = std::clamp(vr / 10.0, -1.0, 1.0);
  const int r = static_cast<int>(std::lround(t > 0 ? 255.0 : 255.0 * (1.0 + t)));
  const int b = static_cast<int>(std::lround(t < 0 ? 255.0 : 255.0 * (1.0 - t)));
  const int g = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(t))));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

void draw_box(std::ostringstream& out, const SvgMap& m, const OBB& b, const char* color, bool dashed,
              double arrow_scale) {
  const auto c = obb_corners(b);
  out << "<polygon points=\"";
  for (int i = 0; i < 4; ++i) out << (i ? " " : "") << num(m.u(c[i].y())) << ',' << num(m.v(c[i].x()));
  out << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
  if (dashed) out << " stroke-dasharray=\"6 4\"";
  out << "/>\n";
  const double x0 = b.center.x(), y0 = b.center.y();
  const double x1 = x0 + arrow_scale * b.vel.x(), y1 = y0 + arrow_scale * b.vel.y();
  out << "<path d=\"M " << num(m.u(y0)) << ' ' << num(m.v(x0)) << " L " << num(m.u(y1)) << ' '
      << num(m.v(x1)) << "\" stroke=\"" << color << "\" stroke-width=\"1.5\" marker-end=\"url(#arrow-"
      << (dashed ? "pred" : "gt") << ")\"/>\n";
}

}  // namespace

std::string plot_bev_svg(const Frame& frame, const std::vector<OBB>& preds, const std::vector<OBB>& gts,
                         double extent, double arrow_scale) {
  if (!(extent > 0.0)) throw ValidationError("plot extent must be positive");
  const SvgMap m{extent};
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kCanvas) << "\" height=\"" << num(kCanvas)
      << "\" viewBox=\"0 0 " << num(kCanvas) << ' ' << num(kCanvas) << "\">\n";
  out << "<defs>\n";
  for (const auto& [id, color] : {std::pair{"pred", "#1f5fd6"}, std::pair{"gt", "#1a9a3a"}})
    out << "<marker id=\"arrow-" << id << "\" markerWidth=\"8\" markerHeight=\"8\" refX=\"6\" refY=\"3\" "
        << "orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"" << color << "\"/></marker>\n";
  out << "</defs>\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << num(kCanvas) << "\" height=\"" << num(kCanvas)
      << "\" fill=\"white\" stroke=\"black\"/>\n";
  out << "<g id=\"axes\" stroke=\"#999999\" stroke-width=\"1\">\n";
  out << "<line x1=\"" << num(m.u(0)) << "\" y1=\"0.000\" x2=\"" << num(m.u(0)) << "\" y2=\"" << num(kCanvas)
      << "\"/>\n";
  out << "<line x1=\"0.000\" y1=\"" << num(m.v(0)) << "\" x2=\"" << num(kCanvas) << "\" y2=\"" << num(m.v(0))
      << "\"/>\n";
  out << "</g>\n";
  out << "<g id=\"points\">\n";
  for (const auto& scan : frame.scans)
    for (const auto& p : scan.points) {
      if (std::abs(p.pos.x()) > extent || std::abs(p.pos.y()) > extent) continue;
      out << "<circle cx=\"" << num(m.u(p.pos.y())) << "\" cy=\"" << num(m.v(p.pos.x()))
          << "\" r=\"2\" fill=\"" << vr_color(p.vr) << "\"/>\n";
    }
  out << "</g>\n<g id=\"ground-truth\">\n";
  for (const auto& b : gts) draw_box(out, m, b, "#1a9a3a", false, arrow_scale);
  out << "</g>\n<g id=\"predictions\">\n";
  for (const auto& b : preds) draw_box(out, m, b, "#1f5fd6", true, arrow_scale);
  out << "</g>\n</svg>\n";
  return out.str();
}

void plot_bev(const Frame& frame, const std::vector<OBB>& preds, const std::vector<OBB>& gts,
              const std::filesystem::path& path, double extent) {
  const std::string svg = plot_bev_svg(frame, preds, gts, extent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << svg;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace radarvel
