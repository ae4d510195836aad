#include "lattrack/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "lattrack/errors.hpp"

namespace fs = std::filesystem;

namespace lattrack {

double iou(const PixelBox& a, const PixelBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<double> overlap_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(i / 20.0);
  return t;
}

std::vector<double> distance_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 50; ++i) t.push_back(i);
  return t;
}

std::vector<double> normalized_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(i / 200.0);
  return t;
}

namespace {

void check_run(const EvalRun& run) {
  require(!run.empty(), ErrorKind::Data, "empty evaluation run");
  for (const auto& s : run) {
    require(s.pred.size() == s.gt.size() && s.gt.size() == s.visible.size() && s.score.size() == s.pred.size(),
            ErrorKind::Data, "sequence '" + s.name + "': prediction and ground-truth lengths differ");
  }
}

double center_error(const PixelBox& p, const PixelBox& g) { return std::hypot(p.cx() - g.cx(), p.cy() - g.cy()); }

double normalized_error(const PixelBox& p, const PixelBox& g, const std::string& name, std::size_t k) {
  require(g.w > 0.0 && g.h > 0.0, ErrorKind::Data,
          "sequence '" + name + "': degenerate ground truth at frame " + std::to_string(k));
  return std::hypot((p.cx() - g.cx()) / g.w, (p.cy() - g.cy()) / g.h);
}

// Per-sequence values over visible frames k >= 1.
template <typename F>
std::vector<std::vector<double>> per_sequence(const EvalRun& run, F value) {
  std::vector<std::vector<double>> out;
  for (const auto& s : run) {
    std::vector<double> v;
    for (std::size_t k = 1; k < s.gt.size(); ++k)
      if (s.visible[k]) v.push_back(value(s, k));
    if (!v.empty()) out.push_back(std::move(v));
  }
  require(!out.empty(), ErrorKind::Data, "evaluation run has no visible frame after initialization");
  return out;
}

// Averages per-sequence curves computed from sorted values.
CurveResult sorted_curve(std::vector<std::vector<double>> seqs, const std::vector<double>& thr, bool at_least) {
  CurveResult r;
  r.thresholds = thr;
  r.curve.assign(thr.size(), 0.0);
  for (auto& v : seqs) {
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    for (std::size_t i = 0; i < thr.size(); ++i) {
      const double c = at_least ? static_cast<double>(v.end() - std::lower_bound(v.begin(), v.end(), thr[i]))
                                : static_cast<double>(std::upper_bound(v.begin(), v.end(), thr[i]) - v.begin());
      r.curve[i] += c / n;
    }
  }
  for (double& c : r.curve) c /= static_cast<double>(seqs.size());
  return r;
}

double curve_mean(const std::vector<double>& c) { return std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size()); }

double fraction_within(const std::vector<std::vector<double>>& seqs, double thr) {
  double acc = 0.0;
  for (const auto& v : seqs) {
    double c = 0.0;
    for (double d : v) c += d <= thr ? 1.0 : 0.0;
    acc += c / static_cast<double>(v.size());
  }
  return acc / static_cast<double>(seqs.size());
}

struct PooledFrame {
  double score;
  double iou;
  bool visible;
};

std::vector<PooledFrame> pooled(const EvalRun& run) {
  std::vector<PooledFrame> f;
  for (const auto& s : run)
    for (std::size_t k = 1; k < s.gt.size(); ++k)
      f.push_back({s.score[k], s.visible[k] ? iou(s.pred[k], s.gt[k]) : 0.0, static_cast<bool>(s.visible[k])});
  require(!f.empty(), ErrorKind::Data, "evaluation run has no frames after initialization");
  return f;
}

double fscore(double pr, double re) { return pr + re > 0.0 ? 2.0 * pr * re / (pr + re) : 0.0; }

void pick_best(PrReF& r) {
  const double best = *std::max_element(r.f_curve.begin(), r.f_curve.end());
  for (std::size_t i = 0; i < r.taus.size(); ++i)
    if (r.f_curve[i] >= best - 1e-12) {
      r.f = r.f_curve[i];
      r.pr = r.pr_curve[i];
      r.re = r.re_curve[i];
      r.tau = r.taus[i];
      return;
    }
}

}  // namespace

CurveResult success_auc(const EvalRun& run) {
  check_run(run);
  auto seqs = per_sequence(run, [](const SequenceRun& s, std::size_t k) { return iou(s.pred[k], s.gt[k]); });
  auto r = sorted_curve(std::move(seqs), overlap_thresholds(), true);
  r.value = curve_mean(r.curve);
  return r;
}

CurveResult precision(const EvalRun& run, double report_at) {
  check_run(run);
  auto seqs = per_sequence(run, [](const SequenceRun& s, std::size_t k) { return center_error(s.pred[k], s.gt[k]); });
  const double at = fraction_within(seqs, report_at);
  auto r = sorted_curve(std::move(seqs), distance_thresholds(), false);
  r.value = at;
  return r;
}

CurveResult norm_precision(const EvalRun& run) {
  check_run(run);
  auto seqs = per_sequence(run, [](const SequenceRun& s, std::size_t k) { return normalized_error(s.pred[k], s.gt[k], s.name, k); });
  auto r = sorted_curve(std::move(seqs), normalized_thresholds(), false);
  r.value = curve_mean(r.curve);
  return r;
}

PrReF pr_re_fscore(const EvalRun& run) {
  check_run(run);
  auto frames = pooled(run);
  double n_visible = 0.0;
  for (const auto& f : frames) n_visible += f.visible ? 1.0 : 0.0;
  std::sort(frames.begin(), frames.end(), [](const PooledFrame& a, const PooledFrame& b) { return a.score > b.score; });
  PrReF r;
  double sum = 0.0;
  std::size_t i = 0;
  while (i < frames.size()) {
    const double tau = frames[i].score;
    while (i < frames.size() && frames[i].score == tau) sum += frames[i++].iou;
    const double pr = sum / static_cast<double>(i);
    const double re = n_visible > 0.0 ? sum / n_visible : 0.0;
    r.taus.push_back(tau);
    r.pr_curve.push_back(pr);
    r.re_curve.push_back(re);
    r.f_curve.push_back(fscore(pr, re));
  }
  std::reverse(r.taus.begin(), r.taus.end());
  std::reverse(r.pr_curve.begin(), r.pr_curve.end());
  std::reverse(r.re_curve.begin(), r.re_curve.end());
  std::reverse(r.f_curve.begin(), r.f_curve.end());
  pick_best(r);
  return r;
}

double mean_iou(const EvalRun& run) {
  check_run(run);
  auto seqs = per_sequence(run, [](const SequenceRun& s, std::size_t k) { return iou(s.pred[k], s.gt[k]); });
  double acc = 0.0;
  for (const auto& v : seqs) acc += std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return acc / static_cast<double>(seqs.size());
}

namespace naive {

namespace {

template <typename Value, typename Pass>
CurveResult curve(const EvalRun& run, const std::vector<double>& thr, Value value, Pass pass) {
  CurveResult r;
  r.thresholds = thr;
  r.curve.assign(thr.size(), 0.0);
  int used = 0;
  for (const auto& s : run) {
    int n = 0;
    for (std::size_t k = 1; k < s.gt.size(); ++k) n += s.visible[k] ? 1 : 0;
    if (n == 0) continue;
    ++used;
    for (std::size_t i = 0; i < thr.size(); ++i) {
      int c = 0;
      for (std::size_t k = 1; k < s.gt.size(); ++k)
        if (s.visible[k] && pass(value(s, k), thr[i])) ++c;
      r.curve[i] += static_cast<double>(c) / n;
    }
  }
  require(used > 0, ErrorKind::Data, "evaluation run has no visible frame after initialization");
  for (double& c : r.curve) c /= used;
  return r;
}

}  // namespace

CurveResult success_auc(const EvalRun& run) {
  check_run(run);
  auto r = curve(run, overlap_thresholds(), [](const SequenceRun& s, std::size_t k) { return iou(s.pred[k], s.gt[k]); },
                 [](double v, double t) { return v >= t; });
  double acc = 0.0;
  for (double c : r.curve) acc += c;
  r.value = acc / static_cast<double>(r.curve.size());
  return r;
}

CurveResult precision(const EvalRun& run, double report_at) {
  check_run(run);
  auto value = [](const SequenceRun& s, std::size_t k) { return center_error(s.pred[k], s.gt[k]); };
  auto within = [](double v, double t) { return v <= t; };
  auto r = curve(run, distance_thresholds(), value, within);
  r.value = curve(run, {report_at}, value, within).curve[0];
  return r;
}

CurveResult norm_precision(const EvalRun& run) {
  check_run(run);
  auto r = curve(run, normalized_thresholds(),
                 [](const SequenceRun& s, std::size_t k) { return normalized_error(s.pred[k], s.gt[k], s.name, k); },
                 [](double v, double t) { return v <= t; });
  double acc = 0.0;
  for (double c : r.curve) acc += c;
  r.value = acc / static_cast<double>(r.curve.size());
  return r;
}

PrReF pr_re_fscore(const EvalRun& run) {
  check_run(run);
  std::set<double> scores;
  bool any = false;
  for (const auto& s : run)
    for (std::size_t k = 1; k < s.gt.size(); ++k) {
      scores.insert(s.score[k]);
      any = true;
    }
  require(any, ErrorKind::Data, "evaluation run has no frames after initialization");
  PrReF r;
  for (double tau : scores) {
    double sum = 0.0, sum_vis = 0.0, n = 0.0, n_vis = 0.0;
    for (const auto& s : run)
      for (std::size_t k = 1; k < s.gt.size(); ++k) {
        if (s.visible[k]) n_vis += 1.0;
        if (s.score[k] < tau) continue;
        n += 1.0;
        if (s.visible[k]) {
          const double v = iou(s.pred[k], s.gt[k]);
          sum += v;
          sum_vis += v;
        }
      }
    const double pr = sum / n;
    const double re = n_vis > 0.0 ? sum_vis / n_vis : 0.0;
    r.taus.push_back(tau);
    r.pr_curve.push_back(pr);
    r.re_curve.push_back(re);
    r.f_curve.push_back(fscore(pr, re));
  }
  pick_best(r);
  return r;
}

}  // namespace naive

namespace {

double max_diff(const std::vector<double>& a, const std::vector<double>& b, const std::string& what) {
  require(a.size() == b.size(), ErrorKind::Consistency, what + ": curve lengths differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double compare_all(const EvalRun& run, int* checks) {
  double m = 0.0;
  const auto sa = success_auc(run), sb = naive::success_auc(run);
  m = std::max({m, max_diff(sa.curve, sb.curve, "success"), std::abs(sa.value - sb.value)});
  const auto pa = precision(run), pb = naive::precision(run);
  m = std::max({m, max_diff(pa.curve, pb.curve, "precision"), std::abs(pa.value - pb.value)});
  const auto na = norm_precision(run), nb = naive::norm_precision(run);
  m = std::max({m, max_diff(na.curve, nb.curve, "normalized precision"), std::abs(na.value - nb.value)});
  const auto fa = pr_re_fscore(run), fb = naive::pr_re_fscore(run);
  m = std::max({m, max_diff(fa.taus, fb.taus, "pr/re thresholds"), max_diff(fa.pr_curve, fb.pr_curve, "precision (Pr)"),
                max_diff(fa.re_curve, fb.re_curve, "recall"), max_diff(fa.f_curve, fb.f_curve, "F-score"),
                std::abs(fa.f - fb.f), std::abs(fa.pr - fb.pr), std::abs(fa.re - fb.re), std::abs(fa.tau - fb.tau)});
  *checks += 4;
  return m;
}

}  // namespace

OracleReport oracle_check(const EvalRun& run, double tol) {
  OracleReport rep;
  rep.max_abs_diff = compare_all(run, &rep.checks);
  if (rep.max_abs_diff <= tol) return rep;
  for (const auto& s : run) {
    int dummy = 0;
    bool has_frames = false;
    for (std::size_t k = 1; k < s.visible.size(); ++k) has_frames = has_frames || s.visible[k];
    if (!has_frames) continue;
    const double d = compare_all({s}, &dummy);
    if (d > tol)
      fail(ErrorKind::Consistency, "metric oracle disagreement " + std::to_string(d) + " in sequence '" + s.name + "'");
  }
  fail(ErrorKind::Consistency, "metric oracle disagreement " + std::to_string(rep.max_abs_diff) + " in pooled metrics");
}

SequenceRun make_sequence_run(const std::string& name, const TrackRecord& r, const std::vector<PixelBox>& gt,
                              const std::vector<bool>& visible) {
  require(r.boxes.size() == gt.size(), ErrorKind::Data,
          "sequence '" + name + "': " + std::to_string(r.boxes.size()) + " predictions for " + std::to_string(gt.size()) + " frames");
  return {name, r.boxes, r.scores, gt, visible};
}

EvalRun load_run(const std::vector<SequenceRecord>& records, const fs::path& results_dir) {
  EvalRun run;
  for (const auto& rec : records)
    run.push_back(make_sequence_run(rec.name(), read_results(results_dir / (rec.name() + ".txt")), rec.boxes(), rec.visible()));
  return run;
}

json ModeMetrics::to_json() const {
  return {{"auc", success.value},
          {"precision", prec.value},
          {"norm_precision", norm_prec.value},
          {"pr", prf.pr},
          {"re", prf.re},
          {"f", prf.f},
          {"tau", prf.tau},
          {"mean_iou", miou},
          {"sequences", sequences},
          {"success_curve", success.curve},
          {"precision_curve", prec.curve},
          {"norm_precision_curve", norm_prec.curve}};
}

ModeMetrics evaluate(const EvalRun& run, double precision_at) {
  ModeMetrics m;
  m.success = success_auc(run);
  m.prec = precision(run, precision_at);
  m.norm_prec = norm_precision(run);
  m.prf = pr_re_fscore(run);
  m.miou = mean_iou(run);
  m.sequences = static_cast<int>(run.size());
  return m;
}

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

struct Series {
  std::string label;
  std::vector<double> x, y;
};

void write_svg(const fs::path& path, const std::string& title, const std::string& xlabel, const std::string& ylabel,
               double xmax, const std::vector<Series>& series) {
  const double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + pw * x / xmax; };
  auto py = [&](double y) { return T + ph * (1.0 - y); };
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" viewBox=\"0 0 480 360\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"480\" height=\"360\" fill=\"white\"/>\n";
  out << "<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  out << "<rect x=\"" << fmt(L) << "\" y=\"" << fmt(T) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmax * i / 5.0, fy = i / 5.0;
    out << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(T + ph + 16) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << fmt(fx) << "</text>\n";
    out << "<text x=\"" << fmt(L - 6) << "\" y=\"" << fmt(py(fy) + 3) << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << fmt(fy) << "</text>\n";
  }
  out << "<text x=\"" << fmt(L + pw / 2) << "\" y=\"" << fmt(H - 12) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << xlabel << "</text>\n";
  out << "<text x=\"14\" y=\"" << fmt(T + ph / 2) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 "
      << fmt(T + ph / 2) << ")\">" << ylabel << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % (sizeof kColors / sizeof *kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      out << (i ? " " : "") << fmt(px(series[s].x[i])) << "," << fmt(py(std::clamp(series[s].y[i], 0.0, 1.0)));
    out << "\"/>\n";
    const double ly = T + 14 + 14.0 * static_cast<double>(s);
    out << "<line x1=\"" << fmt(L + pw - 130) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(L + pw - 110) << "\" y2=\"" << fmt(ly)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << fmt(L + pw - 105) << "\" y=\"" << fmt(ly + 4) << "\" font-family=\"sans-serif\" font-size=\"10\">"
        << series[s].label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void emit_report(const std::map<std::string, EvalRun>& runs_by_mode, const fs::path& out_dir, double precision_at) {
  require(!runs_by_mode.empty(), ErrorKind::Data, "no runs to report");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec && fs::is_directory(out_dir), ErrorKind::Io, "cannot create report directory '" + out_dir.string() + "'");

  json report = json::object();
  std::vector<Series> succ, prec, fsc;
  std::string md = "| mode | sequences | AUC | P@" + fmt(precision_at) + " | P_norm | Pr | Re | F | mean IoU |\n";
  md += "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [mode, run] : runs_by_mode) {
    const auto m = evaluate(run, precision_at);
    report[mode] = m.to_json();
    const std::string label = mode + " (" + fmt(m.success.value) + ")";
    succ.push_back({label, m.success.thresholds, m.success.curve});
    prec.push_back({mode + " (" + fmt(m.prec.value) + ")", m.prec.thresholds, m.prec.curve});
    fsc.push_back({mode + " (" + fmt(m.prf.f) + ")", m.prf.taus, m.prf.f_curve});
    md += "| " + mode + " | " + std::to_string(m.sequences) + " | " + fmt(m.success.value) + " | " + fmt(m.prec.value) + " | " +
          fmt(m.norm_prec.value) + " | " + fmt(m.prf.pr) + " | " + fmt(m.prf.re) + " | " + fmt(m.prf.f) + " | " + fmt(m.miou) + " |\n";
  }
  std::ofstream rj(out_dir / "report.json");
  require(static_cast<bool>(rj), ErrorKind::Io, "cannot write report.json");
  rj << report.dump(2) << '\n';
  std::ofstream sm(out_dir / "summary.md");
  require(static_cast<bool>(sm), ErrorKind::Io, "cannot write summary.md");
  sm << md;
  write_svg(out_dir / "success.svg", "Success plot", "Overlap threshold", "Success rate", 1.0, succ);
  write_svg(out_dir / "precision.svg", "Precision plot", "Location error threshold (px)", "Precision", 50.0, prec);
  write_svg(out_dir / "fscore.svg", "F-score vs confidence threshold", "Confidence threshold", "F-score", 1.0, fsc);
}

}  // namespace lattrack
