#pragma once

// One-pass-evaluation metrics. Frame 0 (initialization) never counts.
// Success, precision and normalized precision skip frames whose target is
// invisible and average per sequence; Pr/Re/F pool every frame of the run.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lattrack/runtime.hpp"
#include "lattrack/synth.hpp"

namespace lattrack {

struct SequenceRun {
  std::string name;
  std::vector<PixelBox> pred;
  std::vector<double> score;
  std::vector<PixelBox> gt;
  std::vector<bool> visible;
};

using EvalRun = std::vector<SequenceRun>;

double iou(const PixelBox& a, const PixelBox& b);

struct CurveResult {
  std::vector<double> thresholds;
  std::vector<double> curve;
  double value = 0.0;  // AUC, precision at the report threshold, or curve mean
};

struct PrReF {
  double pr = 0.0;
  double re = 0.0;
  double f = 0.0;
  double tau = 0.0;
  std::vector<double> taus;  // ascending unique scores
  std::vector<double> pr_curve, re_curve, f_curve;
};

std::vector<double> overlap_thresholds();     // 0.00 .. 1.00 step 0.05
std::vector<double> distance_thresholds();    // 0 .. 50 px step 1
std::vector<double> normalized_thresholds();  // 0 .. 0.5 step 0.005

CurveResult success_auc(const EvalRun& run);
CurveResult precision(const EvalRun& run, double report_at = 20.0);
CurveResult norm_precision(const EvalRun& run);
PrReF pr_re_fscore(const EvalRun& run);
/// Per-sequence mean IoU over visible frames k >= 1, averaged over sequences.
double mean_iou(const EvalRun& run);

/// Brute-force double-loop recomputations used as oracles.
namespace naive {
CurveResult success_auc(const EvalRun& run);
CurveResult precision(const EvalRun& run, double report_at = 20.0);
CurveResult norm_precision(const EvalRun& run);
PrReF pr_re_fscore(const EvalRun& run);
}  // namespace naive

struct OracleReport {
  double max_abs_diff = 0.0;
  int checks = 0;
};

/// Recomputes every metric with the naive path and raises a consistency
/// error naming the metric (and sequence, where applicable) on disagreement.
OracleReport oracle_check(const EvalRun& run, double tol = 1e-9);

/// Pairs result files with the split's ground truth.
EvalRun load_run(const std::vector<SequenceRecord>& records, const std::filesystem::path& results_dir);
/// Same, with explicit ground truth (e.g. a distractor's boxes).
SequenceRun make_sequence_run(const std::string& name, const TrackRecord& r, const std::vector<PixelBox>& gt,
                              const std::vector<bool>& visible);

struct ModeMetrics {
  CurveResult success;
  CurveResult prec;
  CurveResult norm_prec;
  PrReF prf;
  double miou = 0.0;
  int sequences = 0;
  json to_json() const;
};

ModeMetrics evaluate(const EvalRun& run, double precision_at = 20.0);

/// report.json, summary.md, success.svg, precision.svg and fscore.svg.
void emit_report(const std::map<std::string, EvalRun>& runs_by_mode, const std::filesystem::path& out_dir,
                 double precision_at = 20.0);

}  // namespace lattrack
