// lattrack: command-line driver for data generation, training, tracking and
// evaluation. Exit status: 0 success, 1 validation error, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "lattrack/config.hpp"
#include "lattrack/errors.hpp"
#include "lattrack/evaluator.hpp"
#include "lattrack/model.hpp"
#include "lattrack/pipeline.hpp"
#include "lattrack/runtime.hpp"
#include "lattrack/selfcheck.hpp"
#include "lattrack/trainer.hpp"

namespace fs = std::filesystem;
using namespace lattrack;

namespace {

struct Common {
  std::string config;
  std::optional<int> workers;
  std::optional<std::string> out_dir;
  std::optional<std::string> data_root;
};

RunConfig load_config(const Common& c) {
  json user = json::object();
  RunConfig cfg = c.config.empty() ? RunConfig::from_json(user) : RunConfig::load(c.config);
  if (c.workers) cfg.runtime.workers = *c.workers;
  if (c.out_dir) cfg.runtime.out_dir = *c.out_dir;
  if (c.data_root) cfg.data.root = *c.data_root;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "Run configuration (JSON); defaults apply to missing keys");
  app->add_option("--workers", c.workers, "Worker threads (runtime.workers)");
  app->add_option("--out-dir", c.out_dir, "Artifact directory (runtime.out_dir)");
  app->add_option("--data-root", c.data_root, "Dataset root (data.root)");
}

void need_file(const fs::path& p, const std::string& what) {
  require(fs::exists(p), ErrorKind::Config, what + " '" + p.string() + "' not found");
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(',', start);
    const auto item = s.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    if (!item.empty()) out.push_back(item);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c, const std::vector<std::string>& splits) {
  const auto cfg = load_config(c);
  std::vector<std::string> names = splits;
  if (names.empty())
    for (const auto& [n, s] : cfg.data.splits) names.push_back(n);
  for (const auto& n : names) {
    generate_split(cfg.data, n, cfg.data.root, cfg.hash(), cfg.runtime.workers);
    std::cout << "wrote split " << n << " (" << cfg.data.splits.at(n).count() << " sequences) to "
              << (fs::path(cfg.data.root) / n).string() << std::endl;
  }
  return 0;
}

int cmd_pretrain_codec(const Common& c, std::optional<int> steps, std::optional<std::string> out) {
  auto cfg = load_config(c);
  if (steps) cfg.codec.train.steps = *steps;
  cfg.validate();
  CodecReport rep;
  auto codec = pretrain_codec_from_config(cfg, &rep);
  const fs::path path = out ? fs::path(*out) : cfg.codec_path();
  save_codec_checkpoint(codec, cfg, rep, path);
  print_json({{"checkpoint", path.string()},
              {"holdout_psnr", rep.holdout_psnr},
              {"holdout_channel_std", rep.channel_std},
              {"latent_scale", codec->latent_scale()},
              {"final_loss", rep.losses.empty() ? 0.0 : rep.losses.back()}});
  return 0;
}

struct TrainFlags {
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, log, ckpt, codec, scope;
  bool rgb_only = false, no_zero_init = false, tune_unet = false;
};

void apply(TrainConfig& t, const TrainFlags& f) {
  if (f.steps) t.steps = *f.steps;
  if (f.seed) t.seed = *f.seed;
  if (f.scope) t.scope = *f.scope;
  if (f.rgb_only) t.rgb_only = true;
  if (f.no_zero_init) t.no_zero_init = true;
  if (f.tune_unet) t.tune_unet_stage2 = true;
}

TrainHooks progress_hooks(const std::optional<std::string>& log, int total) {
  TrainHooks h;
  if (log) h.log_path = *log;
  auto start = std::chrono::steady_clock::now();
  h.on_step = [start, total](int step, double loss) {
    if (step % 50 == 0 || step + 1 == total) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "step %5d/%d  loss %.4f  %.0fs\n", step, total, loss, s);
    }
  };
  return h;
}

int cmd_train_stage1(const Common& c, const TrainFlags& f) {
  auto cfg = load_config(c);
  apply(cfg.stage1, f);
  cfg.validate();
  const fs::path codec_path = f.codec ? fs::path(*f.codec) : cfg.codec_path();
  need_file(codec_path, "codec checkpoint (run pretrain-codec first)");
  auto codec = load_codec_checkpoint(codec_path);
  torch::set_num_threads(cfg.runtime.workers);
  auto model = Model::create(cfg.model, codec, cfg.stage1.seed);
  const fs::path root(cfg.data.root);
  const auto res = train_stage1(model, open_split(root, cfg.stage1.train_split), open_split(root, cfg.stage1.val_split),
                                cfg.stage1, progress_hooks(f.log, cfg.stage1.steps), cfg.runtime.workers);
  const fs::path out = f.out ? fs::path(*f.out) : cfg.stage1_path();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  model.save(out, {{"train", train_meta(cfg.stage1, res, cfg.hash())}, {"config_hash", cfg.hash()}});
  print_json({{"checkpoint", out.string()}, {"final_val_loss", res.final_val_loss}, {"val_losses", res.val_losses}});
  return 0;
}

int cmd_train_stage2(const Common& c, const TrainFlags& f) {
  auto cfg = load_config(c);
  apply(cfg.stage2, f);
  cfg.validate();
  const fs::path ckpt = f.ckpt ? fs::path(*f.ckpt) : cfg.stage1_path();
  need_file(ckpt, "stage-1 checkpoint (run train-stage1 first)");
  auto model = Model::load(ckpt);
  require(model.subs.empty(), ErrorKind::Config, "'" + ckpt.string() + "' already carries a sub-module; pass a stage-1 checkpoint");
  torch::set_num_threads(cfg.runtime.workers);
  const fs::path root(cfg.data.root);
  const auto res = train_stage2(model, open_split(root, cfg.stage2.train_split), open_split(root, cfg.stage2.val_split),
                                cfg.stage2, progress_hooks(f.log, cfg.stage2.effective_steps()), cfg.runtime.workers);
  const fs::path out = f.out ? fs::path(*f.out) : cfg.stage2_path(cfg.stage2.scope);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  model.save(out, {{"train", train_meta(cfg.stage2, res, cfg.hash())}, {"config_hash", cfg.hash()}, {"rgb_only", cfg.stage2.rgb_only}});
  print_json({{"checkpoint", out.string()}, {"final_val_loss", res.final_val_loss}, {"val_losses", res.val_losses}});
  return 0;
}

RunOptions caption_options(const std::string& caption_of, const SequenceRecord& rec) {
  RunOptions o;
  if (caption_of == "confuser") {
    require(rec.distractor_count() > 0, ErrorKind::Data, "sequence '" + rec.name() + "' has no distractor to name");
    o.caption = rec.meta().at("distractors").at(0).at("caption").get<std::string>();
  }
  return o;
}

int cmd_track(const Common& c, const std::string& mode_s, const std::string& ckpt, const std::string& split,
              std::optional<std::string> results, const std::string& caption_of) {
  const auto cfg = load_config(c);
  const TrackMode mode = track_mode_from_string(mode_s);
  require(caption_of == "target" || caption_of == "confuser", ErrorKind::Config, "--caption-of must be target or confuser");
  need_file(ckpt, "checkpoint");
  auto model = Model::load(ckpt);
  Tracker probe(model, mode);  // scope check before any work
  torch::set_num_threads(cfg.runtime.workers);
  const auto recs = open_split(cfg.data.root, split);
  const fs::path root = results ? fs::path(*results) : cfg.results_root() / split;
  for (const auto& rec : recs)
    write_results(run_sequence(rec, mode, model, caption_options(caption_of, rec)), root / to_string(mode) / (rec.name() + ".txt"));
  std::cout << "wrote " << recs.size() << " result files to " << (root / to_string(mode)).string() << std::endl;
  return 0;
}

std::map<std::string, EvalRun> load_runs(const RunConfig& cfg, const std::string& split, const fs::path& root,
                                         const std::vector<std::string>& modes, const std::string& against) {
  const auto recs = open_split(cfg.data.root, split);
  std::map<std::string, EvalRun> runs;
  for (const auto& m : modes) {
    track_mode_from_string(m);
    const fs::path dir = root / m;
    require(fs::is_directory(dir), ErrorKind::Config, "no results for mode '" + m + "' under '" + root.string() + "'");
    EvalRun run;
    for (const auto& rec : recs) {
      const auto r = read_results(dir / (rec.name() + ".txt"));
      if (against == "confuser") {
        require(rec.distractor_count() > 0, ErrorKind::Data, "sequence '" + rec.name() + "' has no distractor");
        run.push_back(make_sequence_run(rec.name(), r, rec.distractor_boxes(0), std::vector<bool>(rec.boxes().size(), true)));
      } else {
        run.push_back(make_sequence_run(rec.name(), r, rec.boxes(), rec.visible()));
      }
    }
    runs[m] = run;
  }
  return runs;
}

int cmd_eval(const Common& c, const std::string& split, std::optional<std::string> results, std::string modes_s,
             const std::string& against) {
  const auto cfg = load_config(c);
  const auto modes = modes_s.empty() ? cfg.eval.modes : split_list(modes_s);
  const fs::path root = results ? fs::path(*results) : cfg.results_root() / split;
  json out = json::object();
  for (const auto& [m, run] : load_runs(cfg, split, root, modes, against)) {
    const auto rep = oracle_check(run);
    auto j = evaluate(run, cfg.eval.precision_at).to_json();
    for (const char* k : {"success_curve", "precision_curve", "norm_precision_curve"}) j.erase(k);
    j["oracle_max_diff"] = rep.max_abs_diff;
    out[m] = j;
  }
  print_json(out);
  return 0;
}

int cmd_report(const Common& c, const std::string& split, std::optional<std::string> results, std::string modes_s,
               std::optional<std::string> out_dir, const std::string& against) {
  const auto cfg = load_config(c);
  const auto modes = modes_s.empty() ? cfg.eval.modes : split_list(modes_s);
  const fs::path root = results ? fs::path(*results) : cfg.results_root() / split;
  const fs::path out = out_dir ? fs::path(*out_dir) : cfg.report_dir() / split;
  emit_report(load_runs(cfg, split, root, modes, against), out, cfg.eval.precision_at);
  std::cout << "wrote report.json, summary.md and plots to " << out.string() << std::endl;
  return 0;
}

int cmd_selfcheck(std::uint64_t seed, bool quick) {
  torch::set_num_threads(1);
  const auto results = run_selfcheck(seed, quick);
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%-4s %-44s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    failed += r.passed ? 0 : 1;
  }
  std::printf("%d/%zu checks passed\n", static_cast<int>(results.size()) - failed, results.size());
  return failed == 0 ? 0 : 2;
}

int cmd_validate_config(const Common& c) {
  const auto cfg = load_config(c);
  print_json({{"valid", true}, {"hash", cfg.hash()}, {"config", cfg.to_json()}});
  return 0;
}

int cmd_inspect(const std::string& path, bool checksums) {
  need_file(path, "checkpoint");
  const auto ar = Archive::load(path);
  std::map<std::string, std::pair<int, std::int64_t>> families;
  json sums = json::object();
  for (const auto& name : ar.names_with_prefix("")) {
    const auto t = ar.get(name);
    const auto first = name.substr(0, name.find('.'));
    std::string fam = first;
    if (first == "sub") {
      const auto second = name.find('.', first.size() + 1);
      fam = name.substr(0, second);
    }
    families[fam].first += 1;
    families[fam].second += t.numel();
    if (checksums) {
      char buf[24];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(checksum(t)));
      sums[name] = buf;
    }
  }
  json fam = json::object();
  for (const auto& [k, v] : families) fam[k] = {{"arrays", v.first}, {"values", v.second}};
  json meta = ar.meta;
  json out = {{"path", path}, {"families", fam}, {"meta", meta}};
  if (checksums) out["checksums"] = sums;
  print_json(out);
  return 0;
}

const char* kModelKeys =
    "Config keys read: model.* (codec, unet, head, text, diffusion, crop, sub, window_weight)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lattrack: latent-diffusion UNet tracker with multi-modal sub-modules"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help of every subcommand");
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic multi-modal sequences");
  add_common(gen, common);
  std::vector<std::string> gen_splits;
  gen->add_option("--split", gen_splits, "Split(s) to generate (default: all in data.splits)");
  gen->footer("Config keys read: data.root, data.length, data.width, data.height, data.noise_std, "
              "data.splits.<name>.{seed, parts[].profile, parts[].count}, runtime.workers");

  auto* pc = app.add_subcommand("pretrain-codec", "Train, calibrate and freeze the latent codec");
  add_common(pc, common);
  std::optional<int> pc_steps;
  std::optional<std::string> pc_out;
  pc->add_option("--steps", pc_steps, "Training steps (train.codec.steps)");
  pc->add_option("--out", pc_out, "Checkpoint path (default <runtime.out_dir>/codec.ltar)");
  pc->footer("Config keys read: train.codec.{steps, batch_size, lr, patch, seed, split, crops, holdout_split, "
             "holdout_crops}, model.codec.{downsample, latent_channels, width}, model.crop.search_size, data.root");

  TrainFlags f1, f2;
  auto* s1 = app.add_subcommand("train-stage1", "Tune UNet self-attention, head and text encoder on RGB / RGB-N data");
  add_common(s1, common);
  s1->add_option("--steps", f1.steps, "Optimizer steps (train.stage1.steps)");
  s1->add_option("--seed", f1.seed, "Seed (train.stage1.seed)");
  s1->add_option("--codec", f1.codec, "Codec checkpoint (default <runtime.out_dir>/codec.ltar)");
  s1->add_option("--out", f1.out, "Checkpoint path (default <runtime.out_dir>/stage1.ltar)");
  s1->add_option("--log", f1.log, "JSON-lines training log");
  s1->footer(std::string(kModelKeys) +
             "; train.stage1.{batch_size, steps, lr_backbone, lr_head, floor_frac, weight_decay, giou_weight, l1_weight, "
             "seed, tune_text, caption_dropout, retarget_prob, center_jitter, scale_jitter, train_split, val_split, "
             "val_size, val_every, log_every}; data.root; runtime.{out_dir, workers}");

  auto* s2 = app.add_subcommand("train-stage2", "Clone and tune a multi-modal sub-module with the rest frozen");
  add_common(s2, common);
  s2->add_option("--scope", f2.scope, "depth | thermal | event | generalist (train.stage2.scope)")
      ->check(CLI::IsMember({"depth", "thermal", "event", "generalist"}));
  s2->add_option("--ckpt", f2.ckpt, "Stage-1 checkpoint (default <runtime.out_dir>/stage1.ltar)");
  s2->add_option("--steps", f2.steps, "Optimizer steps per modality (train.stage2.steps; the generalist runs steps x generalist_step_factor)");
  s2->add_option("--seed", f2.seed, "Seed (train.stage2.seed)");
  s2->add_option("--out", f2.out, "Checkpoint path (default <runtime.out_dir>/stage2_<scope>.ltar)");
  s2->add_option("--log", f2.log, "JSON-lines training log");
  s2->add_flag("--rgb-only", f2.rgb_only, "Skip the sub-module (train.stage2.rgb_only)");
  s2->add_flag("--no-zero-init", f2.no_zero_init, "Random injection-conv init (train.stage2.no_zero_init)");
  s2->add_flag("--tune-unet", f2.tune_unet, "Also tune every UNet parameter (train.stage2.tune_unet_stage2)");
  s2->footer("Config keys read: train.stage2.* (as stage1 plus scope, rgb_only, no_zero_init, tune_unet_stage2, generalist_step_factor), "
             "model.sub.ingest_rgb, data.root, runtime.{out_dir, workers}");

  auto* tr = app.add_subcommand("track", "Run the tracker over a split and write result files");
  add_common(tr, common);
  std::string mode, ckpt, split = "test", caption_of = "target";
  std::optional<std::string> results;
  tr->add_option("--mode", mode, "rgb | rgb+depth | rgb+thermal | rgb+event | rgb+language")->required();
  tr->add_option("--ckpt", ckpt, "Model checkpoint")->required();
  tr->add_option("--split", split, "Split to track (default test)");
  tr->add_option("--results", results, "Results root (default <runtime.out_dir>/results/<split>)");
  tr->add_option("--caption-of", caption_of, "Caption used in rgb+language mode: target | confuser");
  tr->footer("Config keys read: data.root, runtime.{out_dir, workers}; model settings come from the checkpoint");

  auto* ev = app.add_subcommand("eval", "Print metrics for result files (checked against the brute-force oracle)");
  add_common(ev, common);
  std::string modes, against = "target";
  std::optional<std::string> ev_results, rp_out;
  ev->add_option("--split", split, "Split the results belong to (default test)");
  ev->add_option("--results", ev_results, "Results root (default <runtime.out_dir>/results/<split>)");
  ev->add_option("--modes", modes, "Comma-separated modes (default eval.modes)");
  ev->add_option("--against", against, "Ground truth: target | confuser")->check(CLI::IsMember({"target", "confuser"}));
  ev->footer("Config keys read: eval.{precision_at, modes}, data.root, runtime.out_dir");

  auto* rp = app.add_subcommand("report", "Write report.json, summary.md and SVG plots");
  add_common(rp, common);
  rp->add_option("--split", split, "Split the results belong to (default test)");
  rp->add_option("--results", ev_results, "Results root (default <runtime.out_dir>/results/<split>)");
  rp->add_option("--modes", modes, "Comma-separated modes (default eval.modes)");
  rp->add_option("--out", rp_out, "Report directory (default <runtime.out_dir>/report/<split>)");
  rp->add_option("--against", against, "Ground truth: target | confuser")->check(CLI::IsMember({"target", "confuser"}));
  rp->footer("Config keys read: eval.{precision_at, modes}, data.root, runtime.out_dir");

  auto* sc = app.add_subcommand("selfcheck", "Run the invariant and property suite");
  std::uint64_t sc_seed = 0;
  bool sc_quick = false;
  sc->add_option("--seed", sc_seed, "Seed for randomized checks");
  sc->add_flag("--quick", sc_quick, "Fewer random instances");
  sc->footer("Reads no config keys; uses built-in defaults and a temporary directory");

  auto* vc = app.add_subcommand("validate-config", "Validate a run configuration and print it with defaults filled in");
  add_common(vc, common);
  vc->footer("Config keys read: all");

  auto* ic = app.add_subcommand("inspect-ckpt", "Summarize a checkpoint archive");
  std::string ic_path;
  bool ic_sums = false;
  ic->add_option("path", ic_path, "Checkpoint file")->required();
  ic->add_flag("--checksums", ic_sums, "Print per-array checksums");
  ic->footer("Reads no config keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, gen_splits);
    if (pc->parsed()) return cmd_pretrain_codec(common, pc_steps, pc_out);
    if (s1->parsed()) return cmd_train_stage1(common, f1);
    if (s2->parsed()) return cmd_train_stage2(common, f2);
    if (tr->parsed()) return cmd_track(common, mode, ckpt, split, results, caption_of);
    if (ev->parsed()) return cmd_eval(common, split, ev_results, modes, against);
    if (rp->parsed()) return cmd_report(common, split, ev_results, modes, rp_out, against);
    if (sc->parsed()) return cmd_selfcheck(sc_seed, sc_quick);
    if (vc->parsed()) return cmd_validate_config(common);
    if (ic->parsed()) return cmd_inspect(ic_path, ic_sums);
  } catch (const Error& e) {
    std::cerr << "lattrack: " << e.what() << std::endl;
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "lattrack: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
