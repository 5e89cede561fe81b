// Command-line front end: synth, attack, train, infer, eval, tune-threshold,
// gradcheck and report.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aadf/harness.hpp"
#include "aadf/random.hpp"

using namespace aadf;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : RunConfig::load(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.outDir = g.out;
  cfg.validate();
  return cfg;
}

std::optional<FaceBox> parse_box(const std::string& s) {
  if (s.empty()) return std::nullopt;
  FaceBox b;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf,%lf", &b.x0, &b.y0, &b.x1, &b.y1) != 4)
    throw FormatError("box must be x0,y0,x1,y1");
  return b;
}

std::map<std::string, std::vector<PredictionRecord>> by_split(const std::vector<EvalRecord>& recs) {
  std::map<std::string, std::vector<PredictionRecord>> out;
  for (const auto& r : recs) out[r.pred.split].push_back(r.pred);
  return out;
}

void print_summary(const EvalReport& r) {
  std::printf("tau* = %.6f\n", r.tau.tau);
  std::printf("%-10s %7s %7s %7s %7s %7s %7s %5s %5s %5s %5s\n", "split", "AUC", "ECE", "NLL", "AURC", "ACC", "EER",
              "tn", "fp", "fn", "tp");
  for (auto s : kSplits) {
    const auto it = r.splits.find(std::string(s));
    if (it == r.splits.end()) continue;
    const SplitMetrics& m = it->second;
    std::printf("%-10s %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f %5ld %5ld %5ld %5ld\n", std::string(s).c_str(),
                m.rank ? m.rank->auc : -1.0, m.calib.ece, m.calib.nll, m.selective.aurc, m.operating.acc,
                m.operating.eer.value_or(-1.0), m.operating.counts.tn, m.operating.counts.fp, m.operating.counts.fn,
                m.operating.counts.tp);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attack-aware forgery detection toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seedValue = 0;
  auto* seedOpt = app.add_option("--seed", seedValue, "global seed (overrides the config)");
  app.add_option("--config", g.config, "RunConfig key=value file");
  app.add_option("--out", g.out, "output directory or file");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic paired corpus");
  int synthCount = 500, synthSize = 256;
  double trainFraction = 0.8, valFraction = 0.0;
  synth->add_option("--count", synthCount, "number of images (even)");
  synth->add_option("--size", synthSize, "image side in pixels");
  synth->add_option("--train-fraction", trainFraction);
  synth->add_option("--val-fraction", valFraction);

  // attack
  auto* attack = app.add_subcommand("attack", "apply one attack to an image");
  std::string attackIn, attackOut, attackFamily, attackRecord, attackBox;
  bool attackCanvas = false;
  attack->add_option("--input", attackIn)->required();
  attack->add_option("--output", attackOut)->required();
  attack->add_option("--family", attackFamily, "JPEG, WARP, REGRAIN, SEAM, GAMMA or TRANSCODE");
  attack->add_option("--record", attackRecord, "serialized attack instance");
  attack->add_option("--box", attackBox, "face box x0,y0,x1,y1 (SEAM)");
  attack->add_flag("--canvas", attackCanvas, "resize to the working canvas first");

  // train
  auto* trainCmd = app.add_subcommand("train", "red-team training");
  std::string trainManifest;
  bool cleanOnly = false;
  trainCmd->add_option("--manifest", trainManifest)->required();
  trainCmd->add_flag("--clean-only", cleanOnly, "baseline without attacked views");
  std::optional<bool> lossAtWorkingRes;
  trainCmd->add_option("--loss-at-working-res", lossAtWorkingRes,
                       "mask losses on the upsampled map (true) or on the G x G logits (false)");

  // infer
  auto* infer = app.add_subcommand("infer", "defended prediction for one image");
  std::string inferParams, inferIn, inferOverlay;
  infer->add_option("--params", inferParams)->required();
  infer->add_option("--input", inferIn)->required();
  infer->add_option("--overlay", inferOverlay, "write an evidence overlay PNG");

  // eval
  auto* evalCmd = app.add_subcommand("eval", "evaluate on the test split");
  std::string evalManifest, evalParams;
  evalCmd->add_option("--manifest", evalManifest)->required();
  evalCmd->add_option("--params", evalParams)->required();

  // tune-threshold
  auto* tune = app.add_subcommand("tune-threshold", "max-min operating point from predictions");
  std::string tunePred;
  tune->add_option("--predictions", tunePred)->required();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  int gcTrials = 3, gcSeeds = 5;
  bool gcLinear = false;
  gradcheck->add_option("--trials", gcTrials);
  gradcheck->add_option("--seeds", gcSeeds);
  gradcheck->add_flag("--linear-only", gcLinear, "classification loss only");

  // report
  auto* report = app.add_subcommand("report", "recompute reports from a predictions CSV");
  std::string reportPred;
  std::optional<double> reportTau;
  report->add_option("--predictions", reportPred)->required();
  report->add_option("--tau", reportTau, "fixed threshold instead of tuning");

  CLI11_PARSE(app, argc, argv);
  if (seedOpt->count()) g.seed = seedValue;

  try {
    if (synth->parsed()) {
      const std::string dir = g.out.empty() ? "synth" : g.out;
      SynthOptions opt;
      opt.size = synthSize;
      opt.trainFraction = trainFraction;
      opt.valFraction = valFraction;
      const Manifest m = gen_synth(synthCount, g.seed.value_or(0), dir, opt);
      std::printf("wrote %zu images and %s/manifest.jsonl\n", m.entries.size(), dir.c_str());
    } else if (attack->parsed()) {
      RunConfig cfg = resolve_config(g);
      AttackInstance inst;
      if (!attackRecord.empty())
        inst = parse_attack(attackRecord);
      else if (!attackFamily.empty())
        inst = sample_attack(parse_family(attackFamily), cfg.seed);
      else
        throw PreconditionError("attack: give --family or --record");
      Image img = load_image(attackIn);
      const int srcRows = img.rows, srcCols = img.cols;
      if (attackCanvas) img = to_canvas(img, cfg.workingSize);
      Grid prior(img.rows, img.cols, 0.0);
      if (const auto box = parse_box(attackBox)) {
        const int side = std::max(img.rows, img.cols);
        if (!attackCanvas && img.rows != img.cols)
          throw PreconditionError("attack: --box on a non-square image needs --canvas");
        prior = build_prior(*box, srcRows, srcCols, side).grid;
      }
      save_image(apply_attack(img, inst, &prior), attackOut);
      std::printf("%s\n", serialize(inst).c_str());
    } else if (trainCmd->parsed()) {
      RunConfig cfg = resolve_config(g);
      if (cleanOnly) cfg.train.cleanOnly = true;
      if (lossAtWorkingRes) cfg.loss.lossAtWorkingRes = *lossAtWorkingRes;
      const Manifest m = load_manifest(trainManifest);
      const TrainResult r = run_train(m, cfg, cfg.outDir);
      std::printf("trained %zu steps; checkpoint %s/params.bin\n", r.log.size(), cfg.outDir.c_str());
    } else if (infer->parsed()) {
      const RunConfig cfg = resolve_config(g);
      const DetectorParams p = load_params(inferParams);
      const Image x = to_canvas(load_image(inferIn), cfg.workingSize);
      DefenseConfig dc = cfg.defense;
      dc.seed = defense_seed(cfg, inferIn);
      const DefendedPrediction d = ttd_predict(x, p, dc, cfg.workingSize);
      nlohmann::ordered_json j;
      j["probability"] = d.probability;
      j["mean_logit"] = d.meanLogit;
      j["per_view_logits"] = d.perViewLogits;
      j["mean_evidence"] = d.evidence.mean();
      std::printf("%s\n", j.dump().c_str());
      if (!inferOverlay.empty()) render_overlay(x, d.evidence, inferOverlay);
    } else if (evalCmd->parsed()) {
      const RunConfig cfg = resolve_config(g);
      const Manifest m = load_manifest(evalManifest);
      const DetectorParams p = load_params(evalParams);
      const EvalReport r = run_eval(m, p, cfg, cfg.outDir);
      print_summary(r);
    } else if (tune->parsed()) {
      const auto recs = parse_predictions_csv(read_text(tunePred));
      const TauResult t = tune_tau(by_split(recs));
      nlohmann::ordered_json j;
      j["tau_star"] = t.tau;
      j["worst_case_acc"] = t.worstAcc;
      j["per_split_acc"] = t.perSplitAcc;
      std::printf("%s\n", j.dump(2).c_str());
      if (!g.out.empty()) write_text(g.out, j.dump(2) + "\n");
    } else if (gradcheck->parsed()) {
      const RunConfig cfg = resolve_config(g);
      LossWeights w = cfg.loss;
      if (gcLinear) w.lambdaMask = w.gammaClean = w.lambdaEdge = w.lambdaSize = w.lambdaCons = 0.0;
      double worst = 0.0;
      for (int s = 0; s < gcSeeds; ++s) {
        const std::uint64_t seed = splitmix64(cfg.seed + static_cast<std::uint64_t>(s));
        const GradCheckCase gc = make_gradcheck_case(seed);
        const GradCheckResult r = grad_check(gc.sample, gc.params, w, gcTrials, seed);
        std::printf("seed %d: max rel error %.3e (%d checked, %d skipped)\n", s, r.maxRelError, r.checked, r.skipped);
        worst = std::max(worst, r.maxRelError);
      }
      std::printf("worst %.3e\n", worst);
    } else if (report->parsed()) {
      const RunConfig cfg = resolve_config(g);
      const EvalReport r = build_report(parse_predictions_csv(read_text(reportPred)), cfg, reportTau);
      if (!g.out.empty()) write_report(r, cfg, g.out);
      print_summary(r);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
