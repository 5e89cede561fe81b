// Acceptance gates. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aadf/harness.hpp"
#include "aadf/random.hpp"
#include "reference_counts.hpp"

using namespace aadf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmtd(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1 ----

Outcome reference_operating_point() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 1.0;
  std::string detail;
  for (const auto& s : testing::kReferenceCounts) {
    const auto recs = testing::records_from_counts(s.split, s.counts);
    const OperatingMetrics m = operating_metrics(recs, 0.5);
    const double expect = static_cast<double>(s.counts.tn + s.counts.tp) / static_cast<double>(s.counts.total());
    ok = ok && m.counts == s.counts && m.acc == expect;
    worst = std::min(worst, m.acc);
    detail += std::string(s.split) + "=" + fmtd("%.4f", m.acc) + " ";
  }
  const double rounded = std::round(worst * 1e4) / 1e4;
  const double dt = seconds_since(t0);
  ok = ok && rounded == testing::kReferenceWorstAcc && dt < 1.0;
  return {ok, detail + "worst=" + fmtd("%.4f", rounded) + " time=" + fmtd("%.3fs", dt)};
}

// ---- 2 ----

PredictionRecord rec(int i, double p, int y) {
  PredictionRecord r;
  char id[16];
  std::snprintf(id, sizeof id, "r%04d", i);
  r.id = id;
  r.p = p;
  r.y = y;
  return r;
}

Outcome metric_oracles() {
  Rng rng(2024);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 1000; ++i) {
    const int y = rng.uniform() < 0.4 ? 1 : 0;
    double p = 1.0 / (1.0 + std::exp(-((y ? 0.8 : -0.8) + 1.2 * rng.normal())));
    if (i % 3 == 0) p = std::round(p * 50) / 50;  // a share of tied scores
    recs.push_back(rec(i, p, y));
  }

  // AUC against the exhaustive pairwise count.
  double wins = 0;
  long pairs = 0;
  for (const auto& a : recs)
    for (const auto& b : recs)
      if (a.y == 1 && b.y == 0) {
        wins += a.p > b.p ? 1.0 : (a.p == b.p ? 0.5 : 0.0);
        ++pairs;
      }
  const double aucErr = std::abs(rank_metrics(recs).auc - wins / pairs);

  // Hand-binned calibration fixture: 12 records, 3 bins of 4.
  const double ps[12] = {0.9, 0.8, 0.3, 0.6, 0.55, 0.1, 0.95, 0.7, 0.4, 0.2, 0.65, 0.85};
  const int ys[12] = {1, 0, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1};
  std::vector<PredictionRecord> fixture;
  for (int i = 0; i < 12; ++i) fixture.push_back(rec(i, ps[i], ys[i]));
  const CalibMetrics c = calib_metrics(fixture, 3);
  // bins {.55 .6 .6 .65}, {.7 .7 .8 .8}, {.85 .9 .9 .95}; accuracies 1/4, 3/4, 1
  const double ece = (std::abs(0.25 - 0.6) + std::abs(0.75 - 0.75) + std::abs(1.0 - 0.9)) / 3.0;
  double brier = 0, nll = 0;
  for (int i = 0; i < 12; ++i) {
    brier += (ps[i] - ys[i]) * (ps[i] - ys[i]);
    nll -= ys[i] ? std::log(ps[i]) : std::log(1.0 - ps[i]);
  }
  brier /= 12;
  nll /= 12;
  const bool calibOk = std::abs(c.ece - ece) <= 1e-15 && c.brier == brier && std::abs(c.nll - nll) <= 1e-15 &&
                       std::abs(c.ece - 0.15) <= 1e-15;

  // Selective risk against a prefix-sum oracle.
  std::vector<size_t> order(recs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const double ca = std::max(recs[a].p, 1 - recs[a].p), cb = std::max(recs[b].p, 1 - recs[b].p);
    return ca != cb ? ca > cb : recs[a].id < recs[b].id;
  });
  std::vector<long> prefix(recs.size() + 1, 0);
  for (size_t k = 0; k < order.size(); ++k) {
    const auto& r = recs[order[k]];
    prefix[k + 1] = prefix[k] + (((r.p >= 0.5) ? 1 : 0) != r.y ? 1 : 0);
  }
  double aurc = 0;
  for (size_t k = 1; k <= recs.size(); ++k) aurc += static_cast<double>(prefix[k]) / k;
  aurc /= recs.size();
  const double aurcErr = std::abs(selective_metrics(recs).aurc - aurc);

  const bool ok = aucErr <= 1e-12 && calibOk && aurcErr <= 1e-12;
  return {ok, "auc_err=" + fmtd("%.2e", aucErr) + " ece=" + fmtd("%.17g", c.ece) + " brier=" +
                  fmtd("%.17g", c.brier) + " aurc_err=" + fmtd("%.2e", aurcErr)};
}

// ---- 3 ----

Outcome gradient_gate() {
  const auto t0 = Clock::now();
  double full = 0, linear = 0;
  LossWeights lin;
  lin.lambdaMask = lin.gammaClean = lin.lambdaEdge = lin.lambdaSize = lin.lambdaCons = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::uint64_t seed = splitmix64(s);
    const GradCheckCase gc = make_gradcheck_case(seed, 64, 32);
    full = std::max(full, grad_check(gc.sample, gc.params, LossWeights{}, 3, seed).maxRelError);
    linear = std::max(linear, grad_check(gc.sample, gc.params, lin, 3, seed).maxRelError);
  }
  const double dt = seconds_since(t0);
  return {full <= 1e-4 && linear <= 1e-7 && dt < 30.0,
          "full=" + fmtd("%.2e", full) + " linear=" + fmtd("%.2e", linear) + " time=" + fmtd("%.1fs", dt)};
}

// ---- 4 ----

constexpr int kSmallWs = 64;

Image random_canvas(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size);
  for (double& v : img.data) v = rng.uniform();
  return gaussian_blur(img, 1.5);
}

DetectorParams random_params(std::uint64_t seed, int grid, int hidden) {
  DetectorParams p = DetectorParams::initialize(seed, grid, hidden);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (double& v : p.gateLogits) v = rng.uniform(-1, 1);
  for (double& v : p.clsWeights) v = rng.uniform(-1, 1);
  for (double& v : p.maskWeights) v = rng.uniform(-1, 1);
  p.clsBias = rng.uniform(-0.5, 0.5);
  return p;
}

Outcome worst_of_k_exactness() {
  int exact = 0;
  for (int t = 0; t < 100; ++t) {
    Rng rng(splitmix64(1000 + t));
    const Image x = random_canvas(kSmallWs, rng.next_u64());
    const DetectorParams p = random_params(rng.next_u64(), 8, 4);
    const double x0 = rng.uniform(0, 24), y0 = rng.uniform(0, 24);
    const Grid prior = build_prior({x0, y0, x0 + rng.uniform(16, 40), y0 + rng.uniform(16, 40)}, kSmallWs, kSmallWs,
                                   kSmallWs)
                           .grid;
    const int y = t % 2;
    const auto cands = sample_candidates(rng.next_u64(), "w" + std::to_string(t), 0, 3);
    const WorstOfK w = select_worst_of_k(x, y, p, cands, &prior, kSmallWs);
    double best = -1;
    for (const auto& c : cands) {
      const Image xt = apply_attack(x, c, &prior);
      const double l = loss_cls(forward(extract_features(pi_preprocess(xt, kSmallWs), p.grid), p, false).logit, y).value;
      best = std::max(best, l);
    }
    const double chosen = loss_cls(
        forward(extract_features(pi_preprocess(apply_attack(x, cands[w.chosen], &prior), kSmallWs), p.grid), p, false)
            .logit,
        y).value;
    exact += chosen == best ? 1 : 0;
  }
  return {exact == 100, std::to_string(exact) + "/100 exact"};
}

// ---- 5 ----

Outcome defense_contracts() {
  const Image x = random_canvas(kSmallWs, 55);
  const DetectorParams p = random_params(56, 8, 4);
  double meanErr = 0;
  bool dominates = true, permOk = true;
  for (int N : {1, 2, 3, 5}) {
    DefenseConfig cfg;
    cfg.N = N;
    cfg.seed = 300 + N;
    const DefendedPrediction d = ttd_predict(x, p, cfg, kSmallWs);
    double mean = 0;
    for (double s : d.perViewLogits) mean += s;
    mean /= N;
    meanErr = std::max(meanErr, std::abs(d.meanLogit - mean));
    for (const Grid& e : d.perViewEvidence)
      for (size_t i = 0; i < e.size(); ++i) dominates = dominates && d.evidence.data[i] >= e.data[i];

    std::vector<Jitter> js;
    for (int v = 0; v < N; ++v) js.push_back(sample_jitter(cfg, v));
    const DefendedPrediction a = ttd_predict_views(x, p, js, kSmallWs);
    std::reverse(js.begin(), js.end());
    const DefendedPrediction b = ttd_predict_views(x, p, js, kSmallWs);
    permOk = permOk && a.meanLogit == b.meanLogit && a.probability == b.probability && a.evidence == b.evidence;
  }
  return {meanErr <= 1e-12 && dominates && permOk,
          "mean_err=" + fmtd("%.2e", meanErr) + " dominance=" + (dominates ? "yes" : "no") +
              " permutation=" + (permOk ? "bit-identical" : "differs")};
}

// ---- 6 ----

Outcome attack_sanity() {
  const Image x = random_canvas(kSmallWs, 66);
  const Grid prior = build_prior({16, 16, 48, 48}, kSmallWs, kSmallWs, kSmallWs).grid;
  bool det = true;
  for (AttackFamily f : kAllFamilies) {
    const AttackInstance a = sample_attack(f, 99), b = sample_attack(f, 99);
    det = det && a == b && apply_attack(x, a, &prior) == apply_attack(x, b, &prior);
  }
  AttackInstance id = sample_attack(AttackFamily::GAMMA, 1);
  id.params = GammaAttack{1.0, {1.0, 1.0, 1.0}};
  const bool gammaId = apply_attack(x, id, &prior) == x;
  const double q100 = psnr(x, jpeg_sim(x, {100, false}));
  // Annex K luminance table, row-major.
  const int annexK[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                          14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                          18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                          49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  const QuantTable q50 = luma_quant_table(50);
  const bool table = std::equal(q50.begin(), q50.end(), annexK);
  return {det && gammaId && q100 >= 50.0 && table,
          std::string("determinism=") + (det ? "ok" : "fail") + " gamma_identity=" + (gammaId ? "ok" : "fail") +
              " psnr_q100=" + fmtd("%.2fdB", q100) + " annex_k=" + (table ? "ok" : "fail")};
}

// ---- 7, 8, 9 ----

constexpr std::uint64_t kRunSeed = 7;

struct DeskRun {
  fs::path dir;
  EvalReport redTeam, baseline;
  double seconds = 0;
};

DeskRun desk_run(const fs::path& dir) {
  fs::remove_all(dir);
  DeskRun r;
  r.dir = dir;
  const auto t0 = Clock::now();
  const Manifest m = gen_synth(500, kRunSeed, dir / "data");
  RunConfig cfg;
  cfg.seed = kRunSeed;
  RunConfig base = cfg;
  base.train.cleanOnly = true;
  std::fprintf(stderr, "  [%s] corpus %.0fs\n", dir.filename().c_str(), seconds_since(t0));
  const TrainResult red = run_train(m, cfg, dir / "redteam" / "train");
  std::fprintf(stderr, "  [%s] red-team training %.0fs\n", dir.filename().c_str(), seconds_since(t0));
  const TrainResult clean = run_train(m, base, dir / "baseline" / "train");
  std::fprintf(stderr, "  [%s] baseline training %.0fs\n", dir.filename().c_str(), seconds_since(t0));
  r.redTeam = run_eval(m, red.params, cfg, dir / "redteam" / "eval");
  r.baseline = run_eval(m, clean.params, base, dir / "baseline" / "eval");
  r.seconds = seconds_since(t0);
  std::fprintf(stderr, "  [%s] evaluation done %.0fs\n", dir.filename().c_str(), r.seconds);
  return r;
}

Outcome end_to_end(const DeskRun& r) {
  const SplitMetrics& clean = r.redTeam.splits.at("clean");
  const double auc = clean.rank ? clean.rank->auc : 0.0;
  const double cleanAcc = clean.operating.acc;
  const double worst = r.redTeam.tau.worstAcc;
  const double regrain = r.redTeam.splits.at("regrain").operating.acc;
  const double baseRegrain = r.baseline.splits.at("regrain").operating.acc;
  const bool ok = auc >= 0.95 && cleanAcc - worst <= 0.10 && regrain >= baseRegrain && r.seconds <= 600.0;
  return {ok, "clean_auc=" + fmtd("%.4f", auc) + " clean_acc=" + fmtd("%.4f", cleanAcc) + " worst_acc=" +
                  fmtd("%.4f", worst) + " regrain_acc=" + fmtd("%.4f", regrain) + " baseline_regrain_acc=" +
                  fmtd("%.4f", baseRegrain) + " time=" + fmtd("%.0fs", r.seconds)};
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const DeskRun& a, const DeskRun& b) {
  const auto fa = files_under(a.dir), fb = files_under(b.dir);
  if (fa != fb) return {false, "file sets differ"};
  int compared = 0;
  for (const auto& rel : fa) {
    if (bytes_of(a.dir / rel) != bytes_of(b.dir / rel)) return {false, "differs: " + rel.string()};
    ++compared;
  }
  return {true, std::to_string(compared) + " files byte-identical (corpus, checkpoints, logs, reports)"};
}

Outcome weak_localization_gate(const DeskRun& r) {
  const LocSummary& s = r.redTeam.localization.at("clean");
  const bool ok = s.meanEwr >= 0.6 && s.meanPir >= 0.6 && s.realMeanEvidence <= 0.2;
  return {ok, "fakes=" + std::to_string(s.fakes) + " mean_ewr=" + fmtd("%.4f", s.meanEwr) +
                  " mean_pir=" + fmtd("%.4f", s.meanPir) + " reals=" + std::to_string(s.reals) +
                  " real_mean_evidence=" + fmtd("%.4f", s.realMeanEvidence)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance gates"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for the desk-scale runs");
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& f) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s  criterion %d  %-32s %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "reference operating point", reference_operating_point);
  report(2, "metric oracles", metric_oracles);
  report(3, "gradient check", gradient_gate);
  report(4, "worst-of-K exactness", worst_of_k_exactness);
  report(5, "defense contracts", defense_contracts);
  report(6, "attack determinism and sanity", attack_sanity);

  if (wanted(7) || wanted(8) || wanted(9)) {
    fs::create_directories(work);
    std::optional<DeskRun> first;
    try {
      std::fprintf(stderr, "desk-scale run 1\n");
      first = desk_run(fs::path(work) / "run1");
    } catch (const std::exception& e) {
      for (int c : {7, 8, 9})
        report(c, "desk-scale run", [&]() -> Outcome { return {false, std::string("exception: ") + e.what()}; });
    }
    if (first) {
      report(7, "end-to-end desk run", [&] { return end_to_end(*first); });
      report(8, "determinism", [&] {
        std::fprintf(stderr, "desk-scale run 2\n");
        return determinism(*first, desk_run(fs::path(work) / "run2"));
      });
      report(9, "weak localization", [&] { return weak_localization_gate(*first); });
    }
  }
  return failures == 0 ? 0 : 1;
}
