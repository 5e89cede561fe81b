#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aadf/attacks.hpp"
#include "aadf/detector.hpp"
#include "aadf/objective.hpp"
#include "aadf/priors.hpp"

namespace aadf {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int K = 3;
  int epochs = 2;
  int batchSize = 32;
  double lr = 1e-4;
  double weightDecay = 1e-4;
  double clipNorm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsOpt = 1e-8;
  std::uint64_t globalSeed = 0;
  int workingSize = 384;
  int grid = 32;
  int hidden = 16;
  // Baseline mode: no red-team views, the attacked view is the clean view.
  bool cleanOnly = false;

  void validate() const;
};

struct DefenseConfig {
  int N = 3;
  int maxPhase = 3;
  double gammaLo = 0.95, gammaHi = 1.05;
  int qualityLo = 85, qualityHi = 95;
  int maxJpegShift = 7;
  std::uint64_t seed = 0;
};

struct Jitter {
  int phaseRow = 0, phaseCol = 0;
  double gamma = 1.0;
  int quality = 100;
  int dx = 0, dy = 0;
};

Jitter sample_jitter(const DefenseConfig& cfg, int view);
// Micro crop of (phaseRow, phaseCol) pixels off the top-left then resize
// back, mild gamma, JPEG at a shifted block phase.
Image apply_jitter(const Image& img, const Jitter& j);

struct DefendedPrediction {
  double probability = 0.5;
  double meanLogit = 0.0;
  Grid evidence;
  std::vector<double> perViewLogits;
  std::vector<Grid> perViewEvidence;
};

// img is a working-size canvas.
DefendedPrediction ttd_predict(const Image& img, const DetectorParams& p, const DefenseConfig& cfg, int workingSize);
DefendedPrediction ttd_predict_views(const Image& img, const DetectorParams& p, const std::vector<Jitter>& jitters,
                                     int workingSize);

// K distinct families (drawn without replacement) with per-slot parameter seeds.
std::vector<AttackInstance> sample_candidates(std::uint64_t globalSeed, const std::string& id, std::int64_t epoch,
                                              int K);

struct WorstOfK {
  size_t chosen = 0;
  std::vector<double> losses;
  Image attacked;
  Features attackedFeatures;
};

WorstOfK select_worst_of_k(const Image& x, int y, const DetectorParams& p, const std::vector<AttackInstance>& candidates,
                           const Grid* prior, int workingSize);

struct SampleMeta {
  std::string id;
  int label = 0;
  std::optional<FaceBox> box;
};

struct Dataset {
  std::vector<SampleMeta> items;
  std::function<Image(const SampleMeta&)> load;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  std::vector<std::string> sampleIds;
  std::vector<std::string> chosenFamilies;
  std::vector<std::vector<double>> candidateLosses;
  double cls = 0, maskAtt = 0, maskClean = 0, edge = 0, size = 0, cons = 0, total = 0;
  double gradNorm = 0;
  bool clipped = false;
};

std::string to_json_line(const StepLog& s);

struct TrainResult {
  DetectorParams params;
  std::vector<StepLog> log;
};

// Resize to the working canvas; the shared entry point for training and evaluation.
Image to_canvas(const Image& raw, int workingSize);

// Training target: the face prior for manipulated samples, zeros for
// bona fide ones. Throws ManifestError for a fake without a box.
Grid training_target(const SampleMeta& m, int srcRows, int srcCols, int workingSize);

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

// Decoupled weight decay, then the bias-corrected Adam update.
void adamw_step(std::vector<double>& theta, const std::vector<double>& grad, AdamState& st, const TrainConfig& cfg);
// Scales grad in place so its global L2 norm is at most maxNorm; returns the pre-clip norm.
double clip_global_norm(std::vector<double>& grad, double maxNorm);

TrainResult train(const Dataset& data, const TrainConfig& cfg, const LossWeights& w,
                  const std::optional<DetectorParams>& init = std::nullopt);

}  // namespace aadf
