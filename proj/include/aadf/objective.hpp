#pragma once

#include <cstdint>
#include <vector>

#include "aadf/detector.hpp"
#include "aadf/image.hpp"

namespace aadf {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double lambdaMask = 0.5;
  double gammaClean = 0.5;
  double lambdaEdge = 0.1;
  double lambdaSize = 0.1;
  double lambdaCons = 0.1;
  double eps = 1e-6;      // class-balance denominator
  double epsDice = 1e-6;  // Dice smoothing
  double wMax = 100.0;
  // Upsample z to the target resolution before the losses; otherwise the
  // target is area-averaged down to the mask grid.
  bool lossAtWorkingRes = true;

  void validate() const;
};

struct LossBreakdown {
  double cls = 0, maskAtt = 0, maskClean = 0, edge = 0, size = 0, cons = 0, total = 0;
  double gradLogit = 0;
  Grid gradMask;       // d total / d z (attacked view), mask-grid shape
  Grid gradMaskClean;  // d total / d z_clean
};

struct LossValue {
  double value = 0;
  Grid grad;
};

struct ScalarLoss {
  double value = 0;
  double grad = 0;
};

// log(1 + exp(-y~ s)) with y~ = 2y - 1.
ScalarLoss loss_cls(double s, int y);
// Positive-class weight clamp((1 - pi) / (pi + eps), 1, wMax), pi = mean(g).
double positive_weight(const Grid& g, const LossWeights& w);
// alpha * weighted BCE + beta * soft Dice; also returns each part.
LossValue loss_mask(const Grid& z, const Grid& g, const LossWeights& w, double* bcePart = nullptr,
                    double* dicePart = nullptr);
LossValue loss_edge(const Grid& z, const Grid& g);
LossValue loss_size(const Grid& z, const Grid& g);
struct PairLoss {
  double value = 0;
  Grid gradA, gradB;
};
PairLoss loss_cons(const Grid& zAtt, const Grid& zClean);

// Assembles the per-sample objective from the attacked logit, the attacked and
// clean mask logits (mask grid) and the targets g (clean) and gTilde (attacked).
LossBreakdown total_objective(double sAtt, const Grid& zAtt, const Grid& zClean, int y, const Grid& g,
                              const Grid& gTilde, const LossWeights& w);

double softplus(double x);

struct GradCheckSample {
  Features attacked;
  Features clean;
  Grid g;
  Grid gTilde;
  int y = 1;
};

struct GradCheckResult {
  double maxRelError = 0;
  int checked = 0;
  int skipped = 0;
};

// Directional-derivative check per parameter group against central
// differences with step 1e-5. Directions below 1e-12 in magnitude on both
// sides are skipped.
GradCheckResult grad_check(const GradCheckSample& sample, const DetectorParams& p, const LossWeights& w, int trials,
                           std::uint64_t seed);

// Sample objective and its parameter gradient, as used by training.
struct SampleGradient {
  LossBreakdown loss;
  DetectorParams grad;
};
SampleGradient sample_objective(const ModelOutput& attacked, const ModelOutput& clean, int y, const Grid& g,
                                const Grid& gTilde, const DetectorParams& p, const LossWeights& w);

}  // namespace aadf
