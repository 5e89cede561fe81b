#include "aadf/objective.hpp"

#include <algorithm>
#include <cmath>

#include "aadf/random.hpp"

namespace aadf {

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

void require_same(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) throw PreconditionError(std::string(what) + ": shape mismatch");
}

// Sobel responses with replicate padding.
void sobel_xy(const Grid& g, Grid& gx, Grid& gy) {
  gx = Grid(g.rows, g.cols);
  gy = Grid(g.rows, g.cols);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      const double a = g.clamped(r - 1, c - 1), b = g.clamped(r - 1, c), d = g.clamped(r - 1, c + 1);
      const double e = g.clamped(r, c - 1), f = g.clamped(r, c + 1);
      const double h = g.clamped(r + 1, c - 1), i = g.clamped(r + 1, c), j = g.clamped(r + 1, c + 1);
      gx.at(r, c) = (d + 2.0 * f + j) - (a + 2.0 * e + h);
      gy.at(r, c) = (h + 2.0 * i + j) - (a + 2.0 * b + d);
    }
}

Grid sigmoid_grid(const Grid& z) {
  Grid s = z;
  for (auto& v : s.data) v = sigmoid(v);
  return s;
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {alpha, beta, lambdaMask, gammaClean, lambdaEdge, lambdaSize, lambdaCons, wMax})
    if (!(v >= 0)) throw PreconditionError("loss weights must be nonnegative");
  if (!(eps > 0) || !(epsDice > 0)) throw PreconditionError("loss epsilons must be positive");
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

ScalarLoss loss_cls(double s, int y) {
  const double yt = y ? 1.0 : -1.0;
  return {softplus(-yt * s), -yt * sigmoid(-yt * s)};
}

double positive_weight(const Grid& g, const LossWeights& w) {
  const double pi = g.mean();
  return std::clamp((1.0 - pi) / (pi + w.eps), 1.0, w.wMax);
}

LossValue loss_mask(const Grid& z, const Grid& g, const LossWeights& w, double* bcePart, double* dicePart) {
  require_same(z, g, "loss_mask");
  const double n = static_cast<double>(z.size());
  const double wp = positive_weight(g, w);
  LossValue out{0.0, Grid(z.rows, z.cols)};

  double bce = 0.0, inter = 0.0, sumS = 0.0, sumG = 0.0;
  std::vector<double> s(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    const double zi = z.data[i], gi = g.data[i];
    s[i] = sigmoid(zi);
    // -log sigma(z) = softplus(-z), -log(1 - sigma(z)) = softplus(z)
    bce += wp * gi * softplus(-zi) + (1.0 - gi) * softplus(zi);
    inter += s[i] * gi;
    sumS += s[i];
    sumG += gi;
  }
  bce /= n;
  const double den = sumS + sumG + w.epsDice;
  const double num = 2.0 * inter + w.epsDice;
  const double dice = 1.0 - num / den;

  for (size_t i = 0; i < z.size(); ++i) {
    const double gi = g.data[i];
    const double dBce = (wp * gi * (s[i] - 1.0) + (1.0 - gi) * s[i]) / n;
    const double dDiceDs = -(2.0 * gi * den - num) / (den * den);
    out.grad.data[i] = w.alpha * dBce + w.beta * dDiceDs * s[i] * (1.0 - s[i]);
  }
  out.value = w.alpha * bce + w.beta * dice;
  if (bcePart) *bcePart = bce;
  if (dicePart) *dicePart = dice;
  return out;
}

LossValue loss_edge(const Grid& z, const Grid& g) {
  require_same(z, g, "loss_edge");
  if (z.rows < 3 || z.cols < 3) throw PreconditionError("loss_edge needs at least a 3x3 grid");
  const Grid s = sigmoid_grid(z);
  Grid sx, sy, gx, gy;
  sobel_xy(s, sx, sy);
  sobel_xy(g, gx, gy);
  const double n = static_cast<double>(z.size());

  LossValue out{0.0, Grid(z.rows, z.cols)};
  Grid aX(z.rows, z.cols), aY(z.rows, z.cols);
  for (size_t i = 0; i < z.size(); ++i) {
    const double es = std::hypot(sx.data[i], sy.data[i]);
    const double eg = std::hypot(gx.data[i], gy.data[i]);
    out.value += std::abs(es - eg);
    const double coef = sign(es - eg) / n / std::max(es, 1e-12);
    aX.data[i] = coef * sx.data[i];
    aY.data[i] = coef * sy.data[i];
  }
  out.value /= n;

  // Scatter through the Sobel stencils; replicate padding maps out-of-range
  // taps back onto the border pixel.
  Grid dS(z.rows, z.cols);
  for (int r = 0; r < z.rows; ++r)
    for (int c = 0; c < z.cols; ++c) {
      const double ax = aX.at(r, c), ay = aY.at(r, c);
      if (ax == 0.0 && ay == 0.0) continue;
      for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j) {
          const double kx = j * (i == 0 ? 2.0 : 1.0);
          const double ky = i * (j == 0 ? 2.0 : 1.0);
          if (kx == 0.0 && ky == 0.0) continue;
          const int rr = std::clamp(r + i, 0, z.rows - 1);
          const int cc = std::clamp(c + j, 0, z.cols - 1);
          dS.at(rr, cc) += ax * kx + ay * ky;
        }
    }
  for (size_t i = 0; i < z.size(); ++i) out.grad.data[i] = dS.data[i] * s.data[i] * (1.0 - s.data[i]);
  return out;
}

LossValue loss_size(const Grid& z, const Grid& g) {
  require_same(z, g, "loss_size");
  const Grid s = sigmoid_grid(z);
  const double diff = s.mean() - g.mean();
  const double n = static_cast<double>(z.size());
  LossValue out{std::abs(diff), Grid(z.rows, z.cols)};
  const double sg = sign(diff);
  for (size_t i = 0; i < z.size(); ++i) out.grad.data[i] = sg * s.data[i] * (1.0 - s.data[i]) / n;
  return out;
}

PairLoss loss_cons(const Grid& zAtt, const Grid& zClean) {
  require_same(zAtt, zClean, "loss_cons");
  const double n = static_cast<double>(zAtt.size());
  PairLoss out{0.0, Grid(zAtt.rows, zAtt.cols), Grid(zAtt.rows, zAtt.cols)};
  for (size_t i = 0; i < zAtt.size(); ++i) {
    const double a = sigmoid(zAtt.data[i]), b = sigmoid(zClean.data[i]);
    out.value += std::abs(a - b);
    const double sg = sign(a - b) / n;
    out.gradA.data[i] = sg * a * (1.0 - a);
    out.gradB.data[i] = -sg * b * (1.0 - b);
  }
  out.value /= n;
  return out;
}

LossBreakdown total_objective(double sAtt, const Grid& zAtt, const Grid& zClean, int y, const Grid& g,
                              const Grid& gTilde, const LossWeights& w) {
  require_same(zAtt, zClean, "total_objective mask logits");
  require_same(g, gTilde, "total_objective targets");
  const int G = zAtt.rows, Gc = zAtt.cols;
  const bool upsample = !zAtt.same_shape(g) && w.lossAtWorkingRes;

  Grid za = zAtt, zc = zClean, gt = gTilde, gc = g;
  if (upsample) {
    za = resize_bilinear(zAtt, g.rows, g.cols);
    zc = resize_bilinear(zClean, g.rows, g.cols);
  } else if (!zAtt.same_shape(g)) {
    gt = area_average(gTilde, G, Gc);
    gc = area_average(g, G, Gc);
  }

  LossBreakdown out;
  const ScalarLoss cls = loss_cls(sAtt, y);
  const LossValue mAtt = loss_mask(za, gt, w);
  const LossValue mClean = loss_mask(zc, gc, w);
  const LossValue edge = loss_edge(za, gt);
  const LossValue size = loss_size(za, gt);
  const PairLoss cons = loss_cons(za, zc);

  out.cls = cls.value;
  out.maskAtt = mAtt.value;
  out.maskClean = mClean.value;
  out.edge = edge.value;
  out.size = size.value;
  out.cons = cons.value;
  out.total = out.cls;
  out.total += w.lambdaMask * (out.maskAtt + w.gammaClean * out.maskClean);
  out.total += w.lambdaEdge * out.edge;
  out.total += w.lambdaSize * out.size;
  out.total += w.lambdaCons * out.cons;
  out.gradLogit = cls.grad;

  Grid ga(za.rows, za.cols), gcl(za.rows, za.cols);
  for (size_t i = 0; i < ga.size(); ++i) {
    ga.data[i] = w.lambdaMask * mAtt.grad.data[i] + w.lambdaEdge * edge.grad.data[i] +
                 w.lambdaSize * size.grad.data[i] + w.lambdaCons * cons.gradA.data[i];
    gcl.data[i] = w.lambdaMask * w.gammaClean * mClean.grad.data[i] + w.lambdaCons * cons.gradB.data[i];
  }
  if (upsample) {
    out.gradMask = resize_bilinear_adjoint(ga, G, Gc);
    out.gradMaskClean = resize_bilinear_adjoint(gcl, G, Gc);
  } else {
    out.gradMask = std::move(ga);
    out.gradMaskClean = std::move(gcl);
  }
  return out;
}

SampleGradient sample_objective(const ModelOutput& attacked, const ModelOutput& clean, int y, const Grid& g,
                                const Grid& gTilde, const DetectorParams& p, const LossWeights& w) {
  SampleGradient out;
  out.loss = total_objective(attacked.logit, attacked.maskLogits, clean.maskLogits, y, g, gTilde, w);
  out.grad = backward(attacked.cache, p, out.loss.gradLogit, out.loss.gradMask);
  add_scaled(out.grad, backward(clean.cache, p, 0.0, out.loss.gradMaskClean), 1.0);
  return out;
}

GradCheckResult grad_check(const GradCheckSample& sample, const DetectorParams& p, const LossWeights& w, int trials,
                           std::uint64_t seed) {
  if (trials < 1) throw PreconditionError("grad_check needs at least one trial");
  auto objective = [&](const DetectorParams& q) {
    const ModelOutput a = forward(sample.attacked, q, false);
    const ModelOutput c = forward(sample.clean, q, false);
    return total_objective(a.logit, a.maskLogits, c.maskLogits, sample.y, sample.g, sample.gTilde, w).total;
  };
  const ModelOutput a = forward(sample.attacked, p, false);
  const ModelOutput c = forward(sample.clean, p, false);
  const std::vector<double> grad = sample_objective(a, c, sample.y, sample.g, sample.gTilde, p, w).grad.flatten();
  const std::vector<double> base = p.flatten();

  // Parameter groups in flatten() order.
  const size_t du = static_cast<size_t>(p.hidden);
  const std::vector<size_t> sizes = {kFeatureDims, kFeatureDims * du, du, du, 1, du, 1};
  constexpr double h = 1e-5;

  GradCheckResult res;
  Rng rng(seed);
  DetectorParams probe = p;
  for (int t = 0; t < trials; ++t) {
    size_t offset = 0;
    for (size_t group : sizes) {
      std::vector<double> dir(group);
      double norm = 0.0;
      for (auto& v : dir) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      double analytic = 0.0;
      for (size_t i = 0; i < group; ++i) {
        dir[i] /= norm;
        analytic += grad[offset + i] * dir[i];
      }
      std::vector<double> plus = base, minus = base;
      for (size_t i = 0; i < group; ++i) {
        plus[offset + i] += h * dir[i];
        minus[offset + i] -= h * dir[i];
      }
      probe.unflatten(plus);
      const double fp = objective(probe);
      probe.unflatten(minus);
      const double fm = objective(probe);
      const double numeric = (fp - fm) / (2.0 * h);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      if (scale < 1e-12) {
        ++res.skipped;
      } else {
        res.maxRelError = std::max(res.maxRelError, std::abs(analytic - numeric) / scale);
        ++res.checked;
      }
      offset += group;
    }
  }
  return res;
}

}  // namespace aadf
