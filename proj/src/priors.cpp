#include "aadf/priors.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace aadf {

void validate_box(const FaceBox& box, int srcH, int srcW) {
  const bool ok = std::isfinite(box.x0) && std::isfinite(box.y0) && std::isfinite(box.x1) && std::isfinite(box.y1) &&
                  box.x0 >= 0 && box.x0 < box.x1 && box.x1 <= srcW && box.y0 >= 0 && box.y0 < box.y1 &&
                  box.y1 <= srcH;
  if (!ok) throw PreconditionError("face box outside image or empty");
}

FaceBox expand_box(const FaceBox& box, int srcH, int srcW, double margin) {
  if (margin < 0) throw PreconditionError("prior margin must be nonnegative");
  const double mw = margin * (box.x1 - box.x0);
  const double mh = margin * (box.y1 - box.y0);
  return {std::max(0.0, box.x0 - mw), std::max(0.0, box.y0 - mh), std::min<double>(srcW, box.x1 + mw),
          std::min<double>(srcH, box.y1 + mh)};
}

Grid prior_mask(const FaceBox& box, int srcH, int srcW, int workingSize, double margin) {
  validate_box(box, srcH, srcW);
  const FaceBox e = expand_box(box, srcH, srcW, margin);
  const double sx = static_cast<double>(workingSize) / srcW;
  const double sy = static_cast<double>(workingSize) / srcH;
  Grid mask(workingSize, workingSize);
  for (int r = 0; r < workingSize; ++r) {
    const double y = r + 0.5;
    if (y < e.y0 * sy || y >= e.y1 * sy) continue;
    for (int c = 0; c < workingSize; ++c) {
      const double x = c + 0.5;
      if (x >= e.x0 * sx && x < e.x1 * sx) mask.at(r, c) = 1.0;
    }
  }
  return mask;
}

namespace {

// Replicate-padded 1-D convolution with a symmetric kernel.
std::vector<double> blur_line(const std::vector<double>& x, const std::vector<double>& k) {
  const int n = static_cast<int>(x.size()), radius = static_cast<int>(k.size() / 2);
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = -radius; j <= radius; ++j) acc += k[j + radius] * x[std::clamp(i + j, 0, n - 1)];
    out[i] = acc;
  }
  return out;
}

}  // namespace

WeakPrior build_prior(const FaceBox& box, int srcH, int srcW, int workingSize, const PriorOptions& opt) {
  if (!(opt.sigmaFrac > 0)) throw PreconditionError("prior sigmaFrac must be positive");
  const Grid mask = prior_mask(box, srcH, srcW, workingSize, opt.margin);
  if (mask.sum() == 0.0) throw PreconditionError("face box degenerates to no working-resolution pixels");
  // The mask is a rectangle indicator, so its separable blur is the outer
  // product of the blurred row and column indicators.
  std::vector<double> rowsIn(workingSize, 0.0), colsIn(workingSize, 0.0);
  for (int r = 0; r < workingSize; ++r)
    for (int c = 0; c < workingSize; ++c)
      if (mask.at(r, c) > 0.0) rowsIn[r] = colsIn[c] = 1.0;
  const auto k = gaussian_kernel(opt.sigmaFrac * workingSize);
  const auto rb = blur_line(rowsIn, k), cb = blur_line(colsIn, k);
  Grid g(workingSize, workingSize);
  for (int r = 0; r < workingSize; ++r)
    for (int c = 0; c < workingSize; ++c) g.at(r, c) = rb[r] * cb[c];
  const double peak = *std::max_element(g.data.begin(), g.data.end());
  for (auto& v : g.data) v = std::clamp(v / peak, 0.0, 1.0);
  return {std::move(g), box};
}

WeakPrior transform_prior(const WeakPrior& g, const AttackInstance& inst) {
  WeakPrior out = g;
  switch (inst.family) {
    case AttackFamily::JPEG:
    case AttackFamily::REGRAIN:
    case AttackFamily::GAMMA:
    case AttackFamily::SEAM:
      return out;
    case AttackFamily::WARP: {
      const auto& w = std::get<WarpAttack>(inst.params);
      const auto [dr, dc] = warp_field(w, g.grid.rows, g.grid.cols);
      for (int r = 0; r < g.grid.rows; ++r)
        for (int c = 0; c < g.grid.cols; ++c)
          out.grid.at(r, c) = sample_bilinear(g.grid, r + dr.at(r, c), c + dc.at(r, c));
      break;
    }
    case AttackFamily::TRANSCODE: {
      const auto& t = std::get<TranscodeAttack>(inst.params);
      const Grid small = resize_bilinear(g.grid, transcode_side(g.grid.rows, t.factor),
                                         transcode_side(g.grid.cols, t.factor));
      out.grid = resize_bilinear(small, g.grid.rows, g.grid.cols);
      break;
    }
  }
  for (auto& v : out.grid.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace aadf
