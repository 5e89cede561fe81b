#pragma once

#include "aadf/attacks.hpp"
#include "aadf/image.hpp"

namespace aadf {

// Face box in source-image pixel coordinates (x = column, y = row).
struct FaceBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const FaceBox&) const = default;
};

struct WeakPrior {
  Grid grid;
  FaceBox sourceBox;
};

struct PriorOptions {
  double margin = 0.15;
  double sigmaFrac = 0.05;
};

// Throws PreconditionError unless 0 <= x0 < x1 <= srcW and 0 <= y0 < y1 <= srcH.
void validate_box(const FaceBox& box, int srcH, int srcW);

// Box grown by margin times its own width/height on each side, clipped to the image.
FaceBox expand_box(const FaceBox& box, int srcH, int srcW, double margin);

// Binary stage of build_prior: 1 where a working-resolution pixel centre lies
// inside the expanded box.
Grid prior_mask(const FaceBox& box, int srcH, int srcW, int workingSize, double margin);

WeakPrior build_prior(const FaceBox& box, int srcH, int srcW, int workingSize, const PriorOptions& opt = {});

// Moves the prior with the geometry of the attack: photometric families and
// SEAM leave it untouched, WARP resamples with the same displacement field,
// TRANSCODE applies the same down/up resize.
WeakPrior transform_prior(const WeakPrior& g, const AttackInstance& inst);

}  // namespace aadf
