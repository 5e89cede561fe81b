#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "aadf/image.hpp"

namespace aadf {

enum class AttackFamily { JPEG = 0, WARP, REGRAIN, SEAM, GAMMA, TRANSCODE };

inline constexpr std::array<AttackFamily, 6> kAllFamilies = {
    AttackFamily::JPEG, AttackFamily::WARP,  AttackFamily::REGRAIN,
    AttackFamily::SEAM, AttackFamily::GAMMA, AttackFamily::TRANSCODE};

// Upper-case stable name ("JPEG", ...) used in serialized records.
std::string_view family_name(AttackFamily f);
// Lower-case split tag ("jpeg", ...) used in reports.
std::string_view family_split(AttackFamily f);
AttackFamily parse_family(std::string_view name);

struct SeedDerivation {
  std::uint64_t globalSeed = 0;
  std::string imageId;
  std::int64_t epoch = 0;
  std::int64_t slot = 0;
};

std::uint64_t derive_seed(const SeedDerivation& d);

inline constexpr int kWarpGrid = 8;

struct JpegAttack {
  int dx = 0, dy = 0;
  int quality = 75;
  bool operator==(const JpegAttack&) const = default;
};

struct WarpAttack {
  double amplitude = 0.0;
  // kWarpGrid x kWarpGrid control points, row-major, each a (dRow, dCol)
  // pair, so 2 * 64 values.
  std::vector<double> control;
  bool operator==(const WarpAttack&) const = default;
};

struct RegrainAttack {
  double denoiseSigma = 1.0;
  double grainSigma = 1.0 / 255.0;
  std::uint64_t grainSeed = 0;
  bool operator==(const RegrainAttack&) const = default;
};

struct SeamAttack {
  double blurSigma = 1.5;
  int bandRadius = 4;
  bool operator==(const SeamAttack&) const = default;
};

struct GammaAttack {
  double gamma = 1.0;
  std::array<double, 3> gains = {1.0, 1.0, 1.0};
  bool operator==(const GammaAttack&) const = default;
};

struct TranscodeAttack {
  double factor = 0.75;
  int quality = 60;
  bool operator==(const TranscodeAttack&) const = default;
};

using AttackParams =
    std::variant<JpegAttack, WarpAttack, RegrainAttack, SeamAttack, GammaAttack, TranscodeAttack>;

struct AttackInstance {
  AttackFamily family = AttackFamily::JPEG;
  AttackParams params;
  std::uint64_t seed = 0;
  bool operator==(const AttackInstance&) const = default;
};

AttackInstance sample_attack(AttackFamily family, std::uint64_t seed);

// "FAMILY;key=value;...;seed=N" with family-specific keys in alphabetical
// order. Doubles use 17 significant digits so parsing is exact.
std::string serialize(const AttackInstance& inst);
AttackInstance parse_attack(std::string_view record);

Image apply_jpeg(const Image& img, const AttackInstance& inst);
Image apply_warp(const Image& img, const AttackInstance& inst);
Image apply_regrain(const Image& img, const AttackInstance& inst);
// prior is resampled to the image shape when the two differ.
Image apply_seam(const Image& img, const AttackInstance& inst, const Grid* prior);
Image apply_gamma(const Image& img, const AttackInstance& inst);
Image apply_transcode(const Image& img, const AttackInstance& inst);

// Dispatches on inst.family. prior is only consulted by SEAM.
Image apply_attack(const Image& img, const AttackInstance& inst, const Grid* prior = nullptr);

// Full-resolution displacement field (dRow, dCol) of a WARP instance.
std::pair<Grid, Grid> warp_field(const WarpAttack& w, int rows, int cols);
// Pixels within bandRadius of the prior's 0.5 level set.
BoolGrid seam_band(const Grid& prior, int bandRadius);
// Downscaled side length used by TRANSCODE.
int transcode_side(int side, double factor);

}  // namespace aadf
