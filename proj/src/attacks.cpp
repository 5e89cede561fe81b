#include "aadf/attacks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "aadf/random.hpp"

namespace aadf {

namespace {

constexpr std::array<std::string_view, 6> kNames = {"JPEG", "WARP", "REGRAIN", "SEAM", "GAMMA", "TRANSCODE"};
constexpr std::array<std::string_view, 6> kSplits = {"jpeg", "warp", "regrain", "seam", "gamma", "transcode"};

template <class T>
const T& params_as(const AttackInstance& inst, AttackFamily expected) {
  if (inst.family != expected || !std::holds_alternative<T>(inst.params))
    throw PreconditionError("attack instance is not of family " + std::string(family_name(expected)));
  return std::get<T>(inst.params);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("bad number in attack record: " + std::string(s));
  return v;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("bad integer in attack record: " + std::string(s));
  return v;
}

int parse_int(std::string_view s) { return static_cast<int>(parse_u64(s)); }

}  // namespace

std::string_view family_name(AttackFamily f) { return kNames[static_cast<size_t>(f)]; }
std::string_view family_split(AttackFamily f) { return kSplits[static_cast<size_t>(f)]; }

AttackFamily parse_family(std::string_view name) {
  for (size_t i = 0; i < kNames.size(); ++i)
    if (name == kNames[i] || name == kSplits[i]) return static_cast<AttackFamily>(i);
  throw FormatError("unknown attack family: " + std::string(name));
}

std::uint64_t derive_seed(const SeedDerivation& d) {
  std::uint64_t h = splitmix64(d.globalSeed);
  h = splitmix64(h ^ fnv1a64(d.imageId));
  h = splitmix64(h ^ static_cast<std::uint64_t>(d.epoch));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(d.slot) * 0xD6E8FEB86659FD93ULL));
  return h;
}

AttackInstance sample_attack(AttackFamily family, std::uint64_t seed) {
  Rng rng(splitmix64(seed + static_cast<std::uint64_t>(family)));
  AttackInstance inst;
  inst.family = family;
  inst.seed = seed;
  switch (family) {
    case AttackFamily::JPEG: {
      JpegAttack a;
      a.quality = rng.uniform_int(50, 90);
      a.dx = rng.uniform_int(0, 7);
      a.dy = rng.uniform_int(0, 7);
      inst.params = a;
      break;
    }
    case AttackFamily::WARP: {
      WarpAttack a;
      a.amplitude = rng.uniform(0.25, 1.0);
      a.control.resize(2 * kWarpGrid * kWarpGrid);
      for (auto& v : a.control) v = rng.uniform(-a.amplitude, a.amplitude);
      inst.params = a;
      break;
    }
    case AttackFamily::REGRAIN: {
      RegrainAttack a;
      a.denoiseSigma = rng.uniform(0.6, 1.5);
      a.grainSigma = rng.uniform(1.0 / 255.0, 4.0 / 255.0);
      a.grainSeed = rng.next_u64();
      inst.params = a;
      break;
    }
    case AttackFamily::SEAM: {
      SeamAttack a;
      a.blurSigma = rng.uniform(1.0, 2.0);
      a.bandRadius = rng.uniform_int(2, 6);
      inst.params = a;
      break;
    }
    case AttackFamily::GAMMA: {
      GammaAttack a;
      a.gamma = rng.uniform(0.8, 1.25);
      for (auto& g : a.gains) g = rng.uniform(0.95, 1.05);
      inst.params = a;
      break;
    }
    case AttackFamily::TRANSCODE: {
      TranscodeAttack a;
      a.factor = rng.uniform(0.5, 0.75);
      a.quality = rng.uniform_int(40, 70);
      inst.params = a;
      break;
    }
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Serialization

std::string serialize(const AttackInstance& inst) {
  std::string out(family_name(inst.family));
  auto kv = [&out](std::string_view k, const std::string& v) {
    out += ';';
    out += k;
    out += '=';
    out += v;
  };
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, JpegAttack>) {
          kv("dx", std::to_string(a.dx));
          kv("dy", std::to_string(a.dy));
          kv("quality", std::to_string(a.quality));
        } else if constexpr (std::is_same_v<T, WarpAttack>) {
          kv("amplitude", fmt_double(a.amplitude));
          std::string grid;
          for (size_t i = 0; i < a.control.size(); ++i) {
            if (i) grid += ',';
            grid += fmt_double(a.control[i]);
          }
          kv("grid", grid);
        } else if constexpr (std::is_same_v<T, RegrainAttack>) {
          kv("denoise_sigma", fmt_double(a.denoiseSigma));
          kv("grain_seed", std::to_string(a.grainSeed));
          kv("grain_sigma", fmt_double(a.grainSigma));
        } else if constexpr (std::is_same_v<T, SeamAttack>) {
          kv("band_radius", std::to_string(a.bandRadius));
          kv("blur_sigma", fmt_double(a.blurSigma));
        } else if constexpr (std::is_same_v<T, GammaAttack>) {
          kv("gain_b", fmt_double(a.gains[2]));
          kv("gain_g", fmt_double(a.gains[1]));
          kv("gain_r", fmt_double(a.gains[0]));
          kv("gamma", fmt_double(a.gamma));
        } else {
          kv("factor", fmt_double(a.factor));
          kv("quality", std::to_string(a.quality));
        }
      },
      inst.params);
  kv("seed", std::to_string(inst.seed));
  return out;
}

AttackInstance parse_attack(std::string_view record) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (start <= record.size()) {
    const size_t end = std::min(record.find(';', start), record.size());
    fields.push_back(record.substr(start, end - start));
    start = end + 1;
  }
  if (fields.empty()) throw FormatError("empty attack record");
  AttackInstance inst;
  inst.family = parse_family(fields[0]);
  std::map<std::string_view, std::string_view> kv;
  for (size_t i = 1; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string_view::npos) throw FormatError("attack record field without '='");
    kv[fields[i].substr(0, eq)] = fields[i].substr(eq + 1);
  }
  auto get = [&kv](std::string_view k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("attack record missing key " + std::string(k));
    return it->second;
  };
  inst.seed = parse_u64(get("seed"));
  switch (inst.family) {
    case AttackFamily::JPEG:
      inst.params = JpegAttack{parse_int(get("dx")), parse_int(get("dy")), parse_int(get("quality"))};
      break;
    case AttackFamily::WARP: {
      WarpAttack a;
      a.amplitude = parse_double(get("amplitude"));
      const auto grid = get("grid");
      size_t s = 0;
      while (s < grid.size()) {
        const size_t e = std::min(grid.find(',', s), grid.size());
        a.control.push_back(parse_double(grid.substr(s, e - s)));
        s = e + 1;
      }
      if (a.control.size() != 2 * kWarpGrid * kWarpGrid) throw FormatError("warp grid must hold 128 values");
      inst.params = a;
      break;
    }
    case AttackFamily::REGRAIN:
      inst.params =
          RegrainAttack{parse_double(get("denoise_sigma")), parse_double(get("grain_sigma")), parse_u64(get("grain_seed"))};
      break;
    case AttackFamily::SEAM:
      inst.params = SeamAttack{parse_double(get("blur_sigma")), parse_int(get("band_radius"))};
      break;
    case AttackFamily::GAMMA:
      inst.params = GammaAttack{parse_double(get("gamma")),
                                {parse_double(get("gain_r")), parse_double(get("gain_g")), parse_double(get("gain_b"))}};
      break;
    case AttackFamily::TRANSCODE:
      inst.params = TranscodeAttack{parse_double(get("factor")), parse_int(get("quality"))};
      break;
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Families

Image apply_jpeg(const Image& img, const AttackInstance& inst) {
  validate(img);
  const auto& a = params_as<JpegAttack>(inst, AttackFamily::JPEG);
  const Image shifted = translate(img, a.dx, a.dy);
  const Image coded = jpeg_sim(shifted, {a.quality, false});
  return translate(coded, -a.dx, -a.dy);
}

std::pair<Grid, Grid> warp_field(const WarpAttack& w, int rows, int cols) {
  Grid cr(kWarpGrid, kWarpGrid), cc(kWarpGrid, kWarpGrid);
  for (int i = 0; i < kWarpGrid * kWarpGrid; ++i) {
    cr.data[i] = w.control.at(2 * i);
    cc.data[i] = w.control.at(2 * i + 1);
  }
  return {resize_bilinear(cr, rows, cols), resize_bilinear(cc, rows, cols)};
}

Image apply_warp(const Image& img, const AttackInstance& inst) {
  validate(img);
  const auto& a = params_as<WarpAttack>(inst, AttackFamily::WARP);
  const auto [dr, dc] = warp_field(a, img.rows, img.cols);
  Image out(img.rows, img.cols);
  for (int ch = 0; ch < 3; ++ch) {
    const Grid src = channel(img, ch);
    for (int r = 0; r < img.rows; ++r)
      for (int c = 0; c < img.cols; ++c) out.at(r, c, ch) = sample_bilinear(src, r + dr.at(r, c), c + dc.at(r, c));
  }
  return out;
}

Image apply_regrain(const Image& img, const AttackInstance& inst) {
  validate(img);
  const auto& a = params_as<RegrainAttack>(inst, AttackFamily::REGRAIN);
  Image out = gaussian_blur(img, a.denoiseSigma);
  Rng rng(a.grainSeed);
  for (auto& v : out.data) v = std::clamp(v + a.grainSigma * rng.normal(), 0.0, 1.0);
  return out;
}

BoolGrid seam_band(const Grid& prior, int bandRadius) {
  const BoolGrid inside = threshold(prior, 0.5);
  BoolGrid outside(inside.rows, inside.cols);
  for (size_t i = 0; i < inside.data.size(); ++i) outside.data[i] = inside.data[i] ? 0 : 1;
  const BoolGrid a = dilate_binary(inside, bandRadius);
  const BoolGrid b = dilate_binary(outside, bandRadius);
  BoolGrid band(inside.rows, inside.cols);
  for (size_t i = 0; i < band.data.size(); ++i) band.data[i] = (a.data[i] && b.data[i]) ? 1 : 0;
  return band;
}

Image apply_seam(const Image& img, const AttackInstance& inst, const Grid* prior) {
  validate(img);
  const auto& a = params_as<SeamAttack>(inst, AttackFamily::SEAM);
  if (prior == nullptr) throw PreconditionError("SEAM attack requires a region prior");
  const Grid g = (prior->rows == img.rows && prior->cols == img.cols) ? *prior
                                                                      : resize_bilinear(*prior, img.rows, img.cols);
  const BoolGrid band = seam_band(g, a.bandRadius);
  if (band.count() == 0) return img;

  // Band pixels touching a non-band pixel form the 1 px feather at weight 0.5.
  BoolGrid notBand(band.rows, band.cols);
  for (size_t i = 0; i < band.data.size(); ++i) notBand.data[i] = band.data[i] ? 0 : 1;
  const BoolGrid nearOutside = dilate_binary(notBand, 1);

  const Image blurred = gaussian_blur(img, a.blurSigma);
  Image out = img;
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      if (!band.at(r, c)) continue;
      const double w = nearOutside.at(r, c) ? 0.5 : 1.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = w == 1.0 ? blurred.at(r, c, ch) : w * blurred.at(r, c, ch) + (1.0 - w) * img.at(r, c, ch);
        out.at(r, c, ch) = v;
      }
    }
  return out;
}

Image apply_gamma(const Image& img, const AttackInstance& inst) {
  validate(img);
  const auto& a = params_as<GammaAttack>(inst, AttackFamily::GAMMA);
  Image out = img;
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double v = std::max(out.data[i], 0.0);
    out.data[i] = std::clamp(a.gains[i % 3] * std::pow(v, a.gamma), 0.0, 1.0);
  }
  return out;
}

int transcode_side(int side, double factor) {
  return std::max(1, static_cast<int>(std::floor(factor * side + 0.5)));
}

Image apply_transcode(const Image& img, const AttackInstance& inst) {
  validate(img);
  const auto& a = params_as<TranscodeAttack>(inst, AttackFamily::TRANSCODE);
  const Image small = resize_bilinear(img, transcode_side(img.rows, a.factor), transcode_side(img.cols, a.factor));
  const Image coded = jpeg_sim(small, {a.quality, false});
  return resize_bilinear(coded, img.rows, img.cols);
}

Image apply_attack(const Image& img, const AttackInstance& inst, const Grid* prior) {
  switch (inst.family) {
    case AttackFamily::JPEG: return apply_jpeg(img, inst);
    case AttackFamily::WARP: return apply_warp(img, inst);
    case AttackFamily::REGRAIN: return apply_regrain(img, inst);
    case AttackFamily::SEAM: return apply_seam(img, inst, prior);
    case AttackFamily::GAMMA: return apply_gamma(img, inst);
    case AttackFamily::TRANSCODE: return apply_transcode(img, inst);
  }
  throw PreconditionError("unknown attack family");
}

}  // namespace aadf
