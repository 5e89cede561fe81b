#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "aadf/detector.hpp"
#include "aadf/random.hpp"

using namespace aadf;

namespace {

StandardizedImage raw(const Image& img) {
  StandardizedImage x;
  x.raster = img;
  return x;
}

StandardizedImage random_standardized(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size);
  for (double& v : img.data) v = rng.normal();
  return raw(img);
}

DetectorParams random_params(std::uint64_t seed, int grid = 4, int hidden = 5) {
  DetectorParams p = DetectorParams::zeros(grid, hidden);
  Rng rng(seed);
  std::vector<double> flat = p.flatten();
  for (double& v : flat) v = rng.uniform(-1.0, 1.0);
  p.unflatten(flat);
  return p;
}

// Independent evaluation: s and z from features by explicit loops.
void oracle_forward(const Features& f, const DetectorParams& p, double& s, std::vector<double>& z) {
  const int cells = f.content.cells(), H = p.hidden;
  std::vector<double> pooled(H, 0.0);
  z.assign(cells, 0.0);
  for (int cell = 0; cell < cells; ++cell) {
    std::vector<double> u(p.mixBias);
    for (int j = 0; j < kFeatureDims; ++j) {
      const double v = j < kContentDims ? f.content.at(cell, j) : f.residual.at(cell, j - kContentDims);
      const double gate = 1.0 / (1.0 + std::exp(-p.gateLogits[j]));
      for (int k = 0; k < H; ++k) u[k] += p.mixWeights[j * H + k] * gate * v;
    }
    double zc = p.maskBias;
    for (int k = 0; k < H; ++k) {
      pooled[k] += u[k] / cells;
      zc += p.maskWeights[k] * u[k];
    }
    z[cell] = zc;
  }
  s = p.clsBias;
  for (int k = 0; k < H; ++k) s += p.clsWeights[k] * pooled[k];
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace

TEST_CASE("constant image has zero residuals") {
  Image img(16, 16);
  std::fill(img.data.begin(), img.data.end(), 0.7);
  for (const Grid& g : extract_residuals(raw(img)))
    for (double v : g.data) CHECK(std::abs(v) <= 1e-14);
}

TEST_CASE("linear ramp: zero Laplacian, constant first differences") {
  Image img(20, 20);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 20; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = 0.25 * c + 0.5 * r;
  const auto res = extract_residuals(raw(img));
  for (int r = 2; r < 18; ++r)
    for (int c = 2; c < 18; ++c) {
      CHECK(std::abs(res[0].at(r, c)) <= 1e-12);
      CHECK(res[1].at(r, c) == doctest::Approx(0.25));
      CHECK(res[2].at(r, c) == doctest::Approx(0.5));
      CHECK(std::abs(res[3].at(r, c)) <= 1e-12);
    }
}

TEST_CASE("unit impulse reproduces the Laplacian kernel") {
  Image img(9, 9);
  for (int ch = 0; ch < 3; ++ch) img.at(4, 4, ch) = 1.0;
  const auto res = extract_residuals(raw(img));
  // luminance of (1,1,1) is 0.299 + 0.587 + 0.114
  const double l = 0.299 + 0.587 + 0.114;
  const double lap[3][3] = {{0, 1, 0}, {1, -4, 1}, {0, 1, 0}};
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j) CHECK(res[0].at(4 + i, 4 + j) == doctest::Approx(lap[i + 1][j + 1] * l));
  CHECK(res[0].at(1, 1) == 0.0);
  // second-order kernel: centre 12 / 12
  CHECK(res[3].at(4, 4) == doctest::Approx(l));
  CHECK(res[3].at(2, 2) == doctest::Approx(l / 12.0));
}

TEST_CASE("cell partition covers the raster") {
  int covered = 0;
  for (int i = 0; i < 7; ++i) {
    const auto [a, b] = cell_range(i, 50, 7);
    CHECK(a == covered);
    covered = b;
  }
  CHECK(covered == 50);
}

TEST_CASE("constant image features") {
  Image img(32, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      img.at(r, c, 0) = 0.2;
      img.at(r, c, 1) = -0.4;
      img.at(r, c, 2) = 1.1;
    }
  const Features f = extract_features(raw(img), 8);
  for (int cell = 0; cell < 64; ++cell) {
    CHECK(f.content.at(cell, 0) == doctest::Approx(0.2));
    CHECK(f.content.at(cell, 1) == doctest::Approx(-0.4));
    CHECK(f.content.at(cell, 2) == doctest::Approx(1.1));
    for (int d = 3; d < kContentDims; ++d) CHECK(std::abs(f.content.at(cell, d)) <= 1e-14);
    for (int d = 0; d < kResidualDims; ++d) CHECK(std::abs(f.residual.at(cell, d)) <= 1e-14);
  }
}

TEST_CASE("random image features match brute force") {
  const StandardizedImage x = random_standardized(30, 3);
  const int G = 4;
  const Features f = extract_features(x, G);
  const auto res = extract_residuals(x);
  const Grid L = luminance(x.raster);
  for (int gi = 0; gi < G; ++gi)
    for (int gj = 0; gj < G; ++gj) {
      const auto [r0, r1] = cell_range(gi, 30, G);
      const auto [c0, c1] = cell_range(gj, 30, G);
      const int cell = gi * G + gj;
      const int h = r1 - r0, w = c1 - c0;
      const double n = static_cast<double>(h) * w;
      for (int ch = 0; ch < 3; ++ch) {
        double s = 0, s2 = 0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) s += x.raster.at(r, c, ch);
        const double mean = s / n;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) s2 += (x.raster.at(r, c, ch) - mean) * (x.raster.at(r, c, ch) - mean);
        CHECK(std::abs(f.content.at(cell, ch) - mean) <= 1e-12);
        CHECK(std::abs(f.content.at(cell, 3 + ch) - std::sqrt(s2 / n)) <= 1e-12);
      }
      // DCT energies from the 2-D orthonormal basis formula.
      const int freq[3][2] = {{0, 1}, {1, 0}, {1, 1}};
      for (int q = 0; q < 3; ++q) {
        const int u = freq[q][0], v = freq[q][1];
        const double au = u == 0 ? std::sqrt(1.0 / h) : std::sqrt(2.0 / h);
        const double av = v == 0 ? std::sqrt(1.0 / w) : std::sqrt(2.0 / w);
        double coef = 0;
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c)
            coef += au * av * std::cos(M_PI * (2 * r + 1) * u / (2.0 * h)) *
                    std::cos(M_PI * (2 * c + 1) * v / (2.0 * w)) * L.at(r0 + r, c0 + c);
        CHECK(std::abs(f.content.at(cell, 6 + q) - coef * coef) <= 1e-12);
      }
      for (int k = 0; k < kResidualChannels; ++k) {
        double sa = 0, s = 0, s2 = 0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) {
            sa += std::abs(res[k].at(r, c));
            s += res[k].at(r, c);
          }
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) s2 += (res[k].at(r, c) - s / n) * (res[k].at(r, c) - s / n);
        CHECK(std::abs(f.residual.at(cell, 2 * k) - sa / n) <= 1e-12);
        CHECK(std::abs(f.residual.at(cell, 2 * k + 1) - std::sqrt(s2 / n)) <= 1e-12);
      }
    }
}

TEST_CASE("image change inside one cell only moves that cell") {
  const StandardizedImage a = random_standardized(48, 9);
  StandardizedImage b = a;
  // cell (1, 2) with G = 4 spans rows 12..23, cols 24..35; stay 2 px clear of its border
  for (int r = 15; r < 21; ++r)
    for (int c = 27; c < 33; ++c) b.raster.at(r, c, 1) += 0.5;
  const Features fa = extract_features(a, 4), fb = extract_features(b, 4);
  const DetectorParams p = random_params(2);
  const ModelOutput oa = forward(fa, p), ob = forward(fb, p);
  for (int cell = 0; cell < 16; ++cell) {
    bool same = true;
    for (int d = 0; d < kContentDims; ++d) same = same && fa.content.at(cell, d) == fb.content.at(cell, d);
    for (int d = 0; d < kResidualDims; ++d) same = same && fa.residual.at(cell, d) == fb.residual.at(cell, d);
    const bool zSame = oa.maskLogits.data[cell] == ob.maskLogits.data[cell];
    if (cell == 1 * 4 + 2) {
      CHECK_FALSE(same);
      CHECK_FALSE(zSame);
    } else {
      CHECK(same);
      CHECK(zSame);
    }
  }
}

TEST_CASE("closed gates give the mixing bias") {
  const Features f = extract_features(random_standardized(32, 4), 4);
  DetectorParams p = random_params(5);
  std::fill(p.gateLogits.begin(), p.gateLogits.end(), -50.0);
  const FusedGrid u = fuse(f.content, f.residual, p);
  for (int cell = 0; cell < 16; ++cell)
    for (int k = 0; k < p.hidden; ++k) CHECK(std::abs(u.at(cell, k) - p.mixBias[k]) <= 1e-18);
}

TEST_CASE("identity mixing with open gates returns the features") {
  const Features f = extract_features(random_standardized(32, 6), 4);
  DetectorParams p = DetectorParams::zeros(4, kFeatureDims);
  std::fill(p.gateLogits.begin(), p.gateLogits.end(), 50.0);
  for (int j = 0; j < kFeatureDims; ++j) p.mixWeights[j * kFeatureDims + j] = 1.0;
  const FusedGrid u = fuse(f.content, f.residual, p);
  for (int cell = 0; cell < 16; ++cell)
    for (int j = 0; j < kFeatureDims; ++j) {
      const double v = j < kContentDims ? f.content.at(cell, j) : f.residual.at(cell, j - kContentDims);
      CHECK(u.at(cell, j) == doctest::Approx(v).epsilon(1e-15));
    }
}

TEST_CASE("fuse rejects mismatched layouts") {
  const Features f = extract_features(random_standardized(32, 6), 4);
  CHECK_THROWS_AS(fuse(f.content, f.residual, random_params(1, 8, 5)), PreconditionError);
  CHECK_THROWS_AS(fuse(f.residual, f.content, random_params(1, 4, 5)), PreconditionError);
}

TEST_CASE("all-zero parameters") {
  const StandardizedImage x = random_standardized(64, 7);
  const ModelOutput o = forward(x, DetectorParams::zeros(8, 16));
  CHECK(o.logit == 0.0);
  CHECK(sigmoid(o.logit) == 0.5);
  for (double v : o.maskLogits.data) CHECK(v == 0.0);
  CHECK(o.evidence.rows == 64);
  for (double v : o.evidence.data) CHECK(v == 0.5);
}

TEST_CASE("scaling the classification head scales the logit") {
  const Features f = extract_features(random_standardized(32, 8), 4);
  DetectorParams p = random_params(9);
  const double s1 = forward(f, p).logit;
  for (double& w : p.clsWeights) w *= 2.0;
  p.clsBias *= 2.0;
  CHECK(forward(f, p).logit == doctest::Approx(2.0 * s1).epsilon(1e-14));
}

TEST_CASE("forward matches an independent recomputation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Features f = extract_features(random_standardized(40, 100 + seed), 4);
    const DetectorParams p = random_params(200 + seed);
    const ModelOutput o = forward(f, p);
    double s;
    std::vector<double> z;
    oracle_forward(f, p, s, z);
    CHECK(std::abs(o.logit - s) <= 1e-10);
    for (int cell = 0; cell < 16; ++cell) CHECK(std::abs(o.maskLogits.data[cell] - z[cell]) <= 1e-10);
    for (double e : o.evidence.data) CHECK((e > 0.0 && e < 1.0));
  }
}

TEST_CASE("mask head is equivariant to cell permutation") {
  const Features f = extract_features(random_standardized(32, 12), 4);
  const DetectorParams p = random_params(13);
  std::vector<int> perm(16);
  for (int i = 0; i < 16; ++i) perm[i] = (i * 5 + 3) % 16;
  Features g = f;
  for (int i = 0; i < 16; ++i) {
    for (int d = 0; d < kContentDims; ++d) g.content.at(i, d) = f.content.at(perm[i], d);
    for (int d = 0; d < kResidualDims; ++d) g.residual.at(i, d) = f.residual.at(perm[i], d);
  }
  const ModelOutput a = forward(f, p), b = forward(g, p);
  for (int i = 0; i < 16; ++i) CHECK(b.maskLogits.data[i] == a.maskLogits.data[perm[i]]);
}

TEST_CASE("backward basics") {
  const Features f = extract_features(random_standardized(32, 14), 4);
  const DetectorParams p = random_params(15);
  const ModelOutput o = forward(f, p);
  const DetectorParams zero = backward(o.cache, p, 0.0, Grid(4, 4));
  for (double v : zero.flatten()) CHECK(v == 0.0);
  const DetectorParams ds = backward(o.cache, p, 1.0, Grid(4, 4));
  CHECK(ds.clsBias == 1.0);
  CHECK(ds.maskBias == 0.0);
  CHECK_THROWS_AS(backward(ForwardCache{}, p, 1.0, Grid(4, 4)), PreconditionError);
  CHECK_THROWS_AS(backward(o.cache, p, 1.0, Grid(3, 4)), PreconditionError);
}

TEST_CASE("backward agrees with central finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Features f = extract_features(random_standardized(32, 300 + seed), 4);
    const DetectorParams p = random_params(400 + seed);
    Rng rng(500 + seed);
    const double a = rng.uniform(-1, 1);
    Grid b(4, 4);
    for (double& v : b.data) v = rng.uniform(-1, 1);
    auto loss = [&](const DetectorParams& q) {
      const ModelOutput o = forward(f, q, false);
      double l = a * o.logit;
      for (size_t i = 0; i < b.data.size(); ++i) l += b.data[i] * o.maskLogits.data[i];
      return l;
    };
    const ModelOutput o = forward(f, p);
    const std::vector<double> grad = backward(o.cache, p, a, b).flatten();
    std::vector<double> flat = p.flatten();
    double worst = 0.0;
    for (size_t i = 0; i < flat.size(); ++i) {
      DetectorParams hi = p, lo = p;
      std::vector<double> fh = flat, fl = flat;
      fh[i] += 1e-5;
      fl[i] -= 1e-5;
      hi.unflatten(fh);
      lo.unflatten(fl);
      const double fd = (loss(hi) - loss(lo)) / 2e-5;
      if (std::abs(fd) < 1e-12 && std::abs(grad[i]) < 1e-12) continue;
      worst = std::max(worst, rel_err(fd, grad[i]));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("parameter layout and initialization") {
  CHECK(expected_param_count(16) == 17u * 17u + 16u + 17u + 17u);
  const DetectorParams p = DetectorParams::initialize(42);
  CHECK(p.count() == expected_param_count(16));
  CHECK(p.flatten().size() == p.count());
  const double a = std::sqrt(6.0 / (kFeatureDims + 16));
  for (double w : p.mixWeights) CHECK(std::abs(w) <= a);
  for (double g : p.gateLogits) CHECK(g == 0.0);
  for (double b : p.mixBias) CHECK(b == 0.0);
  CHECK(p.clsBias == 0.0);
  CHECK(p.maskBias == 0.0);
  CHECK(DetectorParams::initialize(42) == p);
  CHECK_FALSE(DetectorParams::initialize(43) == p);
  CHECK_THROWS_AS(DetectorParams::zeros(0, 16), PreconditionError);
  CHECK_THROWS_AS(DetectorParams::zeros(300, 16), PreconditionError);
}

TEST_CASE("checkpoint round trip and header") {
  const DetectorParams p = random_params(77, 32, 16);
  const auto bytes = encode_params(p);
  REQUIRE(bytes.size() == 16 + 8 * p.count());
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "AADF0001");
  CHECK(bytes[8] == 32);
  CHECK(bytes[12] == 16);
  CHECK(decode_params(bytes) == p);

  const auto path = std::filesystem::temp_directory_path() / "aadf_test_params.bin";
  save_params(p, path);
  CHECK(load_params(path) == p);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_params(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_params(bad), FormatError);
  CHECK_THROWS_AS(load_params("/nonexistent/params.bin"), IoError);
}

TEST_CASE("add_scaled accumulates field by field") {
  DetectorParams acc = random_params(1);
  const DetectorParams g = random_params(2);
  const auto before = acc.flatten(), gf = g.flatten();
  add_scaled(acc, g, 0.25);
  const auto after = acc.flatten();
  for (size_t i = 0; i < after.size(); ++i) CHECK(after[i] == before[i] + 0.25 * gf[i]);
}
