#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "aadf/image.hpp"
#include "aadf/random.hpp"

using namespace aadf;
namespace fs = std::filesystem;

namespace {

Image random_image(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Image img(rows, cols);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

Grid random_grid(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Grid g(rows, cols);
  for (double& v : g.data) v = rng.uniform();
  return g;
}

fs::path tmp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "aadf_test_image";
  fs::create_directories(dir);
  return dir / name;
}

void write_ppm(const fs::path& p, int w, int h, unsigned char fill) {
  std::ofstream out(p, std::ios::binary);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int i = 0; i < w * h * 3; ++i) out.put(static_cast<char>(fill));
}

// Bilinear resize written from the sampling definition, one pixel at a time.
double ref_sample(const Grid& g, int d, int outSize, int inSize, bool rows, int other) {
  double s = (d + 0.5) * static_cast<double>(inSize) / outSize - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(inSize - 1));
  const int i0 = static_cast<int>(std::floor(s));
  const int i1 = std::min(i0 + 1, inSize - 1);
  const double t = s - i0;
  return rows ? (1 - t) * g.at(i0, other) + t * g.at(i1, other) : (1 - t) * g.at(other, i0) + t * g.at(other, i1);
}

Grid ref_resize(const Grid& g, int outR, int outC) {
  Grid tmp(g.rows, outC);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < outC; ++c) tmp.at(r, c) = ref_sample(g, c, outC, g.cols, false, r);
  Grid out(outR, outC);
  for (int r = 0; r < outR; ++r)
    for (int c = 0; c < outC; ++c) out.at(r, c) = ref_sample(tmp, r, outR, g.rows, true, c);
  return out;
}

}  // namespace

TEST_CASE("load_image maps PPM bytes to [0,1]") {
  const fs::path white = tmp_path("white.ppm"), black = tmp_path("black.ppm");
  write_ppm(white, 2, 2, 255);
  write_ppm(black, 2, 2, 0);
  const Image w = load_image(white), b = load_image(black);
  CHECK(w.rows == 2);
  CHECK(w.cols == 2);
  for (double v : w.data) CHECK(v == 1.0);
  for (double v : b.data) CHECK(v == 0.0);
}

TEST_CASE("load_image error kinds") {
  CHECK_THROWS_AS(load_image(tmp_path("does_not_exist.png")), IoError);
  const fs::path bogus = tmp_path("bogus.ppm");
  {
    std::ofstream out(bogus);
    out << "P3\n1 1\n255\n0 0 0\n";
  }
  CHECK_THROWS_AS(load_image(bogus), FormatError);
}

TEST_CASE("PNG and PPM round trip stays within half a quantization step") {
  const Image img = random_image(16, 16, 11);
  for (const char* name : {"rt.png", "rt.ppm"}) {
    const fs::path p = tmp_path(name);
    save_image(img, p);
    const Image back = load_image(p);
    CHECK(max_abs_diff(img, back) <= 1.0 / 510.0 + 1e-15);
  }
}

TEST_CASE("save_image quantization: half-up rounding and clamping") {
  CHECK(quantize_byte(0.5) == 128);
  CHECK(quantize_byte(1.2) == 255);
  CHECK(quantize_byte(-0.1) == 0);
  const Image half(8, 8, 0.5);
  const fs::path p = tmp_path("half.png");
  save_image(half, p);
  const auto bytes = to_bytes(load_image(p));
  for (auto b : bytes) CHECK(b == 128);
}

TEST_CASE("validate enforces the image invariants") {
  CHECK_THROWS_AS(validate(Image(4, 16)), PreconditionError);
  Image bad(8, 8, 0.1);
  bad.data[5] = std::nan("");
  CHECK_THROWS_AS(validate(bad), PreconditionError);
  CHECK_NOTHROW(validate(Image(8, 8, 0.2)));
}

TEST_CASE("pi_preprocess: degenerate channel passes through with std 1") {
  const StandardizedImage s = pi_preprocess(Image(20, 20, 0.7), 16);
  for (double v : s.raster.data) CHECK(std::abs(v) < 1e-12);
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(s.perChannelMean[ch] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(s.perChannelStd[ch] == 1.0);
  }
}

TEST_CASE("pi_preprocess: output channels have zero mean and unit std") {
  const StandardizedImage s = pi_preprocess(random_image(100, 60, 3), 48);
  CHECK(s.raster.rows == 48);
  CHECK(s.raster.cols == 48);
  for (int ch = 0; ch < 3; ++ch) {
    const Grid g = channel(s.raster, ch);
    const double m = g.mean();
    double var = 0;
    for (double v : g.data) var += (v - m) * (v - m);
    var /= static_cast<double>(g.size());
    CHECK(std::abs(m) <= 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-9);
  }
}

TEST_CASE("pi_preprocess: standardization reconstructs the resized input") {
  const Image img = random_image(32, 32, 5);
  const StandardizedImage s = pi_preprocess(img, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(std::abs(s.raster.at(r, c, ch) * s.perChannelStd[ch] + s.perChannelMean[ch] - img.at(r, c, ch)) <=
              1e-12);
}

TEST_CASE("resize_bilinear: constants, identity and the reference oracle") {
  const Grid c(7, 9, 0.3);
  const Grid up = resize_bilinear(c, 23, 5);
  for (double v : up.data) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));

  const Image img = random_image(13, 17, 8);
  CHECK(resize_bilinear(img, 13, 17) == img);

  const Grid g = random_grid(11, 7, 9);
  const Grid ours = resize_bilinear(g, 19, 30);
  const Grid ref = ref_resize(g, 19, 30);
  for (size_t i = 0; i < ours.size(); ++i) CHECK(std::abs(ours.data[i] - ref.data[i]) <= 1e-12);
}

TEST_CASE("resize_bilinear: 2x up then 2x down is close to the original") {
  // A smooth image; white noise is not band limited enough for this bound.
  const Image img = gaussian_blur(random_image(64, 64, 10), 2.0);
  const Image back = resize_bilinear(resize_bilinear(img, 128, 128), 64, 64);
  double err = 0;
  for (size_t i = 0; i < img.data.size(); ++i) err += std::abs(img.data[i] - back.data[i]);
  CHECK(err / static_cast<double>(img.data.size()) <= 0.02);
}

TEST_CASE("resize_bilinear_adjoint is the transpose of resize") {
  const Grid x = random_grid(9, 12, 21), y = random_grid(16, 5, 22);
  const Grid ax = resize_bilinear(x, 16, 5);
  const Grid aty = resize_bilinear_adjoint(y, 9, 12);
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < ax.size(); ++i) lhs += ax.data[i] * y.data[i];
  for (size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * aty.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("filters keep [0,1] inputs in [0,1] and preserve shape") {
  const Grid g = random_grid(20, 15, 4);
  for (const Grid& out : {gaussian_blur(g, 1.7), resize_bilinear(g, 33, 9)}) {
    for (double v : out.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(gaussian_blur(g, 1.7).same_shape(g));
  CHECK(sobel_edges(g).same_shape(g));
}

TEST_CASE("sobel_edges: constant, vertical step, transpose, homogeneity") {
  for (double v : sobel_edges(Grid(6, 6, 0.4)).data) CHECK(v == 0.0);

  Grid step(8, 10, 0.0);
  const int c0 = 5;
  for (int r = 0; r < 8; ++r)
    for (int c = c0; c < 10; ++c) step.at(r, c) = 1.0;
  const Grid e = sobel_edges(step);
  double mx = 0;
  for (double v : e.data) mx = std::max(mx, v);
  CHECK(mx == doctest::Approx(4.0));
  for (int r = 0; r < 8; ++r) {
    CHECK(e.at(r, c0 - 1) == doctest::Approx(4.0));
    CHECK(e.at(r, c0) == doctest::Approx(4.0));
    CHECK(e.at(r, c0 - 2) == 0.0);
    CHECK(e.at(r, c0 + 1) == 0.0);
  }

  const Grid g = random_grid(9, 13, 6);
  const Grid et = sobel_edges(g.transposed());
  const Grid te = sobel_edges(g).transposed();
  for (size_t i = 0; i < et.size(); ++i) CHECK(std::abs(et.data[i] - te.data[i]) <= 1e-12);

  Grid scaled = g;
  for (double& v : scaled.data) v *= 2.5;
  const Grid es = sobel_edges(scaled), eg = sobel_edges(g);
  for (size_t i = 0; i < es.size(); ++i) CHECK(es.data[i] == doctest::Approx(2.5 * eg.data[i]));
}

TEST_CASE("gaussian_blur: kernel, constants, impulse against dense convolution, mass") {
  const auto k = gaussian_kernel(1.0);
  CHECK(k.size() == 7);
  double ks = 0;
  for (double v : k) ks += v;
  CHECK(ks == doctest::Approx(1.0).epsilon(1e-15));

  for (double v : gaussian_blur(Grid(10, 10, 0.25), 1.3).data) CHECK(std::abs(v - 0.25) <= 1e-12);

  Grid imp(21, 21, 0.0);
  imp.at(10, 10) = 1.0;
  const Grid b = gaussian_blur(imp, 1.0);
  // Dense 2-D kernel built from the unnormalized Gaussian, normalized over the full square.
  double dense[7][7], total = 0;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) total += dense[i + 3][j + 3] = std::exp(-(i * i + j * j) / 2.0);
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) CHECK(b.at(10 + i, 10 + j) == doctest::Approx(dense[i + 3][j + 3] / total));
  CHECK(b.at(10, 10) == doctest::Approx(k[3] * k[3]).epsilon(1e-14));
  CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("dilate_binary: identity, block, additivity, monotonicity") {
  Rng rng(17);
  BoolGrid m(15, 12);
  for (int r = 0; r < 15; ++r)
    for (int c = 0; c < 12; ++c) m.set(r, c, rng.uniform() < 0.08);
  CHECK(dilate_binary(m, 0) == m);

  BoolGrid one(9, 9);
  one.set(0, 1, true);
  const BoolGrid d = dilate_binary(one, 2);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) CHECK(d.at(r, c) == (r <= 2 && c <= 3));

  auto brute = [](const BoolGrid& x, int rad) {
    BoolGrid out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r)
      for (int c = 0; c < x.cols; ++c)
        for (int i = 0; i < x.rows; ++i)
          for (int j = 0; j < x.cols; ++j)
            if (x.at(i, j) && std::abs(i - r) <= rad && std::abs(j - c) <= rad) out.set(r, c, true);
    return out;
  };
  CHECK(dilate_binary(dilate_binary(m, 1), 2) == dilate_binary(m, 3));
  CHECK(dilate_binary(m, 3) == brute(m, 3));

  BoolGrid bigger = m;
  bigger.set(7, 7, true);
  const BoolGrid dm = dilate_binary(m, 2), db = dilate_binary(bigger, 2);
  for (size_t i = 0; i < dm.data.size(); ++i)
    if (dm.data[i]) CHECK(db.data[i]);
}

TEST_CASE("quantization tables: quality 50 is the base table, 100 is all ones") {
  // Published base luminance table, row-major.
  const int base[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                        14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                        18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                        49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  const QuantTable q50 = luma_quant_table(50);
  for (int i = 0; i < 64; ++i) CHECK(q50[i] == base[i]);
  for (int v : luma_quant_table(100)) CHECK(v == 1);
  for (int v : chroma_quant_table(100)) CHECK(v == 1);
  // q = 10: scale 500, entry = (base * 500 + 50) / 100 clamped to 255.
  const QuantTable q10 = luma_quant_table(10);
  CHECK(q10[0] == 80);
  CHECK(q10[63] == 255);
  CHECK_THROWS_AS(luma_quant_table(0), PreconditionError);
  CHECK_THROWS_AS(luma_quant_table(101), PreconditionError);
}

TEST_CASE("jpeg_sim: quality 100 is near lossless") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Image img = random_image(24, 40, seed);
    CHECK(psnr(img, jpeg_sim(img, {100, false})) >= 50.0);
  }
}

TEST_CASE("jpeg_sim: constant image stays constant within the DC rounding bound") {
  for (int q : {10, 50, 75, 95}) {
    const Image img(16, 24, 0.37);
    const Image out = jpeg_sim(img, {q, false});
    for (double v : out.data) CHECK(v == out.data[0]);
    // DC = 8 * (level - 128): rounding moves each YCbCr level by at most Q/16 (0..255 scale).
    const double dy = luma_quant_table(q)[0] / 16.0, dc = chroma_quant_table(q)[0] / 16.0;
    const double bound = (dy + 1.772 * dc) / 255.0;  // largest RGB coefficient on a chroma channel
    CHECK(max_abs_diff(img, out) <= bound + 1e-12);
  }
}

TEST_CASE("jpeg_sim: recompression at the same quality costs little") {
  const Image img = gaussian_blur(random_image(32, 32, 12), 1.0);
  for (int q : {50, 75}) {
    const Image once = jpeg_sim(img, {q, false});
    const Image twice = jpeg_sim(once, {q, false});
    CHECK(std::abs(psnr(img, once) - psnr(img, twice)) < 3.0);
  }
}

TEST_CASE("jpeg_sim: chroma subsampling path and non-multiple-of-8 sizes") {
  const Image img = random_image(13, 21, 14);
  const Image a = jpeg_sim(img, {80, true});
  CHECK(a.same_shape(img));
  for (double v : a.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("translate replicates edges") {
  const Image img = random_image(10, 10, 15);
  const Image t = translate(img, 3, -2);
  CHECK(t.at(5, 5, 0) == img.at(7, 2, 0));
  CHECK(t.at(0, 0, 1) == img.at(2, 0, 1));
  CHECK(t.at(9, 9, 2) == img.at(9, 6, 2));
}
