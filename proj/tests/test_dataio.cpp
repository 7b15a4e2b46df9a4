#include "cgnet/dataio.hpp"
#include "cgnet/errors.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <set>

using namespace cgnet;
using testutil::TempDir;

namespace {

std::vector<unsigned char> header(const std::string& h) { return {h.begin(), h.end()}; }

}  // namespace

TEST_CASE("white pixel ppm") {
  TempDir dir("ppm");
  auto bytes = header("P6\n1 1\n255\n");
  bytes.insert(bytes.end(), {0xFF, 0xFF, 0xFF});
  testutil::write_bytes(dir / "w.ppm", bytes);
  const auto img = read_ppm(dir / "w.ppm");
  CHECK(img.dims() == Dims{1, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) CHECK(img[c] == 255.f);
}

TEST_CASE("ppm and pgm round trips are byte-identical") {
  TempDir dir("rt");
  Rng rng(3);
  Tensor<float> img(Dims{1, 3, 5, 7});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.below(256));
  write_ppm(dir / "a.ppm", img);
  const auto back = read_ppm(dir / "a.ppm");
  CHECK((back.array() == img.array()).all());
  write_ppm(dir / "b.ppm", back);
  CHECK(testutil::read_bytes(dir / "a.ppm") == testutil::read_bytes(dir / "b.ppm"));

  Labels lab(1, 4, 6);
  for (auto& v : lab.v) v = static_cast<std::int32_t>(rng.below(5));
  lab.v[3] = kIgnoreLabel;
  write_pgm(dir / "a.pgm", lab);
  CHECK(read_pgm(dir / "a.pgm").v == lab.v);
  write_pgm(dir / "b.pgm", read_pgm(dir / "a.pgm"));
  CHECK(testutil::read_bytes(dir / "a.pgm") == testutil::read_bytes(dir / "b.pgm"));
}

TEST_CASE("netpbm readers reject malformed files with an offset") {
  TempDir dir("bad");
  auto expect_error = [&](const std::vector<unsigned char>& b, const std::string& fragment, bool ppm = true) {
    testutil::write_bytes(dir / "f", b);
    try {
      if (ppm)
        read_ppm(dir / "f");
      else
        read_pgm(dir / "f");
      FAIL("no error for " << fragment);
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CAPTURE(msg);
      CHECK(msg.find(fragment) != std::string::npos);
      CHECK(msg.find("byte offset") != std::string::npos);
    }
  };
  expect_error(header("P3\n1 1\n255\n255 255 255\n"), "unsupported ASCII");
  expect_error(header("Q6\n1 1\n255\n"), "magic");
  auto truncated = header("P6\n2 2\n255\n");
  truncated.insert(truncated.end(), 5, 0);
  expect_error(truncated, "truncated payload");
  auto wide = header("P5\n1 1\n65535\n");
  wide.insert(wide.end(), 2, 0);
  expect_error(wide, "maxval", false);
  auto trailing = header("P5\n1 1\n255\n");
  trailing.insert(trailing.end(), 2, 0);
  expect_error(trailing, "trailing", false);
}

TEST_CASE("all-255 label map loads as all ignore") {
  TempDir dir("ign");
  write_pgm(dir / "l.pgm", Labels(1, 3, 3, kIgnoreLabel));
  for (auto v : read_pgm(dir / "l.pgm").v) CHECK(v == kIgnoreLabel);
}

TEST_CASE("means") {
  TempDir dir("means");
  Tensor<float> gray(Dims{1, 3, 4, 4}, 128.f);
  CHECK(compute_means({Sample{gray, Labels(1, 4, 4)}}) == std::array<double, 3>{128, 128, 128});
  const std::vector<Sample> two{{Tensor<float>(Dims{1, 3, 2, 2}, 0.f), Labels(1, 2, 2)},
                                {Tensor<float>(Dims{1, 3, 2, 2}, 100.f), Labels(1, 2, 2)}};
  CHECK(compute_means(two) == std::array<double, 3>{50, 50, 50});

  // Random images of different sizes against a two-pass oracle.
  Rng rng(4);
  Manifest m{3, {}};
  std::vector<Tensor<float>> images;
  for (int k = 0; k < 3; ++k) {
    Tensor<float> img(Dims{1, 3, 3 + k, 5});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.below(256));
    const auto name = "i" + std::to_string(k);
    write_ppm(dir / (name + ".ppm"), img);
    write_pgm(dir / (name + ".pgm"), Labels(1, 3 + k, 5));
    m.entries.push_back({dir / (name + ".ppm"), dir / (name + ".pgm")});
    images.push_back(img);
  }
  const auto got = compute_means(m);
  for (int c = 0; c < 3; ++c) {
    double sum = 0, count = 0;
    for (const auto& img : images)
      for (std::size_t k = 0; k < img.plane_size(); ++k) sum += img.plane(0, c)[k], count += 1;
    CHECK(std::abs(got[static_cast<std::size_t>(c)] - sum / count) < 1e-9);
  }
  CHECK_THROWS(compute_means(Manifest{3, {}}));
}

TEST_CASE("manifest parsing") {
  TempDir dir("man");
  write_ppm(dir / "a.ppm", Tensor<float>(Dims{1, 3, 2, 2}));
  write_pgm(dir / "a.pgm", Labels(1, 2, 2));
  testutil::write_text(dir / "m.txt", "# comment\nclasses=3\na.ppm\ta.pgm\n\n");
  const Manifest m = read_manifest(dir / "m.txt");
  CHECK(m.num_classes == 3);
  REQUIRE(m.entries.size() == 1);
  CHECK(m.entries[0].image == dir / "a.ppm");

  testutil::write_text(dir / "nohdr.txt", "a.ppm\ta.pgm\n");
  CHECK_THROWS_AS(read_manifest(dir / "nohdr.txt"), FormatError);
  testutil::write_text(dir / "missing.txt", "classes=3\nb.ppm\ta.pgm\n");
  CHECK_THROWS(read_manifest(dir / "missing.txt"));

  write_pgm(dir / "big.pgm", Labels(1, 2, 2, 3));
  testutil::write_text(dir / "range.txt", "classes=3\na.ppm\tbig.pgm\n");
  CHECK_THROWS_AS(load_samples(read_manifest(dir / "range.txt")), FormatError);

  write_manifest(dir / "copy.txt", m);
  CHECK(read_manifest(dir / "copy.txt").entries[0].labels == m.entries[0].labels);
}

TEST_CASE("category map") {
  TempDir dir("cat");
  testutil::write_text(dir / "c.txt", "0 0\n1 0\n2 1\n");
  CHECK(read_category_map(dir / "c.txt", 3) == std::vector<int>{0, 0, 1});
  CHECK_THROWS(read_category_map(dir / "c.txt", 4));
  testutil::write_text(dir / "bad.txt", "0 0\n7 1\n");
  CHECK_THROWS(read_category_map(dir / "bad.txt", 3));
}

TEST_CASE("synthetic dataset") {
  TempDir a("synA"), b("synB");
  const auto ma = gen_synthetic(7, 6, 64, 4, a.path());
  gen_synthetic(7, 6, 64, 4, b.path());
  for (const auto& e : std::filesystem::directory_iterator(a.path())) {
    const auto name = e.path().filename().string();
    CAPTURE(name);
    CHECK(testutil::read_bytes(e.path()) == testutil::read_bytes(b / name));
  }
  const auto samples = load_samples(read_manifest(ma));
  CHECK(samples.size() == 6);
  CHECK_THROWS_AS(gen_synthetic(7, 2, 50, 4, a / "x"), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic(7, 2, 64, 2, a / "x"), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic(7, 2, 64, 9, a / "x"), std::invalid_argument);
}

TEST_CASE("synthetic labels are in range and every class appears") {
  for (int K : {3, 5, 8}) {
    std::set<int> seen;
    bool has_ignore = false;
    for (int i = 0; i < 100; ++i) {
      const Sample s = synthesize_sample(11, i, 32, K);
      REQUIRE(s.labels.h == 32);
      for (auto v : s.labels.v) {
        REQUIRE(((v >= 0 && v < K) || v == kIgnoreLabel));
        if (v == kIgnoreLabel)
          has_ignore = true;
        else
          seen.insert(v);
      }
      CHECK(s.image.array().minCoeff() >= 0);
      CHECK(s.image.array().maxCoeff() <= 255);
    }
    CAPTURE(K);
    CHECK(static_cast<int>(seen.size()) == K);
    CHECK(has_ignore);
  }
}

TEST_CASE("shape borders are ignore pixels") {
  const Sample s = synthesize_sample(3, 0, 64, 5);
  const auto& y = s.labels;
  for (int i = 1; i < 63; ++i)
    for (int j = 1; j < 63; ++j) {
      const int v = y.at(0, i, j);
      if (v == kIgnoreLabel || v == 0) continue;
      // a labelled shape pixel never touches a different valid class directly
      for (auto [di, dj] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int u = y.at(0, i + di, j + dj);
        CHECK((u == v || u == kIgnoreLabel));
      }
    }
}
