#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "vpc/data.hpp"

using namespace vpc;

namespace {

double curve_distance_3d(const std::string& name, const std::vector<double>& p) {
  // nearest distance to the scaled parametric curve over a fine t grid
  double best = kInf;
  const int n = 20000;
  auto consider = [&](double x, double y, double z) {
    double d = (p[0] - 4.0 * x) * (p[0] - 4.0 * x) + (p[1] - 4.0 * y) * (p[1] - 4.0 * y) +
               (p[2] - 4.0 * z) * (p[2] - 4.0 * z);
    best = std::min(best, d);
  };
  for (int i = 0; i <= n; ++i) {
    double t = -M_PI + 2.0 * M_PI * i / n;
    if (name == "bent_lissajous") {
      consider(std::sin(2 * t), std::cos(t), std::cos(2 * t));
    } else if (name == "interlocked_circles") {
      consider(std::sin(t), std::cos(t), 0.0);
      consider(1.0 + std::sin(t), 0.0, std::cos(t));
    } else if (name == "knotted") {
      consider(std::sin(t) + 2.0 * std::sin(2 * t), std::cos(t) - 2.0 * std::cos(2 * t),
               std::sin(3 * t));
    } else if (name == "twisted_eight") {
      consider(std::sin(t), std::cos(t), 0.0);
      consider(2.0 + std::sin(t), 0.0, std::cos(t));
    }
  }
  return std::sqrt(best);
}

}  // namespace

TEST_CASE("dataset catalog") {
  CHECK(dataset_names().size() == 8);
  CHECK(dataset_dim("spiral") == 2);
  CHECK(dataset_dim("knotted") == 3);
  CHECK_THROWS_AS(dataset_dim("moons"), ArgumentError);
  CHECK_THROWS_AS(generate_clean("moons", 10, 0), ArgumentError);
}

TEST_CASE("generation is deterministic and noise uses its own stream") {
  for (const auto& name : dataset_names()) {
    Points a = generate(name, 200, 42);
    Points b = generate(name, 200, 42);
    CHECK(a == b);
    Points c = generate(name, 200, 43);
    CHECK(a != c);
    Points clean = generate_clean(name, 200, 42);
    REQUIRE(clean.size() == a.size());
    double max_shift = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j)
        max_shift = std::max(max_shift, std::abs(a[i][j] - clean[i][j]));
    CHECK(max_shift > 0.0);
    CHECK(max_shift < 0.07);  // global noise is N(0, 0.01^2)
  }
}

TEST_CASE("checkerboard points stay inside their cluster squares") {
  Points pts = generate_clean("checkerboard", 3000, 5);
  const double g[3] = {-1.5, 0.0, 1.5};
  for (const auto& p : pts) {
    bool inside = false;
    for (double cx : g)
      for (double cy : g)
        if (std::abs(p[0] - cx) <= 0.6 + 1e-12 && std::abs(p[1] - cy) <= 0.6 + 1e-12)
          inside = true;
    CHECK(inside);
  }
}

TEST_CASE("pinwheel arms cluster at five base angles") {
  Points pts = generate_clean("pinwheel", 4000, 6);
  int near_arm = 0;
  for (const auto& p : pts) {
    double theta = std::atan2(p[1], p[0]);
    double best = kInf;
    for (int k = 0; k < 5; ++k) {
      double ref = 2.0 * M_PI * k / 5.0;
      double d = std::remainder(theta - ref, 2.0 * M_PI);
      best = std::min(best, std::abs(d));
    }
    if (best < 0.6) ++near_arm;  // 3 sigma of the angular jitter
  }
  CHECK(near_arm > 3900);
}

TEST_CASE("alphabet points lie in lit cells of the W bitmap") {
  Points pts = generate_clean("alphabet", 2000, 7);
  for (const auto& p : pts) {
    CHECK(std::abs(p[0]) <= 0.5 + 1e-12);
    CHECK(std::abs(p[1]) <= 0.7 + 1e-12);
  }
}

TEST_CASE("3D clean samples lie on their curves") {
  for (const auto& name : {"bent_lissajous", "interlocked_circles", "knotted", "twisted_eight"}) {
    Points pts = generate_clean(name, 60, 9);
    for (const auto& p : pts) CHECK(curve_distance_3d(name, p) < 5e-3);
  }
}

TEST_CASE("knotted curve passes through the scaled (0, -4, 0)") {
  // t = 0: (sin t + 2 sin 2t, cos t - 2 cos 2t, sin 3t) = (0, -1, 0), scaled by 4
  std::vector<double> probe = {0.0, -4.0, 0.0};
  CHECK(curve_distance_3d("knotted", probe) < 1e-6);
}

TEST_CASE("standardization normalizes the train split exactly") {
  Points raw = generate("pinwheel", 2000, 11);
  SplitSpec spec{1000, 500, 500};
  SplitDatasets ds = standardize_and_split(raw, spec, 11, "pinwheel");
  CHECK(ds.train.points.size() == 1000);
  CHECK(ds.val.points.size() == 500);
  CHECK(ds.test.points.size() == 500);
  for (int j = 0; j < 2; ++j) {
    double mean = 0.0, var = 0.0;
    for (const auto& p : ds.train.points) mean += p[static_cast<std::size_t>(j)];
    mean /= 1000.0;
    for (const auto& p : ds.train.points) {
      double d = p[static_cast<std::size_t>(j)] - mean;
      var += d * d;
    }
    var /= 1000.0;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-9);
  }
  // val/test use the train statistics, not their own
  CHECK(ds.val.standardization.mean == ds.train.standardization.mean);

  CHECK_THROWS_AS(standardize_and_split(raw, SplitSpec{3000, 500, 500}, 1), ArgumentError);
  CHECK_THROWS_AS(standardize_and_split(raw, SplitSpec{0, 1, 1}, 1), ArgumentError);
  Points constant(100, std::vector<double>{1.0, 1.0});
  CHECK_THROWS_AS(standardize_and_split(constant, SplitSpec{50, 25, 25}, 1), NumericError);
}

TEST_CASE("points CSV round-trips exactly") {
  Points pts = generate("spiral", 500, 3);
  const std::string path = "/tmp/vpc_test_points.csv";
  write_points_csv(path, pts);
  Points back = read_points_csv(path);
  CHECK(back == pts);
  std::remove(path.c_str());

  const std::string bad = "/tmp/vpc_test_bad.csv";
  {
    std::ofstream os(bad);
    os << "x1,x2\n1.0,zap\n";
  }
  CHECK_THROWS_AS(read_points_csv(bad), IoError);
  std::remove(bad.c_str());
  CHECK_THROWS_AS(read_points_csv("/tmp/definitely_missing_file.csv"), IoError);
}

TEST_CASE("identical seeds give identical CSV bytes") {
  auto dump = [](std::uint64_t seed) {
    Points pts = generate("checkerboard", 300, seed);
    const std::string path = "/tmp/vpc_test_repro.csv";
    write_points_csv(path, pts);
    std::ifstream is(path);
    std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::remove(path.c_str());
    return all;
  };
  CHECK(dump(21) == dump(21));
}

TEST_CASE("metadata sidecar is valid JSON with the expected fields") {
  Standardization st;
  st.mean = {0.1, -0.2};
  st.stddev = {1.1, 0.9};
  const std::string path = "/tmp/vpc_test_meta.json";
  write_dataset_metadata(path, "spiral", 7, SplitSpec{}, st);
  std::ifstream is(path);
  nlohmann::json doc;
  is >> doc;
  CHECK(doc["name"] == "spiral");
  CHECK(doc["seed"] == 7);
  CHECK(doc["split"]["train"] == 10000);
  CHECK(doc["standardization"]["stddev"][1] == 0.9);
  std::remove(path.c_str());
}
