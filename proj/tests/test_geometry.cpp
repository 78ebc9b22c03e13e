#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "doctest.h"
#include "oracles/camera_trig.hpp"
#include "support.hpp"
#include "vqadiff/error.hpp"
#include "vqadiff/geometry.hpp"

using namespace vqadiff;
using namespace vqadiff::geometry;

TEST_CASE("ring positions match spherical coordinates") {
  const auto ring = camera_ring(16, 5.0, 1.5, 0.0);
  REQUIRE(ring.poses.size() == 16);
  for (int i = 0; i < 16; ++i) {
    const auto p = ring.poses[i].position();
    const auto want = oracle::ring_position(i, 16, 5.0, 1.5, 0.0);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(p[k] - want[k]) < 1e-9);
    CHECK(std::abs(p.norm() - 1.5) < 1e-9);
    CHECK(std::abs(p.z() - 1.5 * std::sin(oracle::rad(5.0))) < 1e-9);
  }
  // pose 0 sits at (1.5 cos 5, 0, 1.5 sin 5)
  const auto p0 = ring.poses[0].position();
  CHECK(p0.x() == doctest::Approx(1.49429).epsilon(1e-5));
  CHECK(std::abs(p0.y()) < 1e-12);
  CHECK(p0.z() == doctest::Approx(0.13074).epsilon(1e-4));
}

TEST_CASE("ring azimuth gaps are constant") {
  for (int n : {1, 3, 4, 9, 16}) {
    const auto ring = camera_ring(n, 5.0, 1.5, 10.0);
    CHECK(ring.step_deg() == 360.0 / n);
    std::set<double> gaps;
    for (int i = 0; i < n; ++i) {
      const double a = ring.poses[i].azimuth_deg, b = ring.poses[(i + 1) % n].azimuth_deg;
      double gap = std::fmod(b - a + 720.0, 360.0);
      if (n == 1) gap = 360.0;
      gaps.insert(std::round(gap * 1e9) / 1e9);
      CHECK(ring.poses[i].elevation_deg == 5.0);
      CHECK(ring.poses[i].radius == 1.5);
    }
    CHECK(gaps.size() == 1);
    CHECK(*gaps.begin() == doctest::Approx(360.0 / n).epsilon(1e-12));
  }
  const auto quad = camera_ring(4, 0, 1, 0);
  CHECK(quad.poses[0].azimuth_deg == 0);
  CHECK(quad.poses[1].azimuth_deg == 90);
  CHECK(quad.poses[2].azimuth_deg == 180);
  CHECK(quad.poses[3].azimuth_deg == 270);
}

TEST_CASE("ring poses are valid look-at cameras") {
  const auto ring = camera_ring(16, 5.0, 1.5, 0.0);
  for (const auto& pose : ring.poses) {
    const Mat3 r = pose.rotation();
    CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-9);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
    const Vec3 to_origin = (-pose.position()).normalized();
    const double angle = std::acos(std::clamp(pose.forward().dot(to_origin), -1.0, 1.0));
    CHECK(angle < 1e-7);  // acos loses precision near 1
    CHECK((pose.forward().cross(to_origin)).norm() < 1e-9);
    // origin lands on the optical axis at depth = radius
    const Vec3 c = world_to_camera(pose.extrinsic, Vec3::Zero());
    CHECK(std::abs(c.x()) < 1e-9);
    CHECK(std::abs(c.y()) < 1e-9);
    CHECK(std::abs(c.z() - 1.5) < 1e-9);
  }
}

TEST_CASE("look_at basis for a camera on -y") {
  const auto e = look_at_extrinsic(Vec3(0, -1.5, 0), Vec3::Zero(), Vec3(0, 0, 1));
  const Mat3 r = e.leftCols<3>();
  CHECK((r.row(2).transpose() - Vec3(0, 1, 0)).norm() < 1e-12);
  // +x right, +y down
  CHECK((r.row(0).transpose() - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK((r.row(1).transpose() - Vec3(0, 0, -1)).norm() < 1e-12);
  CHECK((e.col(3) - (-r * Vec3(0, -1.5, 0))).norm() < 1e-12);
}

TEST_CASE("look_at round trip on random points") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  const auto e = look_at_extrinsic(Vec3(1.2, -0.7, 0.4), Vec3(0.1, 0.2, -0.1), Vec3(0, 0, 1));
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK((camera_to_world(e, world_to_camera(e, p)) - p).norm() < 1e-9);
  }
}

TEST_CASE("look_at rejects degenerate input") {
  auto code_of = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::validation;
  };
  CHECK(code_of([] { look_at_extrinsic(Vec3(0, 0, 2), Vec3::Zero(), Vec3(0, 0, 1)); }) ==
        ErrorCode::degenerate_geometry);
  CHECK(code_of([] { look_at_extrinsic(Vec3(1, 1, 1), Vec3(1, 1, 1), Vec3(0, 0, 1)); }) ==
        ErrorCode::degenerate_geometry);
  CHECK(code_of([] { camera_ring(0); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { camera_ring(16, 5, 0); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { camera_ring(16, 5, -1); }) == ErrorCode::invalid_argument);
}

TEST_CASE("normalize_to_cube") {
  auto id = normalize_to_cube(Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5));
  CHECK(id.scale == 1.0);
  CHECK(id.translation.norm() == 0.0);

  auto t = normalize_to_cube(Vec3(0, 0, 0), Vec3(2, 2, 2));
  CHECK(t.scale == 0.5);
  CHECK((t.translation - Vec3(-0.5, -0.5, -0.5)).norm() < 1e-15);

  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-10, 10), ext(0.01, 7);
  for (int i = 0; i < 50; ++i) {
    const Vec3 lo(u(rng), u(rng), u(rng));
    const Vec3 hi = lo + Vec3(ext(rng), ext(rng), ext(rng));
    const auto n = normalize_to_cube(lo, hi);
    const Vec3 a = n.apply(lo), b = n.apply(hi);
    int longest = 0;
    (hi - lo).maxCoeff(&longest);
    CHECK(a[longest] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(b[longest] == doctest::Approx(0.5).epsilon(1e-12));
    for (int k = 0; k < 3; ++k) {
      CHECK(a[k] >= -0.5 - 1e-12);
      CHECK(b[k] <= 0.5 + 1e-12);
    }
    // idempotent
    const auto again = normalize_to_cube(a, b);
    CHECK(std::abs(again.scale - 1.0) < 1e-12);
    CHECK(again.translation.norm() < 1e-12);
  }
  CHECK_THROWS_AS(normalize_to_cube(Vec3(1, 1, 1), Vec3(1, 1, 1)), Error);
}

TEST_CASE("obj bounds") {
  testsupport::TempDir tmp("obj");
  {
    std::ofstream f(tmp / "m.obj");
    f << "# cube-ish\nv 0 0 0\nv 2 1 -3\nvn 0 0 1\nv -1 4 0.5\nf 1 2 3\n";
  }
  const auto [lo, hi] = obj_bounds(tmp / "m.obj");
  CHECK((lo - Vec3(-1, 0, -3)).norm() == 0.0);
  CHECK((hi - Vec3(2, 4, 0.5)).norm() == 0.0);
}

TEST_CASE("manifest is deterministic and round-trips") {
  testsupport::TempDir tmp("manifest");
  const auto ring = camera_ring(16);
  const auto m = build_manifest("car_a", "models/a.obj", Vec3(0, 0, 0), Vec3(4, 2, 1), ring, tmp.path);
  REQUIRE(m.output_paths.size() == 16);
  for (int i = 0; i < 16; ++i) CHECK(m.output_paths[i].find(view_file_name(i)) != std::string::npos);
  CHECK(std::set<std::string>(m.output_paths.begin(), m.output_paths.end()).size() == 16);
  CHECK(view_file_name(0) == "view_00.png");
  CHECK(view_file_name(15) == "view_15.png");

  auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const auto first = read(tmp / "car_a" / "manifest.json");
  build_manifest("car_a", "models/a.obj", Vec3(0, 0, 0), Vec3(4, 2, 1), ring, tmp.path);
  CHECK(read(tmp / "car_a" / "manifest.json") == first);

  const auto parsed = parse_manifest(first);
  CHECK(parsed == m);
  CHECK(serialize_manifest(parsed) == first);

  const auto j = nlohmann::json::parse(first);
  for (const char* key : {"instance_id", "model_path", "normalization", "cameras", "image_size", "fov_deg", "outputs"})
    CHECK(j.contains(key));
  CHECK(j["image_size"] == 256);
  CHECK(j["cameras"].size() == 16);
  CHECK(j["cameras"][0]["extrinsic"].size() == 3);
  CHECK(j["cameras"][0]["extrinsic"][0].size() == 4);
  // sorted keys, two-space indent
  CHECK(first.rfind("{\n  \"cameras\"", 0) == 0);
}

TEST_CASE("manifest write failure") {
  testsupport::TempDir tmp("manifest-fail");
  {
    std::ofstream f(tmp / "blocker");
    f << "x";
  }
  try {
    build_manifest("car", "m.obj", Vec3(0, 0, 0), Vec3(1, 1, 1), camera_ring(16), tmp / "blocker");
    FAIL("expected a manifest-write error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::manifest_write);
  }
}

TEST_CASE("ring json round trip") {
  const auto ring = camera_ring(16, 5.0, 1.5, 30.0);
  CHECK(ring_from_json(ring_to_json(ring)) == ring);
}
