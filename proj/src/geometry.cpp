#include "vqadiff/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "vqadiff/error.hpp"

namespace vqadiff::geometry {

namespace {

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

double wrap_degrees(double a) {
  double w = std::fmod(a, 360.0);
  if (w < 0) w += 360.0;
  // fmod can return 360 - ulp for tiny negative inputs; keep the range half-open.
  return w >= 360.0 ? 0.0 : w;
}

}  // namespace

Vec3 CameraPose::position() const { return -rotation().transpose() * translation(); }

Vec3 CameraPose::forward() const { return rotation().row(2).transpose(); }

Extrinsic look_at_extrinsic(const Vec3& position, const Vec3& target, const Vec3& up_hint) {
  const Vec3 baseline = target - position;
  const double dist = baseline.norm();
  if (!(dist > 1e-12)) fail(ErrorCode::degenerate_geometry, "look_at: camera coincides with target");
  const Vec3 forward = baseline / dist;
  const Vec3 side = forward.cross(up_hint);
  if (!(side.norm() > 1e-12 * std::max(1.0, up_hint.norm()))) {
    fail(ErrorCode::degenerate_geometry, "look_at: up hint is parallel to the viewing direction");
  }
  const Vec3 right = side.normalized();
  const Vec3 down = forward.cross(right);

  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();

  Extrinsic e;
  e.leftCols<3>() = r;
  e.col(3) = -r * position;
  return e;
}

Vec3 world_to_camera(const Extrinsic& extrinsic, const Vec3& p_world) {
  return extrinsic.leftCols<3>() * p_world + extrinsic.col(3);
}

Vec3 camera_to_world(const Extrinsic& extrinsic, const Vec3& p_cam) {
  return extrinsic.leftCols<3>().transpose() * (p_cam - extrinsic.col(3));
}

CameraRing camera_ring(int n_views, double elevation_deg, double radius, double start_azimuth_deg) {
  if (n_views < 1) fail(ErrorCode::invalid_argument, "camera_ring: n_views must be >= 1");
  if (!(radius > 0) || !std::isfinite(radius)) fail(ErrorCode::invalid_argument, "camera_ring: radius must be > 0");
  if (!std::isfinite(elevation_deg) || std::abs(elevation_deg) >= 90.0) {
    fail(ErrorCode::invalid_argument, "camera_ring: elevation must lie strictly inside (-90, 90)");
  }

  CameraRing ring;
  ring.n_views = n_views;
  ring.start_azimuth_deg = wrap_degrees(start_azimuth_deg);
  ring.poses.reserve(static_cast<std::size_t>(n_views));

  const double step = 360.0 / n_views;
  const double el = deg2rad(elevation_deg);
  for (int i = 0; i < n_views; ++i) {
    CameraPose pose;
    pose.azimuth_deg = wrap_degrees(ring.start_azimuth_deg + i * step);
    pose.elevation_deg = elevation_deg;
    pose.radius = radius;
    const double az = deg2rad(pose.azimuth_deg);
    const Vec3 pos(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                   radius * std::sin(el));
    pose.extrinsic = look_at_extrinsic(pos, Vec3::Zero(), Vec3::UnitZ());
    ring.poses.push_back(pose);
  }
  return ring;
}

NormalizationTransform normalize_to_cube(const Vec3& bbox_min, const Vec3& bbox_max) {
  const Vec3 extent = bbox_max - bbox_min;
  if (!extent.allFinite() || (extent.array() < 0).any()) {
    fail(ErrorCode::invalid_argument, "normalize_to_cube: bbox_max must not be below bbox_min");
  }
  const double longest = extent.maxCoeff();
  if (!(longest > 0)) fail(ErrorCode::invalid_argument, "normalize_to_cube: box has zero extent on every axis");

  NormalizationTransform t;
  t.scale = 1.0 / longest;
  t.translation = -t.scale * 0.5 * (bbox_min + bbox_max);
  return t;
}

std::pair<Vec3, Vec3> obj_bounds(const std::filesystem::path& obj_path) {
  std::ifstream in(obj_path);
  if (!in) fail(ErrorCode::io, "cannot open model " + obj_path.string());
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  std::string line;
  bool any = false;
  while (std::getline(in, line)) {
    if (line.size() < 2 || line[0] != 'v' || (line[1] != ' ' && line[1] != '\t')) continue;
    std::istringstream ss(line.substr(2));
    Vec3 p;
    if (ss >> p.x() >> p.y() >> p.z()) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
      any = true;
    }
  }
  if (!any) fail(ErrorCode::invalid_argument, "no vertices in " + obj_path.string());
  return {lo, hi};
}

std::string view_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d.png", index);
  return buf;
}

RenderManifest build_manifest(const std::string& instance_id, const std::string& model_path,
                              const Vec3& bbox_min, const Vec3& bbox_max, const CameraRing& ring,
                              const std::filesystem::path& out_dir, int image_size, double fov_deg) {
  require(!instance_id.empty(), ErrorCode::invalid_argument, "build_manifest: empty instance id");
  require(ring.n_views >= 1 && static_cast<int>(ring.poses.size()) == ring.n_views,
          ErrorCode::invalid_argument, "build_manifest: malformed camera ring");
  require(image_size > 0, ErrorCode::invalid_argument, "build_manifest: image size must be positive");

  RenderManifest m;
  m.instance_id = instance_id;
  m.source_model_path = model_path;
  m.normalization = normalize_to_cube(bbox_min, bbox_max);
  m.cameras = ring;
  m.image_size = image_size;
  m.fov_deg = fov_deg;
  const auto instance_dir = out_dir / instance_id;
  for (int i = 0; i < ring.n_views; ++i) {
    m.output_paths.push_back((instance_dir / view_file_name(i)).generic_string());
  }

  std::error_code ec;
  std::filesystem::create_directories(instance_dir, ec);
  if (ec) fail(ErrorCode::manifest_write, "cannot create " + instance_dir.string() + ": " + ec.message());
  std::ofstream out(instance_dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::manifest_write, "cannot write manifest in " + instance_dir.string());
  out << serialize_manifest(m);
  if (!out) fail(ErrorCode::manifest_write, "short write of manifest in " + instance_dir.string());
  return m;
}

nlohmann::json pose_to_json(const CameraPose& pose) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    rows.push_back({pose.extrinsic(r, 0), pose.extrinsic(r, 1), pose.extrinsic(r, 2), pose.extrinsic(r, 3)});
  }
  return {{"azimuth_deg", pose.azimuth_deg},
          {"elevation_deg", pose.elevation_deg},
          {"radius", pose.radius},
          {"extrinsic", rows}};
}

CameraPose pose_from_json(const nlohmann::json& j) {
  CameraPose p;
  p.azimuth_deg = j.at("azimuth_deg").get<double>();
  p.elevation_deg = j.at("elevation_deg").get<double>();
  p.radius = j.at("radius").get<double>();
  const auto& rows = j.at("extrinsic");
  require(rows.size() == 3, ErrorCode::invalid_argument, "extrinsic must have 3 rows");
  for (int r = 0; r < 3; ++r) {
    require(rows[r].size() == 4, ErrorCode::invalid_argument, "extrinsic rows must have 4 entries");
    for (int c = 0; c < 4; ++c) p.extrinsic(r, c) = rows[r][c].get<double>();
  }
  return p;
}

nlohmann::json ring_to_json(const CameraRing& ring) {
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& p : ring.poses) cams.push_back(pose_to_json(p));
  return {{"n_views", ring.n_views}, {"start_azimuth_deg", ring.start_azimuth_deg}, {"cameras", cams}};
}

CameraRing ring_from_json(const nlohmann::json& j) {
  CameraRing ring;
  ring.n_views = j.at("n_views").get<int>();
  ring.start_azimuth_deg = j.at("start_azimuth_deg").get<double>();
  for (const auto& c : j.at("cameras")) ring.poses.push_back(pose_from_json(c));
  require(static_cast<int>(ring.poses.size()) == ring.n_views, ErrorCode::invalid_argument,
          "camera ring: n_views does not match camera count");
  return ring;
}

nlohmann::json manifest_to_json(const RenderManifest& m) {
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& p : m.cameras.poses) cams.push_back(pose_to_json(p));
  const auto& t = m.normalization.translation;
  return {{"instance_id", m.instance_id},
          {"model_path", m.source_model_path},
          {"normalization", {{"scale", m.normalization.scale}, {"translation", {t.x(), t.y(), t.z()}}}},
          {"cameras", cams},
          {"start_azimuth_deg", m.cameras.start_azimuth_deg},
          {"image_size", m.image_size},
          {"fov_deg", m.fov_deg},
          {"outputs", m.output_paths}};
}

RenderManifest manifest_from_json(const nlohmann::json& j) {
  RenderManifest m;
  m.instance_id = j.at("instance_id").get<std::string>();
  m.source_model_path = j.at("model_path").get<std::string>();
  m.normalization.scale = j.at("normalization").at("scale").get<double>();
  const auto& t = j.at("normalization").at("translation");
  m.normalization.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  for (const auto& c : j.at("cameras")) m.cameras.poses.push_back(pose_from_json(c));
  m.cameras.n_views = static_cast<int>(m.cameras.poses.size());
  m.cameras.start_azimuth_deg = j.value("start_azimuth_deg", 0.0);
  m.image_size = j.at("image_size").get<int>();
  m.fov_deg = j.at("fov_deg").get<double>();
  m.output_paths = j.at("outputs").get<std::vector<std::string>>();
  require(m.output_paths.size() == m.cameras.poses.size(), ErrorCode::invalid_argument,
          "manifest: outputs and cameras differ in length");
  return m;
}

std::string serialize_manifest(const RenderManifest& m) { return manifest_to_json(m).dump(2) + "\n"; }

RenderManifest parse_manifest(const std::string& text) {
  try {
    return manifest_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("manifest: ") + e.what());
  }
}

bool operator==(const CameraPose& a, const CameraPose& b) {
  return a.azimuth_deg == b.azimuth_deg && a.elevation_deg == b.elevation_deg && a.radius == b.radius &&
         a.extrinsic == b.extrinsic;
}

bool operator==(const CameraRing& a, const CameraRing& b) {
  return a.n_views == b.n_views && a.start_azimuth_deg == b.start_azimuth_deg && a.poses == b.poses;
}

bool operator==(const RenderManifest& a, const RenderManifest& b) {
  return a.instance_id == b.instance_id && a.source_model_path == b.source_model_path &&
         a.normalization.scale == b.normalization.scale &&
         a.normalization.translation == b.normalization.translation && a.cameras == b.cameras &&
         a.image_size == b.image_size && a.fov_deg == b.fov_deg && a.output_paths == b.output_paths;
}

}  // namespace vqadiff::geometry
