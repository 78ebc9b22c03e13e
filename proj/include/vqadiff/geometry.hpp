#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace vqadiff::geometry {

// World frame: right-handed, +z up, azimuth counter-clockwise from +x in the xy-plane.
// Camera frame: +x right, +y down, +z forward (optical axis).

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Extrinsic = Eigen::Matrix<double, 3, 4>;

inline constexpr double kDefaultRadius = 1.5;
inline constexpr double kDefaultElevationDeg = 5.0;
inline constexpr int kDefaultViews = 16;
inline constexpr int kDefaultImageSize = 256;
inline constexpr double kDefaultFovDeg = 50.0;

struct CameraPose {
  double azimuth_deg = 0;
  double elevation_deg = 0;
  double radius = 0;
  Extrinsic extrinsic = Extrinsic::Zero();

  Mat3 rotation() const { return extrinsic.leftCols<3>(); }
  Vec3 translation() const { return extrinsic.col(3); }
  // Camera centre in world coordinates, -R^T t.
  Vec3 position() const;
  // Unit optical axis in world coordinates (third row of R).
  Vec3 forward() const;
};

struct CameraRing {
  std::vector<CameraPose> poses;
  int n_views = 0;
  double start_azimuth_deg = 0;

  double step_deg() const { return 360.0 / n_views; }
};

struct NormalizationTransform {
  double scale = 1;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * p + translation; }
};

struct RenderManifest {
  std::string instance_id;
  std::string source_model_path;
  NormalizationTransform normalization;
  CameraRing cameras;
  int image_size = kDefaultImageSize;
  double fov_deg = kDefaultFovDeg;
  std::vector<std::string> output_paths;
};

Extrinsic look_at_extrinsic(const Vec3& position, const Vec3& target, const Vec3& up_hint);

// Maps a camera-frame point back to world coordinates.
Vec3 camera_to_world(const Extrinsic& extrinsic, const Vec3& p_cam);
Vec3 world_to_camera(const Extrinsic& extrinsic, const Vec3& p_world);

CameraRing camera_ring(int n_views, double elevation_deg = kDefaultElevationDeg,
                       double radius = kDefaultRadius, double start_azimuth_deg = 0.0);

NormalizationTransform normalize_to_cube(const Vec3& bbox_min, const Vec3& bbox_max);

// Axis-aligned bounds of the "v x y z" records of a Wavefront OBJ file.
std::pair<Vec3, Vec3> obj_bounds(const std::filesystem::path& obj_path);

std::string view_file_name(int index);  // "view_07.png"

// Writes <out_dir>/<instance_id>/manifest.json and returns the manifest it wrote.
RenderManifest build_manifest(const std::string& instance_id, const std::string& model_path,
                              const Vec3& bbox_min, const Vec3& bbox_max, const CameraRing& ring,
                              const std::filesystem::path& out_dir,
                              int image_size = kDefaultImageSize, double fov_deg = kDefaultFovDeg);

nlohmann::json pose_to_json(const CameraPose& pose);
CameraPose pose_from_json(const nlohmann::json& j);
nlohmann::json ring_to_json(const CameraRing& ring);
CameraRing ring_from_json(const nlohmann::json& j);

nlohmann::json manifest_to_json(const RenderManifest& m);
RenderManifest manifest_from_json(const nlohmann::json& j);
std::string serialize_manifest(const RenderManifest& m);  // sorted keys, 2-space indent
RenderManifest parse_manifest(const std::string& text);

bool operator==(const CameraPose& a, const CameraPose& b);
bool operator==(const CameraRing& a, const CameraRing& b);
bool operator==(const RenderManifest& a, const RenderManifest& b);

}  // namespace vqadiff::geometry
