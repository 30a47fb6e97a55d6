#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "insfusion/common.hpp"
#include "insfusion/ops.hpp"

namespace insfusion {

// Angle normalized to (-pi, pi].
double normalize_angle(double a);

struct Box3D {
  double x = 0, y = 0, z = 0;  // center, meters
  double l = 1, w = 1, h = 1;  // size, meters
  double yaw = 0;              // radians, (-pi, pi]
  int class_id = 0;
};

using Point2 = Eigen::Vector2d;

// BEV footprint corners, counter-clockwise.
std::array<Point2, 4> bev_corners(const Box3D& b);

double polygon_area(const std::vector<Point2>& poly);

// Sutherland-Hodgman clip of a polygon against a convex clip polygon (CCW).
std::vector<Point2> clip_polygon(const std::vector<Point2>& subject,
                                 const std::vector<Point2>& clip);

// Rotated BEV IoU via polygon clipping + shoelace area; symmetric, in [0,1].
double rotated_iou_bev(const Box3D& a, const Box3D& b);

// Axis-aligned BEV IoU, valid when both yaws are 0 (closed-form cross-check).
double aligned_iou_bev(const Box3D& a, const Box3D& b);

struct CameraCalib {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();  // fx, fy, cx, cy; zero skew
  Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();  // world -> camera
  Index img_h = 0, img_w = 0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }

  Eigen::Vector3d world_to_cam(const Eigen::Vector3d& p) const {
    return extrinsics.topLeftCorner<3, 3>() * p + extrinsics.topRightCorner<3, 1>();
  }
  Eigen::Vector3d camera_center() const {
    return -extrinsics.topLeftCorner<3, 3>().transpose() * extrinsics.topRightCorner<3, 1>();
  }
  // Projects a world point; returns false if behind the near plane.
  bool project(const Eigen::Vector3d& p, double* u, double* v, double* depth,
               double near = 0.1) const;
  bool in_bounds(double u, double v) const {
    return u >= -0.5 && u <= static_cast<double>(img_w) - 0.5 && v >= -0.5 &&
           v <= static_cast<double>(img_h) - 0.5;
  }
  // Inverse of project at a given camera depth.
  Eigen::Vector3d unproject(double u, double v, double depth) const;

  ops::Pinhole pinhole() const;
};

// Camera at `position` looking at `target`, world z up.
CameraCalib look_at_camera(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                           double fx, double fy, Index img_h, Index img_w);

}  // namespace insfusion
