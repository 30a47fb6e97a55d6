#include "insfusion/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace insfusion {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

std::array<Point2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  // (dl, dw) in box frame -> world, CCW order
  const std::array<std::pair<double, double>, 4> local = {
      {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Point2, 4> out;
  for (int i = 0; i < 4; ++i) {
    const auto [dl, dw] = local[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = Point2(b.x + c * dl - s * dw, b.y + s * dl + c * dw);
  }
  return out;
}

double polygon_area(const std::vector<Point2>& poly) {
  if (poly.size() < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

std::vector<Point2> clip_polygon(const std::vector<Point2>& subject,
                                 const std::vector<Point2>& clip) {
  std::vector<Point2> out = subject;
  for (std::size_t i = 0; i < clip.size() && !out.empty(); ++i) {
    const Point2 a = clip[i];
    const Point2 b = clip[(i + 1) % clip.size()];
    // inside = left of edge a->b for a CCW clip polygon
    auto inside = [&](const Point2& p) {
      return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x()) >= 0.0;
    };
    auto intersect = [&](const Point2& p, const Point2& q) {
      const Point2 d1 = q - p;
      const Point2 d2 = b - a;
      const double denom = d1.x() * d2.y() - d1.y() * d2.x();
      const double t = ((a.x() - p.x()) * d2.y() - (a.y() - p.y()) * d2.x()) / denom;
      return Point2(p + t * d1);
    };
    std::vector<Point2> next;
    next.reserve(out.size() + 4);
    for (std::size_t j = 0; j < out.size(); ++j) {
      const Point2& cur = out[j];
      const Point2& prev = out[(j + out.size() - 1) % out.size()];
      const bool cur_in = inside(cur), prev_in = inside(prev);
      if (cur_in) {
        if (!prev_in) next.push_back(intersect(prev, cur));
        next.push_back(cur);
      } else if (prev_in) {
        next.push_back(intersect(prev, cur));
      }
    }
    out = std::move(next);
  }
  return out;
}

double rotated_iou_bev(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const std::vector<Point2> pa(ca.begin(), ca.end());
  const std::vector<Point2> pb(cb.begin(), cb.end());
  const double inter = polygon_area(clip_polygon(pa, pb));
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double aligned_iou_bev(const Box3D& a, const Box3D& b) {
  const double ax0 = a.x - 0.5 * a.l, ax1 = a.x + 0.5 * a.l;
  const double ay0 = a.y - 0.5 * a.w, ay1 = a.y + 0.5 * a.w;
  const double bx0 = b.x - 0.5 * b.l, bx1 = b.x + 0.5 * b.l;
  const double by0 = b.y - 0.5 * b.w, by1 = b.y + 0.5 * b.w;
  const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = ix * iy;
  const double uni = a.l * a.w + b.l * b.w - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool CameraCalib::project(const Eigen::Vector3d& p, double* u, double* v, double* depth,
                          double near) const {
  const Eigen::Vector3d c = world_to_cam(p);
  if (c.z() <= near) return false;
  *u = fx() * c.x() / c.z() + cx();
  *v = fy() * c.y() / c.z() + cy();
  *depth = c.z();
  return true;
}

Eigen::Vector3d CameraCalib::unproject(double u, double v, double depth) const {
  const Eigen::Vector3d cam((u - cx()) / fx() * depth, (v - cy()) / fy() * depth, depth);
  return extrinsics.topLeftCorner<3, 3>().transpose() *
         (cam - extrinsics.topRightCorner<3, 1>());
}

ops::Pinhole CameraCalib::pinhole() const {
  ops::Pinhole p;
  p.fx = fx();
  p.fy = fy();
  p.cx = cx();
  p.cy = cy();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) p.r[i * 3 + j] = extrinsics(i, j);
    p.t[i] = extrinsics(i, 3);
  }
  return p;
}

CameraCalib look_at_camera(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                           double fx, double fy, Index img_h, Index img_w) {
  const Eigen::Vector3d fwd = (target - position).normalized();  // camera +z
  Eigen::Vector3d up(0, 0, 1);
  if (std::abs(fwd.dot(up)) > 0.999) up = Eigen::Vector3d(0, 1, 0);
  const Eigen::Vector3d right = fwd.cross(up).normalized();  // camera +x
  const Eigen::Vector3d down = fwd.cross(right).normalized();  // camera +y

  CameraCalib c;
  c.img_h = img_h;
  c.img_w = img_w;
  c.intrinsics.setZero();
  c.intrinsics(0, 0) = fx;
  c.intrinsics(1, 1) = fy;
  c.intrinsics(0, 2) = 0.5 * static_cast<double>(img_w - 1);
  c.intrinsics(1, 2) = 0.5 * static_cast<double>(img_h - 1);
  c.intrinsics(2, 2) = 1.0;

  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = fwd.transpose();
  c.extrinsics.setIdentity();
  c.extrinsics.topLeftCorner<3, 3>() = r;
  c.extrinsics.topRightCorner<3, 1>() = -r * position;
  return c;
}

}  // namespace insfusion
