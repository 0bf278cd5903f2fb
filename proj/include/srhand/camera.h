#pragma once

#include <Eigen/Dense>

#include "srhand/common.h"
#include "srhand/mesh.h"

namespace srhand::geom {

// Pinhole camera: world -> camera is X_c = R X_w + t, pixel (u,v) with u
// along +x (columns) and v along +y (rows); pixel (r,c) samples its center
// (c + 0.5, r + 0.5).
template <typename S>
struct Camera {
  S fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3<S> R = Mat3<S>::Identity();
  Vec3<S> t = Vec3<S>::Zero();
  Index width = 0, height = 0;

  void validate() const {
    if (fx <= S(0) || fy <= S(0)) throw ConfigError("camera focal length must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
    if (((R * R.transpose()) - Mat3<S>::Identity()).cwiseAbs().maxCoeff() > S(1e-6))
      throw ConfigError("camera rotation is not orthonormal");
  }

  Vec3<S> to_camera(const Vec3<S>& xw) const { return R * xw + t; }

  // (u, v, z): pixel position and camera-space depth.
  Vec3<S> project(const Vec3<S>& xw) const {
    Vec3<S> xc = to_camera(xw);
    return {fx * xc.x() / xc.z() + cx, fy * xc.y() / xc.z() + cy, xc.z()};
  }
};

// Camera at `eye` looking at `target`, `up` approximately up in world space.
// Camera axes: +z forward (into the scene), +y down the image.
template <typename S>
Camera<S> look_at(const Vec3<S>& eye, const Vec3<S>& target, const Vec3<S>& up, S fx, S fy,
                  Index width, Index height) {
  Vec3<S> fwd = (target - eye).normalized();
  Vec3<S> right = fwd.cross(up).normalized();
  Vec3<S> down = fwd.cross(right).normalized();
  Camera<S> cam;
  cam.R.row(0) = right.transpose();
  cam.R.row(1) = down.transpose();
  cam.R.row(2) = fwd.transpose();
  cam.t = -cam.R * eye;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = static_cast<S>(width) / S(2);
  cam.cy = static_cast<S>(height) / S(2);
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace srhand::geom
