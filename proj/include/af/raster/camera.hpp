// Pinhole camera. Camera space: x right, y up, z forward (distance from the
// eye). Pixel centers sit at (i+0.5, j+0.5); rows grow downward, so the pixel
// y uses cy - fy*y/z.
#pragma once

#include <cmath>
#include <stdexcept>

#include "af/core/vec.hpp"

namespace af {

struct PinholeCamera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Rigid world_to_cam = Rigid::identity();
    int width = 0, height = 0;
    double near_clip = 0.05, far_clip = 100.0;

    void validate() const {
        if (fx <= 0 || fy <= 0) throw std::runtime_error("camera: focal lengths must be positive");
        if (near_clip >= far_clip) throw std::runtime_error("camera: near must be < far");
    }

    Vec3 eye() const { return world_to_cam.inverse().t; }

    // Returns false when the point is outside (near, far); depth is camera z.
    bool project(const Vec3& p_world, double& px, double& py, double& depth) const {
        Vec3 c = world_to_cam.apply(p_world);
        depth = c.z;
        if (!(c.z > near_clip && c.z < far_clip)) return false;
        px = cx + fx * c.x / c.z;
        py = cy - fy * c.y / c.z;
        return true;
    }
};

inline PinholeCamera make_lookat(const Vec3& eye, const Vec3& target, const Vec3& up,
                                 double fov_y_deg, int width, int height) {
    Vec3 z = normalized(target - eye);
    Vec3 x = normalized(cross(up, z));
    Vec3 y = cross(z, x);
    PinholeCamera cam;
    cam.world_to_cam.R = Mat3{{x.x, x.y, x.z, y.x, y.y, y.z, z.x, z.y, z.z}};
    cam.world_to_cam.t = -(cam.world_to_cam.R * eye);
    cam.width = width;
    cam.height = height;
    cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * kPi / 180.0);
    cam.fx = cam.fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.validate();
    return cam;
}

} // namespace af
