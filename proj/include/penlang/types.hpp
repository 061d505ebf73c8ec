#pragma once

#include <Eigen/Dense>

namespace penlang {

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;

}  // namespace penlang
