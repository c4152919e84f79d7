#pragma once

#include "sbwm/numkit/tensor.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

// Kinematic-chain body model.
//
// A pose vector has layout
//   [root_position(3), root_orientation(3), joint_angles(3 * (J - 1))]
// with every rotation in axis-angle form. The angle stored for joint j
// orients the bone that ends at j, relative to the parent's frame:
//
//   R_j = R_parent * rodrigues(angle_j)
//   p_j = p_parent + R_j * (bone_length_j * rest_direction_j)
//
// so every pose maps to joint positions whose bone lengths are exact.

namespace sbwm::body {

using Vec3 = std::array<double, 3>;

struct BodyChain {
    std::vector<std::string> names;
    std::vector<int> parent; // -1 for the root
    std::vector<double> bone_length; // meters; 0 for the root
    std::vector<Vec3> rest_direction; // unit vectors

    std::size_t joint_count() const { return parent.size(); }
    std::size_t param_dim() const { return 6 + 3 * (joint_count() - 1); }
    std::size_t joint_space_dim() const { return 3 * joint_count(); }
    std::size_t index_of(const std::string& name) const;
};

/// Throws unless the chain is a tree rooted at joint 0 in topological order
/// (parent[j] < j), bone lengths are positive and rest directions unit.
void validate(const BodyChain& chain);

/// 17-joint humanoid: pelvis (root), spine, head, and per side hip, knee,
/// ankle, clavicle, shoulder, elbow, wrist. z is up, x forward, y left.
/// param_dim() == 54, joint_space_dim() == 51.
BodyChain default_chain();

std::string chain_to_json(const BodyChain& chain);
BodyChain chain_from_json(const std::string& text);
BodyChain load_chain(const std::filesystem::path& path);
void save_chain(const std::filesystem::path& path, const BodyChain& chain);

/// Joint positions for one pose, flattened as [x0, y0, z0, x1, ...].
std::vector<double> forward_kinematics(const BodyChain& chain, std::span<const double> pose);

/// Batched, differentiable FK: [batch, param_dim] -> [batch, 3J].
nk::Tensor forward_kinematics(const BodyChain& chain, const nk::Tensor& poses);

/// d(joints)/d(pose), row-major [3J, param_dim].
std::vector<double> fk_jacobian(const BodyChain& chain, std::span<const double> pose);

/// Number of non-root joints whose distance to the parent deviates from the
/// bone length by more than tol * bone_length.
std::size_t bone_length_violations(const BodyChain& chain, std::span<const double> joints, double tol = 0.01);

/// Largest |distance-to-parent - bone_length| over non-root joints.
double max_bone_length_deviation(const BodyChain& chain, std::span<const double> joints);

/// 3x3 rotation matrix (row-major) for an axis-angle vector.
std::array<double, 9> rodrigues(const Vec3& axis_angle);

} // namespace sbwm::body
