#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace editlab {

/// Editable-region mask over the coordinates of a state; true marks an
/// editable coordinate (inside), false a preserved one (outside).
class RegionMask {
 public:
  RegionMask() = default;
  explicit RegionMask(std::vector<bool> bits);
  static RegionMask all(Eigen::Index dim, bool editable);
  /// Accepts an array of 0/1 or booleans.
  static RegionMask from_json(const nlohmann::json& j, Eigen::Index dim);
  nlohmann::json to_json() const;

  Eigen::Index dim() const { return static_cast<Eigen::Index>(bits_.size()); }
  bool editable(Eigen::Index i) const { return bits_[static_cast<std::size_t>(i)]; }
  const std::vector<bool>& bits() const { return bits_; }

  std::vector<Eigen::Index> inside() const;
  std::vector<Eigen::Index> outside() const;
  /// All-true or all-false.
  bool degenerate() const { return inside().empty() || outside().empty(); }

  /// m as a 0/1 vector, and its complement 1 - m.
  Eigen::VectorXd weights() const;
  Eigen::VectorXd complement_weights() const;

  /// Logical OR of two masks of equal dimension.
  RegionMask united(const RegionMask& other) const;

 private:
  std::vector<bool> bits_;
};

Eigen::VectorXd gather(const Eigen::VectorXd& x, const std::vector<Eigen::Index>& idx);

}  // namespace editlab
