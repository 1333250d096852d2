#include "editlab/mask.hpp"

#include <nlohmann/json.hpp>

#include "editlab/errors.hpp"

namespace editlab {

RegionMask::RegionMask(std::vector<bool> bits) : bits_(std::move(bits)) {
  if (bits_.empty()) throw DomainError("mask must cover at least one coordinate");
}

RegionMask RegionMask::all(Eigen::Index dim, bool editable) {
  return RegionMask(std::vector<bool>(static_cast<std::size_t>(dim), editable));
}

RegionMask RegionMask::from_json(const nlohmann::json& j, Eigen::Index dim) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != dim) {
    throw ConfigError("mask must be an array of length " + std::to_string(dim));
  }
  std::vector<bool> bits;
  bits.reserve(j.size());
  for (const auto& v : j) {
    if (v.is_boolean()) {
      bits.push_back(v.get<bool>());
    } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
      bits.push_back(v.get<int>() == 1);
    } else {
      throw ConfigError("mask entries must be 0/1 or booleans");
    }
  }
  return RegionMask(std::move(bits));
}

nlohmann::json RegionMask::to_json() const {
  auto j = nlohmann::json::array();
  for (bool b : bits_) j.push_back(b ? 1 : 0);
  return j;
}

std::vector<Eigen::Index> RegionMask::inside() const {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return idx;
}

std::vector<Eigen::Index> RegionMask::outside() const {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (!bits_[i]) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return idx;
}

Eigen::VectorXd RegionMask::weights() const {
  Eigen::VectorXd m(dim());
  for (Eigen::Index i = 0; i < dim(); ++i) m(i) = editable(i) ? 1.0 : 0.0;
  return m;
}

Eigen::VectorXd RegionMask::complement_weights() const {
  return Eigen::VectorXd::Ones(dim()) - weights();
}

RegionMask RegionMask::united(const RegionMask& other) const {
  if (other.dim() != dim()) throw DomainError("mask dimension mismatch");
  std::vector<bool> bits(bits_.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = bits_[i] || other.bits_[i];
  return RegionMask(std::move(bits));
}

Eigen::VectorXd gather(const Eigen::VectorXd& x, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = x(idx[i]);
  return out;
}

}  // namespace editlab
