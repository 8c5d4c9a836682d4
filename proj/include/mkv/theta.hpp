#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mkv/errors.hpp"

namespace mkv {

/// Drift parameter vector. Entries are always finite.
class Theta {
 public:
  Theta() = default;
  Theta(std::initializer_list<double> values) : values_(static_cast<Eigen::Index>(values.size())) {
    Eigen::Index k = 0;
    for (double v : values) values_[k++] = v;
    check_finite();
  }
  explicit Theta(Eigen::VectorXd values) : values_(std::move(values)) { check_finite(); }
  explicit Theta(std::span<const double> values)
      : values_(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))) {
    check_finite();
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t k) const { return values_[static_cast<Eigen::Index>(k)]; }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  std::vector<double> to_vector() const { return {values_.data(), values_.data() + values_.size()}; }

  bool operator==(const Theta& other) const {
    return values_.size() == other.values_.size() && values_ == other.values_;
  }

  /// Throws DimensionError unless the length equals `p`.
  void require_dim(std::size_t p) const {
    if (size() != p) {
      throw DimensionError("theta has length " + std::to_string(size()) + ", model expects " +
                           std::to_string(p));
    }
  }

 private:
  void check_finite() const {
    if (!values_.allFinite()) throw ValidationError("theta entries must be finite");
  }

  Eigen::VectorXd values_;
};

/// Parses "1,0.5" into a Theta.
inline Theta parse_theta(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("cannot parse parameter vector '" + text + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return Theta(std::span<const double>(out));
}

}  // namespace mkv
