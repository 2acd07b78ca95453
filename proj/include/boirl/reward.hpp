#ifndef BOIRL_REWARD_HPP
#define BOIRL_REWARD_HPP

// Reward-parameter domain types: a point in a bounded box together with the
// reward-family tag that interprets it.

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace boirl {

enum class RewardFamily { LogisticState, LinearFeatures };

inline std::string to_string(RewardFamily family) {
  return family == RewardFamily::LogisticState ? "logistic-state" : "linear-features";
}

inline RewardFamily reward_family_from_string(const std::string& s) {
  if (s == "logistic-state") return RewardFamily::LogisticState;
  if (s == "linear-features") return RewardFamily::LinearFeatures;
  throw std::invalid_argument("unknown reward family: " + s);
}

// Closed interval. A zero-width interval freezes the coordinate (used for
// parameters that are fixed rather than learned).
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
  double clamp(double x) const { return x < lo ? lo : (x > hi ? hi : x); }
};

using Bounds = std::vector<Interval>;

class RewardParams {
 public:
  RewardParams(std::vector<double> theta, RewardFamily family, Bounds bounds)
      : theta_(std::move(theta)), family_(family), bounds_(std::move(bounds)) {
    if (theta_.size() != bounds_.size()) {
      throw std::invalid_argument("RewardParams: theta dimension does not match bounds");
    }
    for (std::size_t i = 0; i < theta_.size(); ++i) {
      if (!std::isfinite(theta_[i]) || !bounds_[i].contains(theta_[i])) {
        std::ostringstream msg;
        msg << "RewardParams: theta[" << i << "]=" << theta_[i] << " outside ["
            << bounds_[i].lo << ", " << bounds_[i].hi << "]";
        throw std::invalid_argument(msg.str());
      }
    }
  }

  std::span<const double> theta() const { return theta_; }
  double theta(std::size_t i) const { return theta_.at(i); }
  std::size_t dim() const { return theta_.size(); }
  RewardFamily family() const { return family_; }
  const Bounds& bounds() const { return bounds_; }

 private:
  std::vector<double> theta_;
  RewardFamily family_;
  Bounds bounds_;
};

}  // namespace boirl

#endif  // BOIRL_REWARD_HPP
