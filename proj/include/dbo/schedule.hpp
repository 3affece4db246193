#pragma once

#include <cstddef>

#include "dbo/error.hpp"

namespace dbo {

/// Step size s_t = base / (1 + t / tau); tau = 0 means constant.
struct StepSchedule {
  double base = 0.01;
  double tau = 0.0;

  static StepSchedule constant(double s) { return {s, 0.0}; }
  static StepSchedule diminishing(double s0, double tau) { return {s0, tau}; }

  bool is_constant() const noexcept { return tau <= 0.0; }
  double at(std::size_t t) const noexcept {
    return is_constant() ? base : base / (1.0 + static_cast<double>(t) / tau);
  }
  void validate(const char* what) const {
    require(base > 0.0, ErrorKind::BadParameter, std::string(what) + ": step size must be > 0");
    require(tau >= 0.0, ErrorKind::BadParameter, std::string(what) + ": schedule tau must be >= 0");
  }
};

}  // namespace dbo
