#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace looptwin {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double seconds = 0.0;

  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of every tape primitive and every layer module in
// double precision. rel err = |analytic-numeric| / max(1e-6, |analytic|+|numeric|).
GradCheckReport run_gradcheck(std::uint64_t seed = 7, double step = 1e-5);

nlohmann::json gradcheck_json(const GradCheckReport& report);

}  // namespace looptwin
