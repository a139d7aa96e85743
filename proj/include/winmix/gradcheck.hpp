#pragma once

#include <winmix/model.hpp>

#include <json.hpp>

#include <string>

namespace winmix {

struct GradCheckResult {
  std::string model;
  std::uint64_t seed = 0;
  double step = 1e-4;
  std::size_t coordinates = 0; // parameter entries compared
  double max_rel_error = 0;    // normwise, over the compared entries of each tensor
  std::string worst_param;
};

/// Float64 analytic gradient of the cross-entropy of a random batch versus
/// central differences. Parameters get a random perturbation first so no
/// tensor sits at a degenerate all-zero init. `max_per_tensor` caps how many
/// entries of each tensor are probed (0 probes all).
GradCheckResult gradient_check_model(const ModelConfig &cfg, std::uint64_t seed, double step = 1e-4,
                                     std::size_t max_per_tensor = 0, std::size_t batch = 2);

nlohmann::json to_json(const GradCheckResult &r);

} // namespace winmix
