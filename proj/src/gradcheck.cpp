#include <winmix/gradcheck.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace winmix {

GradCheckResult gradient_check_model(const ModelConfig &cfg, std::uint64_t seed, double step,
                                     std::size_t max_per_tensor, std::size_t batch) {
  if (!(step > 0) || batch == 0)
    throw ConfigError("gradient check needs a positive step and batch");
  Model<double> model = build_model<double>(cfg, seed);
  Rng rng(seed ^ 0x5DEECE66Dull);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto &p : model.params)
    for (auto &v : p.value.mutable_data())
      v += 0.1 * u(rng);
  std::vector<double> pixels(batch * cfg.image_size * cfg.image_size * cfg.in_chans);
  for (auto &v : pixels)
    v = u(rng);
  const Tensor<double> images({batch, cfg.image_size, cfg.image_size, cfg.in_chans}, std::move(pixels));
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i)
    labels[i] = int(rng() % cfg.classes);

  auto loss_of = [&](const ParamTable<double> &params, Gradients<double> *grads, std::vector<Var<double>> *leaves) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto &p : params)
      vars.push_back(g.leaf(p.value));
    const Var<double> loss = cross_entropy(model_forward<double>(cfg, vars, g.constant(images)), labels, 0.0);
    if (grads) {
      *grads = g.backward(loss);
      *leaves = vars;
    }
    return loss.value().item();
  };

  Gradients<double> grads;
  std::vector<Var<double>> leaves;
  loss_of(model.params, &grads, &leaves);

  GradCheckResult r;
  r.model = cfg.name;
  r.seed = seed;
  r.step = step;
  ParamTable<double> probe = model.params;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const Tensor<double> &analytic = grads.of(leaves[k]);
    const std::size_t n = analytic.size();
    std::vector<std::size_t> entries(n);
    for (std::size_t i = 0; i < n; ++i)
      entries[i] = i;
    if (max_per_tensor > 0 && n > max_per_tensor) {
      for (std::size_t i = 0; i < max_per_tensor; ++i)
        std::swap(entries[i], entries[i + rng() % (n - i)]);
      entries.resize(max_per_tensor);
    }
    double diff = 0, scale = 0;
    for (std::size_t e : entries) {
      auto d = probe[k].value.mutable_data();
      const double orig = d[e];
      d[e] = orig + step;
      const double up = loss_of(probe, nullptr, nullptr);
      probe[k].value.mutable_data()[e] = orig - step;
      const double down = loss_of(probe, nullptr, nullptr);
      probe[k].value.mutable_data()[e] = orig;
      const double numeric = (up - down) / (2 * step);
      diff = std::max(diff, std::abs(numeric - analytic[e]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[e])});
    }
    r.coordinates += entries.size();
    const double rel = scale > 0 ? diff / scale : diff;
    if (rel > r.max_rel_error || r.worst_param.empty()) {
      r.max_rel_error = std::max(r.max_rel_error, rel);
      r.worst_param = probe[k].name;
    }
  }
  return r;
}

nlohmann::json to_json(const GradCheckResult &r) {
  return {{"model", r.model},
          {"seed", r.seed},
          {"step", r.step},
          {"coordinates", r.coordinates},
          {"max_rel_error", r.max_rel_error},
          {"worst_param", r.worst_param}};
}

} // namespace winmix
