#include <winmix/train.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace winmix {

void Hyperparams::validate() const {
  if (!(lr >= 0) || !(weight_decay >= 0))
    throw ConfigError("lr and weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0))
    throw ConfigError("Adam betas must lie in [0, 1) and eps must be positive");
  if (batch == 0 || steps == 0)
    throw ConfigError("batch and steps must be positive");
  if (warmup > steps)
    throw ConfigError("warmup (" + std::to_string(warmup) + ") exceeds total steps (" + std::to_string(steps) + ")");
  if (!(label_smoothing >= 0 && label_smoothing < 1))
    throw ConfigError("label_smoothing must lie in [0, 1)");
}

double Hyperparams::lr_at(std::size_t step) const {
  if (step < warmup)
    return lr * double(step + 1) / double(warmup);
  const std::size_t decay = steps - warmup;
  if (decay == 0)
    return lr;
  const double t = double(std::min(step - warmup, decay)) / double(decay);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void to_json(nlohmann::json &j, const Hyperparams &hp) {
  j = {{"lr", hp.lr},
       {"weight_decay", hp.weight_decay},
       {"beta1", hp.beta1},
       {"beta2", hp.beta2},
       {"eps", hp.eps},
       {"batch", hp.batch},
       {"steps", hp.steps},
       {"warmup", hp.warmup},
       {"label_smoothing", hp.label_smoothing},
       {"checkpoint_every", hp.checkpoint_every}};
}

void from_json(const nlohmann::json &j, Hyperparams &hp) {
  const nlohmann::json defaults = Hyperparams{};
  for (const auto &[key, _] : j.items())
    if (!defaults.contains(key))
      throw ConfigError("unknown hyperparameter '" + key + "'");
  try {
    hp.lr = j.value("lr", hp.lr);
    hp.weight_decay = j.value("weight_decay", hp.weight_decay);
    hp.beta1 = j.value("beta1", hp.beta1);
    hp.beta2 = j.value("beta2", hp.beta2);
    hp.eps = j.value("eps", hp.eps);
    hp.batch = j.value("batch", hp.batch);
    hp.steps = j.value("steps", hp.steps);
    hp.warmup = j.value("warmup", hp.warmup);
    hp.label_smoothing = j.value("label_smoothing", hp.label_smoothing);
    hp.checkpoint_every = j.value("checkpoint_every", hp.checkpoint_every);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("bad hyperparameters: ") + e.what());
  }
}

nlohmann::json to_json(const EpochMetrics &m) {
  return {{"epoch", m.epoch},           {"step", m.step},       {"train_loss", m.train_loss},
          {"train_accuracy", m.train_accuracy}, {"val_loss", m.val_loss}, {"val_accuracy", m.val_accuracy}};
}

namespace {

ParamTable<float> zeros_like(const ParamTable<float> &t) {
  ParamTable<float> out;
  for (const auto &p : t)
    out.push_back({p.name, Tensor<float>(p.value.shape())});
  return out;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i)
    order[i] = i;
  Rng rng(seed ^ (0x9E3779B97F4A7C15ull * (epoch + 1)));
  // Fisher-Yates with our own index draw; std::shuffle's algorithm is not
  // pinned across standard libraries.
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng() % i]);
  return order;
}

// Norm gains and biases, position-bias tables and messengers are not decayed.
bool decays(const NamedTensor<float> &p) {
  return p.value.rank() >= 2 && p.name.find("rel_bias") == std::string::npos &&
         p.name.find("messengers") == std::string::npos;
}

struct BatchResult {
  double loss_sum = 0;
  std::size_t correct = 0;
};

// Per-sample unsmoothed loss (in double) and argmax hits.
BatchResult score(const Tensor<float> &logits, std::span<const int> labels) {
  const std::size_t k = logits.dim(1);
  BatchResult r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float *row = logits.ptr() + i * k;
    double hi = row[0];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (row[c] > hi) {
        hi = row[c];
        arg = c;
      }
    double z = 0;
    for (std::size_t c = 0; c < k; ++c)
      z += std::exp(double(row[c]) - hi);
    r.loss_sum += hi + std::log(z) - double(row[labels[i]]);
    r.correct += arg == std::size_t(labels[i]);
  }
  return r;
}

} // namespace

TrainState init_train_state(const ModelConfig &cfg, std::uint64_t seed) {
  TrainState s;
  s.model = build_model<float>(cfg, seed);
  s.first_moment = zeros_like(s.model.params);
  s.second_moment = zeros_like(s.model.params);
  s.seed = seed;
  return s;
}

EvalResult evaluate(const Model<float> &model, const Dataset &data, std::size_t batch) {
  if (batch == 0)
    throw ConfigError("evaluation batch must be positive");
  EvalResult r;
  double loss = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + batch, data.size()); ++i)
      idx.push_back(i);
    const Tensor<float> logits = forward(model, data.images<float>(idx));
    const auto b = score(logits, std::span<const int>(data.labels).subspan(start, idx.size()));
    loss += b.loss_sum;
    correct += b.correct;
  }
  r.samples = data.size();
  if (r.samples > 0) {
    r.accuracy = double(correct) / double(r.samples);
    r.loss = loss / double(r.samples);
  }
  return r;
}

Checkpoint to_checkpoint(const TrainState &state, const Hyperparams &hp) {
  Checkpoint c;
  c.config = state.model.config;
  nlohmann::json history = nlohmann::json::array();
  for (const auto &m : state.history)
    history.push_back(to_json(m));
  c.state = {{"step", state.step},
             {"seed", state.seed},
             {"hyperparams", hp},
             {"history", history},
             {"epoch_loss_sum", state.epoch_loss_sum},
             {"epoch_correct", state.epoch_correct},
             {"epoch_seen", state.epoch_seen}};
  append_params(c, state.model.params);
  append_params(c, state.first_moment, "adam.m.");
  append_params(c, state.second_moment, "adam.v.");
  return c;
}

TrainState from_checkpoint(const Checkpoint &ckpt, Hyperparams *hp) {
  const auto shapes = model_param_shapes(ckpt.config);
  TrainState s;
  s.model.config = ckpt.config;
  s.model.params = read_params<float>(ckpt, shapes);
  const auto &st = ckpt.state;
  try {
    s.step = st.value("step", std::size_t(0));
    s.seed = st.value("seed", std::uint64_t(0));
    s.epoch_loss_sum = st.value("epoch_loss_sum", 0.0);
    s.epoch_correct = st.value("epoch_correct", std::size_t(0));
    s.epoch_seen = st.value("epoch_seen", std::size_t(0));
    for (const auto &m : st.value("history", nlohmann::json::array()))
      s.history.push_back({m.at("epoch"), m.at("step"), m.at("train_loss"), m.at("train_accuracy"), m.at("val_loss"),
                           m.at("val_accuracy")});
    if (hp && st.contains("hyperparams"))
      *hp = st.at("hyperparams").get<Hyperparams>();
  } catch (const nlohmann::json::exception &e) {
    throw std::runtime_error(std::string("bad training state in checkpoint: ") + e.what());
  }
  bool has_moments = false;
  for (const auto &t : ckpt.tensors)
    has_moments |= t.name.rfind("adam.m.", 0) == 0;
  if (has_moments) {
    s.first_moment = read_params<float>(ckpt, shapes, "adam.m.");
    s.second_moment = read_params<float>(ckpt, shapes, "adam.v.");
  } else {
    s.first_moment = zeros_like(s.model.params);
    s.second_moment = zeros_like(s.model.params);
  }
  return s;
}

void train(TrainState &state, const DatasetSplit &data, const Hyperparams &hp, const TrainOptions &options) {
  hp.validate();
  const ModelConfig &cfg = state.model.config;
  const std::size_t n = data.train.size();
  if (n < hp.batch)
    throw ConfigError("training set (" + std::to_string(n) + ") is smaller than one batch (" +
                      std::to_string(hp.batch) + ")");
  if (data.train.channels != cfg.in_chans)
    throw ConfigError("data has " + std::to_string(data.train.channels) + " channels, model expects " +
                      std::to_string(cfg.in_chans));
  const std::size_t per_epoch = n / hp.batch;
  auto save = [&](const TrainState &s) {
    if (options.checkpoint_path)
      save_checkpoint(*options.checkpoint_path, to_checkpoint(s, hp));
  };

  std::size_t done = 0;
  std::vector<std::size_t> order;
  std::size_t order_epoch = std::size_t(-1);
  while (state.step < hp.steps && (!options.stop_after || done < *options.stop_after)) {
    const std::size_t epoch = state.step / per_epoch, pos = state.step % per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(state.seed, epoch, n);
      order_epoch = epoch;
    }
    const std::span<const std::size_t> idx(order.data() + pos * hp.batch, hp.batch);
    std::vector<int> labels(hp.batch);
    for (std::size_t i = 0; i < hp.batch; ++i)
      labels[i] = data.train.labels[idx[i]];

    Graph<float> g;
    std::vector<Var<float>> leaves;
    leaves.reserve(state.model.params.size());
    for (const auto &p : state.model.params)
      leaves.push_back(g.leaf(p.value));
    const Var<float> images = g.constant(data.train.images<float>(idx));
    std::optional<Var<float>> logits, loss;
    try {
      logits = model_forward<float>(cfg, leaves, images);
      loss = cross_entropy(*logits, labels, float(hp.label_smoothing));
    } catch (const NumericError &e) {
      save(state);
      throw NumericError("step " + std::to_string(state.step) + ": " + e.what());
    }
    if (!std::isfinite(loss->value().item())) {
      save(state);
      throw NumericError("loss became non-finite at step " + std::to_string(state.step));
    }
    const Gradients<float> grads = g.backward(*loss);

    const double lr = hp.lr_at(state.step);
    const double t = double(state.step + 1);
    const double c1 = 1.0 - std::pow(hp.beta1, t), c2 = 1.0 - std::pow(hp.beta2, t);
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      const auto gk = grads.of(leaves[k]).data();
      auto p = state.model.params[k].value.mutable_data();
      auto m = state.first_moment[k].value.mutable_data();
      auto v = state.second_moment[k].value.mutable_data();
      const bool decay = decays(state.model.params[k]);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = float(hp.beta1 * m[i] + (1.0 - hp.beta1) * gk[i]);
        v[i] = float(hp.beta2 * v[i] + (1.0 - hp.beta2) * double(gk[i]) * gk[i]);
        double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + hp.eps);
        if (decay)
          update += hp.weight_decay * p[i];
        p[i] = float(p[i] - lr * update);
      }
    }

    const auto b = score(logits->value(), labels);
    state.epoch_loss_sum += b.loss_sum;
    state.epoch_correct += b.correct;
    state.epoch_seen += hp.batch;
    ++state.step;
    ++done;

    if (state.step % per_epoch == 0 || state.step == hp.steps) {
      const EvalResult val = evaluate(state.model, data.val);
      EpochMetrics m{state.history.size(), state.step, state.epoch_loss_sum / double(state.epoch_seen),
                     double(state.epoch_correct) / double(state.epoch_seen), val.loss, val.accuracy};
      state.history.push_back(m);
      state.epoch_loss_sum = 0;
      state.epoch_correct = state.epoch_seen = 0;
      if (options.on_epoch)
        options.on_epoch(m);
    }
    if (hp.checkpoint_every > 0 && state.step % hp.checkpoint_every == 0)
      save(state);
  }
  save(state);
}

} // namespace winmix
