#include <winmix/analytics.hpp>
#include <winmix/checkpoint.hpp>
#include <winmix/connectivity.hpp>
#include <winmix/dataset.hpp>
#include <winmix/gradcheck.hpp>
#include <winmix/train.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace winmix;
using nlohmann::json;

namespace {

constexpr int schema_version = 1;

struct Resolution {
  std::size_t height = 0, width = 0;
};

Resolution parse_resolution(const std::string &s) {
  Resolution r;
  try {
    const auto x = s.find('x');
    std::size_t used = 0;
    if (x == std::string::npos) {
      r.height = r.width = std::stoul(s, &used);
      if (used != s.size())
        throw std::invalid_argument(s);
    } else {
      r.height = std::stoul(s.substr(0, x), &used);
      if (used != x)
        throw std::invalid_argument(s);
      r.width = std::stoul(s.substr(x + 1), &used);
      if (used != s.size() - x - 1)
        throw std::invalid_argument(s);
    }
  } catch (const std::logic_error &) {
    throw ConfigError("resolution '" + s + "' is not N or HxW");
  }
  if (r.height == 0 || r.width == 0)
    throw ConfigError("resolution must be positive");
  return r;
}

json read_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw ConfigError(path + ": " + e.what());
  }
}

bool ends_with(const std::string &s, const std::string &suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// "synthetic", a dataset-spec JSON file, or a WDAT file (every fifth sample
// becomes validation data).
DatasetSplit load_data(const std::string &arg, std::uint64_t seed) {
  if (ends_with(arg, ".wdat")) {
    const Dataset all = load_wdat(arg);
    DatasetSplit out;
    for (Dataset *d : {&out.train, &out.val}) {
      d->height = all.height;
      d->width = all.width;
      d->channels = all.channels;
    }
    const std::size_t per = all.height * all.width * all.channels;
    for (std::size_t i = 0; i < all.size(); ++i) {
      Dataset &d = i % 5 == 0 ? out.val : out.train;
      d.pixels.insert(d.pixels.end(), all.pixels.begin() + std::ptrdiff_t(i * per),
                      all.pixels.begin() + std::ptrdiff_t((i + 1) * per));
      d.labels.push_back(all.labels[i]);
    }
    return out;
  }
  DatasetSpec spec;
  spec.seed = seed;
  if (arg != "synthetic")
    spec = read_json_file(arg).get<DatasetSpec>();
  return gen_dataset(spec);
}

void emit(const json &body, const std::string &command, bool table, const std::string &text) {
  if (table) {
    std::cout << text;
    return;
  }
  json out = body;
  out["schema_version"] = schema_version;
  out["command"] = command;
  std::cout << out.dump(2) << '\n';
}

std::string describe_text(const ModelConfig &cfg) {
  std::ostringstream os;
  os << cfg.name << ": " << to_string(cfg.aggregator) << " + " << to_string(cfg.comm) << ", width " << cfg.width
     << ", depths {" << cfg.depths[0] << ',' << cfg.depths[1] << ',' << cfg.depths[2] << ',' << cfg.depths[3]
     << "}, window " << cfg.window << '\n';
  const auto grids = stage_grids(cfg, cfg.image_size, cfg.image_size);
  for (std::size_t s = 0; s < 4; ++s) {
    os << "  stage " << s << ": " << grids[s].height << 'x' << grids[s].width << " tokens, " << cfg.stage_channels(s)
       << " channels";
    if (cfg.aggregator == AggregatorKind::mhsa)
      os << ", " << cfg.heads(s) << " heads";
    else
      os << ", " << cfg.stage_groups(s) << " groups";
    os << '\n';
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "  params: %.3fM\n", count_params(cfg).total_params / 1e6);
  os << buf;
  return os.str();
}

json describe_json(const ModelConfig &cfg) {
  json stages = json::array();
  const auto grids = stage_grids(cfg, cfg.image_size, cfg.image_size);
  for (std::size_t s = 0; s < 4; ++s)
    stages.push_back({{"grid", {grids[s].height, grids[s].width}},
                      {"channels", cfg.stage_channels(s)},
                      {"groups", cfg.stage_groups(s)},
                      {"heads", cfg.heads(s)}});
  return {{"config", cfg}, {"stages", stages}, {"total_params", count_params(cfg).total_params}};
}

std::string epoch_line(const EpochMetrics &m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%5zu %7zu %10.4f %9.3f %10.4f %9.3f\n", m.epoch, m.step, m.train_loss,
                m.train_accuracy, m.val_loss, m.val_accuracy);
  return buf;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Window-mixing vision backbones: cost accounting, connectivity, training"};
  app.require_subcommand(1);
  app.fallthrough();
  bool table = false;
  app.add_flag("--table", table, "Aligned text instead of JSON");

  std::string model_arg;
  auto add_model = [&](CLI::App *sub) {
    sub->add_option("model", model_arg, "Preset name or config JSON path")->required();
  };

  auto *describe = app.add_subcommand("describe", "Print a model configuration");
  add_model(describe);

  auto *count = app.add_subcommand("count", "Per-layer parameter counts");
  add_model(count);

  std::string res = "224";
  auto *flops = app.add_subcommand("flops", "Per-layer multiply-accumulate counts");
  add_model(flops);
  flops->add_option("--res", res, "Input resolution, N or HxW");

  std::size_t grid = 14;
  std::string pgm_dir;
  auto *conn = app.add_subcommand("connectivity", "Token influence through the blocks on a fixed grid");
  add_model(conn);
  conn->add_option("--grid", grid, "Token grid side");
  conn->add_option("--pgm", pgm_dir, "Write one PGM per layer into this directory");

  std::uint64_t seed = 0;
  std::size_t per_tensor = 16;
  double fd_step = 1e-4, tolerance = 1e-4;
  auto *gradcheck = app.add_subcommand("gradcheck", "Analytic vs central-difference gradients (float64)");
  gradcheck->add_option("model", model_arg, "Preset name or config JSON path")->default_val("micro-linear-shift");
  gradcheck->add_option("--seed", seed, "Parameter and batch seed");
  gradcheck->add_option("--per-tensor", per_tensor, "Entries probed per tensor (0 = all)");
  gradcheck->add_option("--step", fd_step, "Central-difference step");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error");

  std::string config_arg = "desk-linear-shift", hp_path, data_arg = "synthetic", out_dir = "run", resume_path;
  auto *trainc = app.add_subcommand("train", "Train on synthetic or WDAT data");
  trainc->add_option("--config", config_arg, "Preset name or config JSON path");
  trainc->add_option("--hp", hp_path, "Hyperparameter JSON");
  trainc->add_option("--data", data_arg, "'synthetic', dataset-spec JSON or .wdat file");
  trainc->add_option("--out", out_dir, "Output directory");
  trainc->add_option("--seed", seed, "Parameter init, batch order and synthetic data seed");
  trainc->add_option("--resume", resume_path, "Continue from this checkpoint");

  std::string ckpt_path;
  auto *evalc = app.add_subcommand("eval", "Accuracy and loss of a checkpoint");
  evalc->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  evalc->add_option("--data", data_arg, "'synthetic', dataset-spec JSON or .wdat file");
  evalc->add_option("--seed", seed, "Synthetic data seed");

  std::size_t batch = 64, repeats = 10;
  auto *bench = app.add_subcommand("bench", "Forward throughput");
  bench->add_option("--ckpt", ckpt_path, "Checkpoint path");
  bench->add_option("--config", config_arg, "Preset or config JSON when no checkpoint is given");
  bench->add_option("--batch", batch, "Images per forward pass");
  bench->add_option("--repeats", repeats, "Timed passes");
  bench->add_option("--res", res, "Input resolution (default: the config's image size)");

  std::string wdat_out;
  auto *gendata = app.add_subcommand("gen-data", "Write the synthetic train and val splits as WDAT files");
  gendata->add_option("--data", data_arg, "'synthetic' or dataset-spec JSON");
  gendata->add_option("--seed", seed, "Synthetic data seed");
  gendata->add_option("--out", wdat_out, "Path prefix; writes <prefix>-train.wdat and <prefix>-val.wdat")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << e.what() << "\n\n";
    const CLI::App *failed = &app;
    for (const auto *sub : app.get_subcommands())
      failed = sub;
    std::cerr << failed->help();
    return 1;
  }

  try {
    if (*describe) {
      const ModelConfig cfg = load_config(model_arg);
      emit(describe_json(cfg), "describe", table, describe_text(cfg));
    } else if (*count) {
      const CostReport r = count_params(load_config(model_arg));
      emit(to_json(r), "count", table, to_table(r));
    } else if (*flops) {
      const Resolution rr = parse_resolution(res);
      const CostReport r = count_flops(load_config(model_arg), rr.height, rr.width);
      emit(to_json(r), "flops", table, to_table(r));
    } else if (*conn) {
      if (grid == 0)
        throw ConfigError("--grid must be positive");
      const ConnectivityReport r = connectivity(load_config(model_arg), grid, grid);
      if (!pgm_dir.empty())
        write_pgm(r, pgm_dir);
      std::ostringstream os;
      const json j = to_json(r);
      os << r.model << " on " << grid << 'x' << grid << ": ";
      if (r.full_at)
        os << "full connectivity after block " << *r.full_at << '\n';
      else
        os << "never fully connected in " << r.layers.size() - 1 << " blocks\n";
      for (std::size_t l = 0; l < r.layers.size(); ++l) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%5zu %8.4f\n", l, j["density"][l].get<double>());
        os << buf;
      }
      emit(j, "connectivity", table, os.str());
    } else if (*gradcheck) {
      const GradCheckResult r = gradient_check_model(load_config(model_arg), seed, fd_step, per_tensor);
      json j = to_json(r);
      j["tolerance"] = tolerance;
      j["passed"] = r.max_rel_error < tolerance;
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s seed %llu: max rel error %.3e over %zu entries (worst %s) %s\n",
                    r.model.c_str(), static_cast<unsigned long long>(seed), r.max_rel_error, r.coordinates,
                    r.worst_param.c_str(), r.max_rel_error < tolerance ? "PASS" : "FAIL");
      emit(j, "gradcheck", table, buf);
      return r.max_rel_error < tolerance ? 0 : 2;
    } else if (*trainc) {
      Hyperparams hp;
      if (!hp_path.empty())
        hp = read_json_file(hp_path).get<Hyperparams>();
      hp.validate();
      const DatasetSplit data = load_data(data_arg, seed);
      std::filesystem::create_directories(out_dir);
      TrainState state;
      if (!resume_path.empty()) {
        Hyperparams saved;
        state = from_checkpoint(load_checkpoint(resume_path), &saved);
        if (hp_path.empty())
          hp = saved;
      } else {
        state = init_train_state(load_config(config_arg), seed);
      }
      TrainOptions opt;
      opt.checkpoint_path = out_dir + "/checkpoint.wmix";
      if (table) {
        std::printf("%5s %7s %10s %9s %10s %9s\n", "epoch", "step", "loss", "acc", "val_loss", "val_acc");
        opt.on_epoch = [](const EpochMetrics &m) {
          std::cout << epoch_line(m);
          std::cout.flush();
        };
      }
      train(state, data, hp, opt);
      json history = json::array();
      for (const auto &m : state.history)
        history.push_back(to_json(m));
      const EvalResult val = evaluate(state.model, data.val);
      json j{{"model", state.model.config.name},
             {"steps", state.step},
             {"hyperparams", hp},
             {"checkpoint", *opt.checkpoint_path},
             {"val_accuracy", val.accuracy},
             {"val_loss", val.loss},
             {"history", history}};
      std::ofstream(out_dir + "/metrics.json") << j.dump(2) << '\n';
      if (!table)
        emit(j, "train", false, "");
    } else if (*evalc) {
      const TrainState state = from_checkpoint(load_checkpoint(ckpt_path));
      // A WDAT file is scored whole; synthetic data by its validation split.
      const EvalResult r = ends_with(data_arg, ".wdat") ? evaluate(state.model, load_wdat(data_arg))
                                                        : evaluate(state.model, load_data(data_arg, seed).val);
      char buf[128];
      std::snprintf(buf, sizeof buf, "accuracy %.4f  loss %.4f  samples %zu\n", r.accuracy, r.loss, r.samples);
      emit({{"model", state.model.config.name}, {"accuracy", r.accuracy}, {"loss", r.loss}, {"samples", r.samples}},
           "eval", table, buf);
    } else if (*bench) {
      Model<float> model = ckpt_path.empty() ? build_model<float>(load_config(config_arg), seed)
                                             : from_checkpoint(load_checkpoint(ckpt_path)).model;
      Resolution rr{model.config.image_size, model.config.image_size};
      if (bench->count("--res"))
        rr = parse_resolution(res);
      const ThroughputReport r = bench_throughput(model, batch, repeats, rr.height, rr.width);
      json j = to_json(r);
      j["model"] = model.config.name;
      j["resolution"] = {rr.height, rr.width};
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s batch %zu: median %.1f img/s, IQR %.1f over %zu repeats\n",
                    model.config.name.c_str(), batch, r.median_images_per_second, r.iqr_images_per_second, repeats);
      emit(j, "bench", table, buf);
    } else if (*gendata) {
      const DatasetSplit data = load_data(data_arg, seed);
      if (const auto parent = std::filesystem::path(wdat_out).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
      save_wdat(wdat_out + "-train.wdat", data.train);
      save_wdat(wdat_out + "-val.wdat", data.val);
      emit({{"train", wdat_out + "-train.wdat"},
            {"val", wdat_out + "-val.wdat"},
            {"train_samples", data.train.size()},
            {"val_samples", data.val.size()}},
           "gen-data", table, "wrote " + wdat_out + "-train.wdat and " + wdat_out + "-val.wdat\n");
    }
  } catch (const NumericError &e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
