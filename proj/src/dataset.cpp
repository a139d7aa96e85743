#include <winmix/dataset.hpp>
#include <winmix/params.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace winmix {

void DatasetSpec::validate() const {
  if (classes < 2)
    throw ConfigError("dataset needs at least 2 classes");
  if (paired_halves && classes != 2)
    throw ConfigError("paired_halves datasets have exactly 2 classes");
  if (size == 0 || channels == 0 || samples == 0)
    throw ConfigError("dataset size, channels and samples must be positive");
  if (samples % classes != 0)
    throw ConfigError("samples (" + std::to_string(samples) + ") must be a multiple of classes (" +
                      std::to_string(classes) + ")");
  if (!(val_fraction > 0 && val_fraction < 1))
    throw ConfigError("val_fraction must lie in (0, 1)");
  if (noise < 0 || phase_jitter < 0 || frequency <= 0 || frequency_jitter < 0 || frequency_jitter >= 1)
    throw ConfigError("dataset noise and jitter settings out of range");
}

void to_json(nlohmann::json &j, const DatasetSpec &s) {
  j = {{"seed", s.seed},
       {"samples", s.samples},
       {"classes", s.classes},
       {"size", s.size},
       {"channels", s.channels},
       {"noise", s.noise},
       {"phase_jitter", s.phase_jitter},
       {"frequency", s.frequency},
       {"frequency_jitter", s.frequency_jitter},
       {"val_fraction", s.val_fraction},
       {"paired_halves", s.paired_halves}};
}

void from_json(const nlohmann::json &j, DatasetSpec &s) {
  const nlohmann::json defaults = DatasetSpec{};
  for (const auto &[key, _] : j.items())
    if (!defaults.contains(key))
      throw ConfigError("unknown dataset field '" + key + "'");
  try {
    s.seed = j.value("seed", s.seed);
    s.samples = j.value("samples", s.samples);
    s.classes = j.value("classes", s.classes);
    s.size = j.value("size", s.size);
    s.channels = j.value("channels", s.channels);
    s.noise = j.value("noise", s.noise);
    s.phase_jitter = j.value("phase_jitter", s.phase_jitter);
    s.frequency = j.value("frequency", s.frequency);
    s.frequency_jitter = j.value("frequency_jitter", s.frequency_jitter);
    s.val_fraction = j.value("val_fraction", s.val_fraction);
    s.paired_halves = j.value("paired_halves", s.paired_halves);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("bad dataset spec: ") + e.what());
  }
}

std::size_t Dataset::classes() const {
  int hi = -1;
  for (int l : labels)
    hi = std::max(hi, l);
  return std::size_t(hi + 1);
}

template <typename T> Tensor<T> Dataset::images(std::span<const std::size_t> indices) const {
  const std::size_t per = height * width * channels;
  std::vector<T> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size())
      throw DimensionError("sample index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(pixels.begin() + std::ptrdiff_t(indices[i] * per), per, out.begin() + std::ptrdiff_t(i * per));
  }
  return Tensor<T>({indices.size(), height, width, channels}, std::move(out));
}

template <typename T> Tensor<T> Dataset::images() const {
  std::vector<std::size_t> all(size());
  for (std::size_t i = 0; i < all.size(); ++i)
    all[i] = i;
  return images<T>(all);
}

namespace {

struct Grating {
  double angle, phase, frequency, contrast;
};

Grating draw(const DatasetSpec &spec, double angle, Rng &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {angle, spec.phase_jitter * u(rng), spec.frequency * (1.0 + spec.frequency_jitter * u(rng)),
          0.35 + 0.1 * u(rng)};
}

double value(const Grating &g, double x, double y, double size) {
  const double t = (x * std::cos(g.angle) + y * std::sin(g.angle)) / size;
  return g.contrast * std::cos(2.0 * std::numbers::pi * g.frequency * t + g.phase);
}

void render(const DatasetSpec &spec, int label, Rng &rng, float *out) {
  const std::size_t n = spec.size;
  const double pi = std::numbers::pi;
  std::normal_distribution<double> noise(0.0, 1.0);
  Grating left, right;
  if (spec.paired_halves) {
    // Each half gets one of two orientations; label 1 means they agree.
    std::bernoulli_distribution coin(0.5);
    const bool a = coin(rng);
    const bool b = label == 1 ? a : !a;
    left = draw(spec, a ? pi / 4 : 3 * pi / 4, rng);
    right = draw(spec, b ? pi / 4 : 3 * pi / 4, rng);
  } else {
    left = right = draw(spec, pi * label / double(spec.classes), rng);
  }
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Grating &g = x < n / 2 ? left : right;
      const double base = 0.5 + value(g, double(x), double(y), double(n));
      for (std::size_t c = 0; c < spec.channels; ++c) {
        // Mild per-channel gain so channels are not exact copies.
        const double gain = 1.0 - 0.15 * double(c) / double(spec.channels);
        out[(y * n + x) * spec.channels + c] = float(std::clamp(base * gain + spec.noise * noise(rng), 0.0, 1.0));
      }
    }
}

void push(Dataset &d, const float *image, std::size_t per, int label) {
  d.pixels.insert(d.pixels.end(), image, image + per);
  d.labels.push_back(label);
}

} // namespace

DatasetSplit gen_dataset(const DatasetSpec &spec) {
  spec.validate();
  const std::size_t per_class = spec.samples / spec.classes;
  const auto val_per_class = std::size_t(std::llround(spec.val_fraction * double(per_class)));
  if (val_per_class == 0 || val_per_class >= per_class)
    throw ConfigError("val_fraction leaves an empty train or val split");
  const std::size_t per = spec.size * spec.size * spec.channels;
  DatasetSplit out;
  for (Dataset *d : {&out.train, &out.val}) {
    d->height = d->width = spec.size;
    d->channels = spec.channels;
  }
  Rng rng(spec.seed);
  std::vector<float> image(per);
  // Interleave classes so any prefix of either split stays balanced.
  for (std::size_t k = 0; k < per_class; ++k)
    for (std::size_t c = 0; c < spec.classes; ++c) {
      render(spec, int(c), rng, image.data());
      push(k < val_per_class ? out.val : out.train, image.data(), per, int(c));
    }
  return out;
}

void save_wdat(const std::string &path, const Dataset &data) {
  if (data.height > 0xFFFF || data.width > 0xFFFF || data.channels > 0xFFFF)
    throw ConfigError("image extents do not fit WDAT's u16 fields");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write " + path);
  auto put = [&](auto v) { out.write(reinterpret_cast<const char *>(&v), sizeof v); };
  out.write("WDAT", 4);
  put(std::uint32_t(data.size()));
  put(std::uint16_t(data.height));
  put(std::uint16_t(data.width));
  put(std::uint16_t(data.channels));
  for (float v : data.pixels)
    put(std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  for (int l : data.labels)
    put(std::uint16_t(l));
  if (!out)
    throw std::runtime_error("write failed: " + path);
}

Dataset load_wdat(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open dataset " + path);
  auto get = [&](auto v) {
    if (!in.read(reinterpret_cast<char *>(&v), sizeof v))
      throw std::runtime_error(path + ": truncated WDAT file");
    return v;
  };
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "WDAT")
    throw std::runtime_error(path + " is not a WDAT file");
  Dataset d;
  const auto count = get(std::uint32_t{});
  d.height = get(std::uint16_t{});
  d.width = get(std::uint16_t{});
  d.channels = get(std::uint16_t{});
  std::vector<std::uint8_t> raw(std::size_t(count) * d.height * d.width * d.channels);
  if (!raw.empty() && !in.read(reinterpret_cast<char *>(raw.data()), std::streamsize(raw.size())))
    throw std::runtime_error(path + ": truncated WDAT pixels");
  d.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    d.pixels[i] = float(raw[i]) / 255.0f;
  d.labels.resize(count);
  for (auto &l : d.labels)
    l = get(std::uint16_t{});
  return d;
}

double nearest_centroid_accuracy(const Dataset &train, const Dataset &test) {
  const std::size_t per = train.height * train.width * train.channels;
  if (test.height * test.width * test.channels != per)
    throw DimensionError("train and test images differ in size");
  const std::size_t k = std::max(train.classes(), test.classes());
  std::vector<double> centroid(k * per, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto l = std::size_t(train.labels[i]);
    ++counts[l];
    for (std::size_t p = 0; p < per; ++p)
      centroid[l * per + p] += train.pixels[i * per + p];
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t p = 0; p < per; ++p)
      centroid[c * per + p] /= double(std::max<std::size_t>(counts[c], 1));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0)
        continue;
      double d = 0;
      for (std::size_t p = 0; p < per; ++p) {
        const double e = test.pixels[i * per + p] - centroid[c * per + p];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == std::size_t(test.labels[i]);
  }
  return test.size() == 0 ? 0.0 : double(correct) / double(test.size());
}

template Tensor<float> Dataset::images<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::images<double>(std::span<const std::size_t>) const;
template Tensor<float> Dataset::images<float>() const;
template Tensor<double> Dataset::images<double>() const;

} // namespace winmix
