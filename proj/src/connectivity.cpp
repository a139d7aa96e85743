#include <winmix/connectivity.hpp>
#include <winmix/model.hpp>

#include <bit>
#include <filesystem>
#include <fstream>

namespace winmix {

InfluenceMatrix InfluenceMatrix::identity(std::size_t n) {
  InfluenceMatrix m(n);
  for (std::size_t i = 0; i < n; ++i)
    m.set(i, i);
  return m;
}

void InfluenceMatrix::merge_row(std::size_t dst, const InfluenceMatrix &from, std::size_t src) {
  for (std::size_t w = 0; w < words_; ++w)
    bits_[dst * words_ + w] |= from.bits_[src * words_ + w];
}

void InfluenceMatrix::clear_row(std::size_t i) {
  std::fill(bits_.begin() + i * words_, bits_.begin() + (i + 1) * words_, 0);
}

std::size_t InfluenceMatrix::count() const {
  std::size_t c = 0;
  for (auto w : bits_)
    c += std::popcount(w);
  return c;
}

bool InfluenceMatrix::contains(const InfluenceMatrix &other) const {
  if (other.rows_ != rows_ || other.cols_ != cols_)
    return false;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if ((other.bits_[i] & ~bits_[i]) != 0)
      return false;
  return true;
}

namespace {

// For each window token, the window tokens its aggregator output reads.
std::vector<std::vector<std::size_t>> window_pattern(const AggregatorSpec &spec) {
  const std::size_t wt = spec.window_tokens();
  std::vector<std::vector<bool>> reads(wt, std::vector<bool>(wt, false));
  for (std::size_t t = 0; t < wt; ++t)
    reads[t][t] = true;
  if (spec.kind == AggregatorKind::mhsa) {
    for (auto &r : reads)
      std::fill(r.begin(), r.end(), true);
  } else {
    AggregatorSpec plain = spec;
    plain.messengers = 0;
    for (const IndexMap &m : {axial_height_map(1, plain), axial_width_map(1, plain)}) {
      const std::size_t n = m.out_shape[2], rows = m.source.size() / n;
      // Every output channel of a token mixes all its channels, so a token
      // reads the union of all axial rows it appears in.
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t ta = std::size_t(m.source[r * n + a]) / spec.channels;
            const std::size_t tb = std::size_t(m.source[r * n + b]) / spec.channels;
            reads[ta][tb] = true;
          }
    }
  }
  std::vector<std::vector<std::size_t>> out(wt);
  for (std::size_t t = 0; t < wt; ++t)
    for (std::size_t u = 0; u < wt; ++u)
      if (reads[t][u])
        out[t].push_back(u);
  return out;
}

} // namespace

ConnectivityReport connectivity(const ModelConfig &cfg, std::size_t grid_h, std::size_t grid_w) {
  cfg.validate(true);
  if (grid_h == 0 || grid_w == 0)
    throw ConfigError("connectivity grid must be non-empty");
  const std::size_t n = grid_h * grid_w;
  ConnectivityReport report;
  report.model = cfg.name;
  report.grid_h = grid_h;
  report.grid_w = grid_w;
  report.layers.push_back(InfluenceMatrix::identity(n));

  const BlockGeometry geo = block_geometry(cfg, grid_h, grid_w);
  const std::size_t windows = geo.windows_h() * geo.windows_w(), wt = cfg.window * cfg.window;
  const std::size_t m = cfg.stage_messengers();

  for (std::size_t s = 0; s < 4; ++s) {
    const AggregatorSpec spec = cfg.aggregator_spec(s);
    const auto pattern = window_pattern(spec);
    InfluenceMatrix msg(windows * m, n);
    for (std::size_t i = 0; i < cfg.depths[s]; ++i) {
      const InfluenceMatrix &cur = report.layers.back();
      const IndexMap entry = block_entry_map(cfg, i, 1, grid_h, grid_w, 1);
      const IndexMap exit = block_exit_map(cfg, i, 1, grid_h, grid_w, 1);

      // Rows of `slots` are window slots; columns are grid tokens.
      InfluenceMatrix slots(windows * wt, n), mixed(windows * wt, n);
      for (std::size_t k = 0; k < entry.source.size(); ++k)
        if (entry.source[k] >= 0)
          slots.merge_row(k, cur, std::size_t(entry.source[k]));

      if (m > 0 && i % 2 == 1 && geo.region > 1) {
        InfluenceMatrix exchanged(windows * m, n);
        const std::size_t r = geo.region, gw = geo.windows_w();
        for (std::size_t w = 0; w < windows; ++w) {
          const std::size_t wy = w / gw, wx = w % gw;
          for (std::size_t slot = 0; slot < r * r; ++slot) {
            const std::size_t src = (wy / r * r + slot / r) * gw + wx / r * r + slot % r;
            for (std::size_t k = 0; k < m; ++k)
              exchanged.merge_row(w * m + k, msg, src * m + k);
          }
        }
        msg = exchanged;
      }

      InfluenceMatrix next_msg = msg;
      for (std::size_t w = 0; w < windows; ++w)
        for (std::size_t t = 0; t < wt; ++t) {
          for (std::size_t u : pattern[t])
            mixed.merge_row(w * wt + t, slots, w * wt + u);
          for (std::size_t k = 0; k < m; ++k) {
            mixed.merge_row(w * wt + t, msg, w * m + k);
            for (std::size_t k2 = 0; k2 < m; ++k2)
              next_msg.merge_row(w * m + k2, slots, w * wt + t);
          }
        }
      if (spec.kind == AggregatorKind::mhsa)
        for (std::size_t w = 0; w < windows; ++w)
          for (std::size_t k = 0; k < m; ++k)
            for (std::size_t k2 = 0; k2 < m; ++k2)
              next_msg.merge_row(w * m + k, msg, w * m + k2);
      if (m > 0)
        msg = next_msg;

      InfluenceMatrix next(n);
      for (std::size_t k = 0; k < exit.source.size(); ++k)
        next.merge_row(k, mixed, std::size_t(exit.source[k]));
      report.layers.push_back(std::move(next));
      if (!report.full_at && report.layers.back().all())
        report.full_at = report.layers.size() - 1;
    }
  }
  return report;
}

nlohmann::json to_json(const ConnectivityReport &r) {
  nlohmann::json density = nlohmann::json::array();
  const double total = double(r.grid_h * r.grid_w) * double(r.grid_h * r.grid_w);
  for (const auto &l : r.layers)
    density.push_back(double(l.count()) / total);
  nlohmann::json j{{"model", r.model},
                   {"grid", {r.grid_h, r.grid_w}},
                   {"layers", r.layers.size() - 1},
                   {"density", density},
                   {"full_connectivity_layer", nullptr}};
  if (r.full_at)
    j["full_connectivity_layer"] = *r.full_at;
  return j;
}

void write_pgm(const ConnectivityReport &r, const std::string &directory) {
  std::filesystem::create_directories(directory);
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const auto &m = r.layers[l];
    const std::string path = directory + "/layer_" + std::to_string(l) + ".pgm";
    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw std::runtime_error("cannot write " + path);
    out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
    std::vector<char> row(m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j)
        row[j] = m.get(i, j) ? char(255) : char(0);
      out.write(row.data(), std::streamsize(row.size()));
    }
  }
}

} // namespace winmix
