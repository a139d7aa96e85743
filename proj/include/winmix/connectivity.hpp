#pragma once

#include <winmix/config.hpp>

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace winmix {

/// Boolean matrix; row i is the set of input tokens that can influence
/// token i. Square unless built with explicit row and column counts.
class InfluenceMatrix {
public:
  InfluenceMatrix() = default;
  explicit InfluenceMatrix(std::size_t n) : InfluenceMatrix(n, n) {}
  InfluenceMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), words_((cols + 63) / 64), bits_(rows * words_, 0) {}
  static InfluenceMatrix identity(std::size_t n);

  std::size_t size() const { return rows_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool get(std::size_t i, std::size_t j) const { return (bits_[i * words_ + j / 64] >> (j % 64)) & 1u; }
  void set(std::size_t i, std::size_t j) { bits_[i * words_ + j / 64] |= std::uint64_t(1) << (j % 64); }
  /// row(dst) |= row(src) of `from`.
  void merge_row(std::size_t dst, const InfluenceMatrix &from, std::size_t src);
  void clear_row(std::size_t i);
  std::size_t count() const;
  bool all() const { return count() == rows_ * cols_; }
  /// Every entry set in `other` is set here.
  bool contains(const InfluenceMatrix &other) const;
  bool operator==(const InfluenceMatrix &) const = default;

private:
  std::size_t rows_ = 0, cols_ = 0, words_ = 0;
  std::vector<std::uint64_t> bits_;
};

struct ConnectivityReport {
  std::string model;
  std::size_t grid_h = 0, grid_w = 0;
  /// layers[0] is the identity; layers[l] follows block l (1-based, counted
  /// across stages).
  std::vector<InfluenceMatrix> layers;
  std::optional<std::size_t> full_at; // first l with layers[l] all true
};

/// Boolean propagation of token influence through every block of `cfg` on
/// a fixed grid_h x grid_w token grid (no merges). FFN and norms are
/// per-token; residuals union; pad tokens carry nothing.
ConnectivityReport connectivity(const ModelConfig &cfg, std::size_t grid_h, std::size_t grid_w);

nlohmann::json to_json(const ConnectivityReport &report);

/// Writes one binary PGM per layer (white = influence) into `directory`.
void write_pgm(const ConnectivityReport &report, const std::string &directory);

} // namespace winmix
