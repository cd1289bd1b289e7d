#pragma once

// Density-peaks compression of a latent token grid into a short, raster-ordered
// sequence of representative vectors ("latent visual thoughts").

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adloop {

using Vec = std::vector<double>;

// Row-major H x W grid of D-dimensional latent vectors.
class TokenGrid {
 public:
  TokenGrid() = default;
  TokenGrid(std::size_t height, std::size_t width, std::size_t dim);
  TokenGrid(std::size_t height, std::size_t width, std::vector<Vec> tokens);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }

  const Vec& at(std::size_t index) const { return tokens_.at(index); }
  Vec& at(std::size_t index) { return tokens_.at(index); }
  const Vec& at(std::size_t row, std::size_t col) const {
    return tokens_.at(row * width_ + col);
  }
  Vec& at(std::size_t row, std::size_t col) {
    return tokens_.at(row * width_ + col);
  }
  const std::vector<Vec>& tokens() const { return tokens_; }

  std::pair<std::size_t, std::size_t> coord(std::size_t index) const {
    return {index / width_, index % width_};
  }

  // Throws kInvalidInput when shape, dims or finiteness are violated.
  void validate() const;

  bool operator==(const TokenGrid&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t dim_ = 0;
  std::vector<Vec> tokens_;
};

enum class DistanceKind { kEuclidean };

struct CompressionConfig {
  std::size_t budget_k = 16;
  // 0 selects min(8, N - 1) at compression time.
  std::size_t knn_k = 0;
  DistanceKind distance_kind = DistanceKind::kEuclidean;

  void validate() const;
  std::size_t resolved_knn(std::size_t n) const;
};

struct ClusterSet {
  // Raster index of each cluster's center token, in raster order.
  std::vector<std::size_t> centers;
  // Cluster id per token.
  std::vector<std::size_t> assignment;
  std::vector<Vec> representatives;
  std::vector<std::pair<std::size_t, std::size_t>> center_coords;
  std::vector<double> scores;
  std::vector<double> densities;
  std::vector<double> distances;

  std::size_t num_clusters() const { return centers.size(); }
  std::vector<std::size_t> members(std::size_t cluster) const;
};

double squared_distance(std::span<const double> a, std::span<const double> b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

// rho_i = exp(-(1/k) * sum of squared distances to the k nearest neighbours).
std::vector<double> local_density(const TokenGrid& grid, std::size_t knn_k);

// Distance to the nearest strictly denser token, or the farthest token when
// none is denser.
std::vector<double> min_distance_to_denser(const TokenGrid& grid,
                                           std::span<const double> densities);

std::vector<double> peak_scores(std::span<const double> densities,
                                std::span<const double> distances);

// Top min(budget_k, N) scores, ties to the smaller index, returned sorted.
std::vector<std::size_t> select_centers(std::span<const double> scores,
                                        std::size_t budget_k);

// Nearest-center assignment; ties go to the center with the smaller index.
// Returned ids index into `centers`.
std::vector<std::size_t> assign_clusters(const TokenGrid& grid,
                                         std::span<const std::size_t> centers);

ClusterSet compress(const TokenGrid& grid, const CompressionConfig& cfg);

// TGRID v1 text format.
TokenGrid read_token_grid(std::istream& in);
void write_token_grid(std::ostream& out, const TokenGrid& grid);
TokenGrid load_token_grid(const std::string& path);
void save_token_grid(const std::string& path, const TokenGrid& grid);

void write_cluster_set(std::ostream& out, const ClusterSet& clusters);

}  // namespace adloop
