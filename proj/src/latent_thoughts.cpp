#include "adloop/latent_thoughts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "adloop/error.hpp"

namespace adloop {

TokenGrid::TokenGrid(std::size_t height, std::size_t width, std::size_t dim)
    : height_(height), width_(width), dim_(dim),
      tokens_(height * width, Vec(dim, 0.0)) {}

TokenGrid::TokenGrid(std::size_t height, std::size_t width,
                     std::vector<Vec> tokens)
    : height_(height), width_(width),
      dim_(tokens.empty() ? 0 : tokens.front().size()),
      tokens_(std::move(tokens)) {
  validate();
}

void TokenGrid::validate() const {
  if (height_ == 0 || width_ == 0 || dim_ == 0) {
    throw Error(ErrorCode::kInvalidInput, "token grid has an empty dimension");
  }
  if (tokens_.size() != height_ * width_) {
    throw Error(ErrorCode::kInvalidInput, "token count does not match H*W");
  }
  for (const Vec& t : tokens_) {
    if (t.size() != dim_) {
      throw Error(ErrorCode::kInvalidInput, "token dim mismatch");
    }
    for (double x : t) {
      if (!std::isfinite(x)) {
        throw Error(ErrorCode::kInvalidInput, "non-finite token component");
      }
    }
  }
}

void CompressionConfig::validate() const {
  if (budget_k < 1) {
    throw Error(ErrorCode::kInvalidInput, "budget_k must be >= 1");
  }
}

std::size_t CompressionConfig::resolved_knn(std::size_t n) const {
  if (knn_k != 0) return knn_k;
  return std::min<std::size_t>(8, n > 0 ? n - 1 : 0);
}

std::vector<std::size_t> ClusterSet::members(std::size_t cluster) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == cluster) out.push_back(i);
  }
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

double euclidean_distance(std::span<const double> a,
                          std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

std::vector<double> local_density(const TokenGrid& grid, std::size_t knn_k) {
  const std::size_t n = grid.size();
  if (n < 2) {
    throw Error(ErrorCode::kInvalidInput, "local density needs at least 2 tokens");
  }
  if (knn_k < 1 || knn_k > n - 1) {
    throw Error(ErrorCode::kInvalidInput, "knn_k must lie in [1, N-1]");
  }
  std::vector<double> rho(n);
  std::vector<double> d2;
  d2.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    d2.clear();
    for (std::size_t m = 0; m < n; ++m) {
      if (m != i) d2.push_back(squared_distance(grid.at(i), grid.at(m)));
    }
    std::partial_sort(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(knn_k),
                      d2.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < knn_k; ++j) sum += d2[j];
    rho[i] = std::exp(-sum / static_cast<double>(knn_k));
  }
  return rho;
}

std::vector<double> min_distance_to_denser(const TokenGrid& grid,
                                           std::span<const double> densities) {
  const std::size_t n = grid.size();
  if (densities.size() != n) {
    throw Error(ErrorCode::kInvalidInput, "density array does not match grid");
  }
  std::vector<double> delta(n);
  for (std::size_t i = 0; i < n; ++i) {
    double nearest_denser = std::numeric_limits<double>::infinity();
    double farthest = 0.0;
    bool has_denser = false;
    for (std::size_t m = 0; m < n; ++m) {
      if (m == i) continue;
      const double d = euclidean_distance(grid.at(i), grid.at(m));
      farthest = std::max(farthest, d);
      if (densities[m] > densities[i]) {
        has_denser = true;
        nearest_denser = std::min(nearest_denser, d);
      }
    }
    delta[i] = has_denser ? nearest_denser : farthest;
  }
  return delta;
}

std::vector<double> peak_scores(std::span<const double> densities,
                                std::span<const double> distances) {
  if (densities.size() != distances.size()) {
    throw Error(ErrorCode::kInvalidInput, "density/distance length mismatch");
  }
  std::vector<double> s(densities.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = densities[i] * distances[i];
  return s;
}

std::vector<std::size_t> select_centers(std::span<const double> scores,
                                        std::size_t budget_k) {
  if (budget_k < 1) {
    throw Error(ErrorCode::kInvalidInput, "budget_k must be >= 1");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t keep = std::min(budget_k, scores.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> assign_clusters(const TokenGrid& grid,
                                         std::span<const std::size_t> centers) {
  if (centers.empty()) {
    throw Error(ErrorCode::kInvalidInput, "no cluster centers");
  }
  for (std::size_t c : centers) {
    if (c >= grid.size()) {
      throw Error(ErrorCode::kInvalidInput, "center index out of range");
    }
  }
  // Visit centers by raster index so strict '<' keeps the smaller one on ties.
  std::vector<std::size_t> by_index(centers.size());
  std::iota(by_index.begin(), by_index.end(), std::size_t{0});
  std::sort(by_index.begin(), by_index.end(),
            [&](std::size_t a, std::size_t b) { return centers[a] < centers[b]; });

  std::vector<std::size_t> assignment(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_id = by_index.front();
    for (std::size_t id : by_index) {
      if (centers[id] == i) {
        best_id = id;
        break;
      }
      const double d = squared_distance(grid.at(i), grid.at(centers[id]));
      if (d < best) {
        best = d;
        best_id = id;
      }
    }
    assignment[i] = best_id;
  }
  return assignment;
}

ClusterSet compress(const TokenGrid& grid, const CompressionConfig& cfg) {
  grid.validate();
  cfg.validate();
  const std::size_t n = grid.size();

  ClusterSet out;
  if (n == 1) {
    out.densities = {1.0};
    out.distances = {0.0};
    out.scores = {0.0};
  } else {
    out.densities = local_density(grid, cfg.resolved_knn(n));
    out.distances = min_distance_to_denser(grid, out.densities);
    out.scores = peak_scores(out.densities, out.distances);
  }
  out.centers = select_centers(out.scores, cfg.budget_k);
  out.assignment = assign_clusters(grid, out.centers);

  const std::size_t k = out.centers.size();
  out.representatives.assign(k, Vec(grid.dim(), 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Vec& rep = out.representatives[out.assignment[i]];
    const Vec& z = grid.at(i);
    for (std::size_t d = 0; d < rep.size(); ++d) rep[d] += z[d];
    ++counts[out.assignment[i]];
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (double& x : out.representatives[j]) x /= static_cast<double>(counts[j]);
    out.center_coords.push_back(grid.coord(out.centers[j]));
  }
  return out;
}

TokenGrid read_token_grid(std::istream& in) {
  std::string magic, version;
  std::size_t h = 0, w = 0, d = 0;
  if (!(in >> magic >> version >> h >> w >> d) || magic != "TGRID") {
    throw Error(ErrorCode::kParse, "expected 'TGRID v1 <H> <W> <D>' header");
  }
  if (version != "v1") {
    throw Error(ErrorCode::kVersion, "unsupported token grid version " + version);
  }
  if (h == 0 || w == 0 || d == 0) {
    throw Error(ErrorCode::kInvalidInput, "token grid header has a zero dimension");
  }
  std::vector<Vec> tokens(h * w, Vec(d));
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      if (!(in >> tokens[i][k])) {
        throw Error(ErrorCode::kParse,
                    "token grid truncated at token " + std::to_string(i));
      }
    }
  }
  return TokenGrid(h, w, std::move(tokens));
}

void write_token_grid(std::ostream& out, const TokenGrid& grid) {
  out << "TGRID v1 " << grid.height() << ' ' << grid.width() << ' '
      << grid.dim() << '\n';
  out << std::setprecision(17);
  for (const Vec& t : grid.tokens()) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (k) out << ' ';
      out << t[k];
    }
    out << '\n';
  }
}

TokenGrid load_token_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_token_grid(in);
}

void save_token_grid(const std::string& path, const TokenGrid& grid) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  write_token_grid(out, grid);
}

void write_cluster_set(std::ostream& out, const ClusterSet& clusters) {
  out << "CLUSTERS " << clusters.num_clusters() << '\n';
  out << std::setprecision(17);
  for (std::size_t j = 0; j < clusters.num_clusters(); ++j) {
    out << "cluster " << j << " center " << clusters.centers[j] << " coord "
        << clusters.center_coords[j].first << ',' << clusters.center_coords[j].second
        << " members";
    const auto members = clusters.members(j);
    for (std::size_t i = 0; i < members.size(); ++i) {
      out << (i ? ',' : ' ') << members[i];
    }
    out << " rep [";
    const Vec& rep = clusters.representatives[j];
    for (std::size_t k = 0; k < rep.size(); ++k) {
      if (k) out << ' ';
      out << rep[k];
    }
    out << "]\n";
  }
}

}  // namespace adloop
