#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gfcn/errors.hpp"
#include "gfcn/tensor.hpp"

namespace gfcn {

struct AugmentConfig {
  double p_projective = 0.5;
  double p_elastic = 0.5;
  double p_signflip = 0.5;
  /// Largest corner shift along the chosen axis, as a fraction of that axis' extent.
  double projective_max_shift = 0.25;
  Index grid_spacing = 16;
  double elastic_max_disp = 5.0;
  std::uint64_t rng_seed = 0;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    auto prob = [&](const char* name, double p) {
      if (!(p >= 0.0 && p <= 1.0)) v.push_back(std::string(name) + " must lie in [0, 1]");
    };
    prob("p_projective", p_projective);
    prob("p_elastic", p_elastic);
    prob("p_signflip", p_signflip);
    if (!(projective_max_shift >= 0.0 && projective_max_shift <= 0.5)) v.push_back("projective_max_shift must lie in [0, 0.5]");
    if (grid_spacing < 2) v.push_back("grid_spacing must be >= 2");
    if (!(elastic_max_disp >= 0.0)) v.push_back("elastic_max_disp must be >= 0");
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::ostringstream msg;
    msg << "invalid augment config:";
    for (const auto& s : v) msg << "\n  - " << s;
    throw ConfigError(msg.str());
  }
};

using Point2 = Eigen::Vector2d;
/// Corners in order top-left, top-right, bottom-right, bottom-left, in pixel-centre
/// coordinates (x to the right, y down).
using Corners = std::array<Point2, 4>;

inline Corners image_corners(Index w, Index h) {
  const double x1 = static_cast<double>(w - 1), y1 = static_cast<double>(h - 1);
  return {Point2(0, 0), Point2(x1, 0), Point2(x1, y1), Point2(0, y1)};
}

/// True when every edge of `moved` is between half and double the matching edge of `original`.
inline bool edge_ratios_ok(const Corners& original, const Corners& moved) {
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t j = (i + 1) % 4;
    const double before = (original[j] - original[i]).norm();
    const double after = (moved[j] - moved[i]).norm();
    if (!(after >= 0.5 * before && after <= 2.0 * before)) return false;
  }
  return true;
}

/// New positions for the four image corners. Only x or only y moves; every edge
/// stays within [0.5, 2] of its original length. After 100 rejected draws the
/// original corners are returned.
template <typename Urbg>
Corners sample_projective_corners(Index w, Index h, Urbg& rng, double max_shift = 0.25) {
  if (w < 4 || h < 4) throw ContractViolation("sample_projective_corners: image must be at least 4x4");
  const Corners src = image_corners(w, h);
  std::bernoulli_distribution pick_x(0.5);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int axis = pick_x(rng) ? 0 : 1;
    const double reach = max_shift * static_cast<double>((axis == 0 ? w : h) - 1);
    std::uniform_real_distribution<double> shift(-reach, reach);
    Corners c = src;
    for (auto& p : c) p[axis] += shift(rng);
    if (edge_ratios_ok(src, c)) return c;
  }
  return src;
}

/// Projective map normalized so the bottom-right entry is 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  explicit Homography(const Eigen::Matrix3d& m) : m_(m / m(2, 2)) {
    if (!(std::abs(m_.determinant()) > 1e-9)) throw DegenerateGeometryError("Homography: matrix is singular");
  }

  static Homography translation(double dx, double dy) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = dx;
    m(1, 2) = dy;
    return Homography(m);
  }

  const Eigen::Matrix3d& matrix() const { return m_; }
  Homography inverse() const { return Homography(m_.inverse()); }

  Point2 apply(const Point2& p) const {
    const Eigen::Vector3d q = m_ * Eigen::Vector3d(p.x(), p.y(), 1.0);
    return q.head<2>() / q.z();
  }

 private:
  Eigen::Matrix3d m_;
};

/// Solves the 8x8 direct linear system taking each src corner to its dst corner.
inline Homography homography_from_corners(const Corners& src, const Corners& dst) {
  Eigen::Matrix<double, 8, 8> a = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x(), y = src[i].y(), u = dst[i].x(), v = dst[i].y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -x * u, -y * u;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -x * v, -y * v;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) throw DegenerateGeometryError("homography_from_corners: corners are not in general position");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return Homography(m);
}

namespace detail {
/// Bilinear read of channel c at (x, y); coordinates are clamped so reads past
/// the border replicate the nearest edge pixel.
template <typename Scalar>
Scalar bilinear(const Tensor<Scalar>& img, double x, double y, Index c) {
  const Index H = img.dim(0), W = img.dim(1);
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  const Index x0 = static_cast<Index>(std::floor(x)), y0 = static_cast<Index>(std::floor(y));
  const Index x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = (1 - fx) * img(y0, x0, c) + fx * img(y0, x1, c);
  const double bottom = (1 - fx) * img(y1, x0, c) + fx * img(y1, x1, c);
  return static_cast<Scalar>((1 - fy) * top + fy * bottom);
}

inline void require_image(const std::string& op, const Shape& s) {
  require_rank(op, s, 3);
}
}  // namespace detail

/// Backward warp of an [H, W, C] image: output(p) = input(H^-1 p).
template <typename Scalar>
Tensor<Scalar> warp_projective(const Tensor<Scalar>& image, const Homography& hmat) {
  detail::require_image("warp_projective", image.shape());
  const Index H = image.dim(0), W = image.dim(1), C = image.dim(2);
  const Homography inv = hmat.inverse();
  Tensor<Scalar> out(image.shape());
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const Point2 s = inv.apply(Point2(static_cast<double>(x), static_cast<double>(y)));
      for (Index c = 0; c < C; ++c) out(y, x, c) = detail::bilinear(image, s.x(), s.y(), c);
    }
  return out;
}

/// Control points every `spacing` pixels, each displaced along one axis
/// (0 = x, 1 = y). The grid covers the image: the last row and column sit at or
/// past the far border.
struct DisplacementGrid {
  Index spacing = 16;
  int axis = 0;
  Eigen::MatrixXd displacement;  // [rows, cols] control points

  static DisplacementGrid zeros(Index h, Index w, Index spacing, int axis) {
    const auto points = [&](Index n) { return (n - 1 + spacing - 1) / spacing + 1; };
    return {spacing, axis, Eigen::MatrixXd::Zero(points(h), points(w))};
  }

  /// Displacement at pixel (x, y), bilinear between control points.
  double at(double x, double y) const {
    const double gx = x / static_cast<double>(spacing), gy = y / static_cast<double>(spacing);
    const Index cols = displacement.cols(), rows = displacement.rows();
    const Index x0 = std::min<Index>(static_cast<Index>(gx), cols - 1), y0 = std::min<Index>(static_cast<Index>(gy), rows - 1);
    const Index x1 = std::min(x0 + 1, cols - 1), y1 = std::min(y0 + 1, rows - 1);
    const double fx = gx - static_cast<double>(x0), fy = gy - static_cast<double>(y0);
    const double top = (1 - fx) * displacement(y0, x0) + fx * displacement(y0, x1);
    const double bottom = (1 - fx) * displacement(y1, x0) + fx * displacement(y1, x1);
    return (1 - fy) * top + fy * bottom;
  }

  /// Smallest width (axis 0) or height (axis 1) of any distorted grid cell.
  double min_cell_extent() const {
    double best = std::numeric_limits<double>::infinity();
    const double s = static_cast<double>(spacing);
    if (axis == 0) {
      for (Index r = 0; r < displacement.rows(); ++r)
        for (Index c = 0; c + 1 < displacement.cols(); ++c)
          best = std::min(best, s + displacement(r, c + 1) - displacement(r, c));
    } else {
      for (Index r = 0; r + 1 < displacement.rows(); ++r)
        for (Index c = 0; c < displacement.cols(); ++c)
          best = std::min(best, s + displacement(r + 1, c) - displacement(r, c));
    }
    return best;
  }
};

/// Uniform displacements in [-m, m], m = min(spacing - 1, max_disp), along one
/// randomly chosen axis. Each point is redrawn (up to 100 times) until the cell it
/// closes is at least one pixel wide; after that it copies its predecessor.
template <typename Urbg>
DisplacementGrid sample_displacement_grid(Index h, Index w, Index spacing, double max_disp, Urbg& rng) {
  if (spacing < 2) throw ContractViolation("sample_displacement_grid: grid spacing must be >= 2");
  std::bernoulli_distribution pick_x(0.5);
  DisplacementGrid g = DisplacementGrid::zeros(h, w, spacing, pick_x(rng) ? 0 : 1);
  const double m = std::min(static_cast<double>(spacing - 1), max_disp);
  std::uniform_real_distribution<double> u(-m, m);
  const double floor_gap = 1.0 - static_cast<double>(spacing);
  for (Index r = 0; r < g.displacement.rows(); ++r)
    for (Index c = 0; c < g.displacement.cols(); ++c) {
      const bool has_prev = g.axis == 0 ? c > 0 : r > 0;
      const double prev = !has_prev ? 0.0 : g.axis == 0 ? g.displacement(r, c - 1) : g.displacement(r - 1, c);
      double d = prev;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double draw = u(rng);
        if (!has_prev || draw - prev >= floor_gap) {
          d = draw;
          break;
        }
      }
      g.displacement(r, c) = d;
    }
  return g;
}

/// Backward warp: output(p) = input(p - D(p)) with D along the grid's axis.
template <typename Scalar>
Tensor<Scalar> warp_elastic(const Tensor<Scalar>& image, const DisplacementGrid& grid) {
  detail::require_image("warp_elastic", image.shape());
  const Index H = image.dim(0), W = image.dim(1), C = image.dim(2);
  Tensor<Scalar> out(image.shape());
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const double d = grid.at(static_cast<double>(x), static_cast<double>(y));
      double sx = static_cast<double>(x), sy = static_cast<double>(y);
      (grid.axis == 0 ? sx : sy) -= d;
      for (Index c = 0; c < C; ++c) out(y, x, c) = detail::bilinear(image, sx, sy, c);
    }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sign_flip(const Tensor<Scalar>& image) {
  return Tensor<Scalar>(image.shape(), -image.array());
}

/// One batch worth of random augmentation parameters.
struct AugmentDraw {
  std::optional<Homography> projective;
  std::optional<DisplacementGrid> elastic;
  bool flip = false;
};

template <typename Urbg>
AugmentDraw draw_augmentation(Index h, Index w, const AugmentConfig& config, Urbg& rng) {
  AugmentDraw d;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < config.p_projective && w >= 4 && h >= 4) {
    d.projective = homography_from_corners(image_corners(w, h), sample_projective_corners(w, h, rng, config.projective_max_shift));
  }
  if (coin(rng) < config.p_elastic) {
    d.elastic = sample_displacement_grid(h, w, config.grid_spacing, config.elastic_max_disp, rng);
  }
  d.flip = coin(rng) < config.p_signflip;
  return d;
}

/// Applies `draw` to one [H, W, C] image: projective, then elastic, then sign flip.
template <typename Scalar>
Tensor<Scalar> apply_augmentation(const Tensor<Scalar>& image, const AugmentDraw& draw) {
  Tensor<Scalar> out = image;
  if (draw.projective) out = warp_projective(out, *draw.projective);
  if (draw.elastic) out = warp_elastic(out, *draw.elastic);
  if (draw.flip) out = sign_flip(out);
  return out;
}

/// Draws once and applies the same parameters to every sample of an [N, H, W, C] batch.
template <typename Scalar, typename Urbg>
Tensor<Scalar> augment_batch(const Tensor<Scalar>& batch, const AugmentConfig& config, Urbg& rng,
                             AugmentDraw* drawn = nullptr) {
  config.validate();
  require_rank("augment_batch", batch.shape(), 4);
  const Index N = batch.dim(0), H = batch.dim(1), W = batch.dim(2), C = batch.dim(3);
  const AugmentDraw draw = draw_augmentation(H, W, config, rng);
  if (drawn) *drawn = draw;
  Tensor<Scalar> out(batch.shape());
  const Index per = H * W * C;
  for (Index n = 0; n < N; ++n) {
    Tensor<Scalar> sample(Shape{H, W, C}, batch.array().segment(n * per, per));
    out.array().segment(n * per, per) = apply_augmentation(sample, draw).array();
  }
  return out;
}

/// Generator for batch `index` of a run seeded with `seed`.
inline std::mt19937_64 batch_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace gfcn
