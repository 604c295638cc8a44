#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Closed coordinate interval (lo, hi) with lo < hi.
struct Interval {
  double lo{0.0};
  double hi{0.0};

  double length() const { return hi - lo; }
  double center() const { return 0.5 * (lo + hi); }
  bool degenerate() const { return !(lo < hi); }
};

/// Axis-aligned box, one interval per dimension.
class Box {
 public:
  Box() = default;
  explicit Box(std::vector<Interval> intervals) : intervals_(std::move(intervals)) {
    for (const auto& iv : intervals_) {
      if (iv.degenerate()) throw std::invalid_argument("Box: degenerate interval");
    }
  }

  int dim() const { return static_cast<int>(intervals_.size()); }
  const Interval& operator[](int i) const { return intervals_[static_cast<std::size_t>(i)]; }

  bool contains(const Vector& p) const {
    if (p.size() != dim()) return false;
    for (int i = 0; i < dim(); ++i) {
      if (p[i] < intervals_[i].lo || p[i] > intervals_[i].hi) return false;
    }
    return true;
  }

  /// Open delta-interior: points whose distance to the boundary exceeds margin.
  bool contains_interior(const Vector& p, double margin) const {
    if (p.size() != dim()) return false;
    for (int i = 0; i < dim(); ++i) {
      if (!(p[i] - intervals_[i].lo > margin) || !(intervals_[i].hi - p[i] > margin)) return false;
    }
    return true;
  }

  Box shrunk(double margin) const {
    std::vector<Interval> out;
    out.reserve(intervals_.size());
    for (const auto& iv : intervals_) {
      Interval s{iv.lo + margin, iv.hi - margin};
      if (s.degenerate()) throw std::invalid_argument("Box::shrunk: margin larger than half-width");
      out.push_back(s);
    }
    return Box(out);
  }

  /// Distance from a point inside the box to the box boundary (0 if outside).
  double boundary_distance(const Vector& p) const {
    double dist = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dim(); ++i) {
      dist = std::min(dist, std::min(p[i] - intervals_[i].lo, intervals_[i].hi - p[i]));
    }
    return std::max(dist, 0.0);
  }

  /// Smallest gap between an inner box and this box, over all faces.
  double gap_to(const Box& inner) const {
    if (inner.dim() != dim()) throw std::invalid_argument("Box::gap_to: dimension mismatch");
    double gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dim(); ++i) {
      gap = std::min(gap, inner[i].lo - intervals_[i].lo);
      gap = std::min(gap, intervals_[i].hi - inner[i].hi);
    }
    return gap;
  }

  bool encloses(const Box& inner) const { return gap_to(inner) > 0.0; }

  /// Format "a1,b1;a2,b2;...".
  std::string to_string() const;
  static Box parse(const std::string& text);

 private:
  std::vector<Interval> intervals_;
};

inline std::string format_double(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return std::string(buf);
}

inline std::string Box::to_string() const {
  std::string out;
  for (int i = 0; i < dim(); ++i) {
    if (i) out += ';';
    out += format_double(intervals_[static_cast<std::size_t>(i)].lo, "%.17g");
    out += ',';
    out += format_double(intervals_[static_cast<std::size_t>(i)].hi, "%.17g");
  }
  return out;
}

inline Box Box::parse(const std::string& text) {
  std::vector<Interval> ivs;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(';', pos);
    if (end == std::string::npos) end = text.size();
    const std::string part = text.substr(pos, end - pos);
    const std::size_t comma = part.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("Box::parse: expected 'lo,hi' in '" + part + "'");
    Interval iv{std::stod(part.substr(0, comma)), std::stod(part.substr(comma + 1))};
    ivs.push_back(iv);
    pos = end + 1;
  }
  if (ivs.empty()) throw std::invalid_argument("Box::parse: empty box spec");
  return Box(ivs);
}

/// Cell-centered uniform grid: npts[i] points per axis, strictly inside the box.
inline std::vector<Vector> cell_centered_grid(const Box& box, const std::vector<int>& npts) {
  if (static_cast<int>(npts.size()) != box.dim()) {
    throw std::invalid_argument("cell_centered_grid: npts size mismatch");
  }
  for (int n : npts) {
    if (n < 1) throw std::invalid_argument("cell_centered_grid: need at least one point per axis");
  }
  std::vector<Vector> pts;
  std::vector<int> idx(npts.size(), 0);
  const int d = box.dim();
  while (true) {
    Vector p(d);
    for (int i = 0; i < d; ++i) {
      const double h = box[i].length() / npts[static_cast<std::size_t>(i)];
      p[i] = box[i].lo + (idx[static_cast<std::size_t>(i)] + 0.5) * h;
    }
    pts.push_back(std::move(p));
    int k = d - 1;
    while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == npts[static_cast<std::size_t>(k)]) {
      idx[static_cast<std::size_t>(k)] = 0;
      --k;
    }
    if (k < 0) break;
  }
  return pts;
}

/// Inclusive linspace grid over the box (used for sup-norm sampling).
inline std::vector<Vector> sample_grid(const Box& box, int pts_per_axis) {
  if (pts_per_axis < 2) throw std::invalid_argument("sample_grid: need >= 2 points per axis");
  std::vector<int> npts(static_cast<std::size_t>(box.dim()), pts_per_axis);
  std::vector<Vector> out;
  std::vector<int> idx(npts.size(), 0);
  const int d = box.dim();
  while (true) {
    Vector p(d);
    for (int i = 0; i < d; ++i) {
      p[i] = box[i].lo + box[i].length() * idx[static_cast<std::size_t>(i)] / (pts_per_axis - 1);
    }
    out.push_back(std::move(p));
    int k = d - 1;
    while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == pts_per_axis) {
      idx[static_cast<std::size_t>(k)] = 0;
      --k;
    }
    if (k < 0) break;
  }
  return out;
}

inline double spectral_norm(const Matrix& m) {
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  return m.jacobiSvd().singularValues()(0);
}

}  // namespace ofl
