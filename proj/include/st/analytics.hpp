#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "st/error.hpp"
#include "st/tensor.hpp"

namespace st {

// Mean of sin^2(pi v) over every component; 0 iff all components are in
// {-1, 0, 1}.
inline double sparsity_se(std::span<const float> values) {
  if (values.empty()) throw DataError("sparsity score of an empty collection");
  double acc = 0.0;
  for (float v : values) {
    const double s = std::sin(std::numbers::pi * static_cast<double>(v));
    acc += s * s;
  }
  return acc / static_cast<double>(values.size());
}

inline double sparsity_se(const std::vector<std::vector<float>>& reps) {
  std::vector<float> flat;
  for (const auto& r : reps) flat.insert(flat.end(), r.begin(), r.end());
  return sparsity_se(flat);
}

struct SparsityReport {
  static constexpr std::size_t kBins = 64;

  double se_score = 0.0;
  double hi_threshold = 0.6;
  double lo_threshold = 0.05;
  double frac_above = 0.0;  // percent with |v| > hi
  double frac_below = 0.0;  // percent with |v| < lo
  double signed_frac_above = 0.0;  // percent with v > hi
  double signed_frac_below = 0.0;  // percent with v < lo
  std::array<std::size_t, kBins> histogram{};  // over [-1, 1]
  std::size_t count = 0;
};

inline SparsityReport value_distribution(std::span<const float> values, double hi = 0.6,
                                         double lo = 0.05) {
  if (values.empty()) throw DataError("value distribution of an empty collection");
  SparsityReport r;
  r.hi_threshold = hi;
  r.lo_threshold = lo;
  r.count = values.size();
  r.se_score = sparsity_se(values);
  std::size_t above = 0, below = 0, s_above = 0, s_below = 0;
  for (float f : values) {
    const double v = f;
    const double a = std::abs(v);
    above += a > hi;
    below += a < lo;
    s_above += v > hi;
    s_below += v < lo;
    const double pos = (std::clamp(v, -1.0, 1.0) + 1.0) / 2.0 * SparsityReport::kBins;
    const auto bin = std::min<std::size_t>(static_cast<std::size_t>(pos), SparsityReport::kBins - 1);
    ++r.histogram[bin];
  }
  const double n = static_cast<double>(values.size());
  r.frac_above = 100.0 * above / n;
  r.frac_below = 100.0 * below / n;
  r.signed_frac_above = 100.0 * s_above / n;
  r.signed_frac_below = 100.0 * s_below / n;
  return r;
}

struct CamReport {
  double cam_score = 0.0;
  std::vector<double> per_sentence;
  std::size_t skipped_pairs = 0;
  std::vector<std::string> warnings;
};

// Per sentence (J x h prefix states): (1/J) sum_j |X_j - X'_j|^2 /
// (0.5 |X_j|^2 + 0.5 |X'_j|^2); the score is the mean over sentences.
inline CamReport cam(std::span<const Tensor<double>> originals,
                     std::span<const Tensor<double>> reconstructions) {
  if (originals.size() != reconstructions.size())
    throw DataError("cam: " + std::to_string(originals.size()) + " originals vs " +
                    std::to_string(reconstructions.size()) + " reconstructions");
  if (originals.empty()) throw DataError("cam of an empty collection");
  CamReport rep;
  for (std::size_t s = 0; s < originals.size(); ++s) {
    const auto& x = originals[s];
    const auto& xr = reconstructions[s];
    if (x.shape() != xr.shape())
      throw DataError("cam: sentence " + std::to_string(s) + " has shapes " +
                      shape_str(x.shape()) + " vs " + shape_str(xr.shape()));
    const std::size_t j_count = x.rows(), h = x.cols();
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t j = 0; j < j_count; ++j) {
      double diff = 0.0, nx = 0.0, nr = 0.0;
      for (std::size_t k = 0; k < h; ++k) {
        const double a = x.at(j, k), b = xr.at(j, k);
        diff += (a - b) * (a - b);
        nx += a * a;
        nr += b * b;
      }
      const double denom = 0.5 * nx + 0.5 * nr;
      if (denom == 0.0) {
        ++rep.skipped_pairs;
        rep.warnings.push_back("sentence " + std::to_string(s) + " prefix " + std::to_string(j) +
                               ": both vectors are zero, skipped");
        continue;
      }
      acc += diff / denom;
      ++used;
    }
    if (used) rep.per_sentence.push_back(acc / static_cast<double>(used));
  }
  if (rep.per_sentence.empty()) throw DataError("cam: every prefix pair was degenerate");
  rep.cam_score = std::accumulate(rep.per_sentence.begin(), rep.per_sentence.end(), 0.0) /
                  static_cast<double>(rep.per_sentence.size());
  return rep;
}

struct ClassAverage {
  Tensor<double> means;             // classes x M, columns already permuted
  std::vector<std::size_t> order;   // order[k] = original base index of column k
  std::vector<std::string> warnings;
};

// Class-mean representations with the bases sorted ascending by the mean of
// `sort_by_class`. Empty classes become all-NaN rows.
inline ClassAverage class_average_export(const Tensor<float>& reps, const std::vector<int>& labels,
                                         std::size_t num_classes, std::size_t sort_by_class) {
  if (reps.rank() != 2 || reps.rows() != labels.size())
    throw DimensionError("class_average_export needs one label per row");
  if (sort_by_class >= num_classes) throw ConfigError("sort class outside label range");
  const std::size_t m = reps.cols();
  std::vector<double> sums(num_classes * m, 0.0);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw DataError("label " + std::to_string(labels[i]) + " outside " +
                      std::to_string(num_classes) + " classes");
    ++counts[labels[i]];
    for (std::size_t k = 0; k < m; ++k) sums[labels[i] * m + k] += reps.at(i, k);
  }
  ClassAverage out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      out.warnings.push_back("class " + std::to_string(c) + " has no samples");
      for (std::size_t k = 0; k < m; ++k) sums[c * m + k] = std::numeric_limits<double>::quiet_NaN();
    } else {
      for (std::size_t k = 0; k < m; ++k) sums[c * m + k] /= static_cast<double>(counts[c]);
    }
  }
  out.order.resize(m);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  const double* key = sums.data() + sort_by_class * m;
  std::stable_sort(out.order.begin(), out.order.end(),
                   [key](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  std::vector<double> permuted(num_classes * m);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t k = 0; k < m; ++k) permuted[c * m + k] = sums[c * m + out.order[k]];
  out.means = Tensor<double>(Shape{num_classes, m}, std::move(permuted));
  return out;
}

// One row per base: base_index,original_index,class_0..class_{N-1}.
inline void write_class_average_csv(std::ostream& os, const ClassAverage& avg) {
  const std::size_t n = avg.means.rows(), m = avg.means.cols();
  os << "base_index,original_index";
  for (std::size_t c = 0; c < n; ++c) os << ",class_" << c;
  os << '\n' << std::setprecision(6);
  for (std::size_t k = 0; k < m; ++k) {
    os << k << ',' << avg.order[k];
    for (std::size_t c = 0; c < n; ++c) os << ',' << avg.means.at(c, k);
    os << '\n';
  }
}

inline void write_histogram_csv(std::ostream& os, const SparsityReport& r) {
  os << "bin,lower,upper,count\n" << std::setprecision(6);
  const double w = 2.0 / SparsityReport::kBins;
  for (std::size_t b = 0; b < SparsityReport::kBins; ++b)
    os << b << ',' << -1.0 + w * b << ',' << -1.0 + w * (b + 1) << ',' << r.histogram[b] << '\n';
}

}  // namespace st
