//
// Copyright 2026 The blindadv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Remapping functions: they turn a raw generator output into a perturbation
// that is legal on the wire, and define the gradients routed back through
// them.
//
//  * Timing: the raw delay vector is shifted so its mean lies in [-mu, mu]
//    and scaled so its (population) std is at most sigma. Differentiable;
//    remap_timing_backward() is its exact vector-Jacobian product.
//  * Size: greedy byte allocation in descending order of the raw scores,
//    quantized to cell multiples and capped per packet and per flow. Not
//    differentiable; size_gradient() is the straight-through batch sum.
//  * Insertion: inject packets at the positions of the largest |scores|,
//    shifting later packets right and truncating back to the input length.
//    Position and value gradients are straight-through index copies.

#ifndef BLINDADV_REMAPPING_HPP_
#define BLINDADV_REMAPPING_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "blindadv/common.hpp"

namespace blindadv {

struct TimingBudget {
  double mu = 0.0;     // max |mean| of added delay, seconds
  double sigma = 0.0;  // max std of added delay, seconds

  void validate() const {
    if (!(mu >= 0.0)) throw ValidationError("timing budget: mu must be >= 0");
    if (!(sigma > 0.0)) throw ValidationError("timing budget: sigma must be > 0");
  }
};

struct SizeBudget {
  double total = 0.0;       // N: bytes added per flow
  double per_packet = 1.0;  // n: bytes added per packet
  double cell = 1.0;        // s: size quantum

  void validate() const {
    if (!(total >= 0.0)) throw ValidationError("size budget: N must be >= 0");
    if (!(per_packet >= 1.0)) throw ValidationError("size budget: n must be >= 1");
    if (!(cell >= 1.0)) throw ValidationError("size budget: s must be >= 1");
    if (per_packet < cell) throw ValidationError("size budget: n must be >= s");
  }
};

struct InsertionPlan {
  Vector position_scores;
  // One per injected value channel; each has the length of position_scores.
  std::vector<Vector> value_vectors;
  std::size_t count = 0;  // number of packets to inject

  Index length() const { return position_scores.size(); }
};

// Floor on std(g) in the timing remap, avoids 0/0 for constant g.
inline constexpr double kStdFloor = 1e-8;

namespace detail {

template <typename Derived>
double population_std(const Eigen::MatrixBase<Derived>& v, double mean) {
  if (v.size() == 0) return 0.0;
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size()));
}

}  // namespace detail

// g~ = (g - max(mean-mu, 0) - min(mean+mu, 0)) / std(g) * min(std(g), sigma)
template <typename Derived>
Vector timing_shift(const Eigen::MatrixBase<Derived>& g, const TimingBudget& b) {
  const double mean = g.mean();
  const double sd = std::max(detail::population_std(g, mean), kStdFloor);
  const double shift = std::max(mean - b.mu, 0.0) + std::min(mean + b.mu, 0.0);
  const double scale = std::min(sd, b.sigma) / sd;
  return ((g.array() - shift) * scale).matrix();
}

// Exact vector-Jacobian product of timing_shift: maps d(loss)/d(g~) to
// d(loss)/d(g).
template <typename DerivedG, typename DerivedD>
Vector remap_timing_backward(const Eigen::MatrixBase<DerivedG>& g,
                             const Eigen::MatrixBase<DerivedD>& dshifted,
                             const TimingBudget& b) {
  const auto n = static_cast<double>(g.size());
  const double mean = g.mean();
  const double raw_sd = detail::population_std(g, mean);
  const bool floored = raw_sd < kStdFloor;
  const double sd = floored ? kStdFloor : raw_sd;
  const double shift = std::max(mean - b.mu, 0.0) + std::min(mean + b.mu, 0.0);
  const double dshift_dmean = (mean > b.mu || mean < -b.mu) ? 1.0 : 0.0;
  const bool scaled = sd > b.sigma;
  const double scale = scaled ? b.sigma / sd : 1.0;

  Vector out = scale * (dshifted.derived().array() - dshift_dmean * dshifted.mean()).matrix();
  if (scaled && !floored) {
    // d(scale)/d(sd) = -sigma / sd^2 ; d(sd)/d(g_j) = (g_j - mean) / (n sd)
    const double dot = ((g.array() - shift) * dshifted.derived().array()).sum();
    out += (dot * (-b.sigma / (sd * sd)) / (n * sd)) * (g.array() - mean).matrix();
  }
  return out;
}

// Perturbed IPDs: x + timing_shift(g), clamped at zero from below.
template <typename DerivedX, typename DerivedG>
Vector remap_timing(const Eigen::MatrixBase<DerivedX>& x,
                    const Eigen::MatrixBase<DerivedG>& g, const TimingBudget& b) {
  if (x.size() != g.size()) throw ShapeError("remap_timing: length mismatch");
  return (x + timing_shift(g, b)).cwiseMax(0.0);
}

// Per-packet byte additions chosen by the size remap; independent of x.
template <typename Derived>
Vector size_additions(const Eigen::MatrixBase<Derived>& a, const SizeBudget& b) {
  const Index n = a.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index i, Index j) { return a(i) > a(j); });
  Vector added = Vector::Zero(n);
  double remaining = b.total;
  for (Index i : order) {
    if (remaining <= 0.0) break;
    const double capped = std::min({static_cast<double>(a(i)), b.per_packet, remaining});
    const double delta = b.cell * std::floor(capped / b.cell);
    if (delta <= 0.0) continue;
    added(i) = delta;
    remaining -= delta;
  }
  return added;
}

template <typename DerivedX, typename DerivedA>
Vector remap_size(const Eigen::MatrixBase<DerivedX>& x,
                  const Eigen::MatrixBase<DerivedA>& a, const SizeBudget& b) {
  if (x.size() != a.size()) throw ShapeError("remap_size: length mismatch");
  if (!a.allFinite()) throw ValidationError("remap_size: non-finite perturbation");
  return x + size_additions(a, b);
}

// Straight-through gradient for the size remap: sum over the batch of the
// loss gradients w.r.t. the remapped sizes.
inline Vector size_gradient(const std::vector<Vector>& batch_grads) {
  if (batch_grads.empty()) throw ValidationError("size_gradient: empty batch");
  Vector sum = Vector::Zero(batch_grads.front().size());
  for (const Vector& g : batch_grads) {
    if (g.size() != sum.size()) throw ShapeError("size_gradient: shape mismatch");
    sum += g;
  }
  return sum;
}

// Indices of the `count` largest |position_scores|, ascending. Ties favour
// the lower index.
inline std::vector<Index> selected_positions(const InsertionPlan& plan) {
  const Index n = plan.length();
  if (plan.count > static_cast<std::size_t>(n)) {
    throw ValidationError("insertion count exceeds the vector length");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const auto k = static_cast<std::ptrdiff_t>(plan.count);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index i, Index j) {
    const double ai = std::abs(plan.position_scores(i));
    const double aj = std::abs(plan.position_scores(j));
    return ai > aj || (ai == aj && i < j);
  });
  order.resize(plan.count);
  std::sort(order.begin(), order.end());
  return order;
}

// Which rows of a (channels x length) feature matrix an insertion touches.
struct InsertionLayout {
  // Receives sign(score): +1 if score > 0, otherwise -1.
  std::optional<Index> direction_row;
  // value_rows[k] receives plan.value_vectors[k] at the inserted positions.
  std::vector<Index> value_rows;
  // Rows shifted with the packet sequence that receive 0 at inserted slots.
  std::vector<Index> filler_rows;
};

// For every output column: the original column it came from, or -1 for an
// injected packet.
struct InsertionMap {
  std::vector<Index> positions;  // selected positions, ascending
  std::vector<Index> source;     // size = length
};

inline InsertionMap insertion_map(const InsertionPlan& plan) {
  InsertionMap map;
  map.positions = selected_positions(plan);
  const Index n = plan.length();
  map.source.reserve(static_cast<std::size_t>(n));
  std::size_t next = 0;
  for (Index k = 0; k < n && static_cast<Index>(map.source.size()) < n; ++k) {
    if (next < map.positions.size() && map.positions[next] == k) {
      map.source.push_back(-1);
      ++next;
      if (static_cast<Index>(map.source.size()) == n) break;
    }
    map.source.push_back(k);
  }
  return map;
}

// Output column that a packet inserted at original position i occupies:
// i plus the number of selected positions below i, or -1 once truncated.
inline std::vector<Index> insertion_slots(const InsertionMap& map) {
  const auto n = static_cast<Index>(map.source.size());
  std::vector<Index> slots(static_cast<std::size_t>(n), -1);
  std::size_t below = 0;
  for (Index i = 0; i < n; ++i) {
    while (below < map.positions.size() && map.positions[below] < i) ++below;
    const Index slot = i + static_cast<Index>(below);
    if (slot < n) slots[static_cast<std::size_t>(i)] = slot;
  }
  return slots;
}

// Re-indexes a gradient w.r.t. the remapped rows into original coordinates,
// so entry i is the gradient at the slot an insertion at i fills.
inline Matrix to_original_coordinates(const Matrix& grad_out, const InsertionMap& map) {
  if (grad_out.cols() != static_cast<Index>(map.source.size())) {
    throw ShapeError("to_original_coordinates: length mismatch");
  }
  const std::vector<Index> slots = insertion_slots(map);
  Matrix out = Matrix::Zero(grad_out.rows(), grad_out.cols());
  for (Index i = 0; i < grad_out.cols(); ++i) {
    const Index s = slots[static_cast<std::size_t>(i)];
    if (s >= 0) out.col(i) = grad_out.col(s);
  }
  return out;
}

inline Matrix insert_packets(const Matrix& x, const InsertionPlan& plan,
                             const InsertionLayout& layout, const InsertionMap& map) {
  if (x.cols() != plan.length()) throw ShapeError("insert_packets: length mismatch");
  if (plan.value_vectors.size() < layout.value_rows.size()) {
    throw ValidationError("insert_packets: missing value vector for a channel");
  }
  for (const Vector& v : plan.value_vectors) {
    if (v.size() != plan.length()) throw ShapeError("insert_packets: value vector length");
  }
  Matrix out = x;
  std::vector<Index> rows;
  if (layout.direction_row) rows.push_back(*layout.direction_row);
  rows.insert(rows.end(), layout.value_rows.begin(), layout.value_rows.end());
  rows.insert(rows.end(), layout.filler_rows.begin(), layout.filler_rows.end());

  std::size_t inserted = 0;
  for (Index j = 0; j < static_cast<Index>(map.source.size()); ++j) {
    const Index src = map.source[static_cast<std::size_t>(j)];
    if (src >= 0) {
      for (Index r : rows) out(r, j) = x(r, src);
      continue;
    }
    const Index pos = map.positions[inserted++];
    if (layout.direction_row) {
      out(*layout.direction_row, j) = plan.position_scores(pos) > 0 ? 1.0 : -1.0;
    }
    for (std::size_t k = 0; k < layout.value_rows.size(); ++k) {
      out(layout.value_rows[k], j) = plan.value_vectors[k](pos);
    }
    for (Index r : layout.filler_rows) out(r, j) = 0.0;
  }
  return out;
}

inline Matrix insert_packets(const Matrix& x, const InsertionPlan& plan,
                             const InsertionLayout& layout) {
  return insert_packets(x, plan, layout, insertion_map(plan));
}

// Single direction vector.
inline Vector insert_packets(const Vector& directions, const InsertionPlan& plan) {
  InsertionLayout layout;
  layout.direction_row = 0;
  Matrix x = directions.transpose();
  return insert_packets(x, plan, layout).row(0).transpose();
}

// Straight-through gradient for the position scores. Each entry of
// `batch_grads` is one input's loss gradient w.r.t. the remapped rows touched
// by the insertion (one row per injected feature channel). The batch is
// summed and the channels averaged.
inline Vector insertion_position_gradient(const std::vector<Matrix>& batch_grads) {
  if (batch_grads.empty()) throw ValidationError("insertion_position_gradient: empty batch");
  const Index rows = batch_grads.front().rows();
  const Index cols = batch_grads.front().cols();
  if (rows == 0) throw ShapeError("insertion_position_gradient: no channels");
  Vector sum = Vector::Zero(cols);
  for (const Matrix& g : batch_grads) {
    if (g.rows() != rows || g.cols() != cols) {
      throw ShapeError("insertion_position_gradient: shape mismatch");
    }
    sum += g.colwise().sum().transpose();
  }
  return sum / static_cast<double>(rows);
}

// Value-vector gradient: grad_out copied at the selected positions, zero
// elsewhere.
inline Vector insertion_value_gradient(const InsertionPlan& plan, const Vector& grad_out) {
  if (grad_out.size() != plan.length()) throw ShapeError("insertion_value_gradient: shape");
  Vector grad = Vector::Zero(grad_out.size());
  for (Index i : selected_positions(plan)) grad(i) = grad_out(i);
  return grad;
}

}  // namespace blindadv

#endif  // BLINDADV_REMAPPING_HPP_
