/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ddda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Ordered list of grid indices (a subdomain, an interface, an observation layout).
using IndexList = std::vector<Index>;

// -----------------------------------------------------------------------------
// Norms. Every error, Lipschitz and condition-number quantity in this library
// is measured in the max norm.
// -----------------------------------------------------------------------------

inline double normInf(const Vector & x) {
  return x.size() == 0 ? 0.0 : x.lpNorm<Eigen::Infinity>();
}

/// Induced infinity norm (maximum absolute row sum).
inline double normInf(const Matrix & a) {
  if (a.size() == 0) return 0.0;
  return a.cwiseAbs().rowwise().sum().maxCoeff();
}

inline double relativeErrorInf(const Vector & x, const Vector & ref) {
  const double scale = normInf(ref);
  const double diff = normInf(Vector(x - ref));
  return scale > 0.0 ? diff / scale : diff;
}

inline bool allFinite(const Vector & x) { return x.allFinite(); }

// -----------------------------------------------------------------------------
// Selection (restriction) operators realized as index maps.
// -----------------------------------------------------------------------------

/// x restricted to `idx`, i.e. R x for the selection matrix R with rows e_idx[r].
inline Vector gather(const Vector & x, std::span<const Index> idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out(static_cast<Index>(r)) = x(idx[r]);
  return out;
}

/// Dense materialization of the selection matrix with rows e_idx[r].
inline Matrix selectionMatrix(std::span<const Index> idx, Index ncols) {
  Matrix s = Matrix::Zero(static_cast<Index>(idx.size()), ncols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= ncols) throw std::out_of_range("selection index out of range");
    s(static_cast<Index>(r), idx[r]) = 1.0;
  }
  return s;
}

inline Matrix gatherRows(const Matrix & a, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = a.row(rows[r]);
  return out;
}

inline Matrix gatherCols(const Matrix & a, std::span<const Index> cols) {
  Matrix out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Index>(c)) = a.col(cols[c]);
  return out;
}

// -----------------------------------------------------------------------------
// Deterministic parallel map.
//
// Task t writes only to its own output slot, so results do not depend on the
// worker count or on scheduling. Exceptions are rethrown on the caller's thread
// (the one from the lowest task index wins).
// -----------------------------------------------------------------------------

inline void parallelFor(std::size_t count, std::size_t workers,
                        const std::function<void(std::size_t)> & task) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t t = 0; t < count; ++t) task(t);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        // static round-robin assignment
        for (std::size_t t = w; t < count; t += workers) {
          try {
            task(t);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto & e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace ddda
