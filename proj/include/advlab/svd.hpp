#pragma once

// Thin SVD by one-sided (Hestenes) Jacobi rotations and rank-k truncation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "advlab/errors.hpp"
#include "advlab/matrix.hpp"
#include "advlab/tolerances.hpp"

namespace advlab {

// A = U diag(s) V^T with U (m x r), V (n x r), r = min(m, n), s descending.
struct SvdResult {
  Matrix u;
  Vec s;
  Matrix v;
  std::size_t rank = 0;  // count of singular values above 1e-10 * s[0]
};

namespace detail {

// Requires a.rows >= a.cols.
inline SvdResult jacobi_svd_tall(const Matrix& a) {
  const std::size_t m = a.rows, n = a.cols;
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  // Columns whose energy is below rounding level of ||A||_F carry no signal and
  // can never be made orthogonal to the rest; they are left alone.
  const double fro = frobenius_norm(a);
  const double negligible = std::pow(std::numeric_limits<double>::epsilon() * fro, 2);
  bool converged = n < 2;
  for (int sweep = 0; sweep < Tolerances::jacobi_max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += w(i, p) * w(i, p);
          beta += w(i, q) * w(i, q);
          gamma += w(i, p) * w(i, q);
        }
        if (gamma == 0.0 || alpha <= negligible || beta <= negligible) continue;
        if (std::abs(gamma) <= Tolerances::jacobi_threshold * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw NumericError("Jacobi SVD did not converge within " + std::to_string(Tolerances::jacobi_max_sweeps) +
                       " sweeps");
  }

  Vec sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm_l2(w.column(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult r;
  r.u = Matrix(m, n);
  r.v = Matrix(n, n);
  r.s.resize(n);
  const double top = n > 0 ? sigma[order[0]] : 0.0;
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    r.s[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) r.v(i, k) = v(i, j);
    if (sigma[j] > 0.0 && sigma[j] > 1e-300) {
      for (std::size_t i = 0; i < m; ++i) r.u(i, k) = w(i, j) / sigma[j];
      filled[k] = true;
    }
    if (sigma[j] > 1e-10 * top) ++r.rank;
  }
  // Complete U for zero singular values with Gram-Schmidt over the unit basis.
  std::size_t basis = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    while (basis < m) {
      Vec cand(m, 0.0);
      cand[basis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          if (!filled[c]) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += r.u(i, c) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * r.u(i, c);
        }
      }
      const double nn = norm_l2(cand);
      if (nn > 0.5) {
        for (std::size_t i = 0; i < m; ++i) r.u(i, k) = cand[i] / nn;
        filled[k] = true;
        break;
      }
    }
  }
  return r;
}

}  // namespace detail

inline SvdResult svd_decompose(const Matrix& a) {
  if (!a.all_finite()) throw ParameterError("svd_decompose: matrix has non-finite entries");
  if (a.rows >= a.cols) return detail::jacobi_svd_tall(a);
  SvdResult t = detail::jacobi_svd_tall(transpose(a));
  std::swap(t.u, t.v);
  return t;
}

// U diag(s) V^T restricted to the leading k triplets.
inline Matrix svd_reconstruct(const SvdResult& svd, std::size_t k) {
  k = std::min(k, svd.s.size());
  Matrix out(svd.u.rows, svd.v.rows);
  for (std::size_t c = 0; c < k; ++c) {
    const double sc = svd.s[c];
    for (std::size_t i = 0; i < out.rows; ++i) {
      const double ui = sc * svd.u(i, c);
      if (ui == 0.0) continue;
      for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += ui * svd.v(j, c);
    }
  }
  return out;
}

struct RankKApproximation {
  Matrix approx;        // pre-clamp
  double error = 0.0;   // ||A - approx||_F
  double tail = 0.0;    // sqrt(sum_{i > k} s_i^2)
};

inline RankKApproximation rank_k_approx(const Matrix& a, std::size_t k) {
  const std::size_t r = std::min(a.rows, a.cols);
  if (k < 1 || k > r) {
    throw ParameterError("rank k = " + std::to_string(k) + " outside [1, " + std::to_string(r) + "]");
  }
  const SvdResult svd = svd_decompose(a);
  RankKApproximation out;
  out.approx = svd_reconstruct(svd, k);
  out.error = frobenius_norm(subtract(a, out.approx));
  double tail2 = 0.0;
  for (std::size_t i = k; i < svd.s.size(); ++i) tail2 += svd.s[i] * svd.s[i];
  out.tail = std::sqrt(tail2);
  return out;
}

// Rank-k SVD truncation of an image, clamped to [0,1]. Throws NumericError if
// the pre-clamp residual disagrees with the discarded singular values.
inline Matrix svd_denoise(const Matrix& image, std::size_t k) {
  const RankKApproximation r = rank_k_approx(image, k);
  const double scale = std::max(1.0, frobenius_norm(image));
  if (std::abs(r.error - r.tail) > Tolerances::svd_residual * scale) {
    throw NumericError("rank-k residual " + std::to_string(r.error) + " does not match tail energy " +
                       std::to_string(r.tail));
  }
  Matrix out = r.approx;
  for (double& v : out.data) v = clamp01(v);
  return out;
}

}  // namespace advlab
