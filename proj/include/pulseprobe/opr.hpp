#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pulseprobe/error.hpp"
#include "pulseprobe/wavefield.hpp"

namespace pulseprobe {

/// N per-frame probes as the columns of a (ny*nx) x N matrix.
struct ProbeStack {
  Eigen::MatrixXcd P;
  std::size_t ny = 0;
  std::size_t nx = 0;
  double pitch = 0.0;
  double wavelength = 0.0;

  std::size_t count() const { return static_cast<std::size_t>(P.cols()); }
  WaveField probe(std::size_t j) const {
    WaveField f = make_field(ny, nx, pitch, wavelength);
    for (std::size_t p = 0; p < f.values.size(); ++p) f.values[p] = P(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j));
    return f;
  }
};

/// k orthogonal components M = U Sigma, truncated right-singular vectors Vhat (N x k)
/// and singular values. Probe j is sum_i M_i conj(Vhat(j, i)).
struct EigenBasis {
  Eigen::MatrixXcd M;
  Eigen::MatrixXcd Vhat;
  Eigen::VectorXd sigma;
  std::size_t ny = 0;
  std::size_t nx = 0;
  double pitch = 0.0;
  double wavelength = 0.0;

  std::size_t rank() const { return static_cast<std::size_t>(M.cols()); }
  std::size_t count() const { return static_cast<std::size_t>(Vhat.rows()); }

  WaveField component(std::size_t i) const {
    WaveField f = make_field(ny, nx, pitch, wavelength);
    for (std::size_t p = 0; p < f.values.size(); ++p) f.values[p] = M(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i));
    return f;
  }

  WaveField probe(std::size_t j) const {
    WaveField f = make_field(ny, nx, pitch, wavelength);
    const Eigen::VectorXcd c = Vhat.row(static_cast<Eigen::Index>(j)).adjoint();
    Eigen::Map<Eigen::VectorXcd> out(f.values.data(), static_cast<Eigen::Index>(f.values.size()));
    out = M * c;
    return f;
  }
};

inline ProbeStack make_stack(const std::vector<WaveField>& probes) {
  if (probes.empty()) throw Error(ErrorKind::Input, "probe stack needs at least one probe");
  ProbeStack s;
  s.ny = probes[0].ny();
  s.nx = probes[0].nx();
  s.pitch = probes[0].pitch;
  s.wavelength = probes[0].wavelength;
  s.P.resize(static_cast<Eigen::Index>(s.ny * s.nx), static_cast<Eigen::Index>(probes.size()));
  for (std::size_t j = 0; j < probes.size(); ++j) {
    if (probes[j].ny() != s.ny || probes[j].nx() != s.nx) throw Error(ErrorKind::Shape, "probe shapes differ");
    for (std::size_t p = 0; p < s.ny * s.nx; ++p)
      s.P(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) = probes[j].values[p];
  }
  return s;
}

namespace detail {

/// Rotates each column so that its largest-modulus entry (first on ties) is real-positive.
inline void fix_column_phases(Eigen::MatrixXcd& V) {
  for (Eigen::Index c = 0; c < V.cols(); ++c) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index r = 0; r < V.rows(); ++r) {
      const double a = std::abs(V(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (best_abs > 0.0) V.col(c) *= std::conj(V(best, c)) / best_abs;
  }
}

/// Top-k eigenpairs of a Hermitian matrix, descending.
inline void top_eigenpairs(const Eigen::MatrixXcd& H, std::size_t k, Eigen::MatrixXcd& vecs, Eigen::VectorXd& vals) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::Numeric, "eigen-decomposition failed");
  const Eigen::Index n = H.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  vecs.resize(n, kk);
  vals.resize(kk);
  for (Eigen::Index i = 0; i < kk; ++i) {
    vecs.col(i) = es.eigenvectors().col(n - 1 - i);
    vals(i) = es.eigenvalues()(n - 1 - i);
  }
}

inline void check_hermitian(Eigen::MatrixXcd& G) {
  const double scale = G.norm();
  const double asym = (G - G.adjoint()).norm();
  if (!(asym <= 1e-10 * scale + 1e-300)) throw Error(ErrorKind::Numeric, "Gram matrix is not Hermitian");
  if (!G.allFinite()) throw Error(ErrorKind::Numeric, "Gram matrix is not finite");
  G = 0.5 * (G + G.adjoint()).eval();
}

}  // namespace detail

/// Truncated SVD through the N x N Gram matrix G = P* P: its top-k eigenvectors form
/// Vhat, sigma_i = sqrt(lambda_i) and M = P Vhat.
inline EigenBasis svd_truncate(const ProbeStack& stack, std::size_t k) {
  const std::size_t n = stack.count();
  if (k < 1 || k > n) throw Error(ErrorKind::Rank, "k must satisfy 1 <= k <= N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  Eigen::MatrixXcd G = stack.P.adjoint() * stack.P;
  detail::check_hermitian(G);
  EigenBasis b;
  Eigen::VectorXd lambda;
  detail::top_eigenpairs(G, k, b.Vhat, lambda);
  detail::fix_column_phases(b.Vhat);
  b.sigma = lambda.cwiseMax(0.0).cwiseSqrt();
  b.M = stack.P * b.Vhat;
  b.ny = stack.ny;
  b.nx = stack.nx;
  b.pitch = stack.pitch;
  b.wavelength = stack.wavelength;
  return b;
}

/// P = M Vhat*, column j being frame j's probe.
inline ProbeStack expand_probes(const EigenBasis& basis) {
  ProbeStack s;
  s.P = basis.M * basis.Vhat.adjoint();
  s.ny = basis.ny;
  s.nx = basis.nx;
  s.pitch = basis.pitch;
  s.wavelength = basis.wavelength;
  return s;
}

/// Truncated SVD of a stack given in factored form P_j = sum_i C(j, i) F_i, i.e.
/// P = F C^T with F of size npix x r and C of size N x r. With C^* = Q R (thin QR),
/// G = P* P = Q (R F*F R*) Q*, so only an r x r eigenproblem is solved; the result
/// agrees with svd_truncate(F C^T, k).
inline EigenBasis svd_truncate_factored(const Eigen::MatrixXcd& F, const Eigen::MatrixXcd& C, std::size_t k,
                                        const EigenBasis& shape) {
  const auto n = static_cast<std::size_t>(C.rows());
  const auto r = static_cast<std::size_t>(C.cols());
  if (k < 1 || k > n || k > r) throw Error(ErrorKind::Rank, "k must satisfy 1 <= k <= min(N, r)");
  if (F.cols() != C.cols()) throw Error(ErrorKind::Shape, "factor column counts differ");
  const Eigen::MatrixXcd Bh = C.conjugate();  // (C^T)^* = conj(C), N x r
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(Bh);
  const auto rr = static_cast<Eigen::Index>(r);
  const Eigen::MatrixXcd Q = qr.householderQ() * Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(n), rr);
  const Eigen::MatrixXcd R = qr.matrixQR().topRows(rr).triangularView<Eigen::Upper>();
  Eigen::MatrixXcd H = R * (F.adjoint() * F) * R.adjoint();
  detail::check_hermitian(H);
  Eigen::MatrixXcd W;
  Eigen::VectorXd lambda;
  detail::top_eigenpairs(H, k, W, lambda);

  EigenBasis b;
  b.Vhat = Q * W;
  detail::fix_column_phases(b.Vhat);
  // M = P Vhat = F C^T Vhat.
  b.M = F * (C.transpose() * b.Vhat);
  b.sigma = lambda.cwiseMax(0.0).cwiseSqrt();
  b.ny = shape.ny;
  b.nx = shape.nx;
  b.pitch = shape.pitch;
  b.wavelength = shape.wavelength;
  return b;
}

}  // namespace pulseprobe
