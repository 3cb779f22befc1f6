#pragma once

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "appex/errors.hpp"

namespace appex {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline void require_finite(const Matrix& m, const char* name) {
    if (!m.allFinite()) throw NumericError(std::string(name) + " has non-finite entries");
}

inline void require_square(const Matrix& m, const char* name) {
    if (m.rows() != m.cols())
        throw DimensionError(std::string(name) + " must be square, got " +
                             std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

/// Square matrix checked on construction to be symmetric (relative 1e-10)
/// and positive semidefinite up to eigenvalue drift of -1e-10 * trace.
class PsdMatrix {
  public:
    explicit PsdMatrix(Matrix m) : mat_(std::move(m)) {
        require_square(mat_, "PsdMatrix");
        require_finite(mat_, "PsdMatrix");
        const double scale = mat_.cwiseAbs().maxCoeff();
        const double asym = (mat_ - mat_.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-10 * std::max(scale, 1e-300))
            throw NumericError("PsdMatrix is not symmetric (max asymmetry " +
                               std::to_string(asym) + ")");
        mat_ = ((mat_ + mat_.transpose()) / 2.0).eval();
        Eigen::SelfAdjointEigenSolver<Matrix> es(mat_, Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success)
            throw NumericError("eigensolver failed on PsdMatrix input");
        const double trace = mat_.trace();
        if (es.eigenvalues().minCoeff() < -1e-10 * std::abs(trace))
            throw NumericError("matrix is not positive semidefinite (min eigenvalue " +
                               std::to_string(es.eigenvalues().minCoeff()) + ")");
    }

    static PsdMatrix identity(Eigen::Index d) { return PsdMatrix(Matrix::Identity(d, d)); }
    static PsdMatrix zero(Eigen::Index d) { return PsdMatrix(Matrix::Zero(d, d)); }

    const Matrix& mat() const { return mat_; }
    operator const Matrix&() const { return mat_; }
    Eigen::Index dim() const { return mat_.rows(); }

  private:
    Matrix mat_;
};

/// e^{A t}. Exact identity at t = 0.
inline Matrix matrix_exp(const Matrix& a, double t) {
    require_square(a, "matrix_exp input");
    require_finite(a, "matrix_exp input");
    if (!std::isfinite(t)) throw NumericError("matrix_exp: t is not finite");
    if (t == 0.0 || a.cwiseAbs().maxCoeff() == 0.0)
        return Matrix::Identity(a.rows(), a.cols());
    return (a * t).exp();
}

/// Largest real part over the eigenvalues of a (not necessarily symmetric) matrix.
inline double max_real_eigenvalue(const Matrix& a) {
    require_square(a, "max_real_eigenvalue input");
    require_finite(a, "max_real_eigenvalue input");
    Eigen::EigenSolver<Matrix> es(a, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success)
        throw NumericError("eigensolver did not converge");
    return es.eigenvalues().real().maxCoeff();
}

/// Transition covariance of the linear SDE over one step:
/// the integral over [0, dt] of e^{A s} H e^{A^T s} ds, evaluated with
/// fixed-order Gauss-Legendre quadrature (order 10). dt here is small
/// (<= 0.05 in all protocols), where order 10 is accurate beyond 1e-10.
inline PsdMatrix transition_covariance(const Matrix& a, const PsdMatrix& h, double dt) {
    require_square(a, "transition_covariance drift");
    if (a.rows() != h.dim())
        throw DimensionError("transition_covariance: drift is " + std::to_string(a.rows()) +
                             "x" + std::to_string(a.cols()) + " but diffusion is " +
                             std::to_string(h.dim()) + "x" + std::to_string(h.dim()));
    if (!(dt > 0.0)) throw NumericError("transition_covariance: dt must be positive");

    static constexpr std::array<double, 5> nodes = {
        0.1488743389816312, 0.4333953941292472, 0.6794095682990244,
        0.8650633666889845, 0.9739065285171717};
    static constexpr std::array<double, 5> weights = {
        0.2955242247147529, 0.2692667193099963, 0.2190863625159820,
        0.1494513491505806, 0.0666713443086881};

    const Eigen::Index d = a.rows();
    Matrix acc = Matrix::Zero(d, d);
    const double half = dt / 2.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (const double sign : {-1.0, 1.0}) {
            const double s = half * (1.0 + sign * nodes[i]);
            const Matrix e = matrix_exp(a, s);
            acc.noalias() += (weights[i] * half) * (e * h.mat() * e.transpose());
        }
    }
    return PsdMatrix((acc + acc.transpose()) / 2.0);
}

/// (S + lambda I)^{-1} with lambda = lam_rel * trace(S) / d. With
/// lam_rel = 0 this is the plain inverse and singular input is an error.
inline Matrix regularized_inverse(const PsdMatrix& s, double lam_rel) {
    if (lam_rel < 0.0) throw NumericError("regularized_inverse: lam_rel must be >= 0");
    const Eigen::Index d = s.dim();
    const double lambda = lam_rel * s.mat().trace() / static_cast<double>(d);
    Eigen::SelfAdjointEigenSolver<Matrix> es(s.mat());
    if (es.info() != Eigen::Success)
        throw NumericError("eigensolver failed in regularized_inverse");
    Vector vals = es.eigenvalues().array() + lambda;
    const double top = vals.maxCoeff();
    if (vals.minCoeff() <= 1e-12 * std::max(top, 1e-300))
        throw SingularityError("matrix is singular to working precision; "
                               "pass lam_rel > 0 to regularize");
    return es.eigenvectors() * vals.cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

/// Symmetric PSD square root; negative eigenvalue noise is clipped at zero.
inline Matrix psd_sqrt(const PsdMatrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(s.mat());
    if (es.info() != Eigen::Success)
        throw NumericError("eigensolver failed in psd_sqrt");
    Vector vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace appex
