#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

#include "v2sim/core/errors.hpp"

namespace v2sim::fit {

struct FitResult {
    Eigen::VectorXd params;
    Eigen::MatrixXd covariance;   // s^2 (J^T J)^+ at the optimum
    double rss = 0.0;
    int dof = 0;
    int evaluations = 0;
    bool converged = false;
    bool singular = false;        // J^T J rank-deficient at the optimum

    double param(int i) const { return params[i]; }
    double stderr_of(int i) const { return std::sqrt(std::max(0.0, covariance(i, i))); }
};

/// model(params, x) -> predicted y
using Model = std::function<double(const Eigen::VectorXd&, double)>;

namespace detail {

struct Residuals {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    using QRSolver = Eigen::ColPivHouseholderQR<JacobianType>;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    const Model* model;
    const std::vector<double>* x;
    const std::vector<double>* y;
    const std::vector<double>* w;
    int n_params;

    int inputs() const { return n_params; }
    int values() const { return static_cast<int>(x->size()); }

    int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
        for (std::size_t i = 0; i < x->size(); ++i) {
            const double wi = w->empty() ? 1.0 : (*w)[i];
            r[static_cast<Eigen::Index>(i)] = wi * ((*model)(p, (*x)[i]) - (*y)[i]);
        }
        return 0;
    }
};

} // namespace detail

struct FitOptions {
    int max_evaluations = 4000;
    double tolerance = 1e-12;
};

/// Weighted nonlinear least squares (Levenberg-Marquardt, central-difference Jacobian).
/// Throws NumericalError when the optimizer fails or the residual is not finite.
inline FitResult least_squares(const Model& model, const std::vector<double>& x, const std::vector<double>& y,
                               const Eigen::VectorXd& p0, const std::vector<double>& weights = {},
                               const FitOptions& opt = {}) {
    if (x.size() != y.size()) throw DomainError("least_squares: x and y differ in length");
    if (!weights.empty() && weights.size() != x.size()) throw DomainError("least_squares: weight length mismatch");
    const int np = static_cast<int>(p0.size());
    if (static_cast<int>(x.size()) < np) throw DomainError("least_squares: fewer points than parameters");

    detail::Residuals f{&model, &x, &y, &weights, np};
    Eigen::NumericalDiff<detail::Residuals, Eigen::Central> df(f);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::Residuals, Eigen::Central>> lm(df);
    lm.setMaxfev(opt.max_evaluations);
    lm.setXtol(opt.tolerance);
    lm.setFtol(opt.tolerance);
    Eigen::VectorXd p = p0;
    const auto status = lm.minimize(p);

    FitResult res;
    res.params = p;
    Eigen::VectorXd r(static_cast<Eigen::Index>(x.size()));
    f(p, r);
    res.rss = r.squaredNorm();
    res.dof = static_cast<int>(x.size()) - np;
    res.evaluations = static_cast<int>(lm.nfev());
    res.converged = status == Eigen::LevenbergMarquardtSpace::RelativeReductionTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::RelativeErrorTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::RelativeErrorAndReductionTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::CosinusTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::FtolTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::XtolTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::GtolTooSmall;
    if (!std::isfinite(res.rss) || !p.allFinite())
        throw NumericalError("least_squares: non-finite residual (status " + std::to_string(int(status)) + ")",
                             res.rss);

    Eigen::MatrixXd J(static_cast<Eigen::Index>(x.size()), np);
    df.df(p, J);
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(JtJ);
    res.singular = cod.rank() < np;
    const double s2 = res.dof > 0 ? res.rss / res.dof : 0.0;
    res.covariance = s2 * cod.pseudoInverse();
    return res;
}

/// Ordinary linear regression y = a + b x with standard errors.
struct LinearFit {
    double intercept, slope;
    double intercept_stderr, slope_stderr;
};

inline LinearFit linear_regression(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw DomainError("linear_regression: need >= 2 paired points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw DomainError("linear_regression: x values are all equal");
    LinearFit f{};
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - f.intercept - f.slope * x[i];
        rss += e * e;
    }
    const double s2 = n > 2 ? rss / double(n - 2) : 0.0;
    f.slope_stderr = std::sqrt(s2 / sxx);
    f.intercept_stderr = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    return f;
}

} // namespace v2sim::fit
