// SPDX-License-Identifier: Apache-2.0
#include "dropreg/numeric_oracles.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

namespace dropreg
{
namespace
{
double checked(double v)
{
    if (!std::isfinite(v))
        throw NumericError("finite difference: function returned non-finite value");
    return v;
}

int resolve_threads(int threads)
{
    return threads > 0 ? threads : default_threads();
}
}  // namespace

Tensor finite_diff_grad(ScalarFn const& f, Tensor const& point, double step)
{
    if (!(step > 0))
        throw std::invalid_argument("finite_diff_grad: step must be positive");
    Tensor out(point.shape());
    Tensor x = point;
    for (std::size_t k = 0; k < x.size(); ++k)
    {
        double orig = x[k];
        x[k] = orig + step;
        double fp = checked(f(x));
        x[k] = orig - step;
        double fm = checked(f(x));
        x[k] = orig;
        out[k] = (fp - fm) / (2 * step);
    }
    return out;
}

Tensor finite_diff_jacobian(VectorFn const& f, Tensor const& point, double step)
{
    if (!(step > 0))
        throw std::invalid_argument("finite_diff_jacobian: step must be positive");
    Tensor x = point;
    std::optional<Tensor> out;
    for (std::size_t k = 0; k < x.size(); ++k)
    {
        double orig = x[k];
        x[k] = orig + step;
        Tensor fp = f(x);
        x[k] = orig - step;
        Tensor fm = f(x);
        x[k] = orig;
        fp.require_finite("finite difference");
        fm.require_finite("finite difference");
        if (!out)
            out = Tensor::matrix(fp.size(), x.size());
        for (std::size_t r = 0; r < fp.size(); ++r)
            (*out)(r, k) = (fp[r] - fm[r]) / (2 * step);
    }
    return *out;
}

FdHessian finite_diff_hessian(ScalarFn const& f, Tensor const& point, double step)
{
    if (!(step > 0))
        throw std::invalid_argument("finite_diff_hessian: step must be positive");
    auto n = point.size();
    Tensor x = point;
    Tensor h = Tensor::matrix(n, n);
    double f0 = checked(f(x));
    auto eval = [&](std::size_t i, double di, std::size_t j, double dj) {
        double oi = x[i], oj = x[j];
        x[i] += di;
        x[j] += dj;
        double v = checked(f(x));
        x[i] = oi;
        x[j] = oj;
        return v;
    };
    for (std::size_t i = 0; i < n; ++i)
    {
        for (std::size_t j = 0; j < n; ++j)
        {
            if (i == j)
            {
                double oi = x[i];
                x[i] = oi + step;
                double fp = checked(f(x));
                x[i] = oi - step;
                double fm = checked(f(x));
                x[i] = oi;
                h(i, i) = (fp - 2 * f0 + fm) / (step * step);
                continue;
            }
            // Order of the perturbations is (i, j) so (j, i) rounds differently.
            double fpp = eval(i, step, j, step);
            double fpm = eval(i, step, j, -step);
            double fmp = eval(i, -step, j, step);
            double fmm = eval(i, -step, j, -step);
            h(i, j) = (fpp - fpm - fmp + fmm) / (4 * step * step);
        }
    }
    FdHessian out;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
        {
            double d = h(i, j) - h(j, i);
            num += d * d;
            den += h(i, j) * h(i, j);
        }
    out.asymmetry = den > 0 ? std::sqrt(num / den) : 0.0;
    out.symmetric = h;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.symmetric(i, j) = 0.5 * (h(i, j) + h(j, i));
    return out;
}

CovarianceEstimate mc_covariance(GradSampler const& sampler,
                                 std::size_t n,
                                 RngStream const& rng,
                                 CovarianceOptions const& options)
{
    if (n < 2)
        throw std::invalid_argument("mc_covariance: need at least two samples");
    auto threads = resolve_threads(options.threads);
    auto block = std::max<std::size_t>(1, options.block);

    CovarianceEstimate est;
    est.samples = n;
    std::size_t dim = 0;
    std::vector<double> shift;
    std::vector<double> sum_d;
    std::vector<double> sum_dd;
    RowMatrix gram;
    ParamLayout layout;

    std::vector<GradVector> draws;
    for (std::size_t start = 0; start < n; start += block)
    {
        auto count = std::min(block, n - start);
        draws.assign(count, GradVector{});
        parallel_for(count, threads, [&](std::size_t i) {
            RngStream sub = rng.split(start + i);
            draws[i] = sampler(sub);
        });
        if (start == 0)
        {
            dim = draws[0].size();
            layout = draws[0].layout();
            shift = draws[0].values();
            sum_d.assign(dim, 0.0);
            est.full = options.mode == CovarianceMode::full
                       || (options.mode == CovarianceMode::automatic
                           && dim <= options.full_cap);
            if (est.full)
                gram = RowMatrix::Zero(static_cast<Eigen::Index>(dim),
                                       static_cast<Eigen::Index>(dim));
            else
                sum_dd.assign(dim, 0.0);
        }
        RowMatrix centered(static_cast<Eigen::Index>(count),
                           static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < count; ++i)
        {
            auto const& v = draws[i].values();
            if (v.size() != dim)
                throw ShapeError("mc_covariance: sampler output length varies");
            for (std::size_t k = 0; k < dim; ++k)
            {
                double d = v[k] - shift[k];
                centered(static_cast<Eigen::Index>(i),
                         static_cast<Eigen::Index>(k))
                    = d;
                sum_d[k] += d;
                if (!est.full)
                    sum_dd[k] += d * d;
            }
        }
        if (est.full)
            gram.noalias() += centered.transpose() * centered;
    }

    auto nd = static_cast<double>(n);
    std::vector<double> mean_d(dim);
    std::vector<double> mean(dim);
    for (std::size_t k = 0; k < dim; ++k)
    {
        mean_d[k] = sum_d[k] / nd;
        mean[k] = shift[k] + mean_d[k];
    }
    est.mean = GradVector(layout, mean);
    est.diagonal.assign(dim, 0.0);
    if (est.full)
    {
        est.matrix = Tensor::matrix(dim, dim);
        for (std::size_t a = 0; a < dim; ++a)
            for (std::size_t b = a; b < dim; ++b)
            {
                auto ia = static_cast<Eigen::Index>(a);
                auto ib = static_cast<Eigen::Index>(b);
                double g = 0.5 * (gram(ia, ib) + gram(ib, ia));
                double c = (g - nd * mean_d[a] * mean_d[b]) / (nd - 1);
                est.matrix(a, b) = c;
                est.matrix(b, a) = c;
            }
        for (std::size_t k = 0; k < dim; ++k)
            est.diagonal[k] = est.matrix(k, k);
    }
    else
    {
        for (std::size_t k = 0; k < dim; ++k)
            est.diagonal[k] = (sum_dd[k] - nd * mean_d[k] * mean_d[k]) / (nd - 1);
    }
    est.trace = 0;
    for (double d : est.diagonal)
        est.trace += d;
    return est;
}

McMean mc_mean(std::function<double(RngStream&)> const& sampler,
               std::size_t n,
               RngStream const& rng,
               int threads)
{
    if (n < 1)
        throw std::invalid_argument("mc_mean: need at least one sample");
    std::vector<double> values(n);
    parallel_for(n, resolve_threads(threads), [&](std::size_t i) {
        RngStream sub = rng.split(i);
        values[i] = sampler(sub);
    });
    McMean out;
    out.samples = n;
    double shift = values[0];
    double s = 0, ss = 0;
    for (double v : values)
    {
        double d = v - shift;
        s += d;
        ss += d * d;
    }
    auto nd = static_cast<double>(n);
    out.mean = shift + s / nd;
    if (n > 1)
    {
        out.variance = std::max(0.0, (ss - s * s / nd) / (nd - 1));
        out.std_error = std::sqrt(out.variance / nd);
    }
    return out;
}

}  // namespace dropreg
