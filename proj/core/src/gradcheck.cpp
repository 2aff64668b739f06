#include "mars/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace mars {

namespace {

double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max(1.0, std::fabs(analytic[i]));
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

} // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double epsilon) {
    if (!x.requires_grad()) throw std::invalid_argument("grad_check: x must require grad");
    Graph::active().clear();
    x.zero_grad();
    Tensor y = f(x);
    if (y.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");

    std::vector<double> analytic(x.numel(), 0.0);
    if (y.requires_grad()) {
        backward(y);
        for (std::size_t i = 0; i < x.numel(); ++i) analytic[i] = x.grad()[i];
    }

    std::vector<double> numeric(x.numel(), 0.0);
    {
        NoGradGuard ng;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double saved = x.data()[i];
            x.data()[i] = saved + epsilon;
            const double plus = f(x).item();
            x.data()[i] = saved - epsilon;
            const double minus = f(x).item();
            x.data()[i] = saved;
            numeric[i] = (plus - minus) / (2.0 * epsilon);
        }
    }
    return max_rel_err(analytic, numeric);
}

double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor>& params,
                         double epsilon) {
    Graph::active().clear();
    for (auto& p : params) p.zero_grad();
    Tensor y = loss_fn();
    if (y.numel() != 1) throw std::invalid_argument("grad_check_params: loss must be scalar");
    backward(y);

    double worst = 0.0;
    NoGradGuard ng;
    for (auto& p : params) {
        if (!p.requires_grad()) continue;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + epsilon;
            const double plus = loss_fn().item();
            p.data()[i] = saved - epsilon;
            const double minus = loss_fn().item();
            p.data()[i] = saved;
            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double analytic = p.grad()[i];
            const double denom = std::max(1.0, std::fabs(analytic));
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
    }
    return worst;
}

} // namespace mars
