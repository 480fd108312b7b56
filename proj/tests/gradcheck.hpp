#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "subbench/nn.hpp"

namespace subbench::testing {

struct GradReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

// |a - n| / max(|a| + |n|, floor): relative error that stays meaningful for
// gradients near zero, where finite differences only resolve ~1e-10.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

// Checks d(loss)/d(x) and d(loss)/d(trainable parameters) of a module-like
// function against central differences. `forward` maps the input to an output
// tensor; the scalar loss is sum(output * probe) for a fixed random probe.
// `backward` receives d(loss)/d(output) and returns d(loss)/d(input) after
// accumulating parameter gradients. Up to `per_tensor` entries are sampled
// from each tensor.
//
// Each entry is differenced at h and at h / 100 and scored against the closer
// estimate: the wide step is accurate where the loss is smooth, the narrow one
// where [v - h, v + h] straddles a kink (ReLU family, clamps). An incorrect
// analytic gradient disagrees with both.
inline GradReport grad_check(const std::function<nn::Tensor(const nn::Tensor&)>& forward,
                             const std::function<nn::Tensor(const nn::Tensor&)>& backward,
                             const std::vector<nn::Parameter*>& params, nn::Tensor x, Rng& rng,
                             std::size_t per_tensor = 24, double h = 1e-5) {
    const nn::Tensor out0 = forward(x);
    nn::Tensor probe(out0.shape);
    for (auto& v : probe.data) v = rng.normal();
    auto loss = [&](const nn::Tensor& in) {
        const nn::Tensor o = forward(in);
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * probe[i];
        return s;
    };

    nn::zero_grad(params);
    forward(x);
    const nn::Tensor gx = backward(probe);

    GradReport rep;
    auto record = [&](double a, double n, const std::string& what) {
        const double e = rel_error(a, n);
        ++rep.checked;
        if (e > rep.max_rel_error) {
            rep.max_rel_error = e;
            rep.worst = what + " analytic " + std::to_string(a) + " numeric " + std::to_string(n);
        }
    };
    auto pick = [&](std::size_t n) {
        std::vector<std::size_t> idx;
        if (n <= per_tensor) {
            for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
        } else {
            for (std::size_t i = 0; i < per_tensor; ++i) idx.push_back(static_cast<std::size_t>(rng.below(n)));
        }
        return idx;
    };

    auto check_entry = [&](double analytic, double& slot, const std::string& what) {
        auto central = [&](double step) {
            const double v = slot;
            slot = v + step;
            const double lp = loss(x);
            slot = v - step;
            const double lm = loss(x);
            slot = v;
            return (lp - lm) / (2 * step);
        };
        const double wide = central(h);
        const double narrow = central(h / 100);
        record(analytic, rel_error(analytic, wide) <= rel_error(analytic, narrow) ? wide : narrow, what);
    };

    for (std::size_t i : pick(x.size())) check_entry(gx[i], x[i], "input[" + std::to_string(i) + "]");
    for (auto* p : params) {
        if (!p->trainable) continue;
        const nn::Tensor g = p->grad;
        for (std::size_t i : pick(p->value.size())) check_entry(g[i], p->value[i], p->name + "[" + std::to_string(i) + "]");
    }
    return rep;
}

inline GradReport grad_check(nn::Module& m, const nn::Tensor& x, Rng& rng, std::size_t per_tensor = 24) {
    return grad_check([&](const nn::Tensor& in) { return m.forward(in); },
                      [&](const nn::Tensor& g) { return m.backward(g); }, nn::parameters_of(m), x, rng, per_tensor);
}

inline nn::Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    nn::Tensor t(std::move(shape));
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

}  // namespace subbench::testing
