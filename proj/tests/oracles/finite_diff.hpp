#pragma once

// Central finite differences in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "speakerprof/tensor.hpp"

namespace oracle {

using spkr::ad::Tensor64;

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Compares the analytic gradient of the scalar f(inputs) with central
// differences at step h. The error for each input is
// max|analytic - numeric| / max(max|numeric|, floor).
inline GradCheck check_gradients(std::vector<Tensor64> inputs,
                                 const std::function<Tensor64(const std::vector<Tensor64> &)> &f, double h = 1e-4,
                                 double floor = 1e-8) {
    for (auto &t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    spkr::ad::backward(f(inputs));

    GradCheck out;
    for (auto &t : inputs) {
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        std::vector<double> numeric(t.numel());
        auto values = t.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double keep = values[i];
            values[i] = keep + h;
            const double up = f(inputs).item();
            values[i] = keep - h;
            const double down = f(inputs).item();
            values[i] = keep;
            numeric[i] = (up - down) / (2.0 * h);
        }
        double scale = floor, diff = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            scale = std::max(scale, std::abs(numeric[i]));
            diff = std::max(diff, std::abs(numeric[i] - analytic[i]));
        }
        out.max_rel_error = std::max(out.max_rel_error, diff / scale);
        out.checked += numeric.size();
    }
    return out;
}

}  // namespace oracle
