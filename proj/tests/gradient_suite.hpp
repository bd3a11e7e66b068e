#pragma once

// Finite-difference checks of every differentiable op on randomized small
// shapes. Shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "oracles/finite_diff.hpp"
#include "speakerprof/ops.hpp"
#include "speakerprof/rng.hpp"

namespace gradsuite {

using spkr::Rng;
using spkr::ad::Shape;
using spkr::ad::Tensor64;

struct OpResult {
    std::string op;
    double max_rel_error = 0.0;
    std::size_t shapes = 0;
};

inline Tensor64 random_tensor(Rng &rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(spkr::ad::numel(shape));
    for (auto &x : v) x = rng.uniform(lo, hi);
    return Tensor64::from_data(std::move(shape), std::move(v));
}

// Values at least 0.05 apart so max and relu decisions survive a step of h.
inline Tensor64 spaced_tensor(Rng &rng, Shape shape) {
    const std::size_t n = spkr::ad::numel(shape);
    std::vector<double> order(n);
    std::iota(order.begin(), order.end(), 0.0);
    rng.shuffle(order.begin(), order.end());
    for (auto &x : order) x = (x - n / 2.0 + 0.5) * 0.1 + rng.uniform(-0.02, 0.02);
    return Tensor64::from_data(std::move(shape), std::move(order));
}

// sum(y * r) with a fixed random r, so no output cancels another.
inline Tensor64 project(const Tensor64 &y, const Tensor64 &r) { return spkr::ad::sum(spkr::ad::mul(y, r)); }

inline std::size_t dim(Rng &rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

inline std::vector<OpResult> run(std::uint64_t seed, std::size_t trials = 10) {
    using namespace spkr::ad;
    Rng rng(seed);
    std::vector<OpResult> out;
    auto record = [&](const std::string &op, const oracle::GradCheck &g) {
        auto it = std::find_if(out.begin(), out.end(), [&](const OpResult &r) { return r.op == op; });
        if (it == out.end()) {
            out.push_back({op, 0.0, 0});
            it = out.end() - 1;
        }
        it->max_rel_error = std::max(it->max_rel_error, g.max_rel_error);
        ++it->shapes;
    };

    for (std::size_t trial = 0; trial < trials; ++trial) {
        {
            const std::size_t b = dim(rng, 1, 4), i = dim(rng, 1, 5), o = dim(rng, 1, 4);
            const auto r = random_tensor(rng, {b, o});
            record("linear", oracle::check_gradients(
                                 {random_tensor(rng, {b, i}), random_tensor(rng, {i, o}), random_tensor(rng, {o})},
                                 [&](const auto &t) { return project(linear(t[0], t[1], t[2]), r); }));
        }
        {
            const std::size_t b = dim(rng, 1, 2), ci = dim(rng, 1, 3), co = dim(rng, 1, 3), len = dim(rng, 3, 6);
            const auto r = random_tensor(rng, {b, co, len});
            record("conv1d", oracle::check_gradients({random_tensor(rng, {b, ci, len}), random_tensor(rng, {co, ci, 3}),
                                                      random_tensor(rng, {co})},
                                                     [&](const auto &t) { return project(conv1d(t[0], t[1], t[2]), r); }));
        }
        {
            const std::size_t b = dim(rng, 1, 2), c = dim(rng, 1, 3), len = dim(rng, 2, 7);
            const auto r = random_tensor(rng, {b, c, len / 2});
            record("maxpool1d", oracle::check_gradients({spaced_tensor(rng, {b, c, len})},
                                                        [&](const auto &t) { return project(maxpool1d(t[0]), r); }));
        }
        {
            const std::size_t b = dim(rng, 1, 3), len = dim(rng, 1, 3), in = dim(rng, 1, 3), h = dim(rng, 1, 3);
            const std::size_t layers = dim(rng, 1, 2);
            std::vector<Tensor64> inputs{random_tensor(rng, {b, len, in})};
            for (std::size_t l = 0; l < layers; ++l) {
                inputs.push_back(random_tensor(rng, {l == 0 ? in : h, 4 * h}, -0.8, 0.8));
                inputs.push_back(random_tensor(rng, {h, 4 * h}, -0.8, 0.8));
                inputs.push_back(random_tensor(rng, {4 * h}, -0.5, 0.5));
            }
            std::vector<std::size_t> lengths;
            if (trial % 2 == 1)
                for (std::size_t i = 0; i < b; ++i) lengths.push_back(1 + rng.index(len));
            const auto r = random_tensor(rng, {b, len, h});
            const auto rh = random_tensor(rng, {b, h});
            record("lstm_forward", oracle::check_gradients(inputs, [&](const auto &t) {
                       std::vector<LstmLayer<double>> ls;
                       for (std::size_t l = 0; l < layers; ++l) ls.push_back({t[1 + 3 * l], t[2 + 3 * l], t[3 + 3 * l]});
                       const auto res = lstm_forward<double>(t[0], ls, lengths);
                       return add(project(res.outputs, r), project(res.h, rh));
                   }));
        }
        {
            const std::size_t b = dim(rng, 2, 5), f = dim(rng, 1, 4);
            const auto r = random_tensor(rng, {b, f});
            BatchNormStats<double> stats;
            record("batchnorm1d_train",
                   oracle::check_gradients({random_tensor(rng, {b, f}), random_tensor(rng, {f}, 0.5, 1.5),
                                            random_tensor(rng, {f})},
                                           [&](const auto &t) {
                                               return project(batchnorm1d(t[0], t[1], t[2], stats, true), r);
                                           }));
            BatchNormStats<double> eval_stats{std::vector<double>(f, 0.1), std::vector<double>(f, 2.0)};
            record("batchnorm1d_eval",
                   oracle::check_gradients({random_tensor(rng, {b, f}), random_tensor(rng, {f}, 0.5, 1.5),
                                            random_tensor(rng, {f})},
                                           [&](const auto &t) {
                                               return project(batchnorm1d(t[0], t[1], t[2], eval_stats, false), r);
                                           }));
        }
        {
            const std::size_t b = dim(rng, 1, 4), k = dim(rng, 2, 6);
            std::vector<std::size_t> targets;
            for (std::size_t i = 0; i < b; ++i) targets.push_back(rng.index(k));
            record("softmax_cross_entropy",
                   oracle::check_gradients({random_tensor(rng, {b, k}, -2.0, 2.0)},
                                           [&](const auto &t) { return softmax_cross_entropy(t[0], targets); }));
        }
        {
            const std::size_t b = dim(rng, 1, 5);
            std::vector<double> targets(b);
            for (auto &x : targets) x = rng.uniform(-1.0, 1.0);
            auto pred = random_tensor(rng, {b, 1});
            record("mse_loss", oracle::check_gradients({pred}, [&](const auto &t) { return mse_loss<double>(t[0], targets); }));
            // Keep predictions clear of the |.| kink.
            auto far = pred.mutable_data();
            for (std::size_t i = 0; i < b; ++i) far[i] = targets[i] + (i % 2 ? 0.3 : -0.3) + rng.uniform(-0.1, 0.1);
            record("l1_loss", oracle::check_gradients({pred}, [&](const auto &t) { return l1_loss<double>(t[0], targets); }));
        }
        {
            const std::size_t b = dim(rng, 1, 3), f = dim(rng, 1, 4);
            const auto r = random_tensor(rng, {b, f});
            record("relu", oracle::check_gradients({spaced_tensor(rng, {b, f})},
                                                   [&](const auto &t) { return project(relu(t[0]), r); }));
            record("sigmoid", oracle::check_gradients({random_tensor(rng, {b, f}, -3, 3)},
                                                      [&](const auto &t) { return project(sigmoid(t[0]), r); }));
            record("tanh", oracle::check_gradients({random_tensor(rng, {b, f}, -3, 3)},
                                                   [&](const auto &t) { return project(spkr::ad::tanh(t[0]), r); }));
            record("mul", oracle::check_gradients({random_tensor(rng, {b, f}), random_tensor(rng, {b, f})},
                                                  [&](const auto &t) { return project(mul(t[0], t[1]), r); }));
        }
        {
            const std::size_t b = dim(rng, 1, 3), c = dim(rng, 1, 3), len = dim(rng, 1, 5);
            std::vector<std::size_t> lengths;
            for (std::size_t i = 0; i < b; ++i) lengths.push_back(1 + rng.index(len));
            const auto r = random_tensor(rng, {b, c});
            record("masked_mean_time",
                   oracle::check_gradients({random_tensor(rng, {b, c, len})},
                                           [&](const auto &t) { return project(masked_mean_time(t[0], lengths), r); }));
        }
    }
    return out;
}

}  // namespace gradsuite
