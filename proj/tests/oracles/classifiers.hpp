#pragma once

// Reference classifiers over plain vectors.

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

// Predicts the label of the closest class mean (squared Euclidean).
inline std::vector<std::size_t> nearest_centroid(const std::vector<Vec> &train_x, const std::vector<std::size_t> &train_y,
                                                 const std::vector<Vec> &test_x) {
    std::map<std::size_t, Vec> sums;
    std::map<std::size_t, double> counts;
    for (std::size_t i = 0; i < train_x.size(); ++i) {
        auto &s = sums[train_y[i]];
        if (s.empty()) s.assign(train_x[i].size(), 0.0);
        for (std::size_t j = 0; j < s.size(); ++j) s[j] += train_x[i][j];
        counts[train_y[i]] += 1.0;
    }
    for (auto &[label, s] : sums)
        for (auto &v : s) v /= counts[label];
    std::vector<std::size_t> out;
    for (const auto &x : test_x) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (const auto &[label, c] : sums) {
            double d = 0.0;
            for (std::size_t j = 0; j < c.size(); ++j) d += (x[j] - c[j]) * (x[j] - c[j]);
            if (d < best) {
                best = d;
                arg = label;
            }
        }
        out.push_back(arg);
    }
    return out;
}

inline double accuracy(const std::vector<std::size_t> &truth, const std::vector<std::size_t> &pred) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
    return truth.empty() ? 0.0 : static_cast<double>(hit) / truth.size();
}

// Unweighted mean of per-class F1 over classes seen in truth or predictions.
inline double macro_f1(const std::vector<std::size_t> &truth, const std::vector<std::size_t> &pred) {
    std::set<std::size_t> classes(truth.begin(), truth.end());
    classes.insert(pred.begin(), pred.end());
    double total = 0.0;
    for (std::size_t c : classes) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            tp += truth[i] == c && pred[i] == c;
            fp += truth[i] != c && pred[i] == c;
            fn += truth[i] == c && pred[i] != c;
        }
        const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        total += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    return classes.empty() ? 0.0 : total / classes.size();
}

// Binary logistic regression by full-batch gradient descent; returns the
// training accuracy of the fitted separator.
inline double logistic_regression_train_accuracy(const std::vector<Vec> &x, const std::vector<std::size_t> &y,
                                                 std::size_t iterations = 2000, double lr = 0.5) {
    const std::size_t d = x.empty() ? 0 : x[0].size();
    Vec w(d, 0.0);
    double b = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
        Vec gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double z = b;
            for (std::size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
            const double err = 1.0 / (1.0 + std::exp(-z)) - static_cast<double>(y[i]);
            for (std::size_t j = 0; j < d; ++j) gw[j] += err * x[i][j];
            gb += err;
        }
        for (std::size_t j = 0; j < d; ++j) w[j] -= lr * gw[j] / x.size();
        b -= lr * gb / x.size();
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
        hit += (z > 0.0 ? 1u : 0u) == y[i];
    }
    return x.empty() ? 0.0 : static_cast<double>(hit) / x.size();
}

}  // namespace oracle
