#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "speakerprof/errors.hpp"
#include "speakerprof/tensor.hpp"

namespace spkr::ad {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter in the order the
// parameters were registered; parameters without a gradient are skipped.
template <typename Real>
class Adam {
   public:
    Adam(std::vector<TensorT<Real>> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (const auto &p : params_) {
            m_.emplace_back(p.numel(), Real(0));
            v_.emplace_back(p.numel(), Real(0));
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto &p = params_[k];
            if (!p.has_grad()) continue;
            if (p.grad().size() != p.numel()) throw ShapeError("adam: gradient and parameter sizes differ");
            const auto g = p.grad();
            auto value = p.mutable_data();
            auto &m = m_[k];
            auto &v = v_[k];
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double gi = g[i];
                const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                m[i] = static_cast<Real>(mi);
                v[i] = static_cast<Real>(vi);
                const double update = cfg_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps);
                value[i] = static_cast<Real>(value[i] - update);
            }
        }
    }

    void zero_grad() {
        for (auto &p : params_) p.zero_grad();
    }

    std::uint64_t steps() const { return t_; }
    const AdamConfig &config() const { return cfg_; }

   private:
    std::vector<TensorT<Real>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<Real>> m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace spkr::ad
