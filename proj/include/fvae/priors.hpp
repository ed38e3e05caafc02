#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fvae/common.hpp"
#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

enum class PriorStrategy { identical, one_hot, symmetrical, random, wave, learnable };

PriorStrategy prior_strategy_from_name(const std::string& name);
std::string prior_strategy_name(PriorStrategy s);

// Per-group latent prior: N(mean_j, I) for group j, or no explicit prior at
// all for the learnable strategy. Means are a pure function of
// (strategy, k, dim, seed).
struct PriorSpec {
    PriorStrategy strategy = PriorStrategy::identical;
    std::uint32_t groups = 0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;      // random strategy only
    Tensor means;                // [groups x dim]; empty for learnable

    bool has_means() const { return strategy != PriorStrategy::learnable; }

    const float* mean_of(std::uint32_t group) const {
        if (!has_means()) {
            throw UsageError("learnable prior carries no means");
        }
        if (group >= groups) {
            throw UsageError("group index " + std::to_string(group) + " out of range (k=" +
                             std::to_string(groups) + ")");
        }
        return means.data() + static_cast<std::size_t>(group) * dim;
    }

    std::vector<double> mean_vector(std::uint32_t group) const {
        const float* m = mean_of(group);
        return std::vector<double>(m, m + dim);
    }
};

PriorSpec make_prior_means(PriorStrategy strategy, std::uint32_t groups, std::size_t dim,
                           std::uint64_t seed = 0);

// i.i.d. draws from N(mean_group, I), one row per draw. n = 0 gives an
// empty tensor. Rejects the learnable strategy, which has no sampleable
// z1 prior.
Tensor sample_prior(const PriorSpec& spec, std::uint32_t group, std::size_t n, RngStream& rng);

// Encoder posterior for one sample: diagonal Gaussian given as mean and
// log-variance.
template <typename S>
struct LatentDistributionT {
    std::vector<S> mean;
    std::vector<S> log_var;
};

using LatentDistribution = LatentDistributionT<float>;

// KL( N(mean, diag exp(log_var)) || N(prior_mean, I) ), full closed form
// including constants, so the result is always >= 0 and zero only for an
// exact match.
template <typename S, typename M>
double kl_to_prior(const S* mean, const S* log_var, std::size_t dim, const M* prior_mean) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double lv = static_cast<double>(log_var[i]);
        const double var = std::exp(lv);
        const double d = static_cast<double>(mean[i]) -
                         (prior_mean != nullptr ? static_cast<double>(prior_mean[i]) : 0.0);
        acc += var + d * d - 1.0 - lv;
    }
    return 0.5 * acc;
}

template <typename S>
double kl_to_prior(const LatentDistributionT<S>& q, const std::vector<double>& prior_mean) {
    if (q.mean.size() != q.log_var.size() || q.mean.size() != prior_mean.size()) {
        throw UsageError("kl_to_prior: dimension mismatch");
    }
    return kl_to_prior(q.mean.data(), q.log_var.data(), q.mean.size(), prior_mean.data());
}

// KL( N(m_q, diag exp(lv_q)) || N(m_p, diag exp(lv_p)) ) for one sample.
template <typename S>
double kl_diag_gaussians(const S* m_q, const S* lv_q, const S* m_p, const S* lv_p,
                         std::size_t dim) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double lq = static_cast<double>(lv_q[i]);
        const double lp = static_cast<double>(lv_p[i]);
        const double d = static_cast<double>(m_q[i]) - static_cast<double>(m_p[i]);
        acc += lp - lq + (std::exp(lq) + d * d) / std::exp(lp) - 1.0;
    }
    return 0.5 * acc;
}

// Per-coordinate gradients of kl_to_prior wrt (mean, log_var), accumulated
// into d_mean/d_log_var with the given scale.
template <typename S, typename M>
void kl_to_prior_grad(const S* mean, const S* log_var, std::size_t dim, const M* prior_mean,
                      double scale, S* d_mean, S* d_log_var) {
    for (std::size_t i = 0; i < dim; ++i) {
        const double m0 = prior_mean != nullptr ? static_cast<double>(prior_mean[i]) : 0.0;
        d_mean[i] += static_cast<S>(scale * (static_cast<double>(mean[i]) - m0));
        d_log_var[i] +=
            static_cast<S>(scale * 0.5 * (std::exp(static_cast<double>(log_var[i])) - 1.0));
    }
}

// Gradients of kl_diag_gaussians wrt both distributions, accumulated with
// the given scale. Pass nullptr to skip a side.
template <typename S>
void kl_diag_gaussians_grad(const S* m_q, const S* lv_q, const S* m_p, const S* lv_p,
                            std::size_t dim, double scale, S* d_m_q, S* d_lv_q, S* d_m_p,
                            S* d_lv_p) {
    for (std::size_t i = 0; i < dim; ++i) {
        const double lq = static_cast<double>(lv_q[i]);
        const double lp = static_cast<double>(lv_p[i]);
        const double inv_vp = std::exp(-lp);
        const double diff = static_cast<double>(m_q[i]) - static_cast<double>(m_p[i]);
        if (d_m_q != nullptr) d_m_q[i] += static_cast<S>(scale * diff * inv_vp);
        if (d_lv_q != nullptr) {
            d_lv_q[i] += static_cast<S>(scale * 0.5 * (std::exp(lq) * inv_vp - 1.0));
        }
        if (d_m_p != nullptr) d_m_p[i] += static_cast<S>(-scale * diff * inv_vp);
        if (d_lv_p != nullptr) {
            d_lv_p[i] += static_cast<S>(scale * 0.5 *
                                        (1.0 - (std::exp(lq) + diff * diff) * inv_vp));
        }
    }
}

}  // namespace fvae
