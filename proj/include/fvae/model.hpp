#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fvae/common.hpp"
#include "fvae/nn.hpp"
#include "fvae/param_set.hpp"
#include "fvae/priors.hpp"
#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

enum class VariantKind { fedvae, fission_l, fission_d, fission_ld, fission_hld };

VariantKind variant_from_name(const std::string& name);
std::string variant_name(VariantKind kind);

inline bool variant_is_hierarchical(VariantKind kind) { return kind == VariantKind::fission_hld; }
inline bool variant_has_branches(VariantKind kind) {
    return kind == VariantKind::fission_d || kind == VariantKind::fission_ld ||
           kind == VariantKind::fission_hld;
}

enum class ReconMode { bernoulli, gaussian_fixed_var };

enum class Pathway { from_z2, from_z1_via_encoder, from_z1_direct };

Pathway pathway_from_name(const std::string& name);
std::string pathway_name(Pathway p);

enum class ConsistencyGrad { both, stop_p, stop_q };

struct ModelConfig {
    VariantKind kind = VariantKind::fedvae;
    std::uint32_t groups = 2;
    std::size_t input_dim = 0;
    std::size_t z1_dim = 16;
    std::size_t z2_dim = 8;
    std::vector<std::size_t> encoder_widths;      // hidden widths of q(z1|x)
    std::vector<std::size_t> z2_encoder_widths;   // hidden widths of q(z2|z1)
    std::vector<std::size_t> z1_decoder_widths;   // hidden widths of p(z1|z2)
    std::vector<std::size_t> image_decoder_widths;  // hidden widths of p(x|z1)
    std::map<std::uint32_t, std::uint32_t> extra_branch_layers;  // per-group extra FC depth
    PriorSpec prior;
    ReconMode recon_mode = ReconMode::bernoulli;
    double gaussian_var = 0.1;
    ConsistencyGrad consistency_grad = ConsistencyGrad::both;
    Activation hidden_activation = Activation::relu;

    std::uint32_t branch_count() const { return variant_has_branches(kind) ? groups : 1; }
    bool hierarchical() const { return variant_is_hierarchical(kind); }
    void validate() const;
};

template <typename S>
struct LossBreakdownT {
    double recon = 0.0;
    double kl_z1 = 0.0;
    double kl_z2 = 0.0;
    double consistency = 0.0;
    double recon_from_z2 = 0.0;
    double total = 0.0;

    // Canonical combination; `total` is always produced by exactly this sum.
    static double combine(double recon, double kl_z1, double kl_z2, double consistency,
                          double recon_from_z2) {
        return recon + kl_z1 + kl_z2 + consistency + recon_from_z2;
    }
};

using LossBreakdown = LossBreakdownT<float>;

// Batch of diagonal Gaussians: one row per sample.
template <typename S>
struct GaussianBatchT {
    TensorT<S> mean;     // [B x dim]
    TensorT<S> log_var;  // [B x dim], clamped to [-10, 10]

    LatentDistributionT<S> row(std::size_t r) const {
        const std::size_t d = mean.cols();
        LatentDistributionT<S> out;
        out.mean.assign(mean.data() + r * d, mean.data() + (r + 1) * d);
        out.log_var.assign(log_var.data() + r * d, log_var.data() + (r + 1) * d);
        return out;
    }
};

constexpr double kLogVarClamp = 10.0;
constexpr double kBernoulliEps = 1e-7;

// Standard-normal draw provider; lets tests pin the reparameterization
// noise. Draw order is row-major z1 noise first, then z2 noise.
using NoiseFn = std::function<double()>;

inline NoiseFn noise_from(RngStream& rng) {
    return [&rng]() { return rng.normal(); };
}

// z = mu + exp(log_var / 2) * eps, one Gaussian per row.
template <typename S>
TensorT<S> reparameterize(const GaussianBatchT<S>& q, const NoiseFn& noise,
                          TensorT<S>* eps_out = nullptr) {
    TensorT<S> z = TensorT<S>::zeros(q.mean.shape());
    TensorT<S> eps = TensorT<S>::zeros(q.mean.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) {
        eps[i] = static_cast<S>(noise());
        z[i] = q.mean[i] + std::exp(q.log_var[i] / S(2)) * eps[i];
    }
    if (eps_out != nullptr) *eps_out = std::move(eps);
    return z;
}

// Negative log-likelihood of x under the decoder output, averaged over the
// batch. Bernoulli mode expects probabilities (sigmoid outputs) and reports
// the mean per-pixel BCE; Gaussian mode expects per-pixel means with a
// shared global variance and reports the per-image squared-norm form
// 0.5*||x - x_hat||^2 / var + const, i.e. summed over pixels.
template <typename S>
double recon_loss(const TensorT<S>& x, const TensorT<S>& decoder_output, ReconMode mode,
                  double gaussian_var = 0.1) {
    if (!x.same_shape(decoder_output)) {
        throw UsageError("recon_loss: shape mismatch between data and decoder output");
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (x[i] < S(0) || x[i] > S(1)) {
            throw DataError("recon_loss: pixel value outside [0,1]");
        }
    }
    const double n = static_cast<double>(x.numel());
    const double rows = static_cast<double>(x.rows());
    double acc = 0.0;
    if (mode == ReconMode::bernoulli) {
        for (std::size_t i = 0; i < x.numel(); ++i) {
            double p = static_cast<double>(decoder_output[i]);
            p = std::min(1.0 - kBernoulliEps, std::max(kBernoulliEps, p));
            const double xv = static_cast<double>(x[i]);
            acc += -(xv * std::log(p) + (1.0 - xv) * std::log(1.0 - p));
        }
        return acc / n;
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(decoder_output[i]);
        acc += 0.5 * d * d / gaussian_var;
    }
    return acc / rows +
           0.5 * (n / rows) * std::log(2.0 * 3.14159265358979323846 * gaussian_var);
}

// d(recon_loss)/d(decoder_output), same conventions as recon_loss.
template <typename S>
TensorT<S> recon_loss_grad(const TensorT<S>& x, const TensorT<S>& decoder_output, ReconMode mode,
                           double gaussian_var = 0.1) {
    TensorT<S> g = TensorT<S>::zeros(x.shape());
    const double n = static_cast<double>(x.numel());
    const double rows = static_cast<double>(x.rows());
    if (mode == ReconMode::bernoulli) {
        for (std::size_t i = 0; i < x.numel(); ++i) {
            double p = static_cast<double>(decoder_output[i]);
            p = std::min(1.0 - kBernoulliEps, std::max(kBernoulliEps, p));
            const double xv = static_cast<double>(x[i]);
            g[i] = static_cast<S>((p - xv) / (p * (1.0 - p)) / n);
        }
        return g;
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(decoder_output[i]) - static_cast<double>(x[i]);
        g[i] = static_cast<S>(d / gaussian_var / rows);
    }
    return g;
}

// Encoder-style component producing a diagonal Gaussian: optional hidden
// trunk followed by mean and log-variance heads.
template <typename S>
struct GaussianHeadT {
    MlpT<S> trunk;  // empty when no hidden layers
    bool has_trunk = false;
    DenseLayerT<S> mu;
    DenseLayerT<S> log_var;

    GaussianHeadT() = default;

    GaussianHeadT(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim,
                  RngStream& rng, Activation hidden_act = Activation::relu) {
        std::size_t trunk_out = in_dim;
        if (!hidden.empty()) {
            std::vector<std::size_t> widths;
            widths.push_back(in_dim);
            widths.insert(widths.end(), hidden.begin(), hidden.end());
            trunk = MlpT<S>(widths, hidden_act, hidden_act, rng);
            has_trunk = true;
            trunk_out = hidden.back();
        }
        mu = DenseLayerT<S>(trunk_out, out_dim, Activation::identity, rng);
        log_var = DenseLayerT<S>(trunk_out, out_dim, Activation::identity, rng);
    }

    struct Cache {
        typename MlpT<S>::Cache trunk_cache;
        typename DenseLayerT<S>::Cache mu_cache;
        typename DenseLayerT<S>::Cache lv_cache;
        TensorT<S> raw_log_var;  // pre-clamp
    };

    GaussianBatchT<S> forward(const TensorT<S>& in, Cache* cache) const {
        TensorT<S> h = has_trunk ? trunk.forward(in, cache != nullptr ? &cache->trunk_cache : nullptr)
                                 : in;
        GaussianBatchT<S> out;
        out.mean = mu.forward(h, cache != nullptr ? &cache->mu_cache : nullptr);
        TensorT<S> raw = log_var.forward(h, cache != nullptr ? &cache->lv_cache : nullptr);
        out.log_var = TensorT<S>::zeros(raw.shape());
        for (std::size_t i = 0; i < raw.numel(); ++i) {
            double v = static_cast<double>(raw[i]);
            v = std::min(kLogVarClamp, std::max(-kLogVarClamp, v));
            out.log_var[i] = static_cast<S>(v);
        }
        if (cache != nullptr) cache->raw_log_var = std::move(raw);
        return out;
    }

    // Gradient wrt the head input, given grads wrt mean and clamped log-var.
    TensorT<S> backward(const Cache& cache, const TensorT<S>& d_mean, const TensorT<S>& d_log_var,
                        const std::string& prefix, ParamSetT<S>& grads) const {
        TensorT<S> d_lv_raw = TensorT<S>::zeros(d_log_var.shape());
        for (std::size_t i = 0; i < d_log_var.numel(); ++i) {
            const double raw = static_cast<double>(cache.raw_log_var[i]);
            d_lv_raw[i] = (raw > -kLogVarClamp && raw < kLogVarClamp) ? d_log_var[i] : S(0);
        }
        TensorT<S> gw, gb;
        TensorT<S> dh = mu.backward(cache.mu_cache, d_mean, gw, gb);
        MlpT<S>::accumulate(grads, prefix + ".mu.weight", std::move(gw));
        MlpT<S>::accumulate(grads, prefix + ".mu.bias", std::move(gb));
        TensorT<S> dh2 = log_var.backward(cache.lv_cache, d_lv_raw, gw, gb);
        MlpT<S>::accumulate(grads, prefix + ".logvar.weight", std::move(gw));
        MlpT<S>::accumulate(grads, prefix + ".logvar.bias", std::move(gb));
        for (std::size_t i = 0; i < dh.numel(); ++i) dh[i] += dh2[i];
        if (has_trunk) {
            return trunk.backward(cache.trunk_cache, dh, prefix + ".trunk", grads);
        }
        return dh;
    }

    void append_params(const std::string& prefix, ParamSetT<S>& out) const {
        if (has_trunk) trunk.append_params(prefix + ".trunk", out);
        out.add(prefix + ".mu.weight", mu.weight);
        out.add(prefix + ".mu.bias", mu.bias);
        out.add(prefix + ".logvar.weight", log_var.weight);
        out.add(prefix + ".logvar.bias", log_var.bias);
    }

    void load_params(const std::string& prefix, const ParamSetT<S>& in) {
        if (has_trunk) trunk.load_params(prefix + ".trunk", in);
        mu.weight = in.tensor(prefix + ".mu.weight");
        mu.bias = in.tensor(prefix + ".mu.bias");
        log_var.weight = in.tensor(prefix + ".logvar.weight");
        log_var.bias = in.tensor(prefix + ".logvar.bias");
    }
};

template <typename S>
struct VaeForwardT {
    GaussianBatchT<S> q_z1;
    TensorT<S> z1;
    GaussianBatchT<S> q_z2;          // hierarchical only
    TensorT<S> z2;                   // hierarchical only
    GaussianBatchT<S> p_z1_given_z2; // hierarchical only
    TensorT<S> z1_reconstructed;     // mean of p(z1|z2)
    TensorT<S> x_recon;              // decoder output for z1
    TensorT<S> x_recon_from_z2;      // decoder output for the z2->z1->x pathway
    LossBreakdownT<S> losses;
};

template <typename S>
class VaeModelT {
public:
    VaeModelT(const ModelConfig& cfg, RngStream init_rng) : cfg_(cfg) {
        cfg_.validate();
        encoder_ = GaussianHeadT<S>(cfg_.input_dim, cfg_.encoder_widths, cfg_.z1_dim, init_rng,
                                    cfg_.hidden_activation);
        if (cfg_.hierarchical()) {
            z2_encoder_ = GaussianHeadT<S>(cfg_.z1_dim, cfg_.z2_encoder_widths, cfg_.z2_dim,
                                           init_rng, cfg_.hidden_activation);
            // p(z1|z2) is one module shared by every branch: z2 is a common
            // latent space, so routing back to group-specific z1 regions is
            // its job, not the branches'.
            z1_decoder_ = GaussianHeadT<S>(cfg_.z2_dim, cfg_.z1_decoder_widths, cfg_.z1_dim,
                                           init_rng, cfg_.hidden_activation);
        }
        const std::uint32_t nb = cfg_.branch_count();
        for (std::uint32_t b = 0; b < nb; ++b) {
            Branch branch;
            const std::uint32_t extra = extra_layers_for(b);
            std::vector<std::size_t> img_widths;
            img_widths.push_back(cfg_.z1_dim);
            img_widths.insert(img_widths.end(), cfg_.image_decoder_widths.begin(),
                              cfg_.image_decoder_widths.end());
            for (std::uint32_t e = 0; e < extra; ++e) {
                img_widths.push_back(img_widths.back());
            }
            img_widths.push_back(cfg_.input_dim);
            const Activation final_act = cfg_.recon_mode == ReconMode::bernoulli
                                             ? Activation::sigmoid
                                             : Activation::identity;
            branch.image_decoder =
                MlpT<S>(img_widths, cfg_.hidden_activation, final_act, init_rng);
            branches_.push_back(std::move(branch));
        }
    }

    const ModelConfig& config() const { return cfg_; }

    ParamSetT<S> params() const {
        ParamSetT<S> out;
        encoder_.append_params("encoder.z1", out);
        if (cfg_.hierarchical()) {
            z2_encoder_.append_params("encoder.z2", out);
            z1_decoder_.append_params("decoder.z1", out);
        }
        for (std::uint32_t b = 0; b < branches_.size(); ++b) {
            branches_[b].image_decoder.append_params(branch_prefix(b) + ".img", out);
        }
        return out;
    }

    void set_params(const ParamSetT<S>& in) {
        encoder_.load_params("encoder.z1", in);
        if (cfg_.hierarchical()) {
            z2_encoder_.load_params("encoder.z2", in);
            z1_decoder_.load_params("decoder.z1", in);
        }
        for (std::uint32_t b = 0; b < branches_.size(); ++b) {
            branches_[b].image_decoder.load_params(branch_prefix(b) + ".img", in);
        }
    }

    ParamSetT<S> zero_grads() const {
        ParamSetT<S> out;
        for (const auto& e : params()) {
            out.add(e.name, TensorT<S>::zeros(e.tensor.shape()));
        }
        return out;
    }

    std::string branch_prefix(std::uint32_t b) const {
        if (!variant_has_branches(cfg_.kind)) return "decoder.shared";
        return "decoder.g" + std::to_string(b);
    }

    struct Step {
        VaeForwardT<S> out;
        TensorT<S> x;
        std::uint32_t group = 0;
        TensorT<S> eps_z1;
        TensorT<S> eps_z2;
        typename GaussianHeadT<S>::Cache enc_cache;
        typename GaussianHeadT<S>::Cache z2_enc_cache;
        typename GaussianHeadT<S>::Cache z1_dec_cache;
        typename MlpT<S>::Cache img_cache;
        typename MlpT<S>::Cache img_from_z2_cache;
    };

    // One training forward pass for a batch of flattened images. Loss terms
    // are batch means; the z1 KL uses the batch group's prior mean and is
    // disabled for the learnable strategy.
    Step forward_train(const TensorT<S>& x, std::uint32_t group, const NoiseFn& noise) const {
        if (group >= cfg_.groups) {
            throw UsageError("group index " + std::to_string(group) + " out of range (k=" +
                             std::to_string(cfg_.groups) + ")");
        }
        Step st;
        st.x = x;
        st.group = group;
        const std::size_t batch = x.rows();

        st.out.q_z1 = encoder_.forward(x, &st.enc_cache);
        st.out.z1 = reparameterize(st.out.q_z1, noise, &st.eps_z1);

        const Branch& branch = branches_[active_branch(group)];
        double kl1 = 0.0;
        if (cfg_.prior.has_means()) {
            const float* m = cfg_.prior.mean_of(group);
            for (std::size_t r = 0; r < batch; ++r) {
                kl1 += kl_to_prior(st.out.q_z1.mean.data() + r * cfg_.z1_dim,
                                   st.out.q_z1.log_var.data() + r * cfg_.z1_dim, cfg_.z1_dim, m);
            }
            kl1 /= static_cast<double>(batch);
        }

        if (!cfg_.hierarchical()) {
            st.out.x_recon = branch.image_decoder.forward(st.out.z1, &st.img_cache);
            const double recon =
                recon_loss(x, st.out.x_recon, cfg_.recon_mode, cfg_.gaussian_var);
            st.out.losses.recon = recon;
            st.out.losses.kl_z1 = kl1;
            st.out.losses.total = LossBreakdownT<S>::combine(recon, kl1, 0.0, 0.0, 0.0);
            check_finite(st.out.losses.total);
            return st;
        }

        st.out.q_z2 = z2_encoder_.forward(st.out.z1, &st.z2_enc_cache);
        st.out.z2 = reparameterize(st.out.q_z2, noise, &st.eps_z2);
        st.out.p_z1_given_z2 = z1_decoder_.forward(st.out.z2, &st.z1_dec_cache);
        st.out.z1_reconstructed = st.out.p_z1_given_z2.mean;

        st.out.x_recon = branch.image_decoder.forward(st.out.z1, &st.img_cache);
        st.out.x_recon_from_z2 =
            branch.image_decoder.forward(st.out.z1_reconstructed, &st.img_from_z2_cache);

        const double recon = recon_loss(x, st.out.x_recon, cfg_.recon_mode, cfg_.gaussian_var);
        const double recon2 =
            recon_loss(x, st.out.x_recon_from_z2, cfg_.recon_mode, cfg_.gaussian_var);

        double kl2 = 0.0;       // prior matching: KL(q(z2|z1) || N(0, I))
        double consist = 0.0;   // consistency: KL(q(z1|x) || p(z1|z2))
        for (std::size_t r = 0; r < batch; ++r) {
            kl2 += kl_to_prior(st.out.q_z2.mean.data() + r * cfg_.z2_dim,
                               st.out.q_z2.log_var.data() + r * cfg_.z2_dim, cfg_.z2_dim,
                               static_cast<const float*>(nullptr));
            consist += kl_diag_gaussians(st.out.q_z1.mean.data() + r * cfg_.z1_dim,
                                         st.out.q_z1.log_var.data() + r * cfg_.z1_dim,
                                         st.out.p_z1_given_z2.mean.data() + r * cfg_.z1_dim,
                                         st.out.p_z1_given_z2.log_var.data() + r * cfg_.z1_dim,
                                         cfg_.z1_dim);
        }
        kl2 /= static_cast<double>(batch);
        consist /= static_cast<double>(batch);

        st.out.losses.recon = recon;
        st.out.losses.kl_z1 = kl1;
        st.out.losses.kl_z2 = kl2;
        st.out.losses.consistency = consist;
        st.out.losses.recon_from_z2 = recon2;
        st.out.losses.total = LossBreakdownT<S>::combine(recon, kl1, kl2, consist, recon2);
        check_finite(st.out.losses.total);
        return st;
    }

    // Gradients of losses.total wrt every parameter. Inactive decoder
    // branches receive exact zeros so the result stays aggregation-
    // compatible with params().
    ParamSetT<S> backward_train(const Step& st) const {
        ParamSetT<S> grads = zero_grads();
        const std::size_t batch = st.x.rows();
        const double inv_b = 1.0 / static_cast<double>(batch);
        const Branch& branch = branches_[active_branch(st.group)];
        const std::string bp = branch_prefix(active_branch(st.group));

        // recon path: d(total)/d(x_recon) -> image decoder -> z1
        TensorT<S> d_xhat =
            recon_loss_grad(st.x, st.out.x_recon, cfg_.recon_mode, cfg_.gaussian_var);
        TensorT<S> d_z1 = branch.image_decoder.backward(st.img_cache, d_xhat, bp + ".img", grads);

        // z1 prior KL
        TensorT<S> d_mu1 = TensorT<S>::zeros(st.out.q_z1.mean.shape());
        TensorT<S> d_lv1 = TensorT<S>::zeros(st.out.q_z1.mean.shape());
        if (cfg_.prior.has_means()) {
            const float* m = cfg_.prior.mean_of(st.group);
            for (std::size_t r = 0; r < batch; ++r) {
                kl_to_prior_grad(st.out.q_z1.mean.data() + r * cfg_.z1_dim,
                                 st.out.q_z1.log_var.data() + r * cfg_.z1_dim, cfg_.z1_dim, m,
                                 inv_b, d_mu1.data() + r * cfg_.z1_dim,
                                 d_lv1.data() + r * cfg_.z1_dim);
            }
        }

        if (cfg_.hierarchical()) {
            // recon_from_z2 path: x_recon_from_z2 -> image decoder -> mean of p(z1|z2)
            TensorT<S> d_xhat2 = recon_loss_grad(st.x, st.out.x_recon_from_z2, cfg_.recon_mode,
                                                 cfg_.gaussian_var);
            TensorT<S> d_mu_p = branch.image_decoder.backward(st.img_from_z2_cache, d_xhat2,
                                                              bp + ".img", grads);
            TensorT<S> d_lv_p = TensorT<S>::zeros(d_mu_p.shape());

            // consistency term: KL(q(z1|x) || p(z1|z2))
            const bool into_q = cfg_.consistency_grad != ConsistencyGrad::stop_q;
            const bool into_p = cfg_.consistency_grad != ConsistencyGrad::stop_p;
            for (std::size_t r = 0; r < batch; ++r) {
                const std::size_t at = r * cfg_.z1_dim;
                kl_diag_gaussians_grad(st.out.q_z1.mean.data() + at,
                                       st.out.q_z1.log_var.data() + at,
                                       st.out.p_z1_given_z2.mean.data() + at,
                                       st.out.p_z1_given_z2.log_var.data() + at, cfg_.z1_dim,
                                       inv_b, into_q ? d_mu1.data() + at : nullptr,
                                       into_q ? d_lv1.data() + at : nullptr,
                                       into_p ? d_mu_p.data() + at : nullptr,
                                       into_p ? d_lv_p.data() + at : nullptr);
            }

            TensorT<S> d_z2 =
                z1_decoder_.backward(st.z1_dec_cache, d_mu_p, d_lv_p, "decoder.z1", grads);

            // z2 prior KL + reparameterization of z2
            TensorT<S> d_mu2 = TensorT<S>::zeros(st.out.q_z2.mean.shape());
            TensorT<S> d_lv2 = TensorT<S>::zeros(st.out.q_z2.mean.shape());
            for (std::size_t r = 0; r < batch; ++r) {
                const std::size_t at = r * cfg_.z2_dim;
                kl_to_prior_grad(st.out.q_z2.mean.data() + at,
                                 st.out.q_z2.log_var.data() + at, cfg_.z2_dim,
                                 static_cast<const float*>(nullptr), inv_b,
                                 d_mu2.data() + at, d_lv2.data() + at);
            }
            for (std::size_t idx = 0; idx < d_mu2.numel(); ++idx) {
                d_mu2[idx] += d_z2[idx];
                d_lv2[idx] += static_cast<S>(static_cast<double>(d_z2[idx]) * 0.5 *
                                             (static_cast<double>(st.out.z2[idx]) -
                                              static_cast<double>(st.out.q_z2.mean[idx])));
            }
            TensorT<S> d_z1_from_z2enc =
                z2_encoder_.backward(st.z2_enc_cache, d_mu2, d_lv2, "encoder.z2", grads);
            for (std::size_t i = 0; i < d_z1.numel(); ++i) d_z1[i] += d_z1_from_z2enc[i];
        }

        // reparameterization of z1
        for (std::size_t idx = 0; idx < d_mu1.numel(); ++idx) {
            d_mu1[idx] += d_z1[idx];
            d_lv1[idx] += static_cast<S>(static_cast<double>(d_z1[idx]) * 0.5 *
                                         (static_cast<double>(st.out.z1[idx]) -
                                          static_cast<double>(st.out.q_z1.mean[idx])));
        }
        encoder_.backward(st.enc_cache, d_mu1, d_lv1, "encoder.z1", grads);

        for (const auto& e : grads) e.tensor.require_finite("gradient " + e.name);
        return grads;
    }

    // q(z1|x) means/log-vars without sampling; used by metrics.
    GaussianBatchT<S> encode(const TensorT<S>& x) const { return encoder_.forward(x, nullptr); }

    std::vector<Pathway> valid_pathways() const {
        if (!cfg_.hierarchical()) return {Pathway::from_z1_direct};
        if (!cfg_.prior.has_means()) return {Pathway::from_z2};
        return {Pathway::from_z2, Pathway::from_z1_via_encoder, Pathway::from_z1_direct};
    }

    // Images in [0,1], one row per sample. swap_map (optional) permutes the
    // group -> prior assignment; the decoder branch always follows `group`.
    TensorT<S> generate(std::uint32_t group, Pathway pathway, std::size_t n, RngStream& rng,
                        const std::vector<std::uint32_t>* swap_map = nullptr) const {
        if (group >= cfg_.groups) {
            throw UsageError("group index " + std::to_string(group) + " out of range (k=" +
                             std::to_string(cfg_.groups) + ")");
        }
        const auto valid = valid_pathways();
        if (std::find(valid.begin(), valid.end(), pathway) == valid.end()) {
            std::string names;
            for (const Pathway p : valid) {
                if (!names.empty()) names += ", ";
                names += pathway_name(p);
            }
            throw UsageError("pathway " + pathway_name(pathway) + " not available for variant " +
                             variant_name(cfg_.kind) + " (valid: " + names + ")");
        }
        if (n == 0) return TensorT<S>();

        const std::uint32_t prior_group =
            swap_map != nullptr ? swap_map->at(group) : group;
        const Branch& branch = branches_[active_branch(group)];
        NoiseFn noise = noise_from(rng);

        TensorT<S> z1;
        if (pathway == Pathway::from_z1_direct || pathway == Pathway::from_z1_via_encoder) {
            Tensor drawn = sample_prior(cfg_.prior, prior_group, n, rng);
            z1 = drawn.template cast<S>();
        }
        if (pathway == Pathway::from_z1_via_encoder) {
            GaussianBatchT<S> q2 = z2_encoder_.forward(z1, nullptr);
            TensorT<S> z2 = reparameterize(q2, noise);
            z1 = reparameterize(z1_decoder_.forward(z2, nullptr), noise);
        } else if (pathway == Pathway::from_z2) {
            TensorT<S> z2 = TensorT<S>::zeros({n, cfg_.z2_dim});
            for (std::size_t i = 0; i < z2.numel(); ++i) z2[i] = static_cast<S>(rng.normal());
            z1 = reparameterize(z1_decoder_.forward(z2, nullptr), noise);
        }
        TensorT<S> img = branch.image_decoder.forward(z1, nullptr);
        if (cfg_.recon_mode == ReconMode::gaussian_fixed_var) {
            for (std::size_t i = 0; i < img.numel(); ++i) {
                img[i] = std::min(S(1), std::max(S(0), img[i]));
            }
        }
        return img;
    }

private:
    struct Branch {
        MlpT<S> image_decoder;
    };

    std::uint32_t active_branch(std::uint32_t group) const {
        return variant_has_branches(cfg_.kind) ? group : 0;
    }

    std::uint32_t extra_layers_for(std::uint32_t branch) const {
        auto it = cfg_.extra_branch_layers.find(branch);
        return it == cfg_.extra_branch_layers.end() ? 0 : it->second;
    }

    static void check_finite(double total) {
        if (!std::isfinite(total)) throw NumericError("non-finite training loss");
    }

    ModelConfig cfg_;
    GaussianHeadT<S> encoder_;
    GaussianHeadT<S> z2_encoder_;
    GaussianHeadT<S> z1_decoder_;  // hierarchical only, shared across branches
    std::vector<Branch> branches_;
};

using VaeModel = VaeModelT<float>;
using VaeModel64 = VaeModelT<double>;

}  // namespace fvae
