#include "fvae/gradcheck.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>

#include "fvae/model.hpp"
#include "fvae/nn.hpp"
#include "fvae/priors.hpp"
#include "fvae/rng.hpp"

namespace fvae {

namespace {

constexpr double kStep = 1e-5;

std::string corrupt_target() {
    const char* env = std::getenv("FVAE_GRADCHECK_CORRUPT");
    return env != nullptr ? std::string(env) : std::string();
}

double rel_err(double fd, double an) {
    const double diff = std::fabs(fd - an);
    if (diff < 1e-10) return 0.0;
    return diff / std::max({std::fabs(fd), std::fabs(an), 1e-2});
}

struct Recorder {
    GradCheckRow* row;
    double fudge = 0.0;  // injected once, on the first comparison

    void compare(double fd, double an) {
        const double e = rel_err(fd, an + fudge);
        fudge = 0.0;
        if (e > row->max_rel_err) row->max_rel_err = e;
        ++row->checks;
    }
};

// ---- dense layer / MLP rows -------------------------------------------

// Scalar objective: sum of c .* output, so d(obj)/d(output) = c.
void check_dense(Recorder& rec, Activation act, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x646eULL, static_cast<std::uint64_t>(act));
    const std::size_t in = 5, out = 4, batch = 3;
    DenseLayerT<double> layer(in, out, act, rng);
    // keep ReLU preactivations away from the kink so the FD step cannot
    // cross it
    Tensor64 x = Tensor64::zeros({batch, in});
    typename DenseLayerT<double>::Cache cache;
    Tensor64 y;
    for (int attempt = 0; attempt < 100; ++attempt) {
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
        y = layer.forward(x, &cache);
        if (act != Activation::relu) break;
        bool safe = true;
        for (std::size_t r = 0; r < batch && safe; ++r) {
            for (std::size_t o = 0; o < out && safe; ++o) {
                double pre = layer.bias[o];
                for (std::size_t i = 0; i < in; ++i) pre += layer.weight.at(o, i) * x.at(r, i);
                if (std::fabs(pre) < 1e-3) safe = false;
            }
        }
        if (safe) break;
    }
    Tensor64 c = Tensor64::zeros(y.shape());
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] = rng.normal();

    Tensor64 gw, gb;
    Tensor64 gx = layer.backward(cache, c, gw, gb);

    auto objective = [&](const DenseLayerT<double>& l, const Tensor64& input) {
        Tensor64 o = l.forward(input, nullptr);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.numel(); ++i) acc += c[i] * o[i];
        return acc;
    };

    RngStream pick = RngStream::derive(seed, 0x7069636bULL);
    for (int rep = 0; rep < 4; ++rep) {
        {
            const std::size_t i = pick.uniform_index(layer.weight.numel());
            DenseLayerT<double> lp = layer, lm = layer;
            lp.weight[i] += kStep;
            lm.weight[i] -= kStep;
            rec.compare((objective(lp, x) - objective(lm, x)) / (2 * kStep), gw[i]);
        }
        {
            const std::size_t i = pick.uniform_index(layer.bias.numel());
            DenseLayerT<double> lp = layer, lm = layer;
            lp.bias[i] += kStep;
            lm.bias[i] -= kStep;
            rec.compare((objective(lp, x) - objective(lm, x)) / (2 * kStep), gb[i]);
        }
        {
            const std::size_t i = pick.uniform_index(x.numel());
            Tensor64 xp = x, xm = x;
            xp[i] += kStep;
            xm[i] -= kStep;
            rec.compare((objective(layer, xp) - objective(layer, xm)) / (2 * kStep), gx[i]);
        }
    }
}

void check_mlp(Recorder& rec, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x6d6c70ULL);  // "mlp"
    MlpT<double> mlp({5, 7, 6, 4}, Activation::tanh, Activation::identity, rng);
    Tensor64 x = Tensor64::zeros({2, 5});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    typename MlpT<double>::Cache cache;
    Tensor64 y = mlp.forward(x, &cache);
    Tensor64 c = Tensor64::zeros(y.shape());
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] = rng.normal();

    ParamSetT<double> grads;
    Tensor64 gx = mlp.backward(cache, c, "net", grads);
    ParamSetT<double> params;
    mlp.append_params("net", params);

    auto objective = [&](const ParamSetT<double>& ps, const Tensor64& input) {
        MlpT<double> m2 = mlp;
        m2.load_params("net", ps);
        Tensor64 o = m2.forward(input, nullptr);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.numel(); ++i) acc += c[i] * o[i];
        return acc;
    };

    RngStream pick = RngStream::derive(seed, 0x7069636bULL, 1);
    for (const auto& e : params) {
        const std::size_t i = pick.uniform_index(e.tensor.numel());
        ParamSetT<double> pp = params, pm = params;
        pp.tensor(e.name)[i] += kStep;
        pm.tensor(e.name)[i] -= kStep;
        rec.compare((objective(pp, x) - objective(pm, x)) / (2 * kStep), grads.tensor(e.name)[i]);
    }
    const std::size_t i = pick.uniform_index(x.numel());
    Tensor64 xp = x, xm = x;
    xp[i] += kStep;
    xm[i] -= kStep;
    rec.compare((objective(params, xp) - objective(params, xm)) / (2 * kStep), gx[i]);
}

// ---- standalone loss helpers ------------------------------------------

void check_recon(Recorder& rec, ReconMode mode, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x7265ULL, static_cast<std::uint64_t>(mode));
    Tensor64 x = Tensor64::zeros({2, 6});
    Tensor64 out = Tensor64::zeros({2, 6});
    for (std::size_t i = 0; i < x.numel(); ++i) {
        x[i] = rng.uniform();
        out[i] = mode == ReconMode::bernoulli ? 0.05 + 0.9 * rng.uniform() : rng.normal();
    }
    const Tensor64 g = recon_loss_grad(x, out, mode, 0.1);
    RngStream pick = RngStream::derive(seed, 0x7069636bULL, 2);
    for (int rep = 0; rep < 6; ++rep) {
        const std::size_t i = pick.uniform_index(out.numel());
        Tensor64 op = out, om = out;
        op[i] += kStep;
        om[i] -= kStep;
        const double fd =
            (recon_loss(x, op, mode, 0.1) - recon_loss(x, om, mode, 0.1)) / (2 * kStep);
        rec.compare(fd, g[i]);
    }
}

void check_kl_prior(Recorder& rec, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x6b6c31ULL);  // "kl1"
    const std::size_t dim = 6;
    std::vector<double> mu(dim), lv(dim), m(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        mu[i] = rng.normal();
        lv[i] = rng.normal() * 0.5;
        m[i] = rng.normal();
    }
    std::vector<double> dmu(dim, 0.0), dlv(dim, 0.0);
    kl_to_prior_grad(mu.data(), lv.data(), dim, m.data(), 1.0, dmu.data(), dlv.data());
    for (std::size_t i = 0; i < dim; ++i) {
        std::vector<double> p = mu, q = mu;
        p[i] += kStep;
        q[i] -= kStep;
        const double fd = (kl_to_prior(p.data(), lv.data(), dim, m.data()) -
                           kl_to_prior(q.data(), lv.data(), dim, m.data())) /
                          (2 * kStep);
        rec.compare(fd, dmu[i]);
        std::vector<double> lp = lv, lm = lv;
        lp[i] += kStep;
        lm[i] -= kStep;
        const double fd2 = (kl_to_prior(mu.data(), lp.data(), dim, m.data()) -
                            kl_to_prior(mu.data(), lm.data(), dim, m.data())) /
                           (2 * kStep);
        rec.compare(fd2, dlv[i]);
    }
}

void check_kl_pair(Recorder& rec, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x6b6c32ULL);  // "kl2"
    const std::size_t dim = 5;
    std::vector<double> mq(dim), lq(dim), mp(dim), lp(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        mq[i] = rng.normal();
        lq[i] = rng.normal() * 0.5;
        mp[i] = rng.normal();
        lp[i] = rng.normal() * 0.5;
    }
    std::vector<double> dmq(dim, 0.0), dlq(dim, 0.0), dmp(dim, 0.0), dlp(dim, 0.0);
    kl_diag_gaussians_grad(mq.data(), lq.data(), mp.data(), lp.data(), dim, 1.0, dmq.data(),
                           dlq.data(), dmp.data(), dlp.data());
    auto value = [&](const std::vector<double>& a, const std::vector<double>& b,
                     const std::vector<double>& c, const std::vector<double>& d) {
        return kl_diag_gaussians(a.data(), b.data(), c.data(), d.data(), dim);
    };
    for (std::size_t i = 0; i < dim; ++i) {
        auto fd_of = [&](std::vector<double>& target) {
            target[i] += kStep;
            const double hi = value(mq, lq, mp, lp);
            target[i] -= 2 * kStep;
            const double lo = value(mq, lq, mp, lp);
            target[i] += kStep;
            return (hi - lo) / (2 * kStep);
        };
        rec.compare(fd_of(mq), dmq[i]);
        rec.compare(fd_of(lq), dlq[i]);
        rec.compare(fd_of(mp), dmp[i]);
        rec.compare(fd_of(lp), dlp[i]);
    }
}

void check_reparam(Recorder& rec, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x7270ULL);  // "rp"
    const std::size_t dim = 6;
    GaussianBatchT<double> q;
    q.mean = Tensor64::zeros({1, dim});
    q.log_var = Tensor64::zeros({1, dim});
    std::vector<double> eps(dim), c(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        q.mean[i] = rng.normal();
        q.log_var[i] = rng.normal() * 0.5;
        eps[i] = rng.normal();
        c[i] = rng.normal();
    }
    auto objective = [&](const GaussianBatchT<double>& g) {
        std::size_t at = 0;
        NoiseFn noise = [&]() { return eps[at++]; };
        Tensor64 z = reparameterize(g, noise);
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) acc += c[i] * z[i];
        return acc;
    };
    std::size_t at = 0;
    NoiseFn noise = [&]() { return eps[at++]; };
    Tensor64 z = reparameterize(q, noise);
    for (std::size_t i = 0; i < dim; ++i) {
        // d z_i / d mu_i = 1; d z_i / d lv_i = (z_i - mu_i) / 2
        const double an_mu = c[i];
        const double an_lv = c[i] * 0.5 * (z[i] - q.mean[i]);
        GaussianBatchT<double> gp = q, gm = q;
        gp.mean[i] += kStep;
        gm.mean[i] -= kStep;
        rec.compare((objective(gp) - objective(gm)) / (2 * kStep), an_mu);
        gp = q;
        gm = q;
        gp.log_var[i] += kStep;
        gm.log_var[i] -= kStep;
        rec.compare((objective(gp) - objective(gm)) / (2 * kStep), an_lv);
    }
}

// ---- end-to-end variant rows ------------------------------------------

ModelConfig tiny_config(VariantKind kind, ReconMode recon) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.groups = 2;
    cfg.input_dim = 8;
    cfg.z1_dim = 4;
    cfg.z2_dim = 3;
    cfg.encoder_widths = {6};
    cfg.z2_encoder_widths = {5};
    cfg.z1_decoder_widths = {5};
    cfg.image_decoder_widths = {6};
    cfg.recon_mode = recon;
    // smooth activations keep central differences clean; ReLU has its own
    // kink-aware row
    cfg.hidden_activation = Activation::tanh;
    const bool shared = kind == VariantKind::fedvae || kind == VariantKind::fission_d;
    cfg.prior = make_prior_means(shared ? PriorStrategy::identical : PriorStrategy::symmetrical,
                                 cfg.groups, cfg.z1_dim, 7);
    return cfg;
}

void check_variant(Recorder& rec, VariantKind kind, std::uint64_t seed) {
    const ReconMode recon =
        seed % 2 == 0 ? ReconMode::bernoulli : ReconMode::gaussian_fixed_var;
    const ModelConfig cfg = tiny_config(kind, recon);
    VaeModel64 model(cfg, RngStream::derive(seed, 0x766172ULL));  // "var"

    RngStream data_rng = RngStream::derive(seed, 0x64617461ULL);
    Tensor64 x = Tensor64::zeros({2, cfg.input_dim});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = data_rng.uniform();
    const std::uint32_t group = static_cast<std::uint32_t>(seed % cfg.groups);

    std::vector<double> tape;
    RngStream noise_rng = RngStream::derive(seed, 0x6e6f6973ULL);  // "nois"
    for (std::size_t i = 0; i < 2 * (cfg.z1_dim + cfg.z2_dim); ++i) {
        tape.push_back(noise_rng.normal());
    }
    const auto replay = [&tape]() {
        std::size_t at = 0;
        return [&tape, at]() mutable { return tape.at(at++); };
    };

    ParamSetT<double> params = model.params();
    auto step = model.forward_train(x, group, replay());
    ParamSetT<double> grads = model.backward_train(step);

    auto eval = [&](const ParamSetT<double>& ps) {
        VaeModel64 m2(cfg, RngStream(1));
        m2.set_params(ps);
        return m2.forward_train(x, group, replay()).out.losses.total;
    };

    RngStream pick = RngStream::derive(seed, 0x7069636bULL, 3);
    for (const auto& e : params) {
        const std::size_t i = pick.uniform_index(e.tensor.numel());
        ParamSetT<double> pp = params, pm = params;
        pp.tensor(e.name)[i] += kStep;
        pm.tensor(e.name)[i] -= kStep;
        rec.compare((eval(pp) - eval(pm)) / (2 * kStep), grads.tensor(e.name)[i]);
    }
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck(std::uint32_t seeds, double tolerance,
                                        std::uint64_t base_seed) {
    const std::string corrupt = corrupt_target();
    std::vector<GradCheckRow> rows;
    auto run = [&](const std::string& name, const std::function<void(Recorder&, std::uint64_t)>& fn) {
        GradCheckRow row;
        row.component = name;
        row.tolerance = tolerance;
        Recorder rec{&row, 0.0};
        if (corrupt == name) rec.fudge = 1e-2;
        for (std::uint32_t s = 0; s < seeds; ++s) {
            fn(rec, mix_seed(base_seed, fnv1a64(name), s));
        }
        rows.push_back(std::move(row));
    };

    run("dense_identity",
        [](Recorder& r, std::uint64_t s) { check_dense(r, Activation::identity, s); });
    run("dense_relu", [](Recorder& r, std::uint64_t s) { check_dense(r, Activation::relu, s); });
    run("dense_tanh", [](Recorder& r, std::uint64_t s) { check_dense(r, Activation::tanh, s); });
    run("dense_sigmoid",
        [](Recorder& r, std::uint64_t s) { check_dense(r, Activation::sigmoid, s); });
    run("mlp_stack", [](Recorder& r, std::uint64_t s) { check_mlp(r, s); });
    run("recon_bernoulli",
        [](Recorder& r, std::uint64_t s) { check_recon(r, ReconMode::bernoulli, s); });
    run("recon_gaussian",
        [](Recorder& r, std::uint64_t s) { check_recon(r, ReconMode::gaussian_fixed_var, s); });
    run("kl_prior", [](Recorder& r, std::uint64_t s) { check_kl_prior(r, s); });
    run("kl_gaussian_pair", [](Recorder& r, std::uint64_t s) { check_kl_pair(r, s); });
    run("reparam", [](Recorder& r, std::uint64_t s) { check_reparam(r, s); });
    for (const VariantKind kind :
         {VariantKind::fedvae, VariantKind::fission_l, VariantKind::fission_d,
          VariantKind::fission_ld, VariantKind::fission_hld}) {
        run("loss_" + variant_name(kind),
            [kind](Recorder& r, std::uint64_t s) { check_variant(r, kind, s); });
    }
    return rows;
}

}  // namespace fvae
