#include <doctest.h>

#include <cmath>
#include <vector>

#include "fvae/model.hpp"
#include "fvae/priors.hpp"
#include "fvae/rng.hpp"

using namespace fvae;

namespace {

ModelConfig tiny_config(VariantKind kind, PriorStrategy prior = PriorStrategy::identical) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.groups = 2;
    cfg.input_dim = 6;
    cfg.z1_dim = 3;
    cfg.encoder_widths = {4};
    cfg.image_decoder_widths = {4};
    cfg.hidden_activation = Activation::tanh;
    if (variant_is_hierarchical(kind)) {
        cfg.z2_dim = 2;
        cfg.z2_encoder_widths = {4};
        cfg.z1_decoder_widths = {4};
    }
    cfg.prior = make_prior_means(prior, cfg.groups, cfg.z1_dim, 7);
    return cfg;
}

Tensor64 random_batch(std::size_t rows, std::size_t cols, RngStream& rng) {
    Tensor64 x = Tensor64::zeros({rows, cols});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = 0.05 + 0.9 * rng.uniform();
    return x;
}

double bce(double x, double p) {
    p = std::min(1.0 - kBernoulliEps, std::max(kBernoulliEps, p));
    return -(x * std::log(p) + (1.0 - x) * std::log(1.0 - p));
}

// Row-major dense apply: y = act(x W^T + b) recomputed with plain loops.
std::vector<double> dense_apply(const std::vector<double>& x, const Tensor64& w,
                                const Tensor64& b, Activation act) {
    const std::size_t out = w.rows();
    const std::size_t in = w.cols();
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += w.at(o, i) * x[i];
        y[o] = apply_activation(act, acc);
    }
    return y;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("variant and pathway names round-trip") {
    for (VariantKind k : {VariantKind::fedvae, VariantKind::fission_l, VariantKind::fission_d,
                          VariantKind::fission_ld, VariantKind::fission_hld}) {
        CHECK(variant_from_name(variant_name(k)) == k);
    }
    for (Pathway p :
         {Pathway::from_z2, Pathway::from_z1_via_encoder, Pathway::from_z1_direct}) {
        CHECK(pathway_from_name(pathway_name(p)) == p);
    }
    CHECK_THROWS_AS(variant_from_name("fissionvae"), ConfigError);
    CHECK_THROWS_AS(pathway_from_name("from_nowhere"), ConfigError);
}

TEST_CASE("config validation rejects inconsistent setups") {
    CHECK_THROWS_AS(tiny_config(VariantKind::fedvae, PriorStrategy::one_hot).validate(),
                    ConfigError);
    CHECK_THROWS_AS(tiny_config(VariantKind::fission_d, PriorStrategy::wave).validate(),
                    ConfigError);
    CHECK_THROWS_AS(tiny_config(VariantKind::fission_ld, PriorStrategy::learnable).validate(),
                    ConfigError);
    {
        ModelConfig cfg = tiny_config(VariantKind::fission_hld, PriorStrategy::one_hot);
        cfg.z2_dim = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    {
        ModelConfig cfg = tiny_config(VariantKind::fedvae);
        cfg.extra_branch_layers[0] = 1;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    {
        ModelConfig cfg = tiny_config(VariantKind::fission_ld, PriorStrategy::wave);
        cfg.extra_branch_layers[5] = 1;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    CHECK_NOTHROW(tiny_config(VariantKind::fission_hld, PriorStrategy::learnable).validate());
}

TEST_CASE("reparameterize applies mean plus sigma times pinned noise") {
    GaussianBatchT<double> q;
    q.mean = Tensor64({2, 2}, {0.5, -1.0, 2.0, 0.0});
    q.log_var = Tensor64({2, 2}, {0.0, 2.0, -2.0, 0.5});
    const std::vector<double> tape = {1.0, -1.0, 0.5, 2.0};
    std::size_t pos = 0;
    Tensor64 eps;
    Tensor64 z = reparameterize<double>(q, [&]() { return tape[pos++]; }, &eps);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(eps[i] == tape[i]);
        CHECK(z[i] == doctest::Approx(q.mean[i] + std::exp(q.log_var[i] / 2.0) * tape[i])
                          .epsilon(1e-12));
    }
}

TEST_CASE("reparameterized draws reproduce the target moments") {
    GaussianBatchT<double> q;
    const std::size_t n = 60000;
    q.mean = Tensor64::full({n, 1}, 0.7);
    q.log_var = Tensor64::full({n, 1}, std::log(2.25));
    RngStream rng(99);
    Tensor64 z = reparameterize<double>(q, noise_from(rng));
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s1 += z[i];
        s2 += z[i] * z[i];
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::fabs(mean - 0.7) <= 0.03);
    CHECK(std::fabs(var - 2.25) <= 0.08);
}

TEST_CASE("reconstruction loss hand values") {
    SUBCASE("bernoulli at p=0.5 costs ln 2 per pixel") {
        Tensor64 x({1, 4}, {0.0, 1.0, 0.3, 0.8});
        Tensor64 p = Tensor64::full({1, 4}, 0.5);
        CHECK(recon_loss(x, p, ReconMode::bernoulli) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("gaussian at a perfect fit leaves only the normalizer") {
        Tensor64 x({1, 3}, {0.2, 0.5, 0.9});
        const double var = 0.1;
        const double want = 3.0 * 0.5 * std::log(2.0 * 3.14159265358979323846 * var);
        CHECK(recon_loss(x, x, ReconMode::gaussian_fixed_var, var) ==
              doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("gaussian error accumulates over pixels, averages over rows") {
        Tensor64 x({2, 2}, {0.2, 0.4, 0.6, 0.8});
        Tensor64 p = Tensor64::full({2, 2}, 0.5);
        const double var = 0.1;
        const double sq = 0.09 + 0.01 + 0.01 + 0.09;
        const double want = 0.5 * sq / var / 2.0 +
                            2.0 * 0.5 * std::log(2.0 * 3.14159265358979323846 * var);
        CHECK(recon_loss(x, p, ReconMode::gaussian_fixed_var, var) ==
              doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("out-of-range pixels are a data error") {
        Tensor64 x({1, 2}, {0.5, 1.5});
        Tensor64 p = Tensor64::full({1, 2}, 0.5);
        CHECK_THROWS_AS(recon_loss(x, p, ReconMode::bernoulli), DataError);
    }
    SUBCASE("shape mismatch is a usage error") {
        Tensor64 x({1, 2}, {0.5, 0.5});
        Tensor64 p = Tensor64::full({1, 3}, 0.5);
        CHECK_THROWS_AS(recon_loss(x, p, ReconMode::bernoulli), UsageError);
    }
}

TEST_CASE("log-variance heads clamp extreme raw outputs") {
    RngStream rng(3);
    GaussianHeadT<double> head(3, {}, 2, rng);
    for (std::size_t i = 0; i < head.log_var.weight.numel(); ++i) head.log_var.weight[i] = 0.0;
    head.log_var.bias = Tensor64({2}, {50.0, -50.0});
    Tensor64 x = Tensor64::full({1, 3}, 0.4);
    GaussianBatchT<double> q = head.forward(x, nullptr);
    CHECK(q.log_var[0] == kLogVarClamp);
    CHECK(q.log_var[1] == -kLogVarClamp);
}

TEST_CASE("flat variant losses match a from-scratch recomputation") {
    ModelConfig cfg = tiny_config(VariantKind::fission_l, PriorStrategy::one_hot);
    cfg.z1_dim = 3;
    cfg.prior = make_prior_means(PriorStrategy::one_hot, 2, 4);
    cfg.z1_dim = 4;
    VaeModel64 model(cfg, RngStream(501));
    RngStream data_rng(88);
    Tensor64 x = random_batch(2, cfg.input_dim, data_rng);
    RngStream noise_rng(44);
    const std::uint32_t group = 1;
    auto st = model.forward_train(x, group, noise_from(noise_rng));

    ParamSet64 ps = model.params();
    const Tensor64& w0 = ps.tensor("encoder.z1.trunk.0.weight");
    const Tensor64& b0 = ps.tensor("encoder.z1.trunk.0.bias");
    const Tensor64& wmu = ps.tensor("encoder.z1.mu.weight");
    const Tensor64& bmu = ps.tensor("encoder.z1.mu.bias");
    const Tensor64& wlv = ps.tensor("encoder.z1.logvar.weight");
    const Tensor64& blv = ps.tensor("encoder.z1.logvar.bias");
    const Tensor64& wd0 = ps.tensor("decoder.shared.img.0.weight");
    const Tensor64& bd0 = ps.tensor("decoder.shared.img.0.bias");
    const Tensor64& wd1 = ps.tensor("decoder.shared.img.1.weight");
    const Tensor64& bd1 = ps.tensor("decoder.shared.img.1.bias");

    const std::vector<double> prior_mean = cfg.prior.mean_vector(group);
    double recon_acc = 0.0, kl_acc = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
        std::vector<double> xr(x.data() + r * cfg.input_dim, x.data() + (r + 1) * cfg.input_dim);
        const std::vector<double> h = dense_apply(xr, w0, b0, Activation::tanh);
        const std::vector<double> mu = dense_apply(h, wmu, bmu, Activation::identity);
        std::vector<double> lv = dense_apply(h, wlv, blv, Activation::identity);
        for (double& v : lv) v = std::min(kLogVarClamp, std::max(-kLogVarClamp, v));
        std::vector<double> z(cfg.z1_dim);
        for (std::size_t i = 0; i < cfg.z1_dim; ++i) {
            z[i] = mu[i] + std::exp(lv[i] / 2.0) * st.eps_z1.at(r, i);
        }
        const std::vector<double> d0 = dense_apply(z, wd0, bd0, Activation::tanh);
        const std::vector<double> xhat = dense_apply(d0, wd1, bd1, Activation::sigmoid);
        for (std::size_t i = 0; i < cfg.input_dim; ++i) recon_acc += bce(xr[i], xhat[i]);
        kl_acc += kl_to_prior(mu.data(), lv.data(), cfg.z1_dim, prior_mean.data());
    }
    const double recon = recon_acc / (2.0 * cfg.input_dim);
    const double kl = kl_acc / 2.0;
    CHECK(st.out.losses.recon == doctest::Approx(recon).epsilon(1e-9));
    CHECK(st.out.losses.kl_z1 == doctest::Approx(kl).epsilon(1e-9));
    CHECK(st.out.losses.total == doctest::Approx(recon + kl).epsilon(1e-9));
    CHECK(st.out.losses.kl_z2 == 0.0);
    CHECK(st.out.losses.consistency == 0.0);
    CHECK(st.out.losses.recon_from_z2 == 0.0);
}

TEST_CASE("prior decoupling changes only the z1 KL term") {
    ModelConfig base = tiny_config(VariantKind::fedvae);
    ModelConfig decoupled = tiny_config(VariantKind::fission_l, PriorStrategy::one_hot);
    decoupled.prior = make_prior_means(PriorStrategy::one_hot, 2, decoupled.z1_dim + 1);
    decoupled.z1_dim += 1;
    base.z1_dim = decoupled.z1_dim;
    base.prior = make_prior_means(PriorStrategy::identical, 2, base.z1_dim);

    VaeModel64 m_base(base, RngStream(7001));
    VaeModel64 m_dec(decoupled, RngStream(7001));
    CHECK(m_base.params().bitwise_equal(m_dec.params()));

    RngStream data_rng(31);
    Tensor64 x = random_batch(3, base.input_dim, data_rng);
    RngStream n1(5), n2(5);
    auto s_base = m_base.forward_train(x, 0, noise_from(n1));
    auto s_dec = m_dec.forward_train(x, 0, noise_from(n2));
    CHECK(s_base.out.losses.recon == doctest::Approx(s_dec.out.losses.recon).epsilon(1e-12));
    CHECK(s_base.out.losses.kl_z1 != s_dec.out.losses.kl_z1);

    // The shift is exactly the cross term between posterior means and the
    // decoupled prior mean: KL difference = 0.5*sum(m^2 - 2 mu m).
    const std::vector<double> m = decoupled.prior.mean_vector(0);
    double want_delta = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t i = 0; i < base.z1_dim; ++i) {
            const double mu = s_dec.out.q_z1.mean.at(r, i);
            want_delta += 0.5 * (m[i] * m[i] - 2.0 * mu * m[i]);
        }
    }
    want_delta /= 3.0;
    CHECK(s_dec.out.losses.kl_z1 - s_base.out.losses.kl_z1 ==
          doctest::Approx(want_delta).epsilon(1e-9));
}

TEST_CASE("hierarchical loss terms match independent per-row recomputation") {
    ModelConfig cfg = tiny_config(VariantKind::fission_hld, PriorStrategy::wave);
    cfg.prior = make_prior_means(PriorStrategy::wave, 2, cfg.z1_dim);
    VaeModel64 model(cfg, RngStream(902));
    RngStream data_rng(12);
    Tensor64 x = random_batch(3, cfg.input_dim, data_rng);
    RngStream noise_rng(77);
    auto st = model.forward_train(x, 1, noise_from(noise_rng));
    const auto& out = st.out;

    const std::vector<double> prior_mean = cfg.prior.mean_vector(1);
    double kl1 = 0.0, kl2 = 0.0, cons = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
        auto q1 = out.q_z1.row(r);
        auto q2 = out.q_z2.row(r);
        auto p1 = out.p_z1_given_z2.row(r);
        kl1 += kl_to_prior(q1.mean.data(), q1.log_var.data(), cfg.z1_dim, prior_mean.data());
        kl2 += kl_to_prior<double, double>(q2.mean.data(), q2.log_var.data(), cfg.z2_dim,
                                           nullptr);
        cons += kl_diag_gaussians(q1.mean.data(), q1.log_var.data(), p1.mean.data(),
                                  p1.log_var.data(), cfg.z1_dim);
    }
    kl1 /= 3.0;
    kl2 /= 3.0;
    cons /= 3.0;
    const double recon = recon_loss(x, out.x_recon, ReconMode::bernoulli);
    const double recon2 = recon_loss(x, out.x_recon_from_z2, ReconMode::bernoulli);

    CHECK(out.losses.recon == doctest::Approx(recon).epsilon(1e-9));
    CHECK(out.losses.kl_z1 == doctest::Approx(kl1).epsilon(1e-9));
    CHECK(out.losses.kl_z2 == doctest::Approx(kl2).epsilon(1e-9));
    CHECK(out.losses.consistency == doctest::Approx(cons).epsilon(1e-9));
    CHECK(out.losses.recon_from_z2 == doctest::Approx(recon2).epsilon(1e-9));
    CHECK(out.losses.total ==
          LossBreakdownT<double>::combine(out.losses.recon, out.losses.kl_z1, out.losses.kl_z2,
                                          out.losses.consistency, out.losses.recon_from_z2));
}

TEST_CASE("learnable prior disables the z1 KL term") {
    ModelConfig cfg = tiny_config(VariantKind::fission_hld, PriorStrategy::learnable);
    VaeModel64 model(cfg, RngStream(15));
    RngStream data_rng(16);
    Tensor64 x = random_batch(2, cfg.input_dim, data_rng);
    RngStream noise_rng(17);
    auto st = model.forward_train(x, 0, noise_from(noise_rng));
    CHECK(st.out.losses.kl_z1 == 0.0);
    CHECK(st.out.losses.kl_z2 > 0.0);
}

TEST_CASE("training a group leaves other branches' gradients exactly zero") {
    ModelConfig cfg = tiny_config(VariantKind::fission_hld, PriorStrategy::one_hot);
    VaeModel64 model(cfg, RngStream(61));
    RngStream data_rng(62);
    Tensor64 x = random_batch(2, cfg.input_dim, data_rng);
    RngStream noise_rng(63);
    auto st = model.forward_train(x, 0, noise_from(noise_rng));
    ParamSet64 grads = model.backward_train(st);
    grads.require_compatible(model.params(), "test");

    double active_mag = 0.0, encoder_mag = 0.0;
    for (const auto& e : grads) {
        if (e.name.rfind("decoder.g1.", 0) == 0) {
            for (std::size_t i = 0; i < e.tensor.numel(); ++i) CHECK(e.tensor[i] == 0.0);
        } else if (e.name.rfind("decoder.g0.", 0) == 0) {
            for (std::size_t i = 0; i < e.tensor.numel(); ++i) {
                active_mag += std::fabs(e.tensor[i]);
            }
        } else if (e.name.rfind("encoder.", 0) == 0) {
            for (std::size_t i = 0; i < e.tensor.numel(); ++i) {
                encoder_mag += std::fabs(e.tensor[i]);
            }
        }
    }
    CHECK(active_mag > 0.0);
    CHECK(encoder_mag > 0.0);
}

TEST_CASE("parameter save and restore is bit-exact and init is deterministic") {
    ModelConfig cfg = tiny_config(VariantKind::fission_ld, PriorStrategy::symmetrical);
    cfg.prior = make_prior_means(PriorStrategy::symmetrical, 2, cfg.z1_dim);
    VaeModel64 a(cfg, RngStream(311));
    VaeModel64 b(cfg, RngStream(311));
    CHECK(a.params().bitwise_equal(b.params()));
    ParamSet64 saved = a.params();
    VaeModel64 c(cfg, RngStream(999));
    CHECK_FALSE(c.params().bitwise_equal(saved));
    c.set_params(saved);
    CHECK(c.params().bitwise_equal(saved));
}

TEST_CASE("pathway availability follows the variant") {
    {
        VaeModel64 flat(tiny_config(VariantKind::fedvae), RngStream(1));
        CHECK(flat.valid_pathways() == std::vector<Pathway>{Pathway::from_z1_direct});
        RngStream rng(2);
        CHECK_THROWS_AS(flat.generate(0, Pathway::from_z2, 1, rng), UsageError);
        CHECK_THROWS_AS(flat.generate(0, Pathway::from_z1_via_encoder, 1, rng), UsageError);
    }
    {
        VaeModel64 learn(tiny_config(VariantKind::fission_hld, PriorStrategy::learnable),
                         RngStream(1));
        CHECK(learn.valid_pathways() == std::vector<Pathway>{Pathway::from_z2});
        RngStream rng(2);
        CHECK_THROWS_AS(learn.generate(0, Pathway::from_z1_direct, 1, rng), UsageError);
        CHECK_NOTHROW(learn.generate(0, Pathway::from_z2, 2, rng));
    }
    {
        ModelConfig cfg = tiny_config(VariantKind::fission_hld, PriorStrategy::one_hot);
        VaeModel64 full(cfg, RngStream(1));
        CHECK(full.valid_pathways().size() == 3);
    }
}

TEST_CASE("generation output shape, range and edge cases") {
    ModelConfig cfg = tiny_config(VariantKind::fission_hld, PriorStrategy::one_hot);
    VaeModel64 model(cfg, RngStream(21));
    RngStream rng(22);
    for (Pathway p : model.valid_pathways()) {
        RngStream local(23);
        Tensor64 imgs = model.generate(1, p, 5, local);
        CHECK(imgs.shape() == std::vector<std::size_t>{5, cfg.input_dim});
        for (std::size_t i = 0; i < imgs.numel(); ++i) {
            CHECK(imgs[i] >= 0.0);
            CHECK(imgs[i] <= 1.0);
        }
    }
    CHECK(model.generate(0, Pathway::from_z2, 0, rng).empty());
    CHECK_THROWS_AS(model.generate(2, Pathway::from_z2, 1, rng), UsageError);
}

TEST_CASE("swapping priors on a shared decoder reproduces the other group's draw") {
    ModelConfig cfg = tiny_config(VariantKind::fission_l, PriorStrategy::one_hot);
    cfg.prior = make_prior_means(PriorStrategy::one_hot, 2, cfg.z1_dim);
    VaeModel64 model(cfg, RngStream(41));
    const std::vector<std::uint32_t> swap = {1, 0};
    RngStream r1(77), r2(77);
    Tensor64 swapped = model.generate(0, Pathway::from_z1_direct, 4, r1, &swap);
    Tensor64 plain = model.generate(1, Pathway::from_z1_direct, 4, r2);
    CHECK(swapped.vec() == plain.vec());
}

TEST_CASE("group index in training is validated") {
    VaeModel64 model(tiny_config(VariantKind::fedvae), RngStream(1));
    RngStream rng(2);
    Tensor64 x = random_batch(1, 6, rng);
    CHECK_THROWS_AS(model.forward_train(x, 2, noise_from(rng)), UsageError);
}

TEST_CASE("non-finite pixels surface as a numeric error") {
    VaeModel64 model(tiny_config(VariantKind::fedvae), RngStream(1));
    RngStream rng(2);
    Tensor64 x = random_batch(1, 6, rng);
    x[3] = std::nan("");
    RngStream noise(3);
    CHECK_THROWS_AS(model.forward_train(x, 0, noise_from(noise)), NumericError);
}

TEST_SUITE_END();
