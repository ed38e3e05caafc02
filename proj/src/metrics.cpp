#include "fvae/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fvae/rng.hpp"

namespace fvae {

Mat PcaProjection::project(const Tensor& rows) const {
    if (rows.cols() != d_in) throw UsageError("PCA projection: feature dimension mismatch");
    const std::size_t n = rows.rows();
    Mat out(n * d_out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d_out; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d_in; ++j) {
                acc += (static_cast<double>(rows.at(r, j)) - mean[j]) * components[c * d_in + j];
            }
            out[r * d_out + c] = acc;
        }
    }
    return out;
}

PcaProjection fit_pca(const Tensor& rows, std::size_t d_out) {
    const std::size_t n = rows.rows();
    const std::size_t d = rows.cols();
    if (n < 2) throw UsageError("PCA needs at least 2 samples");
    PcaProjection p;
    p.d_in = d;
    p.d_out = std::min(d_out, d);
    p.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) p.mean[j] += rows.at(r, j);
    }
    for (double& m : p.mean) m /= static_cast<double>(n);

    Mat cov(d * d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            const double di = static_cast<double>(rows.at(r, i)) - p.mean[i];
            if (di == 0.0) continue;
            for (std::size_t j = i; j < d; ++j) {
                cov[i * d + j] += di * (static_cast<double>(rows.at(r, j)) - p.mean[j]);
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            const double v = cov[i * d + j] / static_cast<double>(n - 1);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Mat vecs;
    jacobi_eigen_sym(cov, d, &vecs);
    p.components.assign(p.d_out * d, 0.0);
    for (std::size_t c = 0; c < p.d_out; ++c) {
        for (std::size_t j = 0; j < d; ++j) {
            p.components[c * d + j] = vecs[j * d + c];  // c-th eigenvector
        }
    }
    return p;
}

GaussianFit fit_gaussian(const Mat& rows, std::size_t n, std::size_t d) {
    if (n < 2) throw UsageError("Gaussian fit needs at least 2 samples");
    if (rows.size() != n * d) throw UsageError("Gaussian fit: size mismatch");
    GaussianFit g;
    g.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) g.mean[j] += rows[r * d + j];
    }
    for (double& m : g.mean) m /= static_cast<double>(n);
    g.cov.assign(d * d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            const double di = rows[r * d + i] - g.mean[i];
            for (std::size_t j = i; j < d; ++j) {
                g.cov[i * d + j] += di * (rows[r * d + j] - g.mean[j]);
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            const double v = g.cov[i * d + j] / static_cast<double>(n - 1);
            g.cov[i * d + j] = v;
            g.cov[j * d + i] = v;
        }
    }
    return g;
}

namespace {

// A covariance whose smallest eigenvalue is ~zero relative to its largest
// gets an epsilon ridge so the square-root stays well posed.
bool regularize_if_needed(Mat& cov, std::size_t d) {
    std::vector<double> vals = jacobi_eigen_sym(cov, d, nullptr);
    const double top = vals.empty() ? 0.0 : std::max(std::fabs(vals.front()), std::fabs(vals.back()));
    const double floor = 1e-10 * std::max(1.0, top);
    if (vals.back() > floor) return false;
    for (std::size_t i = 0; i < d; ++i) cov[i * d + i] += 1e-6;
    return true;
}

}  // namespace

FrechetResult frechet_gaussian(const GaussianFit& a, const GaussianFit& b, std::size_t d) {
    FrechetResult res;
    Mat c1 = a.cov;
    Mat c2 = b.cov;
    res.regularized = regularize_if_needed(c1, d);
    res.regularized = regularize_if_needed(c2, d) || res.regularized;

    double mean_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }
    const Mat s1 = sym_sqrt_psd(c1, d);
    const Mat inner = mat_mul(mat_mul(s1, c2, d, d, d), s1, d, d, d);
    const Mat cross = sym_sqrt_psd(inner, d);
    double value = mean_term + trace(c1, d) + trace(c2, d) - 2.0 * trace(cross, d);
    // exact-zero distances can dip a hair below zero in floating point
    if (value < 0.0 && value > -1e-6) value = 0.0;
    if (value < 0.0) throw NumericError("Frechet distance came out negative");
    res.value = value;
    return res;
}

FrechetResult frechet_proxy(const Tensor& real_rows, const Tensor& generated_rows,
                            std::size_t feature_dim) {
    if (real_rows.cols() != generated_rows.cols()) {
        throw UsageError("frechet_proxy: feature dimension mismatch");
    }
    const std::size_t d = std::min(feature_dim, real_rows.cols());
    if (real_rows.rows() < d + 1 || generated_rows.rows() < d + 1) {
        throw UsageError("frechet_proxy needs at least " + std::to_string(d + 1) +
                         " samples per set");
    }
    const PcaProjection pca = fit_pca(real_rows, d);
    const Mat fr = pca.project(real_rows);
    const Mat fg = pca.project(generated_rows);
    const GaussianFit ga = fit_gaussian(fr, real_rows.rows(), pca.d_out);
    const GaussianFit gb = fit_gaussian(fg, generated_rows.rows(), pca.d_out);
    return frechet_gaussian(ga, gb, pca.d_out);
}

double latent_separation_from_stats(const Tensor& means, const Tensor& log_vars,
                                    const std::vector<std::uint32_t>& groups,
                                    std::uint32_t group_count) {
    if (group_count < 2) throw UsageError("latent separation needs k >= 2");
    if (means.rows() != groups.size() || !means.same_shape(log_vars)) {
        throw UsageError("latent separation: input shape mismatch");
    }
    const std::size_t d = means.cols();
    std::vector<std::vector<double>> centroid(group_count, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(group_count, 0);
    for (std::size_t r = 0; r < means.rows(); ++r) {
        const std::uint32_t g = groups[r];
        if (g >= group_count) throw UsageError("latent separation: group out of range");
        ++counts[g];
        for (std::size_t j = 0; j < d; ++j) centroid[g][j] += means.at(r, j);
    }
    for (std::uint32_t g = 0; g < group_count; ++g) {
        if (counts[g] == 0) throw UsageError("latent separation: empty group");
        for (double& v : centroid[g]) v /= static_cast<double>(counts[g]);
    }

    double inter = 0.0;
    std::size_t pairs = 0;
    for (std::uint32_t g = 0; g < group_count; ++g) {
        for (std::uint32_t h = g + 1; h < group_count; ++h) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = centroid[g][j] - centroid[h][j];
                sq += diff * diff;
            }
            inter += std::sqrt(sq);
            ++pairs;
        }
    }
    inter /= static_cast<double>(pairs);
    if (inter < 1e-12) return 0.0;

    // within-group variance = scatter of posterior means + mean predicted
    // variance, per coordinate
    double within = 0.0;
    for (std::uint32_t g = 0; g < group_count; ++g) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double scatter = 0.0;
            double pred = 0.0;
            for (std::size_t r = 0; r < means.rows(); ++r) {
                if (groups[r] != g) continue;
                const double diff = static_cast<double>(means.at(r, j)) - centroid[g][j];
                scatter += diff * diff;
                pred += std::exp(static_cast<double>(log_vars.at(r, j)));
            }
            acc += std::sqrt((scatter + pred) / static_cast<double>(counts[g]));
        }
        within += acc / static_cast<double>(d);
    }
    within /= static_cast<double>(group_count);
    return inter / std::max(within, 1e-12);
}

double latent_separation(const VaeModel& model, const Dataset& data) {
    const Tensor x = data.flattened();
    const GaussianBatchT<float> q = model.encode(x);
    return latent_separation_from_stats(q.mean, q.log_var, data.groups, data.group_count);
}

void ProbeClassifier::fit(const Tensor& rows, const std::vector<std::uint32_t>& groups,
                          std::uint32_t group_count, std::uint32_t epochs, double lr) {
    if (rows.rows() != groups.size()) throw UsageError("probe: label count mismatch");
    if (rows.rows() == 0 || group_count == 0) throw UsageError("probe: empty training set");
    k_ = group_count;
    d_ = rows.cols();
    w_.assign(std::size_t(k_) * d_, 0.0);
    b_.assign(k_, 0.0);
    const std::size_t n = rows.rows();
    std::vector<double> logits(k_);
    std::vector<double> gw(w_.size());
    std::vector<double> gb(k_);
    for (std::uint32_t e = 0; e < epochs; ++e) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            double top = -1e300;
            for (std::uint32_t c = 0; c < k_; ++c) {
                double acc = b_[c];
                for (std::size_t j = 0; j < d_; ++j) {
                    acc += w_[c * d_ + j] * static_cast<double>(rows.at(r, j));
                }
                logits[c] = acc;
                top = std::max(top, acc);
            }
            double z = 0.0;
            for (std::uint32_t c = 0; c < k_; ++c) z += std::exp(logits[c] - top);
            for (std::uint32_t c = 0; c < k_; ++c) {
                const double p = std::exp(logits[c] - top) / z;
                const double err = p - (groups[r] == c ? 1.0 : 0.0);
                gb[c] += err;
                for (std::size_t j = 0; j < d_; ++j) {
                    gw[c * d_ + j] += err * static_cast<double>(rows.at(r, j));
                }
            }
        }
        const double scale = lr / static_cast<double>(n);
        for (std::size_t i = 0; i < w_.size(); ++i) w_[i] -= scale * gw[i];
        for (std::uint32_t c = 0; c < k_; ++c) b_[c] -= scale * gb[c];
    }
    trained_ = true;
}

std::vector<std::uint32_t> ProbeClassifier::predict(const Tensor& rows) const {
    if (!trained_) throw UsageError("probe classifier is untrained");
    if (rows.cols() != d_) throw UsageError("probe: feature dimension mismatch");
    std::vector<std::uint32_t> out(rows.rows(), 0);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        double best = -1e300;
        std::uint32_t arg = 0;
        for (std::uint32_t c = 0; c < k_; ++c) {
            double acc = b_[c];
            for (std::size_t j = 0; j < d_; ++j) {
                acc += w_[c * d_ + j] * static_cast<double>(rows.at(r, j));
            }
            if (acc > best) {
                best = acc;
                arg = c;
            }
        }
        out[r] = arg;
    }
    return out;
}

double ProbeClassifier::accuracy(const Tensor& rows,
                                 const std::vector<std::uint32_t>& groups) const {
    if (rows.rows() != groups.size() || rows.rows() == 0) {
        throw UsageError("probe accuracy: label count mismatch");
    }
    const std::vector<std::uint32_t> pred = predict(rows);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == groups[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<double> group_fidelity(const std::vector<Tensor>& generated_per_group,
                                   const ProbeClassifier& probe) {
    if (!probe.trained()) throw UsageError("group_fidelity requires a trained probe");
    if (generated_per_group.size() != probe.group_count()) {
        throw UsageError("group_fidelity: group count mismatch with probe");
    }
    std::vector<double> out;
    for (std::uint32_t g = 0; g < generated_per_group.size(); ++g) {
        const Tensor& rows = generated_per_group[g];
        if (rows.numel() == 0) throw UsageError("group_fidelity: empty generation set");
        const std::vector<std::uint32_t> pred = probe.predict(rows);
        std::size_t hits = 0;
        for (const std::uint32_t p : pred) {
            if (p == g) ++hits;
        }
        out.push_back(static_cast<double>(hits) / static_cast<double>(pred.size()));
    }
    return out;
}

double mean_fidelity(const std::vector<double>& per_group) {
    if (per_group.empty()) throw UsageError("mean_fidelity: empty input");
    double acc = 0.0;
    for (const double v : per_group) acc += v;
    return acc / static_cast<double>(per_group.size());
}

double nll(const VaeModel& model, const Dataset& data, std::uint64_t eval_seed) {
    constexpr std::size_t kBatch = 256;
    double acc = 0.0;
    double count = 0.0;
    for (std::uint32_t g = 0; g < data.group_count; ++g) {
        const std::vector<std::size_t> idx = data.indices_of_group(g);
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < idx.size(); start += kBatch, ++batch_index) {
            const std::size_t stop = std::min(idx.size(), start + kBatch);
            std::vector<std::size_t> rows(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                          idx.begin() + static_cast<std::ptrdiff_t>(stop));
            const Tensor x = data.flattened_rows(rows);
            RngStream rng = RngStream::derive(eval_seed, 0x6e6c6cULL, g, batch_index);  // "nll"
            NoiseFn noise = noise_from(rng);
            const auto step = model.forward_train(x, g, noise);
            acc += step.out.losses.total * static_cast<double>(rows.size());
            count += static_cast<double>(rows.size());
        }
    }
    if (count == 0.0) throw UsageError("nll: empty dataset");
    return acc / count;
}

MetricReport evaluate_model(const VaeModel& model, const Dataset& eval_data, Pathway pathway,
                            std::uint64_t eval_seed, const std::vector<std::uint32_t>* swap_map) {
    MetricReport rep;
    rep.pathway = pathway_name(pathway);
    rep.eval_seed = eval_seed;
    rep.real_samples = eval_data.size();

    rep.nll = nll(model, eval_data, eval_seed);
    rep.latent_separation = eval_data.group_count >= 2 ? latent_separation(model, eval_data) : 0.0;

    ProbeClassifier probe;
    const Tensor real = eval_data.flattened();
    probe.fit(real, eval_data.groups, eval_data.group_count);

    std::vector<Tensor> generated;
    for (std::uint32_t g = 0; g < eval_data.group_count; ++g) {
        const std::size_t n_g = eval_data.indices_of_group(g).size();
        RngStream rng = RngStream::derive(eval_seed, 0x67656eULL, g,
                                          static_cast<std::uint64_t>(pathway));  // "gen"
        generated.push_back(model.generate(g, pathway, n_g, rng, swap_map));
        rep.generated_samples += n_g;
    }
    rep.fidelity = group_fidelity(generated, probe);

    std::size_t total = 0;
    for (const Tensor& t : generated) total += t.rows();
    Tensor all_gen = Tensor::zeros({total, real.cols()});
    std::size_t at = 0;
    for (const Tensor& t : generated) {
        std::copy(t.data(), t.data() + t.numel(), all_gen.data() + at);
        at += t.numel();
    }
    const FrechetResult fr = frechet_proxy(real, all_gen);
    rep.frechet_proxy = fr.value;
    rep.frechet_regularized = fr.regularized;
    return rep;
}

}  // namespace fvae
