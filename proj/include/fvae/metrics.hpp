#pragma once

#include <cstdint>
#include <vector>

#include "fvae/data.hpp"
#include "fvae/linalg.hpp"
#include "fvae/model.hpp"

namespace fvae {

// Linear projection fit on a reference set; both metric inputs are pushed
// through the same projection.
struct PcaProjection {
    std::vector<double> mean;        // [d_in]
    Mat components;                  // [d_out x d_in]
    std::size_t d_in = 0;
    std::size_t d_out = 0;

    Mat project(const Tensor& rows) const;  // [n x d_out]
};

PcaProjection fit_pca(const Tensor& rows, std::size_t d_out);

struct GaussianFit {
    std::vector<double> mean;
    Mat cov;  // unbiased, [d x d]
};

GaussianFit fit_gaussian(const Mat& rows, std::size_t n, std::size_t d);

struct FrechetResult {
    double value = 0.0;
    bool regularized = false;  // epsilon*I added to a rank-deficient covariance
};

// ||mu1 - mu2||^2 + tr(C1 + C2 - 2 (C1^0.5 C2 C1^0.5)^0.5)
FrechetResult frechet_gaussian(const GaussianFit& a, const GaussianFit& b, std::size_t d);

constexpr std::size_t kFrechetFeatureDim = 16;

// PCA features are fit on the real set, both sets are projected, and the
// exact Frechet distance between the Gaussian fits is returned.
FrechetResult frechet_proxy(const Tensor& real_rows, const Tensor& generated_rows,
                            std::size_t feature_dim = kFrechetFeatureDim);

// Ratio of mean inter-group distance between per-group posterior means to
// the mean within-group standard deviation (sample scatter plus predicted
// encoder variance). 0 when the means coincide.
double latent_separation_from_stats(const Tensor& means, const Tensor& log_vars,
                                    const std::vector<std::uint32_t>& groups,
                                    std::uint32_t group_count);

double latent_separation(const VaeModel& model, const Dataset& data);

// Tiny multinomial logistic probe on raw pixels, trained full-batch.
class ProbeClassifier {
public:
    void fit(const Tensor& rows, const std::vector<std::uint32_t>& groups,
             std::uint32_t group_count, std::uint32_t epochs = 200, double lr = 0.5);
    bool trained() const { return trained_; }
    std::uint32_t group_count() const { return k_; }
    std::vector<std::uint32_t> predict(const Tensor& rows) const;
    double accuracy(const Tensor& rows, const std::vector<std::uint32_t>& groups) const;

private:
    std::vector<double> w_;  // [k x d]
    std::vector<double> b_;  // [k]
    std::uint32_t k_ = 0;
    std::size_t d_ = 0;
    bool trained_ = false;
};

// Fraction of group-g generations the probe assigns to group g, per group.
std::vector<double> group_fidelity(const std::vector<Tensor>& generated_per_group,
                                   const ProbeClassifier& probe);

double mean_fidelity(const std::vector<double>& per_group);

// Mean per-sample training objective over the dataset, one latent draw per
// datum under a fixed evaluation seed.
double nll(const VaeModel& model, const Dataset& data, std::uint64_t eval_seed);

struct MetricReport {
    std::string pathway;
    double nll = 0.0;
    double frechet_proxy = 0.0;
    bool frechet_regularized = false;
    double latent_separation = 0.0;
    std::vector<double> fidelity;  // per group
    std::size_t real_samples = 0;
    std::size_t generated_samples = 0;
    std::uint64_t eval_seed = 0;
};

// Full evaluation for one generation pathway. Generates as many samples per
// group as the eval set holds; swap_map (optional) permutes the
// group->prior assignment exactly as in generation.
MetricReport evaluate_model(const VaeModel& model, const Dataset& eval_data, Pathway pathway,
                            std::uint64_t eval_seed,
                            const std::vector<std::uint32_t>* swap_map = nullptr);

}  // namespace fvae
