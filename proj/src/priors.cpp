#include "fvae/priors.hpp"

namespace fvae {

PriorStrategy prior_strategy_from_name(const std::string& name) {
    if (name == "identical") return PriorStrategy::identical;
    if (name == "one_hot" || name == "one-hot") return PriorStrategy::one_hot;
    if (name == "symmetrical") return PriorStrategy::symmetrical;
    if (name == "random") return PriorStrategy::random;
    if (name == "wave") return PriorStrategy::wave;
    if (name == "learnable") return PriorStrategy::learnable;
    throw ConfigError("unknown prior strategy: " + name);
}

std::string prior_strategy_name(PriorStrategy s) {
    switch (s) {
        case PriorStrategy::identical: return "identical";
        case PriorStrategy::one_hot: return "one_hot";
        case PriorStrategy::symmetrical: return "symmetrical";
        case PriorStrategy::random: return "random";
        case PriorStrategy::wave: return "wave";
        case PriorStrategy::learnable: return "learnable";
    }
    return "?";
}

PriorSpec make_prior_means(PriorStrategy strategy, std::uint32_t groups, std::size_t dim,
                           std::uint64_t seed) {
    if (groups == 0) throw ConfigError("prior needs at least one group");
    if (dim == 0) throw ConfigError("prior needs a positive latent dimension");

    PriorSpec spec;
    spec.strategy = strategy;
    spec.groups = groups;
    spec.dim = dim;
    spec.seed = seed;

    if (strategy == PriorStrategy::learnable) {
        return spec;  // no means; the z1 KL term is disabled
    }

    spec.means = Tensor::zeros({groups, dim});
    switch (strategy) {
        case PriorStrategy::identical:
            break;
        case PriorStrategy::one_hot: {
            // Group j (1-indexed) puts its 1 at position j, so position 0
            // stays free and dim must exceed the group count.
            if (dim <= groups) {
                throw ConfigError("one_hot prior requires dim > k (got dim=" +
                                  std::to_string(dim) + ", k=" + std::to_string(groups) + ")");
            }
            for (std::uint32_t g = 0; g < groups; ++g) {
                spec.means.at(g, g + 1) = 1.0F;
            }
            break;
        }
        case PriorStrategy::symmetrical: {
            // Constant vectors +1, -1, +2, -2, ... in group order.
            for (std::uint32_t g = 0; g < groups; ++g) {
                const std::uint32_t j = g + 1;
                const float magnitude = static_cast<float>((j + 1) / 2);
                const float value = (g % 2 == 0) ? magnitude : -magnitude;
                for (std::size_t i = 0; i < dim; ++i) spec.means.at(g, i) = value;
            }
            break;
        }
        case PriorStrategy::random: {
            RngStream rng = RngStream::derive(seed, 0x7072696fULL);  // prior stream
            for (std::size_t i = 0; i < spec.means.numel(); ++i) {
                spec.means[i] = static_cast<float>(rng.normal());
            }
            break;
        }
        case PriorStrategy::wave: {
            if (dim < groups) {
                throw ConfigError("wave prior requires dim >= k (got dim=" +
                                  std::to_string(dim) + ", k=" + std::to_string(groups) + ")");
            }
            const std::size_t block = dim / groups;
            for (std::uint32_t g = 0; g < groups; ++g) {
                for (std::size_t i = g * block; i < (g + 1) * block; ++i) {
                    spec.means.at(g, i) = 1.0F;
                }
            }
            break;
        }
        case PriorStrategy::learnable:
            break;
    }
    return spec;
}

Tensor sample_prior(const PriorSpec& spec, std::uint32_t group, std::size_t n, RngStream& rng) {
    if (spec.strategy == PriorStrategy::learnable) {
        throw UsageError(
            "learnable prior cannot be sampled directly; generate through the z2 pathway "
            "(from_z2) instead");
    }
    if (group >= spec.groups) {
        throw UsageError("group index " + std::to_string(group) + " out of range (k=" +
                         std::to_string(spec.groups) + ")");
    }
    if (n == 0) {
        return Tensor();
    }
    Tensor out = Tensor::zeros({n, spec.dim});
    const float* mean = spec.mean_of(group);
    for (std::size_t r = 0; r < n; ++r) {
        float* row = out.data() + r * spec.dim;
        for (std::size_t i = 0; i < spec.dim; ++i) {
            row[i] = mean[i] + static_cast<float>(rng.normal());
        }
    }
    return out;
}

}  // namespace fvae
