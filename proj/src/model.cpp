#include "fvae/model.hpp"

namespace fvae {

VariantKind variant_from_name(const std::string& name) {
    if (name == "fedvae") return VariantKind::fedvae;
    if (name == "fission_l") return VariantKind::fission_l;
    if (name == "fission_d") return VariantKind::fission_d;
    if (name == "fission_ld") return VariantKind::fission_ld;
    if (name == "fission_hld") return VariantKind::fission_hld;
    throw ConfigError("unknown variant '" + name +
                      "' (expected fedvae, fission_l, fission_d, fission_ld or fission_hld)");
}

std::string variant_name(VariantKind kind) {
    switch (kind) {
        case VariantKind::fedvae: return "fedvae";
        case VariantKind::fission_l: return "fission_l";
        case VariantKind::fission_d: return "fission_d";
        case VariantKind::fission_ld: return "fission_ld";
        case VariantKind::fission_hld: return "fission_hld";
    }
    throw ConfigError("invalid variant kind");
}

Pathway pathway_from_name(const std::string& name) {
    if (name == "from_z2") return Pathway::from_z2;
    if (name == "from_z1_via_encoder") return Pathway::from_z1_via_encoder;
    if (name == "from_z1_direct") return Pathway::from_z1_direct;
    throw ConfigError("unknown pathway '" + name +
                      "' (expected from_z2, from_z1_via_encoder or from_z1_direct)");
}

std::string pathway_name(Pathway p) {
    switch (p) {
        case Pathway::from_z2: return "from_z2";
        case Pathway::from_z1_via_encoder: return "from_z1_via_encoder";
        case Pathway::from_z1_direct: return "from_z1_direct";
    }
    throw ConfigError("invalid pathway");
}

void ModelConfig::validate() const {
    if (groups == 0) throw ConfigError("model requires at least one group");
    if (input_dim == 0) throw ConfigError("input_dim must be positive");
    if (z1_dim == 0) throw ConfigError("z1_dim must be positive");
    if (prior.groups != groups) {
        throw ConfigError("prior group count " + std::to_string(prior.groups) +
                          " does not match model group count " + std::to_string(groups));
    }
    if (prior.dim != z1_dim) {
        throw ConfigError("prior dimension " + std::to_string(prior.dim) +
                          " does not match z1_dim " + std::to_string(z1_dim));
    }
    const bool flat_shared_prior = kind == VariantKind::fedvae || kind == VariantKind::fission_d;
    if (flat_shared_prior && prior.strategy != PriorStrategy::identical) {
        throw ConfigError("variant " + variant_name(kind) +
                          " uses a single shared latent prior; set prior to 'identical'");
    }
    if (prior.strategy == PriorStrategy::learnable && kind != VariantKind::fission_hld) {
        throw ConfigError("the learnable prior requires the hierarchical variant fission_hld");
    }
    if (hierarchical()) {
        if (z2_dim == 0) throw ConfigError("hierarchical variant requires z2_dim > 0");
        if (z2_encoder_widths.empty()) {
            throw ConfigError("hierarchical variant requires z2 encoder hidden widths");
        }
        if (z1_decoder_widths.empty()) {
            throw ConfigError("hierarchical variant requires z1 decoder hidden widths");
        }
    }
    if (!extra_branch_layers.empty()) {
        if (!variant_has_branches(kind)) {
            throw ConfigError("extra branch layers require a per-group decoder variant");
        }
        for (const auto& [g, extra] : extra_branch_layers) {
            (void)extra;
            if (g >= groups) {
                throw ConfigError("extra branch layer group " + std::to_string(g) +
                                  " out of range");
            }
        }
    }
    if (gaussian_var <= 0.0) throw ConfigError("gaussian_var must be positive");
}

}  // namespace fvae
