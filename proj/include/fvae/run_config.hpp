#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvae/data.hpp"
#include "fvae/model.hpp"

namespace fvae {

enum class DataSource { synthetic, mnist_dir };

// Everything needed to reproduce a run; serialized verbatim into
// checkpoints and reports.
struct RunConfig {
    VariantKind variant = VariantKind::fedvae;
    std::uint32_t groups = 2;
    std::uint32_t clients_per_group = 10;
    double participation_p = 0.5;
    std::uint32_t rounds = 70;
    std::uint32_t local_epochs = 5;
    std::uint32_t batch_size = 32;
    std::uint64_t seed = 1234;
    std::uint64_t eval_seed = 9999;

    PriorStrategy prior_strategy = PriorStrategy::identical;
    std::uint64_t prior_seed = 7;

    std::size_t z1_dim = 16;
    std::size_t z2_dim = 8;
    std::vector<std::size_t> encoder_widths;        // empty -> default for input size
    std::vector<std::size_t> z2_encoder_widths;     // empty -> default
    std::vector<std::size_t> z1_decoder_widths;     // empty -> default
    std::vector<std::size_t> image_decoder_widths;  // empty -> default
    std::map<std::uint32_t, std::uint32_t> extra_branch_layers;

    ReconMode recon_mode = ReconMode::bernoulli;
    double gaussian_var = 0.1;
    ConsistencyGrad consistency_grad = ConsistencyGrad::both;

    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;

    DataSource source = DataSource::synthetic;
    std::size_t synth_n_per_group = 256;
    std::size_t synth_side = 8;
    std::size_t eval_n_per_group = 128;
    std::string mnist_dir;

    std::string output_dir = "runs/out";
    std::uint32_t save_every = 0;  // 0 -> final checkpoint only
    std::uint32_t workers = 1;

    void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& rc);

// Reads a JSON config file; FVAE_SEED (when set) overrides the seed field.
RunConfig load_run_config(const std::string& path, bool apply_env_seed = true);

// Canonical serialization used for hashing and checkpoint embedding.
std::string canonical_config_string(const RunConfig& rc);
std::string config_hash(const RunConfig& rc);

// Width defaults scale with the flattened input size.
ModelConfig model_config_for(const RunConfig& rc, std::size_t input_dim);

Dataset make_train_dataset(const RunConfig& rc);
Dataset make_eval_dataset(const RunConfig& rc);

}  // namespace fvae
