#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fvae/data.hpp"
#include "fvae/model.hpp"
#include "fvae/param_set.hpp"
#include "fvae/run_config.hpp"

namespace fvae {

struct FederationConfig {
    std::uint32_t groups = 2;
    std::uint32_t clients_per_group = 4;
    double participation_p = 0.5;
    std::uint32_t rounds = 30;
    std::uint32_t local_epochs = 5;
    std::uint32_t batch_size = 32;
    std::uint64_t seed = 1234;
    std::uint32_t workers = 1;
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;

    void validate() const;
    static FederationConfig from_run_config(const RunConfig& rc);
};

struct ClientState {
    std::uint32_t id = 0;
    std::uint32_t group = 0;
    Tensor images;  // flattened [n_i x D]

    std::size_t sample_count() const { return images.rows(); }
};

struct ClientRoundStats {
    std::uint32_t id = 0;
    std::uint32_t group = 0;
    std::uint64_t samples = 0;
    LossBreakdownT<float> mean_loss;
    bool dropped_nan = false;
};

struct RoundReport {
    std::uint32_t round = 0;
    std::vector<std::uint32_t> participants;  // sorted by id
    std::vector<std::uint32_t> dropped;       // NaN clients excluded from aggregation
    std::uint32_t redraws = 0;
    std::vector<ClientRoundStats> clients;
    double aggregate_loss = 0.0;  // sample-weighted mean of client totals
    double wall_ms = 0.0;

    std::string to_json_line() const;
};

struct WeightedParams {
    ParamSet params;
    std::uint64_t samples = 0;
};

struct GroupContribution {
    ParamSet params;
    std::uint64_t samples = 0;
    std::uint32_t group = 0;
};

// Sample-count-weighted average of aggregation-compatible parameter sets.
ParamSet fedavg(const std::vector<WeightedParams>& models);

// Shared (encoder & shared-decoder) tensors average over every
// contribution; "decoder.g<g>." tensors average over group-g contributions
// only and fall back to prev_global when group g is absent. A contribution
// whose foreign-branch tensors differ from prev_global is rejected.
ParamSet group_aware_aggregate(const ParamSet& prev_global,
                               const std::vector<GroupContribution>& contributions);

// Bernoulli participation; an empty draw is redrawn (counted).
std::vector<std::uint32_t> sample_participants(std::uint32_t client_count, double p,
                                               std::uint64_t seed, std::uint32_t round,
                                               std::uint32_t* redraws = nullptr);

std::vector<ClientState> build_clients(const Dataset& data, const Partition& part);

// One federated round: broadcast -> local training on participants ->
// group-aware aggregation. Deterministic for fixed (seed, round)
// independent of worker count.
std::pair<ParamSet, RoundReport> run_round(const VaeModel& model_template,
                                           const ParamSet& global,
                                           const std::vector<ClientState>& clients,
                                           const FederationConfig& cfg, std::uint32_t round);

struct TrainResult {
    ParamSet params;
    std::vector<RoundReport> reports;
};

using RoundCallback = std::function<void(const RoundReport&, const ParamSet&)>;

// Full training loop from a fresh deterministic initialization.
TrainResult run_training(const VaeModel& model_template, const std::vector<ClientState>& clients,
                         const FederationConfig& cfg, const RoundCallback& on_round = nullptr);

VaeModel build_model(const RunConfig& rc, std::size_t input_dim);

}  // namespace fvae
