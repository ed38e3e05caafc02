#include "fvae/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "fvae/rng.hpp"

namespace fvae {

void FederationConfig::validate() const {
    if (groups == 0 || clients_per_group == 0) {
        throw ConfigError("federation needs positive group and client counts");
    }
    if (!(participation_p > 0.0 && participation_p <= 1.0)) {
        throw ConfigError("participation_p must be in (0, 1]");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
}

FederationConfig FederationConfig::from_run_config(const RunConfig& rc) {
    FederationConfig fc;
    fc.groups = rc.groups;
    fc.clients_per_group = rc.clients_per_group;
    fc.participation_p = rc.participation_p;
    fc.rounds = rc.rounds;
    fc.local_epochs = rc.local_epochs;
    fc.batch_size = rc.batch_size;
    fc.seed = rc.seed;
    fc.workers = rc.workers;
    fc.optimizer = rc.optimizer;
    fc.lr = rc.lr;
    fc.validate();
    return fc;
}

namespace {

// Exact weighted mean: counts reduced by their GCD (so scaling every n_i
// leaves the bits unchanged) and accumulation done in double.
Tensor weighted_mean(const std::vector<std::pair<const Tensor*, std::uint64_t>>& entries) {
    std::uint64_t g = 0;
    for (const auto& [t, n] : entries) {
        (void)t;
        g = std::gcd(g, n);
    }
    if (g == 0) throw UsageError("aggregation weights are all zero");
    double total = 0.0;
    for (const auto& [t, n] : entries) {
        (void)t;
        total += static_cast<double>(n / g);
    }
    Tensor out = Tensor::zeros(entries.front().first->shape());
    std::vector<double> acc(out.numel(), 0.0);
    for (const auto& [t, n] : entries) {
        const double w = static_cast<double>(n / g) / total;
        for (std::size_t i = 0; i < out.numel(); ++i) {
            acc[i] += w * static_cast<double>((*t)[i]);
        }
    }
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

// "decoder.g<digits>." -> group index; anything else is shared namespace.
bool branch_group_of(const std::string& name, std::uint32_t* group) {
    const std::string prefix = "decoder.g";
    if (name.rfind(prefix, 0) != 0) return false;
    std::size_t pos = prefix.size();
    if (pos >= name.size() || !std::isdigit(static_cast<unsigned char>(name[pos]))) return false;
    std::uint32_t g = 0;
    while (pos < name.size() && std::isdigit(static_cast<unsigned char>(name[pos]))) {
        g = g * 10 + static_cast<std::uint32_t>(name[pos] - '0');
        ++pos;
    }
    if (pos >= name.size() || name[pos] != '.') return false;
    *group = g;
    return true;
}

}  // namespace

ParamSet fedavg(const std::vector<WeightedParams>& models) {
    if (models.empty()) throw UsageError("fedavg needs at least one model");
    for (const auto& m : models) {
        models.front().params.require_compatible(m.params, "fedavg");
        if (m.samples == 0) throw UsageError("fedavg: zero sample count");
    }
    ParamSet out;
    for (const auto& entry : models.front().params) {
        std::vector<std::pair<const Tensor*, std::uint64_t>> column;
        column.reserve(models.size());
        for (const auto& m : models) {
            column.emplace_back(&m.params.tensor(entry.name), m.samples);
        }
        out.add(entry.name, weighted_mean(column));
    }
    return out;
}

ParamSet group_aware_aggregate(const ParamSet& prev_global,
                               const std::vector<GroupContribution>& contributions) {
    if (contributions.empty()) throw UsageError("group_aware_aggregate needs >= 1 contribution");
    for (const auto& c : contributions) {
        prev_global.require_compatible(c.params, "group_aware_aggregate");
        if (c.samples == 0) throw UsageError("group_aware_aggregate: zero sample count");
    }
    // A client may only modify its own group's branch; anything else means
    // the update was routed wrong.
    for (const auto& c : contributions) {
        for (const auto& entry : c.params) {
            std::uint32_t g = 0;
            if (branch_group_of(entry.name, &g) && g != c.group) {
                if (entry.tensor.vec() != prev_global.tensor(entry.name).vec()) {
                    throw ProtocolError("group-" + std::to_string(c.group) +
                                        " contribution modified foreign branch tensor '" +
                                        entry.name + "'");
                }
            }
        }
    }
    ParamSet out;
    for (const auto& entry : prev_global) {
        std::uint32_t g = 0;
        const bool branch = branch_group_of(entry.name, &g);
        std::vector<std::pair<const Tensor*, std::uint64_t>> column;
        for (const auto& c : contributions) {
            if (!branch || c.group == g) {
                column.emplace_back(&c.params.tensor(entry.name), c.samples);
            }
        }
        if (column.empty()) {
            out.add(entry.name, entry.tensor);  // absent group: keep previous bits
        } else {
            out.add(entry.name, weighted_mean(column));
        }
    }
    return out;
}

std::vector<std::uint32_t> sample_participants(std::uint32_t client_count, double p,
                                               std::uint64_t seed, std::uint32_t round,
                                               std::uint32_t* redraws) {
    if (client_count == 0) throw UsageError("no clients to sample from");
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("participation_p must be in (0, 1]");
    RngStream rng = RngStream::derive(seed, 0x70617274ULL, round);  // "part"
    if (redraws != nullptr) *redraws = 0;
    std::vector<std::uint32_t> ids;
    while (true) {
        ids.clear();
        for (std::uint32_t i = 0; i < client_count; ++i) {
            if (rng.uniform() < p) ids.push_back(i);
        }
        if (!ids.empty()) return ids;
        if (redraws != nullptr) ++*redraws;
    }
}

std::vector<ClientState> build_clients(const Dataset& data, const Partition& part) {
    std::vector<ClientState> clients;
    clients.reserve(part.clients());
    for (std::size_t c = 0; c < part.clients(); ++c) {
        if (part.client_indices[c].empty()) {
            throw ConfigError("client " + std::to_string(c) + " received no samples");
        }
        ClientState cs;
        cs.id = static_cast<std::uint32_t>(c);
        cs.group = part.client_groups[c];
        cs.images = data.flattened_rows(part.client_indices[c]);
        clients.push_back(std::move(cs));
    }
    return clients;
}

namespace {

struct LocalResult {
    ParamSet params;
    ClientRoundStats stats;
};

LocalResult train_client(const VaeModel& model_template, const ParamSet& global,
                         const ClientState& client, const FederationConfig& cfg,
                         std::uint32_t round) {
    LocalResult res;
    res.stats.id = client.id;
    res.stats.group = client.group;
    res.stats.samples = client.sample_count();

    VaeModel model = model_template;
    model.set_params(global);
    Optimizer opt(cfg.optimizer, cfg.lr);
    RngStream rng = RngStream::derive(cfg.seed, client.id, round, 0x636c69656e74ULL);  // "client"

    const std::size_t n = client.sample_count();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    double w_total = 0.0;
    double recon = 0.0, kl1 = 0.0, kl2 = 0.0, cons = 0.0, recon2 = 0.0, total = 0.0;
    try {
        for (std::uint32_t e = 0; e < cfg.local_epochs; ++e) {
            rng.shuffle(order.begin(), order.end());
            for (std::size_t start = 0; start < n; start += cfg.batch_size) {
                const std::size_t stop = std::min(n, start + cfg.batch_size);
                std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                              order.begin() + static_cast<std::ptrdiff_t>(stop));
                Tensor x = Tensor::zeros({rows.size(), client.images.cols()});
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    std::copy(client.images.data() + rows[r] * x.cols(),
                              client.images.data() + (rows[r] + 1) * x.cols(),
                              x.data() + r * x.cols());
                }
                NoiseFn noise = noise_from(rng);
                auto step = model.forward_train(x, client.group, noise);
                ParamSet grads = model.backward_train(step);
                ParamSet params = model.params();
                opt.step(params, grads);
                model.set_params(params);

                const double w = static_cast<double>(rows.size());
                w_total += w;
                recon += w * step.out.losses.recon;
                kl1 += w * step.out.losses.kl_z1;
                kl2 += w * step.out.losses.kl_z2;
                cons += w * step.out.losses.consistency;
                recon2 += w * step.out.losses.recon_from_z2;
                total += w * step.out.losses.total;
            }
        }
    } catch (const NumericError&) {
        res.stats.dropped_nan = true;
        return res;
    }
    if (w_total > 0.0) {
        res.stats.mean_loss.recon = recon / w_total;
        res.stats.mean_loss.kl_z1 = kl1 / w_total;
        res.stats.mean_loss.kl_z2 = kl2 / w_total;
        res.stats.mean_loss.consistency = cons / w_total;
        res.stats.mean_loss.recon_from_z2 = recon2 / w_total;
        res.stats.mean_loss.total = total / w_total;
        if (!std::isfinite(res.stats.mean_loss.total)) {
            res.stats.dropped_nan = true;
            return res;
        }
    }
    res.params = model.params();
    return res;
}

}  // namespace

std::pair<ParamSet, RoundReport> run_round(const VaeModel& model_template,
                                           const ParamSet& global,
                                           const std::vector<ClientState>& clients,
                                           const FederationConfig& cfg, std::uint32_t round) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundReport report;
    report.round = round;
    report.participants = sample_participants(static_cast<std::uint32_t>(clients.size()),
                                              cfg.participation_p, cfg.seed, round,
                                              &report.redraws);

    std::vector<LocalResult> results(report.participants.size());
    auto work = [&](std::size_t slot) {
        const ClientState& client = clients.at(report.participants[slot]);
        results[slot] = train_client(model_template, global, client, cfg, round);
    };
    if (cfg.workers <= 1 || results.size() <= 1) {
        for (std::size_t i = 0; i < results.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const std::size_t nthreads = std::min<std::size_t>(cfg.workers, results.size());
        pool.reserve(nthreads);
        for (std::size_t t = 0; t < nthreads; ++t) {
            pool.emplace_back([&]() {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= results.size()) return;
                    work(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    // Participants are generated in ascending id order, so iterating the
    // result slots aggregates in canonical order regardless of which worker
    // finished first.
    std::vector<GroupContribution> contributions;
    double loss_acc = 0.0;
    double n_acc = 0.0;
    for (auto& res : results) {
        report.clients.push_back(res.stats);
        if (res.stats.dropped_nan) {
            report.dropped.push_back(res.stats.id);
            continue;
        }
        GroupContribution gc;
        gc.params = std::move(res.params);
        gc.samples = res.stats.samples;
        gc.group = res.stats.group;
        contributions.push_back(std::move(gc));
        loss_acc += static_cast<double>(res.stats.samples) * res.stats.mean_loss.total;
        n_acc += static_cast<double>(res.stats.samples);
    }
    report.aggregate_loss = n_acc > 0.0 ? loss_acc / n_acc : 0.0;

    ParamSet next_global =
        contributions.empty() ? global : group_aware_aggregate(global, contributions);
    const auto t1 = std::chrono::steady_clock::now();
    report.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return {std::move(next_global), std::move(report)};
}

TrainResult run_training(const VaeModel& model_template, const std::vector<ClientState>& clients,
                         const FederationConfig& cfg, const RoundCallback& on_round) {
    cfg.validate();
    if (clients.empty()) throw ConfigError("no clients configured");
    for (const auto& c : clients) {
        if (c.group >= cfg.groups) throw ConfigError("client group out of range");
    }
    TrainResult result;
    result.params = model_template.params();
    for (std::uint32_t r = 0; r < cfg.rounds; ++r) {
        auto [next, report] = run_round(model_template, result.params, clients, cfg, r);
        result.params = std::move(next);
        if (on_round) on_round(report, result.params);
        result.reports.push_back(std::move(report));
    }
    return result;
}

VaeModel build_model(const RunConfig& rc, std::size_t input_dim) {
    const ModelConfig mc = model_config_for(rc, input_dim);
    return VaeModel(mc, RngStream::derive(rc.seed, 0x696e6974ULL));  // "init"
}

std::string RoundReport::to_json_line() const {
    nlohmann::json j;
    j["round"] = round;
    j["participants"] = participants;
    j["dropped"] = dropped;
    j["redraws"] = redraws;
    j["aggregate_loss"] = aggregate_loss;
    j["wall_ms"] = wall_ms;
    nlohmann::json cl = nlohmann::json::array();
    for (const auto& c : clients) {
        cl.push_back({{"id", c.id},
                      {"group", c.group},
                      {"n", c.samples},
                      {"dropped", c.dropped_nan},
                      {"loss",
                       {{"recon", c.mean_loss.recon},
                        {"kl_z1", c.mean_loss.kl_z1},
                        {"kl_z2", c.mean_loss.kl_z2},
                        {"consistency", c.mean_loss.consistency},
                        {"recon_from_z2", c.mean_loss.recon_from_z2},
                        {"total", c.mean_loss.total}}}});
    }
    j["clients"] = cl;
    return j.dump();
}

}  // namespace fvae
