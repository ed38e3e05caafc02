#include "fvae/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace fvae {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& known) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be a JSON object");
    for (const auto& item : j.items()) {
        if (known.find(item.key()) == known.end()) {
            throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
}

std::vector<std::size_t> get_widths(const json& j, const std::string& key) {
    return get_or<std::vector<std::size_t>>(j, key, {});
}

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

ReconMode recon_from_name(const std::string& name) {
    if (name == "bernoulli") return ReconMode::bernoulli;
    if (name == "gaussian") return ReconMode::gaussian_fixed_var;
    throw ConfigError("unknown recon mode '" + name + "' (expected bernoulli or gaussian)");
}

std::string recon_name(ReconMode m) {
    return m == ReconMode::bernoulli ? "bernoulli" : "gaussian";
}

ConsistencyGrad consistency_from_name(const std::string& name) {
    if (name == "both") return ConsistencyGrad::both;
    if (name == "stop_p") return ConsistencyGrad::stop_p;
    if (name == "stop_q") return ConsistencyGrad::stop_q;
    throw ConfigError("unknown consistency_grad '" + name +
                      "' (expected both, stop_p or stop_q)");
}

std::string consistency_name(ConsistencyGrad c) {
    switch (c) {
        case ConsistencyGrad::both: return "both";
        case ConsistencyGrad::stop_p: return "stop_p";
        case ConsistencyGrad::stop_q: return "stop_q";
    }
    return "both";
}

}  // namespace

void RunConfig::validate() const {
    if (groups == 0) throw ConfigError("groups must be positive");
    if (clients_per_group == 0) throw ConfigError("clients_per_group must be positive");
    if (!(participation_p > 0.0 && participation_p <= 1.0)) {
        throw ConfigError("participation_p must be in (0, 1]");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (gaussian_var <= 0.0) throw ConfigError("gaussian_var must be positive");
    if (z1_dim == 0) throw ConfigError("z1_dim must be positive");
    if (source == DataSource::synthetic) {
        if (groups != 2) throw ConfigError("the synthetic dataset provides exactly 2 groups");
        if (synth_n_per_group == 0) throw ConfigError("n_per_group must be positive");
        if (synth_side < 8) throw ConfigError("synthetic side must be >= 8");
        if (eval_n_per_group == 0) throw ConfigError("eval_n_per_group must be positive");
    } else if (mnist_dir.empty()) {
        throw ConfigError("mnist_dir is required when data.source is mnist_dir");
    }
    // Build the model-facing config once so variant/prior/arch rules are
    // checked before any work starts.
    const std::size_t probe_dim =
        source == DataSource::synthetic ? synth_side * synth_side : 784;
    model_config_for(*this, probe_dim).validate();
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j, "top level",
               {"variant", "groups", "clients_per_group", "participation_p", "rounds",
                "local_epochs", "batch_size", "seed", "eval_seed", "prior", "arch", "loss",
                "optimizer", "data", "output_dir", "save_every", "workers"});
    RunConfig rc;
    rc.variant = variant_from_name(get_or<std::string>(j, "variant", "fedvae"));
    rc.groups = get_or<std::uint32_t>(j, "groups", rc.groups);
    rc.clients_per_group = get_or<std::uint32_t>(j, "clients_per_group", rc.clients_per_group);
    rc.participation_p = get_or<double>(j, "participation_p", rc.participation_p);
    rc.rounds = get_or<std::uint32_t>(j, "rounds", rc.rounds);
    rc.local_epochs = get_or<std::uint32_t>(j, "local_epochs", rc.local_epochs);
    rc.batch_size = get_or<std::uint32_t>(j, "batch_size", rc.batch_size);
    rc.seed = get_or<std::uint64_t>(j, "seed", rc.seed);
    rc.eval_seed = get_or<std::uint64_t>(j, "eval_seed", rc.eval_seed);

    if (j.contains("prior")) {
        const json& p = j.at("prior");
        check_keys(p, "prior", {"strategy", "seed"});
        rc.prior_strategy =
            prior_strategy_from_name(get_or<std::string>(p, "strategy", "identical"));
        rc.prior_seed = get_or<std::uint64_t>(p, "seed", rc.prior_seed);
    }
    if (j.contains("arch")) {
        const json& a = j.at("arch");
        check_keys(a, "arch",
                   {"z1_dim", "z2_dim", "encoder_widths", "z2_encoder_widths",
                    "z1_decoder_widths", "image_decoder_widths", "extra_branch_layers"});
        rc.z1_dim = get_or<std::size_t>(a, "z1_dim", rc.z1_dim);
        rc.z2_dim = get_or<std::size_t>(a, "z2_dim", rc.z2_dim);
        rc.encoder_widths = get_widths(a, "encoder_widths");
        rc.z2_encoder_widths = get_widths(a, "z2_encoder_widths");
        rc.z1_decoder_widths = get_widths(a, "z1_decoder_widths");
        rc.image_decoder_widths = get_widths(a, "image_decoder_widths");
        if (a.contains("extra_branch_layers")) {
            const json& e = a.at("extra_branch_layers");
            if (!e.is_object()) throw ConfigError("config: extra_branch_layers must be an object");
            for (const auto& item : e.items()) {
                std::size_t used = 0;
                std::uint32_t g = 0;
                try {
                    g = static_cast<std::uint32_t>(std::stoul(item.key(), &used));
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != item.key().size()) {
                    throw ConfigError("config: extra_branch_layers key '" + item.key() +
                                      "' is not a group index");
                }
                rc.extra_branch_layers[g] = item.value().get<std::uint32_t>();
            }
        }
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, "loss", {"recon", "gaussian_var", "consistency_grad"});
        rc.recon_mode = recon_from_name(get_or<std::string>(l, "recon", "bernoulli"));
        rc.gaussian_var = get_or<double>(l, "gaussian_var", rc.gaussian_var);
        rc.consistency_grad =
            consistency_from_name(get_or<std::string>(l, "consistency_grad", "both"));
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o, "optimizer", {"kind", "lr"});
        rc.optimizer = optimizer_from_name(get_or<std::string>(o, "kind", "adam"));
        rc.lr = get_or<double>(o, "lr", rc.lr);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data",
                   {"source", "n_per_group", "side", "eval_n_per_group", "mnist_dir"});
        const std::string src = get_or<std::string>(d, "source", "synthetic");
        if (src == "synthetic") {
            rc.source = DataSource::synthetic;
        } else if (src == "mnist_dir") {
            rc.source = DataSource::mnist_dir;
        } else {
            throw ConfigError("unknown data source '" + src +
                              "' (expected synthetic or mnist_dir)");
        }
        rc.synth_n_per_group = get_or<std::size_t>(d, "n_per_group", rc.synth_n_per_group);
        rc.synth_side = get_or<std::size_t>(d, "side", rc.synth_side);
        rc.eval_n_per_group = get_or<std::size_t>(d, "eval_n_per_group", rc.eval_n_per_group);
        rc.mnist_dir = get_or<std::string>(d, "mnist_dir", rc.mnist_dir);
    }
    rc.output_dir = get_or<std::string>(j, "output_dir", rc.output_dir);
    rc.save_every = get_or<std::uint32_t>(j, "save_every", rc.save_every);
    rc.workers = get_or<std::uint32_t>(j, "workers", rc.workers);
    if (rc.workers == 0) throw ConfigError("workers must be positive");
    rc.validate();
    return rc;
}

json run_config_to_json(const RunConfig& rc) {
    json a = {{"z1_dim", rc.z1_dim},
              {"z2_dim", rc.z2_dim},
              {"encoder_widths", rc.encoder_widths},
              {"z2_encoder_widths", rc.z2_encoder_widths},
              {"z1_decoder_widths", rc.z1_decoder_widths},
              {"image_decoder_widths", rc.image_decoder_widths}};
    json extra = json::object();
    for (const auto& [g, n] : rc.extra_branch_layers) extra[std::to_string(g)] = n;
    a["extra_branch_layers"] = extra;
    return json{
        {"variant", variant_name(rc.variant)},
        {"groups", rc.groups},
        {"clients_per_group", rc.clients_per_group},
        {"participation_p", rc.participation_p},
        {"rounds", rc.rounds},
        {"local_epochs", rc.local_epochs},
        {"batch_size", rc.batch_size},
        {"seed", rc.seed},
        {"eval_seed", rc.eval_seed},
        {"prior", {{"strategy", prior_strategy_name(rc.prior_strategy)}, {"seed", rc.prior_seed}}},
        {"arch", a},
        {"loss",
         {{"recon", recon_name(rc.recon_mode)},
          {"gaussian_var", rc.gaussian_var},
          {"consistency_grad", consistency_name(rc.consistency_grad)}}},
        {"optimizer", {{"kind", optimizer_name(rc.optimizer)}, {"lr", rc.lr}}},
        {"data",
         {{"source", rc.source == DataSource::synthetic ? "synthetic" : "mnist_dir"},
          {"n_per_group", rc.synth_n_per_group},
          {"side", rc.synth_side},
          {"eval_n_per_group", rc.eval_n_per_group},
          {"mnist_dir", rc.mnist_dir}}},
        {"output_dir", rc.output_dir},
        {"save_every", rc.save_every},
        {"workers", rc.workers}};
}

RunConfig load_run_config(const std::string& path, bool apply_env_seed) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    RunConfig rc = run_config_from_json(j);
    if (apply_env_seed) {
        if (const char* env = std::getenv("FVAE_SEED"); env != nullptr && *env != '\0') {
            try {
                rc.seed = std::stoull(env);
            } catch (const std::exception&) {
                throw ConfigError("FVAE_SEED is not an integer");
            }
        }
    }
    return rc;
}

std::string canonical_config_string(const RunConfig& rc) {
    return run_config_to_json(rc).dump();
}

std::string config_hash(const RunConfig& rc) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_config_string(rc))));
    return std::string(buf);
}

ModelConfig model_config_for(const RunConfig& rc, std::size_t input_dim) {
    ModelConfig mc;
    mc.kind = rc.variant;
    mc.groups = rc.groups;
    mc.input_dim = input_dim;
    mc.z1_dim = rc.z1_dim;
    mc.z2_dim = rc.z2_dim;
    const bool large = input_dim >= 512;
    mc.encoder_widths = rc.encoder_widths.empty()
                            ? (large ? std::vector<std::size_t>{256, 128}
                                     : std::vector<std::size_t>{64, 32})
                            : rc.encoder_widths;
    mc.z2_encoder_widths = rc.z2_encoder_widths.empty() ? std::vector<std::size_t>{32}
                                                        : rc.z2_encoder_widths;
    mc.z1_decoder_widths = rc.z1_decoder_widths.empty() ? std::vector<std::size_t>{32}
                                                        : rc.z1_decoder_widths;
    if (rc.image_decoder_widths.empty()) {
        mc.image_decoder_widths.assign(mc.encoder_widths.rbegin(), mc.encoder_widths.rend());
    } else {
        mc.image_decoder_widths = rc.image_decoder_widths;
    }
    mc.extra_branch_layers = rc.extra_branch_layers;
    mc.prior = make_prior_means(rc.prior_strategy, rc.groups, rc.z1_dim, rc.prior_seed);
    mc.recon_mode = rc.recon_mode;
    mc.gaussian_var = rc.gaussian_var;
    mc.consistency_grad = rc.consistency_grad;
    return mc;
}

Dataset make_train_dataset(const RunConfig& rc) {
    if (rc.source == DataSource::synthetic) {
        return synth_two_group(rc.synth_n_per_group, rc.synth_side,
                               mix_seed(rc.seed, 0x64617461ULL, 0));  // "data"
    }
    return load_mnist_dir(rc.mnist_dir, rc.groups).train;
}

Dataset make_eval_dataset(const RunConfig& rc) {
    if (rc.source == DataSource::synthetic) {
        return synth_two_group(rc.eval_n_per_group, rc.synth_side,
                               mix_seed(rc.seed, 0x64617461ULL, 1));
    }
    return load_mnist_dir(rc.mnist_dir, rc.groups).test;
}

}  // namespace fvae
