#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fvae/checkpoint.hpp"
#include "fvae/federation.hpp"
#include "fvae/gradcheck.hpp"
#include "fvae/metrics.hpp"
#include "fvae/pgm.hpp"
#include "fvae/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fvae;

namespace {

std::vector<std::uint32_t> cyclic_swap_map(std::uint32_t k) {
    std::vector<std::uint32_t> map(k);
    for (std::uint32_t g = 0; g < k; ++g) map[g] = (g + 1) % k;
    return map;
}

std::uint64_t env_or(std::uint64_t fallback) {
    if (const char* env = std::getenv("FVAE_SEED"); env != nullptr && *env != '\0') {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError("FVAE_SEED is not an integer");
        }
    }
    return fallback;
}

struct LoadedModel {
    RunConfig rc;
    std::string hash;
    std::uint64_t round = 0;
    std::size_t input_dim = 0;
    VaeModel model;
};

LoadedModel load_model_from_checkpoint(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    RunConfig rc = run_config_from_json(ck.config);
    const std::string recomputed = config_hash(rc);
    if (recomputed != ck.config_hash) {
        throw DataError("checkpoint config hash mismatch (stored " + ck.config_hash +
                        ", recomputed " + recomputed + ")");
    }
    const std::size_t input_dim =
        rc.source == DataSource::synthetic ? rc.synth_side * rc.synth_side : 784;
    VaeModel model = build_model(rc, input_dim);
    model.params().require_compatible(ck.params, "checkpoint load");
    model.set_params(ck.params);
    return LoadedModel{std::move(rc), ck.config_hash, ck.round, input_dim, std::move(model)};
}

int cmd_train(const std::string& config_path, std::uint32_t workers_override,
              std::int64_t save_every_override, const std::string& out_override) {
    RunConfig rc = load_run_config(config_path);
    if (workers_override > 0) rc.workers = workers_override;
    if (save_every_override >= 0) rc.save_every = static_cast<std::uint32_t>(save_every_override);
    if (!out_override.empty()) rc.output_dir = out_override;
    rc.validate();

    const Dataset train_data = make_train_dataset(rc);
    const Partition part = partition(train_data, rc.groups, rc.clients_per_group, rc.seed);
    const std::vector<ClientState> clients = build_clients(train_data, part);
    VaeModel model = build_model(rc, train_data.pixel_count());
    const FederationConfig fc = FederationConfig::from_run_config(rc);

    fs::create_directories(rc.output_dir);
    const std::string log_path = (fs::path(rc.output_dir) / "rounds.jsonl").string();
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw DataError("cannot write round log: " + log_path);

    const json config_json = run_config_to_json(rc);
    const std::string hash = config_hash(rc);

    auto save = [&](const std::string& name, std::uint64_t round, const ParamSet& params) {
        const std::string path = (fs::path(rc.output_dir) / name).string();
        save_checkpoint(path, config_json, hash, round, params);
        return path;
    };

    TrainResult result = run_training(
        model, clients, fc, [&](const RoundReport& report, const ParamSet& params) {
            log << report.to_json_line() << "\n";
            log.flush();
            if (rc.save_every > 0 && (report.round + 1) % rc.save_every == 0) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoint_round_%04u.ckpt",
                              report.round + 1);
                save(name, report.round + 1, params);
            }
        });

    const std::string final_path = save("final.ckpt", rc.rounds, result.params);
    const double first = result.reports.empty() ? 0.0 : result.reports.front().aggregate_loss;
    const double last = result.reports.empty() ? 0.0 : result.reports.back().aggregate_loss;
    std::printf("trained %s for %u rounds (loss %.6f -> %.6f)\n",
                variant_name(rc.variant).c_str(), rc.rounds, first, last);
    std::printf("checkpoint: %s\n", final_path.c_str());
    std::printf("round log: %s\n", log_path.c_str());
    std::printf("config hash: %s\n", hash.c_str());
    return 0;
}

int cmd_generate(const std::string& ckpt_path, std::uint32_t group, const std::string& pathway_s,
                 std::size_t n, bool swap_priors, std::string out_dir, std::int64_t seed_flag) {
    LoadedModel lm = load_model_from_checkpoint(ckpt_path);
    const Pathway pathway = pathway_from_name(pathway_s);
    if (out_dir.empty()) {
        out_dir = (fs::path(ckpt_path).parent_path() / "samples").string();
    }
    fs::create_directories(out_dir);

    const std::size_t side_h = lm.rc.source == DataSource::synthetic ? lm.rc.synth_side : 28;
    const std::size_t side_w = side_h;
    const std::uint64_t seed =
        seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag)
                       : env_or(mix_seed(lm.rc.seed, 0x67656e73ULL, group,
                                         static_cast<std::uint64_t>(pathway)));  // "gens"

    std::vector<std::uint32_t> swap;
    if (swap_priors) swap = cyclic_swap_map(lm.rc.groups);
    RngStream rng(seed);
    const Tensor images =
        lm.model.generate(group, pathway, n, rng, swap_priors ? &swap : nullptr);

    json index;
    index["config_hash"] = lm.hash;
    index["group"] = group;
    index["pathway"] = pathway_name(pathway);
    index["seed"] = seed;
    index["swap_priors"] = swap_priors;
    index["width"] = side_w;
    index["height"] = side_h;
    json files = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "sample_g%u_%s_%04zu.pgm", group, pathway_s.c_str(), i);
        const std::string path = (fs::path(out_dir) / name).string();
        write_pgm(path, side_w, side_h, images.data() + i * side_w * side_h);
        files.push_back(name);
    }
    index["files"] = files;
    const std::string index_path = (fs::path(out_dir) / "index.json").string();
    std::ofstream out(index_path, std::ios::trunc);
    if (!out) throw DataError("cannot write index: " + index_path);
    out << index.dump(2) << "\n";
    std::printf("wrote %zu samples to %s\n", n, out_dir.c_str());
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& config_path,
                 std::int64_t eval_seed_flag, std::string out_dir, const std::string& pathway_s,
                 bool swap_priors) {
    LoadedModel lm = load_model_from_checkpoint(ckpt_path);
    if (!config_path.empty()) {
        const RunConfig external = load_run_config(config_path, /*apply_env_seed=*/false);
        if (config_hash(external) != lm.hash) {
            throw ConfigError("config file does not match checkpoint (hash " +
                              config_hash(external) + " vs " + lm.hash + ")");
        }
    }
    const Dataset eval_data = make_eval_dataset(lm.rc);
    if (eval_data.group_count != lm.rc.groups) {
        throw ConfigError("eval dataset has " + std::to_string(eval_data.group_count) +
                          " groups but checkpoint expects " + std::to_string(lm.rc.groups));
    }
    if (eval_data.pixel_count() != lm.input_dim) {
        throw ConfigError("eval dataset pixel count does not match checkpoint input size");
    }
    const std::uint64_t eval_seed = eval_seed_flag >= 0
                                        ? static_cast<std::uint64_t>(eval_seed_flag)
                                        : env_or(lm.rc.eval_seed);
    if (out_dir.empty()) {
        out_dir = (fs::path(ckpt_path).parent_path() / "eval").string();
    }
    fs::create_directories(out_dir);

    std::vector<Pathway> pathways;
    if (pathway_s == "all") {
        pathways = lm.model.valid_pathways();
    } else {
        pathways.push_back(pathway_from_name(pathway_s));
    }
    std::vector<std::uint32_t> swap;
    if (swap_priors) swap = cyclic_swap_map(lm.rc.groups);

    const std::string csv_path = (fs::path(out_dir) / "metrics.csv").string();
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw DataError("cannot write CSV: " + csv_path);
    csv << "# config_hash=" << lm.hash << "\n";
    csv << "variant,prior,pathway,nll,frechet_proxy,latent_separation";
    for (std::uint32_t g = 0; g < lm.rc.groups; ++g) csv << ",fidelity_g" << g;
    csv << "\n";

    for (const Pathway p : pathways) {
        const MetricReport rep =
            evaluate_model(lm.model, eval_data, p, eval_seed, swap_priors ? &swap : nullptr);
        json j;
        j["config_hash"] = lm.hash;
        j["variant"] = variant_name(lm.rc.variant);
        j["prior"] = prior_strategy_name(lm.rc.prior_strategy);
        j["pathway"] = rep.pathway;
        j["nll"] = rep.nll;
        j["frechet_proxy"] = rep.frechet_proxy;
        j["frechet_regularized"] = rep.frechet_regularized;
        j["latent_separation"] = rep.latent_separation;
        j["fidelity"] = rep.fidelity;
        j["real_samples"] = rep.real_samples;
        j["generated_samples"] = rep.generated_samples;
        j["eval_seed"] = eval_seed;
        j["swap_priors"] = swap_priors;
        const std::string report_path =
            (fs::path(out_dir) / ("metrics_" + rep.pathway + ".json")).string();
        std::ofstream rout(report_path, std::ios::trunc);
        if (!rout) throw DataError("cannot write report: " + report_path);
        rout << j.dump(2) << "\n";

        char line[512];
        std::snprintf(line, sizeof line, "%s,%s,%s,%.9g,%.9g,%.9g",
                      variant_name(lm.rc.variant).c_str(),
                      prior_strategy_name(lm.rc.prior_strategy).c_str(), rep.pathway.c_str(),
                      rep.nll, rep.frechet_proxy, rep.latent_separation);
        csv << line;
        for (const double f : rep.fidelity) {
            std::snprintf(line, sizeof line, ",%.9g", f);
            csv << line;
        }
        csv << "\n";
        std::printf("%s: nll=%.4f frechet=%.4f separation=%.4f fidelity", rep.pathway.c_str(),
                    rep.nll, rep.frechet_proxy, rep.latent_separation);
        for (const double f : rep.fidelity) std::printf(" %.3f", f);
        std::printf("\n");
    }
    std::printf("metrics: %s\n", csv_path.c_str());
    return 0;
}

int cmd_gradcheck(std::uint32_t seeds, double tol) {
    const std::vector<GradCheckRow> rows = run_gradcheck(seeds, tol);
    bool ok = true;
    std::printf("%-20s %12s %8s  %s\n", "component", "max_rel_err", "checks", "status");
    for (const auto& row : rows) {
        const bool pass = row.pass();
        ok = ok && pass;
        std::printf("%-20s %12.3e %8d  %s\n", row.component.c_str(), row.max_rel_err,
                    row.checks, pass ? "PASS" : "FAIL");
    }
    if (!ok) {
        std::fprintf(stderr, "error: gradient check failed (tolerance %.1e)\n", tol);
        return 3;
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    json j;
    j["config"] = ck.config;
    j["config_hash"] = ck.config_hash;
    j["round"] = ck.round;
    json dir = json::array();
    std::uint64_t offset = 0;
    std::uint64_t total = 0;
    for (const auto& e : ck.params) {
        dir.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}});
        offset += e.tensor.numel() * 4;
        total += e.tensor.numel();
    }
    j["tensors"] = dir;
    j["parameter_count"] = total;
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FissionVAE federated training simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string ckpt_path;
    std::string out_dir;
    std::string pathway = "all";
    std::uint32_t group = 0;
    std::size_t n = 16;
    bool swap_priors = false;
    std::uint32_t workers = 0;
    std::int64_t save_every = -1;
    std::int64_t seed_flag = -1;
    std::int64_t eval_seed_flag = -1;
    std::uint32_t gc_seeds = 20;
    double gc_tol = 1e-4;

    CLI::App* train = app.add_subcommand("train", "run federated training from a config file");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--workers", workers, "client worker threads (overrides config)");
    train->add_option("--save-every", save_every, "checkpoint every N rounds (0 = final only)");
    train->add_option("--out", out_dir, "output directory (overrides config)");

    CLI::App* gen = app.add_subcommand("generate", "sample images from a checkpoint");
    gen->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    gen->add_option("--group", group, "client group to generate for")->required();
    gen->add_option("--pathway", pathway, "from_z2 | from_z1_via_encoder | from_z1_direct")
        ->required();
    gen->add_option("--n", n, "number of samples");
    gen->add_flag("--swap-priors", swap_priors, "apply the cyclic group->prior permutation");
    gen->add_option("--out", out_dir, "output directory");
    gen->add_option("--seed", seed_flag, "sampling seed");

    CLI::App* eval = app.add_subcommand("evaluate", "compute metrics for a checkpoint");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--config", config_path, "config file to cross-check against the checkpoint");
    eval->add_option("--eval-seed", eval_seed_flag, "evaluation seed");
    eval->add_option("--out", out_dir, "output directory");
    eval->add_option("--pathway", pathway, "pathway name or 'all'");
    eval->add_flag("--swap-priors", swap_priors, "evaluate with the swapped prior assignment");

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--seeds", gc_seeds, "random repetitions per component");
    gc->add_option("--tol", gc_tol, "relative error tolerance");

    CLI::App* inspect = app.add_subcommand("inspect", "print a checkpoint header");
    inspect->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (app.got_subcommand(train)) {
            return cmd_train(config_path, workers, save_every, out_dir);
        }
        if (app.got_subcommand(gen)) {
            return cmd_generate(ckpt_path, group, pathway, n, swap_priors, out_dir, seed_flag);
        }
        if (app.got_subcommand(eval)) {
            return cmd_evaluate(ckpt_path, config_path, eval_seed_flag, out_dir, pathway,
                                swap_priors);
        }
        if (app.got_subcommand(gc)) {
            return cmd_gradcheck(gc_seeds, gc_tol);
        }
        if (app.got_subcommand(inspect)) {
            return cmd_inspect(ckpt_path);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    }
    return 1;
}
