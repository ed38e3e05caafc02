#include <doctest.h>

#include <bit>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvae/checkpoint.hpp"
#include "fvae/data.hpp"
#include "fvae/pgm.hpp"
#include "fvae/rng.hpp"
#include "fvae/run_config.hpp"

using namespace fvae;
using doctest::Contains;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "fvae_checkpoint_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

ParamSet sample_params() {
    ParamSet ps;
    // includes signed zero, a denormal and a near-max float so byte-level
    // comparisons actually exercise the encoding
    ps.add("encoder.w", Tensor({2, 3}, {1.5F, -2.25F, 0.0F, -0.0F, 3e38F, 1e-42F}));
    RngStream rng(41);
    Tensor b = Tensor::zeros({4});
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.normal());
    ps.add("encoder.b", std::move(b));
    ps.add("scalar.bias", Tensor({1}, {-1.0F}));
    return ps;
}

std::vector<std::uint8_t> pgm_bytes(const std::string& header,
                                    const std::vector<std::uint8_t>& raster) {
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), raster.begin(), raster.end());
    return out;
}

// rebuilds a container around a modified header, keeping the payload
std::vector<std::uint8_t> with_header(const std::vector<std::uint8_t>& original,
                                      const json& header) {
    const std::uint32_t old_len = std::uint32_t(original[5]) | (std::uint32_t(original[6]) << 8) |
                                  (std::uint32_t(original[7]) << 16) |
                                  (std::uint32_t(original[8]) << 24);
    const std::string hs = header.dump();
    std::vector<std::uint8_t> out(original.begin(), original.begin() + 5);
    out.push_back(static_cast<std::uint8_t>(hs.size() & 0xFF));
    out.push_back(static_cast<std::uint8_t>((hs.size() >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((hs.size() >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((hs.size() >> 24) & 0xFF));
    out.insert(out.end(), hs.begin(), hs.end());
    out.insert(out.end(), original.begin() + 9 + old_len, original.end());
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("checkpoint round-trips bit-exactly and re-saves byte-identically") {
    const auto dir = temp_dir();
    const std::string path = (dir / "roundtrip.ckpt").string();
    const ParamSet ps = sample_params();

    RunConfig rc;
    rc.variant = VariantKind::fission_l;
    rc.prior_strategy = PriorStrategy::one_hot;
    rc.seed = 4711;
    const json cfg = run_config_to_json(rc);
    save_checkpoint(path, cfg, config_hash(rc), 1234567890123ULL, ps);

    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.config == cfg);
    CHECK(ck.config_hash == config_hash(rc));
    CHECK(ck.round == 1234567890123ULL);
    REQUIRE(ck.params.size() == ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(ck.params[i].name == ps[i].name);
        CHECK(ck.params[i].tensor.shape() == ps[i].tensor.shape());
    }
    CHECK(ck.params.bitwise_equal(ps));

    // the stored config reproduces the run configuration verbatim
    const RunConfig rc2 = run_config_from_json(ck.config);
    CHECK(canonical_config_string(rc2) == canonical_config_string(rc));

    const std::string resaved = (dir / "resaved.ckpt").string();
    save_checkpoint(resaved, ck.config, ck.config_hash, ck.round, ck.params);
    CHECK(read_file_bytes(resaved) == read_file_bytes(path));
}

TEST_CASE("checkpoint container layout is magic, header length, JSON, packed f32") {
    const auto dir = temp_dir();
    const std::string path = (dir / "layout.ckpt").string();
    save_checkpoint(path, json{{"k", "v"}}, "0123456789abcdef", 3, sample_params());

    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    REQUIRE(bytes.size() > 9);
    CHECK(bytes[0] == 'F');
    CHECK(bytes[1] == 'V');
    CHECK(bytes[2] == 'A');
    CHECK(bytes[3] == 'E');
    CHECK(bytes[4] == '1');
    const std::uint32_t hlen = std::uint32_t(bytes[5]) | (std::uint32_t(bytes[6]) << 8) |
                               (std::uint32_t(bytes[7]) << 16) | (std::uint32_t(bytes[8]) << 24);
    REQUIRE(bytes.size() > 9ULL + hlen);
    const json header = json::parse(bytes.begin() + 9, bytes.begin() + 9 + hlen);
    CHECK(header.at("round").get<std::uint64_t>() == 3);
    CHECK(header.at("config_hash").get<std::string>() == "0123456789abcdef");
    const json& tensors = header.at("tensors");
    REQUIRE(tensors.size() == 3);
    CHECK(tensors[0].at("name") == "encoder.w");
    CHECK(tensors[0].at("offset").get<std::uint64_t>() == 0);
    CHECK(tensors[1].at("offset").get<std::uint64_t>() == 24);  // 2*3 floats
    CHECK(tensors[2].at("offset").get<std::uint64_t>() == 40);

    // first payload float is 1.5f = 0x3FC00000 little-endian
    const std::size_t payload = 9ULL + hlen;
    CHECK(bytes[payload + 0] == 0x00);
    CHECK(bytes[payload + 1] == 0x00);
    CHECK(bytes[payload + 2] == 0xC0);
    CHECK(bytes[payload + 3] == 0x3F);
    CHECK(bytes.size() - payload == 44);  // (6+4+1) floats
}

TEST_CASE("checkpoint loader rejects malformed containers") {
    const auto dir = temp_dir();
    const std::string good_path = (dir / "good.ckpt").string();
    save_checkpoint(good_path, json{{"k", 1}}, "hash", 9, sample_params());
    const std::vector<std::uint8_t> good = read_file_bytes(good_path);
    const std::uint32_t hlen = std::uint32_t(good[5]) | (std::uint32_t(good[6]) << 8) |
                               (std::uint32_t(good[7]) << 16) | (std::uint32_t(good[8]) << 24);
    const std::string bad_path = (dir / "bad.ckpt").string();

    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS(load_checkpoint((dir / "absent.ckpt").string()),
                             Contains("cannot open"), DataError);
    }
    SUBCASE("bad magic") {
        std::vector<std::uint8_t> bytes = good;
        bytes[0] = 'X';
        write_bytes(bad_path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("bad magic"), DataError);
    }
    SUBCASE("file shorter than the fixed prefix") {
        write_bytes(bad_path, {'F', 'V', 'A', 'E'});
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("bad magic"), DataError);
    }
    SUBCASE("truncated header") {
        std::vector<std::uint8_t> bytes = good;
        bytes.resize(9 + hlen - 5);
        write_bytes(bad_path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("header truncated"), DataError);
    }
    SUBCASE("header that is not JSON") {
        std::vector<std::uint8_t> bytes = good;
        bytes[9] = 'X';
        write_bytes(bad_path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("not valid JSON"), DataError);
    }
    SUBCASE("header missing a required field") {
        json header = json::parse(good.begin() + 9, good.begin() + 9 + hlen);
        header.erase("round");
        write_bytes(bad_path, with_header(good, header));
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("missing fields"), DataError);
    }
    SUBCASE("tampered tensor offset") {
        json header = json::parse(good.begin() + 9, good.begin() + 9 + hlen);
        header["tensors"][1]["offset"] = 28;
        write_bytes(bad_path, with_header(good, header));
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("gap-free"), DataError);
    }
    SUBCASE("truncated payload") {
        std::vector<std::uint8_t> bytes = good;
        bytes.resize(bytes.size() - 3);
        write_bytes(bad_path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("payload truncated"), DataError);
    }
    SUBCASE("trailing bytes") {
        std::vector<std::uint8_t> bytes = good;
        bytes.push_back(0);
        write_bytes(bad_path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), Contains("trailing bytes"), DataError);
    }
    SUBCASE("unwritable output path") {
        CHECK_THROWS_WITH_AS(
            save_checkpoint("/nonexistent_dir_fvae/x.ckpt", json{{"k", 1}}, "h", 0, sample_params()),
            Contains("cannot write"), DataError);
    }
}

TEST_CASE("pgm writer clamps, quantizes and round-trips through the parser") {
    const auto dir = temp_dir();
    const std::string path = (dir / "img.pgm").string();
    const float pixels[6] = {0.0F, 1.0F, 0.5F, -0.5F, 1.7F, 0.2F};
    write_pgm(path, 3, 2, pixels);

    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    const std::string expected_header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == expected_header.size() + 6);
    CHECK(std::string(bytes.begin(), bytes.begin() + 11) == expected_header);

    const PgmImage img = parse_pgm(bytes);
    CHECK(img.width == 3);
    CHECK(img.height == 2);
    CHECK(img.maxval == 255);
    const std::vector<std::uint8_t> want = {0, 255, 128, 0, 255, 51};
    CHECK(img.pixels == want);

    CHECK_THROWS_AS(write_pgm(path, 0, 2, pixels), UsageError);
}

TEST_CASE("pgm parser accepts comments and whitespace but enforces the grammar") {
    const std::vector<std::uint8_t> raster = {0x23, 0x0A, 0x20, 0xFF, 0x00, 0x31};

    SUBCASE("comments between header tokens") {
        const PgmImage img =
            parse_pgm(pgm_bytes("P5\n# free comment\n3 # width\n2\n255\n", raster));
        CHECK(img.width == 3);
        CHECK(img.height == 2);
        // raster bytes that look like comments or whitespace pass through raw
        CHECK(img.pixels == raster);
    }
    SUBCASE("tabs as separators") {
        const PgmImage img = parse_pgm(pgm_bytes("P5\t3\t2\t255\t", raster));
        CHECK(img.width == 3);
        CHECK(img.pixels == raster);
    }
    SUBCASE("wrong magic") {
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P4\n3 2\n255\n", raster)),
                             Contains("missing P5"), DataError);
    }
    SUBCASE("missing numbers") {
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P5\nab", {})), Contains("expected number"),
                             DataError);
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P5 3 2", {})), Contains("expected number"),
                             DataError);
    }
    SUBCASE("unsupported maxval") {
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P5\n3 2\n0\n", raster)),
                             Contains("unsupported maxval"), DataError);
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P5\n3 2\n999\n", raster)),
                             Contains("unsupported maxval"), DataError);
    }
    SUBCASE("missing raster separator") {
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P5\n3 2\n255", {})),
                             Contains("single whitespace"), DataError);
    }
    SUBCASE("raster size mismatch") {
        std::vector<std::uint8_t> short_raster(raster.begin(), raster.end() - 1);
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P5\n3 2\n255\n", short_raster)),
                             Contains("size mismatch"), DataError);
        std::vector<std::uint8_t> long_raster = raster;
        long_raster.push_back(9);
        CHECK_THROWS_WITH_AS(parse_pgm(pgm_bytes("P5\n3 2\n255\n", long_raster)),
                             Contains("size mismatch"), DataError);
    }
}

TEST_CASE("run config serializes losslessly and hashes canonically") {
    RunConfig rc;
    rc.variant = VariantKind::fission_hld;
    rc.clients_per_group = 4;
    rc.participation_p = 0.25;
    rc.rounds = 12;
    rc.local_epochs = 2;
    rc.batch_size = 16;
    rc.seed = 99;
    rc.eval_seed = 111;
    rc.prior_strategy = PriorStrategy::wave;
    rc.prior_seed = 3;
    rc.z1_dim = 6;
    rc.z2_dim = 3;
    rc.encoder_widths = {24, 12};
    rc.z2_encoder_widths = {10};
    rc.z1_decoder_widths = {9};
    rc.image_decoder_widths = {12, 24};
    rc.extra_branch_layers = {{1, 2}};
    rc.recon_mode = ReconMode::gaussian_fixed_var;
    rc.gaussian_var = 0.5;
    rc.consistency_grad = ConsistencyGrad::stop_p;
    rc.optimizer = OptimizerKind::sgd;
    rc.lr = 0.05;
    rc.synth_n_per_group = 64;
    rc.synth_side = 8;
    rc.eval_n_per_group = 32;
    rc.output_dir = "runs/elsewhere";
    rc.save_every = 5;
    rc.workers = 2;
    rc.validate();

    const json j = run_config_to_json(rc);
    const RunConfig rc2 = run_config_from_json(j);
    CHECK(run_config_to_json(rc2) == j);
    CHECK(canonical_config_string(rc2) == canonical_config_string(rc));
    CHECK(rc2.variant == VariantKind::fission_hld);
    CHECK(rc2.participation_p == 0.25);
    CHECK(rc2.prior_strategy == PriorStrategy::wave);
    CHECK(rc2.encoder_widths == std::vector<std::size_t>{24, 12});
    CHECK(rc2.extra_branch_layers.at(1) == 2);
    CHECK(rc2.recon_mode == ReconMode::gaussian_fixed_var);
    CHECK(rc2.consistency_grad == ConsistencyGrad::stop_p);
    CHECK(rc2.optimizer == OptimizerKind::sgd);
    CHECK(rc2.workers == 2);

    const std::string h = config_hash(rc);
    CHECK(h.size() == 16);
    CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
    CHECK(config_hash(rc2) == h);
    RunConfig other = rc;
    other.seed = 100;
    CHECK(config_hash(other) != h);
}

TEST_CASE("run config parsing rejects unknown keys and invalid values") {
    CHECK_THROWS_WITH_AS(run_config_from_json(json{{"federation", json::object()}}),
                         Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(run_config_from_json(json{{"arch", {{"depth", 3}}}}),
                         Contains("unknown key"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"variant", "fissionvae"}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"participation_p", 0.0}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"participation_p", 1.5}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"batch_size", 0}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"workers", 0}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"groups", 3}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"arch", {{"z1_dim", 0}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"data", {{"side", 7}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"data", {{"source", "mnist_dir"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"data", {{"source", "imagenet"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"optimizer", {{"kind", "rmsprop"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"loss", {{"recon", "poisson"}}}}), ConfigError);
    CHECK_THROWS_WITH_AS(
        run_config_from_json(json{{"arch", {{"extra_branch_layers", {{"x1", 2}}}}}}),
        Contains("not a group index"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"seed", "not-a-number"}}), ConfigError);
    // variant/prior pairing is enforced at parse time too
    CHECK_THROWS_AS(
        run_config_from_json(json{{"variant", "fedvae"}, {"prior", {{"strategy", "one_hot"}}}}),
        ConfigError);
}

TEST_CASE("config file loading honors the environment seed override") {
    const auto dir = temp_dir();
    const std::string path = (dir / "run.json").string();
    {
        std::ofstream out(path);
        out << R"({"variant": "fission_l", "prior": {"strategy": "one_hot"}, "seed": 42})";
    }

    unsetenv("FVAE_SEED");
    CHECK(load_run_config(path).seed == 42);

    setenv("FVAE_SEED", "777", 1);
    CHECK(load_run_config(path).seed == 777);
    CHECK(load_run_config(path, false).seed == 42);

    setenv("FVAE_SEED", "", 1);
    CHECK(load_run_config(path).seed == 42);

    setenv("FVAE_SEED", "abc", 1);
    CHECK_THROWS_WITH_AS(load_run_config(path), Contains("FVAE_SEED"), ConfigError);
    unsetenv("FVAE_SEED");

    CHECK_THROWS_WITH_AS(load_run_config((dir / "absent.json").string()),
                         Contains("cannot open"), ConfigError);
    {
        std::ofstream out(path);
        out << "{ not json";
    }
    CHECK_THROWS_WITH_AS(load_run_config(path), Contains("parse error"), ConfigError);
}

TEST_CASE("model config derivation applies input-scaled width defaults") {
    RunConfig rc;
    rc.variant = VariantKind::fission_hld;
    rc.prior_strategy = PriorStrategy::one_hot;
    rc.z1_dim = 6;
    rc.z2_dim = 3;

    const ModelConfig small = model_config_for(rc, 64);
    CHECK(small.input_dim == 64);
    CHECK(small.encoder_widths == std::vector<std::size_t>{64, 32});
    CHECK(small.image_decoder_widths == std::vector<std::size_t>{32, 64});
    CHECK(small.z2_encoder_widths == std::vector<std::size_t>{32});
    CHECK(small.z1_decoder_widths == std::vector<std::size_t>{32});
    CHECK(small.prior.strategy == PriorStrategy::one_hot);
    CHECK(small.groups == 2);

    const ModelConfig large = model_config_for(rc, 784);
    CHECK(large.encoder_widths == std::vector<std::size_t>{256, 128});
    CHECK(large.image_decoder_widths == std::vector<std::size_t>{128, 256});

    rc.encoder_widths = {48};
    rc.image_decoder_widths = {20, 40};
    const ModelConfig manual = model_config_for(rc, 64);
    CHECK(manual.encoder_widths == std::vector<std::size_t>{48});
    CHECK(manual.image_decoder_widths == std::vector<std::size_t>{20, 40});
}

TEST_SUITE_END();
