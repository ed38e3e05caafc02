#include "fvae/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "fvae/common.hpp"

namespace fvae {

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const std::string& config_hash, std::uint64_t round,
                     const ParamSet& params) {
    nlohmann::json header;
    header["config"] = config;
    header["config_hash"] = config_hash;
    header["round"] = round;
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : params) {
        dir.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}});
        offset += e.tensor.numel() * 4;
    }
    header["tensors"] = dir;
    const std::string header_str = header.dump();
    if (header_str.size() > 0xFFFFFFFFULL) throw UsageError("checkpoint header too large");

    std::string blob;
    blob.reserve(5 + 4 + header_str.size() + offset);
    blob.append(kCheckpointMagic, 5);
    put_u32_le(blob, static_cast<std::uint32_t>(header_str.size()));
    blob.append(header_str);
    for (const auto& e : params) {
        for (std::size_t i = 0; i < e.tensor.numel(); ++i) {
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(e.tensor[i]);
            put_u32_le(blob, bits);
        }
    }

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw DataError("cannot write checkpoint: " + path);
    const std::size_t written = std::fwrite(blob.data(), 1, blob.size(), f);
    std::fclose(f);
    if (written != blob.size()) throw DataError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f == nullptr) throw DataError("cannot open checkpoint: " + path);
    std::fseek(f, 0, SEEK_END);
    const long len = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(len < 0 ? 0 : len));
    if (!bytes.empty() && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw DataError("short read on checkpoint: " + path);
    }
    std::fclose(f);

    if (bytes.size() < 9 || std::memcmp(bytes.data(), kCheckpointMagic, 5) != 0) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    const std::uint32_t header_len = get_u32_le(bytes.data() + 5);
    if (bytes.size() < 9ULL + header_len) {
        throw DataError("checkpoint header truncated: " + path);
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }

    Checkpoint ck;
    try {
        ck.config = header.at("config");
        ck.config_hash = header.at("config_hash").get<std::string>();
        ck.round = header.at("round").get<std::uint64_t>();
        const std::size_t payload_at = 9ULL + header_len;
        std::uint64_t expect_offset = 0;
        for (const auto& entry : header.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const std::vector<std::size_t> shape =
                entry.at("shape").get<std::vector<std::size_t>>();
            const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
            if (offset != expect_offset) {
                throw DataError("checkpoint tensor '" + name +
                                "' offset is not gap-free (expected " +
                                std::to_string(expect_offset) + ", got " +
                                std::to_string(offset) + ")");
            }
            std::size_t numel = 1;
            for (const std::size_t s : shape) numel *= s;
            const std::size_t start = payload_at + offset;
            if (start + numel * 4 > bytes.size()) {
                throw DataError("checkpoint payload truncated at tensor '" + name + "'");
            }
            Tensor t = Tensor::zeros(shape);
            for (std::size_t i = 0; i < numel; ++i) {
                t[i] = std::bit_cast<float>(get_u32_le(bytes.data() + start + i * 4));
            }
            ck.params.add(name, std::move(t));
            expect_offset += numel * 4;
        }
        if (payload_at + expect_offset != bytes.size()) {
            throw DataError("checkpoint has trailing bytes after payload");
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header missing fields: " + std::string(e.what()));
    }
    return ck;
}

}  // namespace fvae
