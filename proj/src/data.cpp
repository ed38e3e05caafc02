#include "fvae/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fvae/rng.hpp"

namespace fvae {

Tensor Dataset::flattened() const {
    Tensor out = images;
    return Tensor({size(), pixel_count()}, std::vector<float>(out.data(), out.data() + out.numel()));
}

Tensor Dataset::flattened_rows(const std::vector<std::size_t>& idx) const {
    const std::size_t d = pixel_count();
    Tensor out = Tensor::zeros({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= size()) throw UsageError("dataset row index out of range");
        std::copy(images.data() + idx[r] * d, images.data() + (idx[r] + 1) * d,
                  out.data() + r * d);
    }
    return out;
}

std::vector<std::size_t> Dataset::indices_of_group(std::uint32_t g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i] == g) out.push_back(i);
    }
    return out;
}

void Dataset::validate() const {
    if (images.shape().size() != 3) throw DataError("dataset images must be [N x H x W]");
    if (size() == 0) throw DataError("dataset is empty");
    if (groups.size() != size()) throw DataError("dataset group labels do not match image count");
    for (std::size_t i = 0; i < images.numel(); ++i) {
        if (!(images[i] >= 0.0F && images[i] <= 1.0F)) {
            throw DataError("dataset pixel outside [0,1]");
        }
    }
    for (const std::uint32_t g : groups) {
        if (g >= group_count) throw DataError("dataset group label out of range");
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f == nullptr) throw DataError("cannot open file: " + path);
    std::fseek(f, 0, SEEK_END);
    const long len = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len < 0 ? 0 : len));
    if (!bytes.empty() && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw DataError("short read: " + path);
    }
    std::fclose(f);
    return bytes;
}

bool looks_gzipped(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

std::vector<std::uint8_t> gunzip_bytes(const std::vector<std::uint8_t>& bytes) {
    z_stream zs{};
    // 15 window bits + 32 enables zlib/gzip header auto-detection.
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw DataError("zlib init failed");
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 16);
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gzip decompression failed (zlib code " + std::to_string(rc) + ")");
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

IdxRaw parse_idx_raw(const std::vector<std::uint8_t>& bytes) {
    const std::vector<std::uint8_t>& raw = looks_gzipped(bytes) ? gunzip_bytes(bytes) : bytes;
    if (raw.size() < 4) throw DataError("IDX: truncated header at byte 0 (need 4 magic bytes)");
    if (raw[0] != 0 || raw[1] != 0) {
        throw DataError("IDX: bad magic at byte 0 (expected 0x00 0x00)");
    }
    if (raw[2] != 0x08) {
        throw DataError("IDX: unsupported type code " + std::to_string(raw[2]) +
                        " at byte 2 (only unsigned byte, code 8, is supported)");
    }
    const std::size_t rank = raw[3];
    if (rank == 0) throw DataError("IDX: zero-rank tensor at byte 3");
    const std::size_t header_len = 4 + 4 * rank;
    if (raw.size() < header_len) {
        throw DataError("IDX: truncated dimension table at byte " + std::to_string(raw.size()));
    }
    IdxRaw out;
    std::size_t total = 1;
    for (std::size_t d = 0; d < rank; ++d) {
        const std::uint32_t dim = read_be32(raw, 4 + 4 * d);
        if (dim == 0) {
            throw DataError("IDX: zero dimension at byte " + std::to_string(4 + 4 * d));
        }
        out.dims.push_back(dim);
        total *= dim;
    }
    if (raw.size() != header_len + total) {
        throw DataError("IDX: payload length mismatch at byte " + std::to_string(raw.size()) +
                        " (expected " + std::to_string(header_len + total) + " bytes total)");
    }
    out.payload.assign(raw.begin() + static_cast<std::ptrdiff_t>(header_len), raw.end());
    return out;
}

Tensor parse_idx(const std::vector<std::uint8_t>& bytes) {
    IdxRaw raw = parse_idx_raw(bytes);
    std::vector<std::size_t> shape(raw.dims.begin(), raw.dims.end());
    Tensor out = Tensor::zeros(shape);
    for (std::size_t i = 0; i < raw.payload.size(); ++i) {
        out[i] = static_cast<float>(raw.payload[i]) / 255.0F;
    }
    return out;
}

std::vector<std::uint8_t> serialize_idx(const IdxRaw& raw) {
    if (raw.dims.empty()) throw UsageError("serialize_idx: need at least one dimension");
    std::size_t total = 1;
    for (const std::uint32_t d : raw.dims) total *= d;
    if (total != raw.payload.size()) {
        throw UsageError("serialize_idx: payload does not match dimensions");
    }
    std::vector<std::uint8_t> out;
    out.reserve(4 + 4 * raw.dims.size() + raw.payload.size());
    out.push_back(0);
    out.push_back(0);
    out.push_back(0x08);
    out.push_back(static_cast<std::uint8_t>(raw.dims.size()));
    for (const std::uint32_t d : raw.dims) {
        out.push_back(static_cast<std::uint8_t>(d >> 24));
        out.push_back(static_cast<std::uint8_t>(d >> 16));
        out.push_back(static_cast<std::uint8_t>(d >> 8));
        out.push_back(static_cast<std::uint8_t>(d));
    }
    out.insert(out.end(), raw.payload.begin(), raw.payload.end());
    return out;
}

Dataset synth_two_group(std::size_t n_per_group, std::size_t side, std::uint64_t seed) {
    if (n_per_group == 0) throw ConfigError("synthetic dataset needs n_per_group > 0");
    if (side < 8) throw ConfigError("synthetic dataset needs side >= 8");
    Dataset ds;
    ds.source = "synthetic";
    ds.group_count = 2;
    ds.images = Tensor::zeros({2 * n_per_group, side, side});
    ds.groups.resize(2 * n_per_group);
    RngStream rng = RngStream::derive(seed, 0x73796e7468ULL);  // "synth"
    const double cx = (static_cast<double>(side) - 1.0) / 2.0;
    for (std::size_t g = 0; g < 2; ++g) {
        for (std::size_t s = 0; s < n_per_group; ++s) {
            const std::size_t n = g * n_per_group + s;
            ds.groups[n] = static_cast<std::uint32_t>(g);
            float* img = ds.images.data() + n * side * side;
            for (std::size_t p = 0; p < side * side; ++p) {
                img[p] = static_cast<float>(rng.uniform() * 0.05);
            }
            if (g == 0) {
                // full-width bar at a continuous row offset with a soft
                // vertical profile: bright pixels reach the border columns,
                // and the offset is a smooth factor a small model can learn
                const double row_c =
                    1.2 + rng.uniform() * (static_cast<double>(side) - 3.4);
                const double band = 1.0 + rng.uniform() * 0.5;
                const double level = 0.95 + rng.uniform() * 0.05;
                for (std::size_t r = 0; r < side; ++r) {
                    const double dr = static_cast<double>(r) - row_c;
                    const double v = level * std::exp(-(dr * dr) / (2.0 * band * band));
                    for (std::size_t c = 0; c < side; ++c) {
                        float& px = img[r * side + c];
                        px = std::min(1.0F, px + static_cast<float>(v));
                    }
                }
            } else {
                // centered blob; the radius range is wide so the decoder has
                // to track it, but capped so the border ring stays dark
                const double sigma =
                    0.09 * static_cast<double>(side) +
                    rng.uniform() * 0.10 * static_cast<double>(side);
                const double level = 0.85 + rng.uniform() * 0.15;
                for (std::size_t r = 0; r < side; ++r) {
                    for (std::size_t c = 0; c < side; ++c) {
                        const double dr = static_cast<double>(r) - cx;
                        const double dc = static_cast<double>(c) - cx;
                        const double v =
                            level * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
                        float& px = img[r * side + c];
                        px = std::min(1.0F, px + static_cast<float>(v));
                    }
                }
            }
        }
    }
    ds.validate();
    return ds;
}

namespace {

std::string find_idx_file(const std::string& dir, const std::string& base) {
    namespace fs = std::filesystem;
    for (const std::string& name : {base, base + ".gz"}) {
        const fs::path p = fs::path(dir) / name;
        if (fs::exists(p)) return p.string();
    }
    throw DataError("missing IDX file " + base + "[.gz] in " + dir);
}

Dataset mnist_split(const std::string& dir, const std::string& images_base,
                    const std::string& labels_base, std::uint32_t groups) {
    Tensor images = parse_idx(read_file_bytes(find_idx_file(dir, images_base)));
    IdxRaw labels = parse_idx_raw(read_file_bytes(find_idx_file(dir, labels_base)));
    if (images.shape().size() != 3) throw DataError("MNIST image file must be rank 3");
    if (labels.dims.size() != 1 || labels.dims[0] != images.shape()[0]) {
        throw DataError("MNIST label count does not match image count");
    }
    Dataset ds;
    ds.source = "mnist:" + dir;
    ds.group_count = groups;
    ds.images = std::move(images);
    ds.groups.resize(labels.payload.size());
    for (std::size_t i = 0; i < labels.payload.size(); ++i) {
        const std::uint32_t label = labels.payload[i];
        if (label > 9) throw DataError("MNIST label out of range at sample " + std::to_string(i));
        ds.groups[i] = label * groups / 10;
    }
    ds.validate();
    return ds;
}

}  // namespace

MnistPair load_mnist_dir(const std::string& dir, std::uint32_t groups) {
    if (groups == 0 || groups > 10) {
        throw ConfigError("MNIST group count must be between 1 and 10");
    }
    MnistPair out;
    out.train = mnist_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", groups);
    out.test = mnist_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", groups);
    return out;
}

Partition partition(const Dataset& data, std::uint32_t groups, std::uint32_t clients_per_group,
                    std::uint64_t seed) {
    if (groups == 0 || clients_per_group == 0) {
        throw ConfigError("partition needs positive group and client counts");
    }
    if (data.group_count < groups) {
        throw ConfigError("dataset has fewer groups than requested");
    }
    Partition part;
    part.client_indices.resize(std::size_t(groups) * clients_per_group);
    part.client_groups.resize(part.client_indices.size());
    for (std::uint32_t g = 0; g < groups; ++g) {
        std::vector<std::size_t> idx = data.indices_of_group(g);
        if (idx.size() < clients_per_group) {
            throw ConfigError("group " + std::to_string(g) + " has " +
                              std::to_string(idx.size()) + " samples, fewer than " +
                              std::to_string(clients_per_group) + " clients");
        }
        RngStream rng = RngStream::derive(seed, 0x706172ULL, g);  // "par"
        rng.shuffle(idx.begin(), idx.end());
        const std::size_t base = idx.size() / clients_per_group;
        const std::size_t rem = idx.size() % clients_per_group;
        std::size_t pos = 0;
        for (std::uint32_t c = 0; c < clients_per_group; ++c) {
            const std::size_t take = base + (c < rem ? 1 : 0);
            const std::size_t client = std::size_t(g) * clients_per_group + c;
            part.client_indices[client].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                               idx.begin() + static_cast<std::ptrdiff_t>(pos + take));
            part.client_groups[client] = g;
            pos += take;
        }
    }
    return part;
}

}  // namespace fvae
