#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fvae/common.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

// Images stay 2-d in storage; models consume the flattened view.
struct Dataset {
    Tensor images;  // [N x H x W], pixels in [0,1]
    std::vector<std::uint32_t> groups;  // one group label per image
    std::string source;
    std::uint32_t group_count = 0;

    std::size_t size() const { return images.numel() == 0 ? 0 : images.shape()[0]; }
    std::size_t height() const { return images.shape()[1]; }
    std::size_t width() const { return images.shape()[2]; }
    std::size_t pixel_count() const { return height() * width(); }

    // [N x H*W] copy for MLP consumption.
    Tensor flattened() const;
    Tensor flattened_rows(const std::vector<std::size_t>& idx) const;
    std::vector<std::size_t> indices_of_group(std::uint32_t g) const;
    void validate() const;
};

// client id -> indices into the dataset; within a group, shards are
// disjoint and sized within one sample of each other.
struct Partition {
    std::vector<std::vector<std::size_t>> client_indices;
    std::vector<std::uint32_t> client_groups;
    std::size_t clients() const { return client_indices.size(); }
};

// Raw IDX container contents before any pixel scaling.
struct IdxRaw {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
bool looks_gzipped(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> gunzip_bytes(const std::vector<std::uint8_t>& bytes);

IdxRaw parse_idx_raw(const std::vector<std::uint8_t>& bytes);
// u8 payload mapped to [0,1] by /255, shaped per the IDX header.
Tensor parse_idx(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_idx(const IdxRaw& raw);

// Deterministic two-group image set: group 0 = full-width bright bars at
// random rows, group 1 = centered Gaussian blobs kept away from the border.
// The border ring separates the groups by construction.
Dataset synth_two_group(std::size_t n_per_group, std::size_t side, std::uint64_t seed);

// Loads the four standard MNIST IDX(.gz) files from a directory and buckets
// the ten digit labels into `groups` contiguous label ranges.
struct MnistPair {
    Dataset train;
    Dataset test;
};
MnistPair load_mnist_dir(const std::string& dir, std::uint32_t groups);

Partition partition(const Dataset& data, std::uint32_t groups, std::uint32_t clients_per_group,
                    std::uint64_t seed);

}  // namespace fvae
