#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fvae {

// Binary PGM (P5), maxval 255. Pixels are row-major floats in [0,1].
void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const float* pixels);

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::uint32_t maxval = 0;
    std::vector<std::uint8_t> pixels;
};

// Strict P5 reader (accepts comments and arbitrary whitespace per the
// grammar); used by tests to validate emitted samples.
PgmImage parse_pgm(const std::vector<std::uint8_t>& bytes);

}  // namespace fvae
