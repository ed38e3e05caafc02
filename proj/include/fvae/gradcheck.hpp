#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fvae {

struct GradCheckRow {
    std::string component;
    double max_rel_err = 0.0;
    int checks = 0;
    double tolerance = 1e-4;

    bool pass() const { return checks > 0 && max_rel_err <= tolerance; }
};

// Central finite-difference verification in f64 of every layer type, every
// standalone loss/gradient helper, and every variant's end-to-end training
// gradient. Each component is exercised with `seeds` independent random
// draws. FVAE_GRADCHECK_CORRUPT=<component> injects a deliberate gradient
// error for fault-injection tests.
std::vector<GradCheckRow> run_gradcheck(std::uint32_t seeds = 20, double tolerance = 1e-4,
                                        std::uint64_t base_seed = 20240801);

}  // namespace fvae
