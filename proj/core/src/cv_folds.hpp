#pragma once

#include <cstdint>
#include <vector>

#include "panelcf/panel.hpp"

namespace panelcf::detail {

/// Held-out patterns for K folds. Fully observed rows are shuffled and dealt
/// round-robin to folds; each held-out row loses its trailing columns after
/// an adoption index drawn from the partially missing rows (T/2 when there
/// are none).
std::vector<BoolArray> trailing_block_folds(const Mask& mask, int n_folds, std::uint64_t seed);

}  // namespace panelcf::detail
