#include "cv_folds.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "panelcf/parallel.hpp"

namespace panelcf::detail {

std::vector<BoolArray> trailing_block_folds(const Mask& mask, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw Error("cross-validation needs at least 2 folds");
  const Index n = mask.rows();
  const Index t_count = mask.cols();
  std::vector<Index> controls;
  std::vector<Index> adoption;
  for (Index i = 0; i < n; ++i) {
    const auto row = mask.missing().row(i);
    if (!row.any()) {
      controls.push_back(i);
      continue;
    }
    Index first_missing = 0;
    while (!row(first_missing)) ++first_missing;
    if (first_missing > 0) adoption.push_back(first_missing - 1);
  }
  if (static_cast<Index>(controls.size()) < n_folds) {
    throw Error("cross-validation needs at least " + std::to_string(n_folds) + " fully observed control units");
  }
  if (adoption.empty()) adoption.push_back(std::max<Index>(0, t_count / 2 - 1));

  std::mt19937_64 shuffle_rng(task_seed(seed, 0));
  std::shuffle(controls.begin(), controls.end(), shuffle_rng);

  const auto folds = static_cast<std::size_t>(n_folds);
  std::vector<BoolArray> held(folds, BoolArray::Constant(n, t_count, false));
  for (std::size_t k = 0; k < folds; ++k) {
    std::mt19937_64 rng(task_seed(seed, k + 1));
    std::uniform_int_distribution<std::size_t> pick(0, adoption.size() - 1);
    for (std::size_t j = k; j < controls.size(); j += folds) {
      const Index t0 = adoption[pick(rng)];
      held[k].row(controls[j]).tail(t_count - t0 - 1).setConstant(true);
    }
  }
  return held;
}

}  // namespace panelcf::detail
