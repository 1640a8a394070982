#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace anatcl {

struct AugmentConfig {
  double keep_min_fraction = 1.0 / 3.0;  // in (0, 1]
  bool shuffle_enabled = true;
  bool subset_enabled = true;
};

void validate(const AugmentConfig& cfg);

// Shuffle + non-empty subset augmentation over a report's sentence list.
//
// Pinned procedure (the golden tests freeze its seeded outputs):
//   1. both flags off: return the input verbatim, no RNG use.
//   2. L' = L; with subset_enabled, L' = lo + uniform_below(L - lo + 1)
//      where lo = max(1, ceil(keep_min_fraction * L)).
//   3. Fisher-Yates shuffle the index array [0..L); keep the first L'.
//      The prefix of a uniform permutation is a uniform L'-subset in
//      uniform random order.
//   4. without shuffle_enabled, sort the kept indices back to original
//      relative order.
// Items are copied untouched; the output is never empty.
template <typename T>
std::vector<T> augment_report(const std::vector<T>& items,
                              const AugmentConfig& cfg, Rng& rng);

// Splits on '.', '!' or '?' followed by whitespace or end of text. Trims
// surrounding whitespace, drops empty fragments. A period inside a token
// ("3.5 cm") is not a boundary.
std::vector<std::string> split_sentences(const std::string& raw_report);

// Implementation detail of augment_report, shared across item types.
std::vector<std::size_t> augment_indices(std::size_t count,
                                         const AugmentConfig& cfg, Rng& rng);

template <typename T>
std::vector<T> augment_report(const std::vector<T>& items,
                              const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.subset_enabled && !cfg.shuffle_enabled) {
    if (items.empty()) augment_indices(0, cfg, rng);  // raise the L=0 error
    return items;
  }
  std::vector<std::size_t> keep = augment_indices(items.size(), cfg, rng);
  std::vector<T> out;
  out.reserve(keep.size());
  for (std::size_t idx : keep) out.push_back(items[idx]);
  return out;
}

}  // namespace anatcl
