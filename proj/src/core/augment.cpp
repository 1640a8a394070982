#include "core/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "core/error.hpp"

namespace anatcl {

void validate(const AugmentConfig& cfg) {
  if (!(cfg.keep_min_fraction > 0.0) || cfg.keep_min_fraction > 1.0) {
    throw InvalidArgument("augment: keep_min_fraction must be in (0, 1]");
  }
}

std::vector<std::size_t> augment_indices(std::size_t count,
                                         const AugmentConfig& cfg, Rng& rng) {
  validate(cfg);
  if (count == 0) throw InvalidArgument("augment: empty sentence list");

  std::size_t keep = count;
  if (cfg.subset_enabled) {
    const auto lo = static_cast<std::size_t>(std::max(
        1.0, std::ceil(cfg.keep_min_fraction * static_cast<double>(count))));
    keep = lo + static_cast<std::size_t>(
                    rng.uniform_below(static_cast<std::uint64_t>(count - lo + 1)));
  }

  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  idx.resize(keep);
  if (!cfg.shuffle_enabled) std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::string> split_sentences(const std::string& raw_report) {
  std::vector<std::string> out;
  std::string current;
  const auto flush = [&] {
    std::size_t b = 0;
    std::size_t e = current.size();
    while (b < e && std::isspace(static_cast<unsigned char>(current[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(current[e - 1]))) --e;
    if (e > b) out.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (std::size_t i = 0; i < raw_report.size(); ++i) {
    const char c = raw_report[i];
    const bool terminator = (c == '.' || c == '!' || c == '?');
    const bool at_boundary =
        terminator &&
        (i + 1 == raw_report.size() ||
         std::isspace(static_cast<unsigned char>(raw_report[i + 1])));
    if (at_boundary) {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  return out;
}

}  // namespace anatcl
