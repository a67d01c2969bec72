#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace densetune {

/// Suffix array by induced sorting (SA-IS), linear time. Symbols must lie in
/// [0, max_symbol]. No sentinel is required.
std::vector<std::int32_t> build_suffix_array(std::span<const std::int32_t> text,
                                             std::int32_t max_symbol);

/// Kasai's algorithm: lcp[i] is the longest common prefix of the suffixes at
/// sa[i - 1] and sa[i]; lcp[0] = 0.
std::vector<std::int32_t> build_lcp_array(std::span<const std::int32_t> text,
                                          std::span<const std::int32_t> sa);

}  // namespace densetune
