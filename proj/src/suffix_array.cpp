#include "densetune/suffix_array.hpp"

#include <algorithm>

namespace densetune {
namespace {

using Index = std::int32_t;

std::vector<Index> sa_is(std::span<const Index> s, Index upper) {
  const Index n = static_cast<Index>(s.size());
  if (n == 0) return {};
  if (n == 1) return {0};
  if (n == 2) return s[0] < s[1] ? std::vector<Index>{0, 1} : std::vector<Index>{1, 0};

  std::vector<Index> sa(n);
  // ls[i]: suffix i is S-type (smaller than suffix i + 1).
  std::vector<bool> ls(n, false);
  for (Index i = n - 2; i >= 0; --i) {
    ls[i] = (s[i] == s[i + 1]) ? ls[i + 1] : (s[i] < s[i + 1]);
  }

  // Bucket starts: sum_l[c] = first L slot of bucket c, sum_s[c] = first S slot.
  std::vector<Index> sum_l(upper + 1, 0), sum_s(upper + 1, 0);
  for (Index i = 0; i < n; ++i) {
    if (!ls[i]) {
      ++sum_s[s[i]];
    } else {
      ++sum_l[s[i] + 1];
    }
  }
  for (Index c = 0; c <= upper; ++c) {
    sum_s[c] += sum_l[c];
    if (c < upper) sum_l[c + 1] += sum_s[c];
  }

  auto induce = [&](const std::vector<Index>& lms) {
    std::fill(sa.begin(), sa.end(), -1);
    std::vector<Index> buf(sum_s);
    for (Index d : lms) {
      if (d == n) continue;
      sa[buf[s[d]]++] = d;
    }
    buf = sum_l;
    sa[buf[s[n - 1]]++] = n - 1;
    for (Index i = 0; i < n; ++i) {
      const Index v = sa[i];
      if (v >= 1 && !ls[v - 1]) sa[buf[s[v - 1]]++] = v - 1;
    }
    buf = sum_l;
    for (Index i = n - 1; i >= 0; --i) {
      const Index v = sa[i];
      if (v >= 1 && ls[v - 1]) sa[--buf[s[v - 1] + 1]] = v - 1;
    }
  };

  std::vector<Index> lms_map(n + 1, -1);
  std::vector<Index> lms;
  for (Index i = 1; i < n; ++i) {
    if (!ls[i - 1] && ls[i]) {
      lms_map[i] = static_cast<Index>(lms.size());
      lms.push_back(i);
    }
  }
  const Index m = static_cast<Index>(lms.size());
  induce(lms);

  if (m > 0) {
    std::vector<Index> sorted_lms;
    sorted_lms.reserve(m);
    for (Index v : sa) {
      if (lms_map[v] != -1) sorted_lms.push_back(v);
    }
    // Name LMS substrings; equal substrings share a name.
    std::vector<Index> rec_s(m);
    Index rec_upper = 0;
    rec_s[lms_map[sorted_lms[0]]] = 0;
    for (Index i = 1; i < m; ++i) {
      Index l = sorted_lms[i - 1];
      Index r = sorted_lms[i];
      const Index end_l = (lms_map[l] + 1 < m) ? lms[lms_map[l] + 1] : n;
      const Index end_r = (lms_map[r] + 1 < m) ? lms[lms_map[r] + 1] : n;
      bool same = true;
      if (end_l - l != end_r - r) {
        same = false;
      } else {
        while (l < end_l && s[l] == s[r]) {
          ++l;
          ++r;
        }
        if (l == n || s[l] != s[r]) same = false;
      }
      if (!same) ++rec_upper;
      rec_s[lms_map[sorted_lms[i]]] = rec_upper;
    }
    const auto rec_sa = sa_is(rec_s, rec_upper);
    for (Index i = 0; i < m; ++i) sorted_lms[i] = lms[rec_sa[i]];
    induce(sorted_lms);
  }
  return sa;
}

}  // namespace

std::vector<std::int32_t> build_suffix_array(std::span<const std::int32_t> text,
                                             std::int32_t max_symbol) {
  return sa_is(text, max_symbol);
}

std::vector<std::int32_t> build_lcp_array(std::span<const std::int32_t> text,
                                          std::span<const std::int32_t> sa) {
  const auto n = static_cast<Index>(text.size());
  std::vector<Index> rank(n), lcp(n, 0);
  for (Index i = 0; i < n; ++i) rank[sa[i]] = i;
  Index h = 0;
  for (Index i = 0; i < n; ++i) {
    if (h > 0) --h;
    if (rank[i] == 0) continue;
    const Index j = sa[rank[i] - 1];
    while (i + h < n && j + h < n && text[i + h] == text[j + h]) ++h;
    lcp[rank[i]] = h;
  }
  return lcp;
}

}  // namespace densetune
