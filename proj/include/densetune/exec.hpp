#pragma once

#include <cstdint>
#include <exception>
#include <vector>

namespace densetune {

/// Kernel execution policy. Every parallel kernel keeps a serial twin that
/// the tests use as the reference; both produce identical results.
enum class Exec { serial, parallel };

/// Caps OpenMP parallelism for the whole process. n <= 0 leaves the runtime default.
void set_thread_count(int n);
int thread_count();

/// Runs fn(i) for i in [0, n). Iterations must write disjoint state. If any
/// iteration throws, the exception from the lowest index is rethrown after
/// the loop, so error reporting matches the serial order.
template <typename Fn>
void for_each_index(std::size_t n, Exec exec, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t i = 0; i < count; ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    for (std::int64_t i = 0; i < count; ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace densetune
