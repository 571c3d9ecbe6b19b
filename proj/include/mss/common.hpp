#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mss {

/// Error categories double as process exit codes for the CLI:
/// 2 usage, 3 validation, 4 I/O, 5 numeric.
class error : public std::runtime_error {
 public:
  enum class category : int { usage = 2, validation = 3, io = 4, numeric = 5 };

  error(category cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}

  category cat() const { return cat_; }
  int exit_code() const { return static_cast<int>(cat_); }

 private:
  category cat_;
};

class usage_error : public error {
 public:
  explicit usage_error(const std::string& msg) : error(category::usage, msg) {}
};

class validation_error : public error {
 public:
  explicit validation_error(const std::string& msg)
      : error(category::validation, msg) {}
};

/// Tensor or container extents do not line up; the message names the
/// offending dimension.
class shape_error : public validation_error {
 public:
  explicit shape_error(const std::string& msg) : validation_error(msg) {}
};

/// Structured-text input (annotation, config) is malformed.
class parse_error : public validation_error {
 public:
  explicit parse_error(const std::string& msg) : validation_error(msg) {}
};

/// A binary container has a bad magic, version, length, or checksum.
class corrupt_error : public validation_error {
 public:
  explicit corrupt_error(const std::string& msg) : validation_error(msg) {}
};

class io_error : public error {
 public:
  explicit io_error(const std::string& msg) : error(category::io, msg) {}
};

/// NaN/Inf appeared where the pipeline requires finite values.
class numeric_error : public error {
 public:
  explicit numeric_error(const std::string& msg)
      : error(category::numeric, msg) {}
};

/// Runs body(i) for i in [0, n). With jobs <= 1 this is a plain loop;
/// otherwise the index range is split into contiguous chunks, one thread
/// each. Bodies must write to disjoint slots so the result is identical to
/// sequential execution.
inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers =
      std::min<std::size_t>(std::max(jobs, 1), std::min<std::size_t>(hw, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_failure;
  std::vector<std::exception_ptr> failures(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = n * w / workers;
    const std::size_t hi = n * (w + 1) / workers;
    pool.emplace_back([&, lo, hi, w] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
}

}  // namespace mss
