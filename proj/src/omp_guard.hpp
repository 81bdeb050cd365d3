#pragma once

#include <exception>
#include <mutex>

namespace mixl {

/// Exceptions may not cross an OpenMP region boundary; capture the first
/// one inside the loop body and rethrow it after the region.
class OmpExceptionGuard {
 public:
  template <typename Fn>
  void run(Fn&& fn) noexcept {
    try {
      fn();
    } catch (...) {
      std::lock_guard<std::mutex> lock(mutex_);
      if (!captured_) captured_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (captured_) std::rethrow_exception(captured_);
  }

 private:
  std::mutex mutex_;
  std::exception_ptr captured_;
};

}  // namespace mixl
