#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dbo {

/// Fixed set of worker threads running index loops. Each index writes only its
/// own output slot, so results never depend on the number of workers.
class ThreadPool {
 public:
  /// `workers` counts the calling thread; 0 or 1 means run inline.
  explicit ThreadPool(std::size_t workers = 1);
  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t workers() const noexcept { return threads_.size() + 1; }

  /// Calls fn(i) for i in [0, n) and returns once all calls finished. If calls
  /// throw, the exception of the smallest failing index is rethrown.
  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

 private:
  void worker_loop();
  void run_chunk();

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t job_size_ = 0;
  std::size_t next_ = 0;
  std::size_t active_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::size_t error_index_ = 0;
  std::exception_ptr error_;
};

/// Runs fn over [0, n) on `pool`, or inline when pool is null.
void for_each_index(ThreadPool* pool, std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dbo
