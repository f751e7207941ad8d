#include "dkn/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace dkn::threading {

namespace {

int env_thread_cap() {
  const char* env = std::getenv("DKN_THREADS");
  if (env == nullptr) return 0;
  int v = std::atoi(env);
  return v > 0 ? v : 1;
}

int default_thread_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int cap = env_thread_cap();
  if (cap > 0) hw = std::min(hw, cap);
  return hw;
}

thread_local bool t_inside_worker = false;

// Minimal blocking pool: parallel_for posts one task per worker and the
// calling thread processes the first chunk itself.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  int count() {
    std::lock_guard<std::mutex> lock(config_mutex_);
    return threads_;
  }

  void set_count(int n) {
    std::lock_guard<std::mutex> lock(config_mutex_);
    n = std::max(1, n);
    if (n == threads_) return;
    stop_workers();
    threads_ = n;
    start_workers();
  }

  void run(std::int64_t n, std::int64_t min_parallel,
           const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    std::unique_lock<std::mutex> config_lock(config_mutex_);
    int t = threads_;
    if (t == 1 || n < min_parallel || t_inside_worker) {
      config_lock.unlock();
      fn(0, n);
      return;
    }
    int chunks = static_cast<int>(std::min<std::int64_t>(t, n));
    {
      std::lock_guard<std::mutex> lock(task_mutex_);
      task_fn_ = &fn;
      task_n_ = n;
      task_chunks_ = chunks;
      next_chunk_.store(0, std::memory_order_relaxed);
      pending_.store(chunks, std::memory_order_relaxed);
      generation_++;
    }
    task_cv_.notify_all();
    // The caller participates in the work.
    work_loop();
    std::unique_lock<std::mutex> lock(task_mutex_);
    done_cv_.wait(lock, [&] { return pending_.load(std::memory_order_acquire) == 0; });
    task_fn_ = nullptr;
    config_lock.unlock();
  }

 private:
  Pool() : threads_(default_thread_count()) { start_workers(); }

  ~Pool() { stop_workers(); }

  void start_workers() {
    stopping_ = false;
    for (int i = 0; i < threads_ - 1; ++i) {
      workers_.emplace_back([this] { worker_main(); });
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lock(task_mutex_);
      stopping_ = true;
      generation_++;
    }
    task_cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  void worker_main() {
    t_inside_worker = true;
    std::uint64_t seen = 0;
    while (true) {
      {
        std::unique_lock<std::mutex> lock(task_mutex_);
        task_cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
        seen = generation_;
        if (stopping_) return;
        if (task_fn_ == nullptr) continue;
      }
      work_loop();
    }
  }

  void work_loop() {
    while (true) {
      int chunk = next_chunk_.fetch_add(1, std::memory_order_relaxed);
      if (chunk >= task_chunks_) return;
      std::int64_t begin = task_n_ * chunk / task_chunks_;
      std::int64_t end = task_n_ * (chunk + 1) / task_chunks_;
      if (begin < end) (*task_fn_)(begin, end);
      if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lock(task_mutex_);
        done_cv_.notify_all();
      }
    }
  }

  std::mutex config_mutex_;  // serializes parallel_for invocations
  int threads_;
  std::vector<std::thread> workers_;

  std::mutex task_mutex_;
  std::condition_variable task_cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::int64_t, std::int64_t)>* task_fn_ = nullptr;
  std::int64_t task_n_ = 0;
  int task_chunks_ = 0;
  std::uint64_t generation_ = 0;
  bool stopping_ = false;
  std::atomic<int> next_chunk_{0};
  std::atomic<int> pending_{0};
};

}  // namespace

int thread_count() { return Pool::instance().count(); }

void set_thread_count(int n) { Pool::instance().set_count(n); }

void parallel_for(std::int64_t n, std::int64_t min_parallel,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  Pool::instance().run(n, min_parallel, fn);
}

}  // namespace dkn::threading
