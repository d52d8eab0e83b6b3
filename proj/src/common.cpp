#include "umg/common.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>

namespace umg {

namespace {

std::atomic<int> g_threads{0};  // 0 = unset, resolve to hardware

int resolved_threads() {
    int t = g_threads.load(std::memory_order_relaxed);
    if (t > 0) return t;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Small persistent pool. Items are claimed via an atomic counter, so the
// assignment of items to workers is racy but each item runs exactly once and
// writes only its own state; numeric results never depend on the schedule.
class Pool {
  public:
    Pool() = default;
    ~Pool() { stop(); }

    void run(int n, int workers, const std::function<void(int)>& fn) {
        ensure(workers - 1);
        {
            std::lock_guard<std::mutex> lk(m_);
            fn_ = &fn;
            total_ = n;
            next_.store(0, std::memory_order_relaxed);
            pending_ = workers - 1;
            ++epoch_;
        }
        cv_.notify_all();
        work();  // main thread participates
        std::unique_lock<std::mutex> lk(m_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        fn_ = nullptr;
    }

  private:
    void ensure(int n) {
        while (static_cast<int>(threads_.size()) < n) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lk(m_);
            cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
            if (stop_) return;
            seen = epoch_;
            bool active = fn_ != nullptr;
            lk.unlock();
            if (active) work();
            lk.lock();
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    void work() {
        for (;;) {
            int i = next_.fetch_add(1, std::memory_order_relaxed);
            if (i >= total_) return;
            (*fn_)(i);
        }
    }

    void stop() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    std::vector<std::thread> threads_;
    std::mutex m_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int)>* fn_ = nullptr;
    std::atomic<int> next_{0};
    int total_ = 0;
    int pending_ = 0;
    uint64_t epoch_ = 0;
    bool stop_ = false;
};

Pool& pool() {
    static Pool p;
    return p;
}

}  // namespace

int thread_count() { return resolved_threads(); }

void set_thread_count(int n) { g_threads.store(n > 0 ? n : 0, std::memory_order_relaxed); }

void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int workers = std::min(resolved_threads(), n);
    if (workers <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    pool().run(n, workers, fn);
}

}  // namespace umg
