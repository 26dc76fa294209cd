// Persistent worker pool with a parallel_for. Work items write to disjoint
// index ranges only, so results are bit-identical for any thread count.
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace af {

class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_threads(int n) {
        std::lock_guard<std::mutex> outer(api_mutex_);
        stop_workers();
        n_threads_ = n < 1 ? 1 : n;
        start_workers();
    }

    int threads() const { return n_threads_; }

    // body(begin, end) over [0, n) in fixed-size chunks.
    void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body) {
        if (n <= 0) return;
        if (n_threads_ == 1 || n <= grain) {
            body(0, n);
            return;
        }
        std::lock_guard<std::mutex> outer(api_mutex_);
        int64_t chunks = (n + grain - 1) / grain;
        {
            std::unique_lock<std::mutex> lk(mutex_);
            job_body_ = &body;
            job_n_ = n;
            job_grain_ = grain;
            next_chunk_.store(0, std::memory_order_relaxed);
            pending_ = chunks;
            ++job_id_;
        }
        cv_.notify_all();
        // The calling thread participates.
        run_chunks();
        std::unique_lock<std::mutex> lk(mutex_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        job_body_ = nullptr;
    }

    ~ThreadPool() { stop_workers(); }

private:
    ThreadPool() {
        n_threads_ = int(std::thread::hardware_concurrency());
        if (n_threads_ < 1) n_threads_ = 1;
        start_workers();
    }

    void start_workers() {
        stop_ = false;
        for (int i = 0; i + 1 < n_threads_; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void stop_workers() {
        {
            std::lock_guard<std::mutex> lk(mutex_);
            stop_ = true;
            ++job_id_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
        workers_.clear();
    }

    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
                seen = job_id_;
                if (stop_) return;
                if (!job_body_) continue;
            }
            run_chunks();
        }
    }

    void run_chunks() {
        const auto* body = job_body_;
        if (!body) return;
        for (;;) {
            int64_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            int64_t begin = c * job_grain_;
            if (begin >= job_n_) break;
            int64_t end = begin + job_grain_;
            if (end > job_n_) end = job_n_;
            (*body)(begin, end);
            std::lock_guard<std::mutex> lk(mutex_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    std::mutex api_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(int64_t, int64_t)>* job_body_ = nullptr;
    int64_t job_n_ = 0, job_grain_ = 1, pending_ = 0;
    std::atomic<int64_t> next_chunk_{0};
    uint64_t job_id_ = 0;
    int n_threads_ = 1;
    bool stop_ = false;
};

inline void set_threads(int n) { ThreadPool::instance().set_threads(n); }

inline void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body) {
    ThreadPool::instance().parallel_for(n, grain, body);
}

} // namespace af
