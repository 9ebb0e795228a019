#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace kdal {

// Runs fn(i) for i in [0, n) on at most `limit` threads. Results must be
// written by index so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t limit, Fn&& fn) {
    if (n == 0) return;
    limit = std::clamp<std::size_t>(limit, 1, n);
    if (limit == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> workers;
        workers.reserve(limit);
        for (std::size_t w = 0; w < limit; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                    }
                }
            });
        }
    }
    if (first_error) std::rethrow_exception(first_error);
}

// Token bucket: `rate` tokens per second, up to `burst` stored. A rate of
// zero disables limiting.
class TokenBucket {
public:
    using Clock = std::chrono::steady_clock;

    TokenBucket(double rate_per_sec = 0.0, double burst = 1.0)
        : rate_(rate_per_sec), burst_(std::max(burst, 1.0)), tokens_(burst_), last_(Clock::now()) {}

    void acquire() {
        if (rate_ <= 0.0) return;
        std::unique_lock lock(mutex_);
        for (;;) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }

private:
    void refill() {
        const auto now = Clock::now();
        const double elapsed = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
    }

    double rate_;
    double burst_;
    double tokens_;
    Clock::time_point last_;
    std::mutex mutex_;
};

}  // namespace kdal
