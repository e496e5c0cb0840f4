#include "floq/support.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace floq::support {

namespace {

std::atomic<int> g_cap{0};

int env_cap() {
    static const int cached = [] {
        const char* s = std::getenv("FLOQUET_THREADS");
        if (!s) return 0;
        int v = std::atoi(s);
        return v > 0 ? v : 0;
    }();
    return cached;
}

}  // namespace

void set_thread_cap(int n) { g_cap.store(n < 0 ? 0 : n); }

int thread_cap() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int cap = g_cap.load();
    if (cap == 0) cap = env_cap();
    if (cap == 0) cap = hw;
    return std::min(cap, hw);
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), count);
    if (workers <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = count * w / workers;
        const std::size_t hi = count * (w + 1) / workers;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace floq::support
