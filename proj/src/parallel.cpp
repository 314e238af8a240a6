#include "addlab/parallel.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace addlab {

namespace {
std::atomic<unsigned> g_workers{0};
}

void set_worker_count(unsigned n) { g_workers.store(n); }

unsigned worker_count() {
    unsigned n = g_workers.load();
    if (n == 0) {
        n = std::thread::hardware_concurrency();
    }
    return n == 0 ? 1 : n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    unsigned workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    unsigned spawn = static_cast<unsigned>(
        std::min<std::size_t>(workers, n));
    pool.reserve(spawn - 1);
    for (unsigned t = 1; t < spawn; ++t) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
}

}  // namespace addlab
