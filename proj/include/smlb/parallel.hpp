#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

#include "smlb/common.hpp"

namespace smlb {

/// Runs fn(chunk_index, begin, end) over [0, n) split into fixed-size chunks.
/// The chunk grid never depends on the worker count, so per-chunk outputs
/// (and any reduction done in chunk order) are reproducible under any
/// parallel schedule.
template <typename Fn>
inline void for_chunks(int n, int chunk_size, int workers, Fn&& fn) {
    if (n <= 0) return;
    const int n_chunks = (n + chunk_size - 1) / chunk_size;
    unsigned nw = workers > 0 ? static_cast<unsigned>(workers)
                              : std::max(1u, std::thread::hardware_concurrency());
    nw = std::min<unsigned>(nw, static_cast<unsigned>(n_chunks));
    if (nw <= 1) {
        for (int c = 0; c < n_chunks; ++c)
            fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        return;
    }
    std::atomic<int> next{0};
    auto work = [&] {
        for (;;) {
            const int c = next.fetch_add(1);
            if (c >= n_chunks) return;
            fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (unsigned w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
}

} // namespace smlb
