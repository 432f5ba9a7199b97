#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "smlb/common.hpp"

namespace smlb {

/// Static kd-tree over a fixed point set (row-major n x d), built once and
/// queried for k-th nearest-neighbor distances. Geared to the low dimensions
/// (d <= 8) used by the divergence estimators. Queries are thread-safe.
class KdTree {
public:
    static constexpr int kMaxK = 64;

    KdTree(const double* data, int n, int d, int leaf_size = 16)
        : data_(data), n_(n), d_(d), leaf_size_(leaf_size) {
        idx_.resize(static_cast<std::size_t>(n));
        std::iota(idx_.begin(), idx_.end(), 0);
        nodes_.reserve(static_cast<std::size_t>(2 * n / leaf_size + 4));
        build(0, n);
    }

    int size() const { return n_; }

    /// Distance to the k-th nearest neighbor of q (1-based k). `skip_index`
    /// excludes one stored point (for self-queries); pass -1 to disable.
    double kth_distance(const double* q, int k, int skip_index = -1) const {
        if (k < 1 || k > kMaxK || k > n_ - (skip_index >= 0 ? 1 : 0))
            throw std::invalid_argument("KdTree: k out of range");
        double heap[kMaxK]; // max-heap of the k best squared distances
        for (int i = 0; i < k; ++i) heap[i] = std::numeric_limits<double>::infinity();
        search(0, q, heap, k, skip_index);
        return std::sqrt(heap[0]);
    }

private:
    struct Node {
        int left = -1, right = -1; // children; -1 for leaf
        int begin = 0, end = 0;    // leaf range in idx_
        int axis = 0;
        double split = 0.0;
    };

    const double* point(int i) const { return data_ + static_cast<std::ptrdiff_t>(i) * d_; }

    int build(int begin, int end) {
        const int node_id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        if (end - begin <= leaf_size_) {
            nodes_[node_id].begin = begin;
            nodes_[node_id].end = end;
            return node_id;
        }
        int axis = 0;
        double best_spread = -1.0;
        for (int a = 0; a < d_; ++a) {
            double lo = point(idx_[begin])[a], hi = lo;
            for (int i = begin + 1; i < end; ++i) {
                const double v = point(idx_[i])[a];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                axis = a;
            }
        }
        const int mid = (begin + end) / 2;
        std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                         [&](int a, int b) { return point(a)[axis] < point(b)[axis]; });
        const int split_idx = idx_[static_cast<std::size_t>(mid)];
        const double split = point(split_idx)[axis];
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[node_id].axis = axis;
        nodes_[node_id].split = split;
        nodes_[node_id].left = l;
        nodes_[node_id].right = r;
        return node_id;
    }

    void consider(const double* q, int i, double* heap, int k, int skip_index) const {
        if (i == skip_index) return;
        const double* p = point(i);
        double dist = 0.0;
        for (int a = 0; a < d_; ++a) {
            const double diff = q[a] - p[a];
            dist += diff * diff;
        }
        if (dist < heap[0]) {
            std::pop_heap(heap, heap + k);
            heap[k - 1] = dist;
            std::push_heap(heap, heap + k);
        }
    }

    void search(int node_id, const double* q, double* heap, int k, int skip_index) const {
        const Node& nd = nodes_[static_cast<std::size_t>(node_id)];
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i)
                consider(q, idx_[static_cast<std::size_t>(i)], heap, k, skip_index);
            return;
        }
        const double diff = q[nd.axis] - nd.split;
        const int near = diff < 0.0 ? nd.left : nd.right;
        const int far = diff < 0.0 ? nd.right : nd.left;
        search(near, q, heap, k, skip_index);
        if (diff * diff < heap[0]) search(far, q, heap, k, skip_index);
    }

    const double* data_;
    int n_, d_, leaf_size_;
    std::vector<int> idx_;
    std::vector<Node> nodes_;
};

} // namespace smlb
