#pragma once

// Brute-force reference implementations used to verify the metrics module.
// These deliberately take different algorithmic routes from the library:
// quadratic rank counting, from-scratch precision recounts, tied-group
// enumeration. They live in test code only.

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

namespace oracles {

// Average ranks via O(n^2) counting: rank = #smaller + (#equal + 1)/2,
// with rank 1 assigned to the largest value (descending convention).
inline std::vector<double> ranks_quadratic(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::size_t larger = 0, equal = 0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            if (v[j] > v[i]) ++larger;
            if (v[j] == v[i]) ++equal;
        }
        out[i] = static_cast<double>(larger) + (static_cast<double>(equal) + 1.0) / 2.0;
    }
    return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0 || vb == 0) throw std::runtime_error("oracle: zero rank variance");
    return cov / std::sqrt(va * vb);
}

inline double spearman(const std::vector<double>& pred, const std::vector<double>& gt) {
    return pearson(ranks_quadratic(pred), ranks_quadratic(gt));
}

// Tau-b assembled from tied-group counts and a sign-product sweep.
inline double kendall(const std::vector<double>& pred, const std::vector<double>& gt) {
    const std::size_t n = pred.size();
    auto tie_pairs = [](const std::vector<double>& v) {
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        long long pairs = 0;
        std::size_t i = 0;
        while (i < sorted.size()) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const long long t = static_cast<long long>(j - i + 1);
            pairs += t * (t - 1) / 2;
            i = j + 1;
        }
        return pairs;
    };
    long long s = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = pred[i] - pred[j];
            const double db = gt[i] - gt[j];
            const int sa = da > 0 ? 1 : (da < 0 ? -1 : 0);
            const int sb = db > 0 ? 1 : (db < 0 ? -1 : 0);
            s += sa * sb;
        }
    const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    const long long n1 = tie_pairs(pred);
    const long long n2 = tie_pairs(gt);
    const double denom =
        std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    if (denom == 0.0) throw std::runtime_error("oracle: all tied");
    return static_cast<double>(s) / denom;
}

// Top-k selection by (descending value, ascending index), as a set.
inline std::set<std::size_t> top_set(const std::vector<double>& v, double fraction) {
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(v.size())));
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    return std::set<std::size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
}

// F1 from explicit set overlap.
inline double f1_overlap(const std::vector<double>& pred, const std::vector<double>& gt) {
    const auto ps = top_set(pred, 0.5);
    const auto gs = top_set(gt, 0.5);
    std::size_t inter = 0;
    for (std::size_t i : ps) inter += gs.count(i);
    if (ps.empty() || gs.empty()) return 0.0;
    const double precision = static_cast<double>(inter) / static_cast<double>(ps.size());
    const double recall = static_cast<double>(inter) / static_cast<double>(gs.size());
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

// Average precision with every precision@r recounted from scratch.
inline double average_precision(const std::vector<double>& pred, const std::vector<double>& gt,
                                double rho) {
    const auto positives = top_set(gt, rho);
    if (positives.empty()) throw std::runtime_error("oracle: no positives");
    std::vector<std::size_t> idx(pred.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return pred[a] > pred[b]; });
    double ap = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (!positives.count(idx[r])) continue;
        std::size_t hits = 0;
        for (std::size_t q = 0; q <= r; ++q) hits += positives.count(idx[q]);
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    return ap / static_cast<double>(positives.size());
}

}  // namespace oracles
