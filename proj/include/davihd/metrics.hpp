#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "davihd/errors.hpp"

namespace davihd {

// All rankings in this module break ties by earlier index, which makes every
// metric a deterministic function of its inputs.

// Indices sorted by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_order(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

// Marks the floor(fraction * n) highest-scoring segments.
inline std::vector<bool> binary_summary(const std::vector<double>& scores, double fraction = 0.5) {
    if (scores.empty()) throw ShapeError("binary_summary: empty sequence");
    if (!(fraction > 0.0) || fraction > 1.0) throw ShapeError("binary_summary: fraction must be in (0,1]");
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(scores.size())));
    std::vector<bool> mask(scores.size(), false);
    const auto order = rank_order(scores);
    for (std::size_t i = 0; i < k; ++i) mask[order[i]] = true;
    return mask;
}

// F1 of the top-50% summary of pred against the top-50% summary of gt.
inline double f1_at_50(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("f1_at_50: length mismatch");
    const auto pm = binary_summary(pred, 0.5);
    const auto gm = binary_summary(gt, 0.5);
    std::size_t tp = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pm.size(); ++i) {
        np += pm[i];
        ng += gm[i];
        tp += pm[i] && gm[i];
    }
    const double precision = np ? static_cast<double>(tp) / static_cast<double>(np) : 0.0;
    const double recall = ng ? static_cast<double>(tp) / static_cast<double>(ng) : 0.0;
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// Average precision where positives are the top-rho fraction of gt. Errors
// when the positive set is empty (floor(rho * n) == 0).
inline double map_at_rho(const std::vector<double>& pred, const std::vector<double>& gt, double rho) {
    if (pred.size() != gt.size()) throw ShapeError("map_at_rho: length mismatch");
    if (!(rho > 0.0) || rho > 1.0) throw ShapeError("map_at_rho: rho must be in (0,1]");
    const auto positives = binary_summary(gt, rho);
    std::size_t n_pos = 0;
    for (bool b : positives) n_pos += b;
    if (n_pos == 0) throw NumericError("map_at_rho: no positive segments at rho");
    const auto order = rank_order(pred);
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (positives[order[r]]) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    return ap / static_cast<double>(n_pos);
}

// Average ranks with ties assigned the mean of their rank span.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const auto order = rank_order(v);  // descending; rank 1 = largest
    std::vector<double> ranks(v.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

// Spearman's rho: Pearson correlation of average-ranked values. Errors when
// either side has zero rank variance.
inline double spearman_rho(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("spearman_rho: length mismatch");
    if (pred.size() < 2) throw ShapeError("spearman_rho: need at least 2 segments");
    const auto ra = average_ranks(pred);
    const auto rb = average_ranks(gt);
    const double n = static_cast<double>(ra.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - ma, db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) throw NumericError("spearman_rho: constant input");
    return cov / std::sqrt(va * vb);
}

// Kendall's tau-b with tie corrections in both rankings. Errors when either
// side is entirely tied.
inline double kendall_tau(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("kendall_tau: length mismatch");
    const std::size_t n = pred.size();
    if (n < 2) throw ShapeError("kendall_tau: need at least 2 segments");
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = pred[i] - pred[j];
            const double db = gt[i] - gt[j];
            if (da == 0.0 && db == 0.0) {
                ++ties_a;
                ++ties_b;
            } else if (da == 0.0) {
                ++ties_a;
            } else if (db == 0.0) {
                ++ties_b;
            } else if ((da > 0.0) == (db > 0.0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    const auto n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    const double denom = std::sqrt(static_cast<double>(n0 - ties_a)) *
                         std::sqrt(static_cast<double>(n0 - ties_b));
    if (denom == 0.0) throw NumericError("kendall_tau: all-tied input");
    return static_cast<double>(concordant - discordant) / denom;
}

// ---------------------------------------------------------------------------
// evaluation records
// ---------------------------------------------------------------------------

// Correlation metrics are undefined on constant sequences and mAP is
// undefined when the positive set is empty; such entries are left empty and
// excluded from aggregation.
struct MetricRow {
    std::string id;
    double f1 = 0.0;
    std::optional<double> map50;
    std::optional<double> map15;
    std::optional<double> rho;
    std::optional<double> tau;
};

inline MetricRow score_video(const std::string& id, const std::vector<double>& pred,
                             const std::vector<double>& gt) {
    MetricRow row;
    row.id = id;
    row.f1 = f1_at_50(pred, gt);
    try {
        row.map50 = map_at_rho(pred, gt, 0.50);
    } catch (const NumericError&) {
    }
    try {
        row.map15 = map_at_rho(pred, gt, 0.15);
    } catch (const NumericError&) {
    }
    try {
        row.rho = spearman_rho(pred, gt);
    } catch (const NumericError&) {
    }
    try {
        row.tau = kendall_tau(pred, gt);
    } catch (const NumericError&) {
    }
    return row;
}

struct MetricAggregate {
    std::size_t n_videos = 0;
    double f1 = 0.0;
    std::optional<double> map50;
    std::optional<double> map15;
    std::optional<double> rho;
    std::optional<double> tau;
};

inline MetricAggregate aggregate_metrics(const std::vector<MetricRow>& rows) {
    MetricAggregate agg;
    agg.n_videos = rows.size();
    if (rows.empty()) return agg;
    double f1 = 0.0;
    double m50 = 0.0, m15 = 0.0, rho = 0.0, tau = 0.0;
    std::size_t n50 = 0, n15 = 0, nrho = 0, ntau = 0;
    for (const MetricRow& r : rows) {
        f1 += r.f1;
        if (r.map50) {
            m50 += *r.map50;
            ++n50;
        }
        if (r.map15) {
            m15 += *r.map15;
            ++n15;
        }
        if (r.rho) {
            rho += *r.rho;
            ++nrho;
        }
        if (r.tau) {
            tau += *r.tau;
            ++ntau;
        }
    }
    agg.f1 = f1 / static_cast<double>(rows.size());
    if (n50) agg.map50 = m50 / static_cast<double>(n50);
    if (n15) agg.map15 = m15 / static_cast<double>(n15);
    if (nrho) agg.rho = rho / static_cast<double>(nrho);
    if (ntau) agg.tau = tau / static_cast<double>(ntau);
    return agg;
}

}  // namespace davihd
