#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gramreg/dataset.hpp"
#include "gramreg/errors.hpp"
#include "gramreg/network.hpp"
#include "gramreg/trainer.hpp"

namespace gramreg {

struct ShapeFeature {
    std::size_t shape_id = 0;
    std::size_t class_id = 0;
    std::vector<double> feature;
};

using FeatureSet = std::vector<ShapeFeature>;

/// One descriptor per shape in the chosen split. mvcnn and cnn_lstm read the
/// network's fused shape feature; view_cnn averages the per-view features.
template <typename T>
FeatureSet extract_features(const NetworkState<T>& net, const Dataset& ds, Split split) {
    if (ds.manifest.views != net.spec.views && net.spec.architecture != Architecture::view_cnn)
        throw DomainError("eval: dataset has " + std::to_string(ds.manifest.views) +
                          " views per shape but the network expects " +
                          std::to_string(net.spec.views));
    detail::check_compatible(net.spec, ds);
    FeatureSet out;
    for (const auto& s : ds.samples) {
        if (s.split != split) continue;
        ShapeFeature f;
        f.shape_id = s.shape_id;
        f.class_id = s.class_id;
        if (net.spec.architecture == Architecture::view_cnn) {
            std::vector<Tensor<T>> batch;
            for (std::size_t v = 0; v < s.views.size(); ++v)
                batch.push_back(view_item<T>(s, v));
            auto fwd = network_forward(net, batch);
            const Tensor<T> mean = view_mean(fwd.cache.features);
            for (std::size_t i = 0; i < mean.numel(); ++i)
                f.feature.push_back(static_cast<double>(mean[i]));
        } else {
            std::vector<Tensor<T>> batch{shape_item<T>(s)};
            auto fwd = network_forward(net, batch);
            const std::size_t d = fwd.cache.features.dim(1);
            for (std::size_t i = 0; i < d; ++i)
                f.feature.push_back(static_cast<double>(fwd.cache.features[i]));
        }
        out.push_back(std::move(f));
    }
    return out;
}

/// 1 - a.b/(|a||b|), in [0,2]. Either vector having zero norm gives 1.
inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw DimensionError("cosine_distance: vectors have lengths " +
                             std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

struct QueryScore {
    std::size_t shape_id = 0;
    std::size_t class_id = 0;
    double ap = 0.0;
};

struct MetricsReport {
    double map = 0.0;
    double auc = 0.0;
    std::size_t excluded_queries = 0;  // queries with no same-class gallery shape
    std::vector<QueryScore> per_query;
    std::array<double, 11> mean_interp_precision{};  // recall 0.0, 0.1, ..., 1.0
};

/// Leave-one-out retrieval over the feature set. Each shape queries all the
/// others, ranked by ascending cosine distance with ties broken by ascending
/// shape id. AP averages precision at each relevant rank; AUC is the
/// trapezoidal area under the 11-point interpolated precision-recall curve.
/// Queries whose class appears nowhere else are excluded and counted.
inline MetricsReport rank_and_score(const FeatureSet& features) {
    if (features.size() < 2)
        throw DomainError("rank_and_score: need at least two shapes, got " +
                          std::to_string(features.size()));
    std::vector<std::size_t> idx(features.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return features[a].shape_id < features[b].shape_id;
    });

    MetricsReport rep;
    std::array<double, 11> interp_sum{};
    struct Entry {
        double dist;
        std::size_t shape_id;
        bool relevant;
    };
    for (std::size_t qi : idx) {
        const ShapeFeature& q = features[qi];
        std::vector<Entry> gallery;
        std::size_t relevant_total = 0;
        for (std::size_t gi : idx) {
            if (gi == qi) continue;
            const ShapeFeature& g = features[gi];
            const bool rel = g.class_id == q.class_id;
            relevant_total += rel ? 1u : 0u;
            gallery.push_back({cosine_distance(q.feature, g.feature), g.shape_id, rel});
        }
        if (relevant_total == 0) {
            ++rep.excluded_queries;
            continue;
        }
        std::sort(gallery.begin(), gallery.end(), [](const Entry& a, const Entry& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            return a.shape_id < b.shape_id;
        });

        double ap = 0.0;
        std::size_t hits = 0;
        std::vector<double> recall(gallery.size()), precision(gallery.size());
        for (std::size_t k = 0; k < gallery.size(); ++k) {
            if (gallery[k].relevant) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(k + 1);
            }
            recall[k] = static_cast<double>(hits) / static_cast<double>(relevant_total);
            precision[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
        }
        ap /= static_cast<double>(relevant_total);
        rep.per_query.push_back({q.shape_id, q.class_id, ap});

        // p_interp(r) = max precision at any rank whose recall reaches r.
        std::array<double, 11> interp{};
        for (int t = 10; t >= 0; --t) {
            const double r = static_cast<double>(t) / 10.0;
            double best = t == 10 ? 0.0 : interp[t + 1];
            for (std::size_t k = 0; k < gallery.size(); ++k)
                if (recall[k] >= r) best = std::max(best, precision[k]);
            interp[t] = best;
        }
        for (int t = 0; t <= 10; ++t) interp_sum[t] += interp[t];
    }

    if (rep.per_query.empty())
        throw DomainError("rank_and_score: every query had an empty relevant set");
    double ap_sum = 0.0;
    for (const auto& qs : rep.per_query) ap_sum += qs.ap;
    rep.map = ap_sum / static_cast<double>(rep.per_query.size());
    double auc = 0.0;
    for (int t = 0; t <= 10; ++t)
        rep.mean_interp_precision[t] = interp_sum[t] / static_cast<double>(rep.per_query.size());
    for (int t = 0; t < 10; ++t)
        auc += 0.05 * (rep.mean_interp_precision[t] + rep.mean_interp_precision[t + 1]);
    rep.auc = auc;
    return rep;
}

inline std::string per_query_csv(const MetricsReport& rep) {
    std::string out = "query_id,class,ap\n";
    for (const auto& q : rep.per_query)
        out += std::to_string(q.shape_id) + "," + std::to_string(q.class_id) + "," +
               format_double(q.ap) + "\n";
    return out;
}

inline std::string summary_csv(const MetricsReport& rep) {
    return "map,auc,excluded_queries\n" + format_double(rep.map) + "," +
           format_double(rep.auc) + "," + std::to_string(rep.excluded_queries) + "\n";
}

inline std::string pr_curve_csv(const MetricsReport& rep) {
    std::string out = "recall,precision\n";
    for (int t = 0; t <= 10; ++t)
        out += format_double(static_cast<double>(t) / 10.0) + "," +
               format_double(rep.mean_interp_precision[t]) + "\n";
    return out;
}

}  // namespace gramreg
