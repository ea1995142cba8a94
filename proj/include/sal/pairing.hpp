#pragma once
#include <utility>
#include <vector>

#include "sal/augment.hpp"
#include "sal/rng.hpp"
#include "sal/volume.hpp"

namespace sal {

struct PairingConfig {
    double t = 0.1; // position threshold shared by both losses
    int n = 8;      // slices per iteration (two views each -> 2n samples)

    void validate() const {
        require(t > 0.0 && t <= 1.0, "PairingConfig: t=", t, " outside (0, 1]");
        require(n >= 2 && n % 2 == 0, "PairingConfig: n=", n, " must be even and >= 2");
    }
};

// Positive sets for one sampled batch of 2n views.
//   gp_positives[i]: indices j forming a positive pair with i for the global
//                    positional loss (twin, or relative-position distance < t).
//   la_pairs:        unordered (i < j) same-subject pairs with slice index
//                    distance < t*V, used by the alignment loss.
struct PairPlan {
    std::vector<SliceView> views;
    std::vector<std::vector<int>> gp_positives;
    std::vector<std::pair<int, int>> la_pairs;
};

inline double relative_position(int slice_index, int V) {
    require(V > 0, "relative_position: V must be positive");
    require(slice_index >= 0 && slice_index < V,
            "relative_position: index ", slice_index, " outside [0, ", V, ")");
    return static_cast<double>(slice_index) / static_cast<double>(V);
}

inline bool is_twin(const SliceView& a, const SliceView& b) {
    return a.subject_id == b.subject_id && a.slice_index == b.slice_index &&
           a.view_id != b.view_id;
}

inline std::vector<std::vector<int>> gp_positive_set(const std::vector<SliceView>& views,
                                                     double t) {
    const int m = static_cast<int>(views.size());
    std::vector<std::vector<int>> pos(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double pi = relative_position(views[i].slice_index, views[i].V);
        for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            const double pj = relative_position(views[j].slice_index, views[j].V);
            if (is_twin(views[i], views[j]) || std::abs(pi - pj) < t)
                pos[static_cast<std::size_t>(i)].push_back(j);
        }
    }
    return pos;
}

inline std::vector<std::pair<int, int>> la_positive_pairs(const std::vector<SliceView>& views,
                                                          double t) {
    const int m = static_cast<int>(views.size());
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            if (views[i].subject_id != views[j].subject_id) continue;
            // Same-volume rule uses absolute index distance against t*V.
            const double dist = std::abs(views[i].slice_index - views[j].slice_index);
            if (dist < t * views[i].V) pairs.emplace_back(i, j);
        }
    }
    return pairs;
}

inline void check_pair_plan(const PairPlan& plan, double t) {
    const int m = static_cast<int>(plan.views.size());
    for (int i = 0; i < m; ++i) {
        for (int j : plan.gp_positives[static_cast<std::size_t>(i)]) {
            require(j != i, "PairPlan: P_i contains i");
            const auto& pj = plan.gp_positives[static_cast<std::size_t>(j)];
            require(std::find(pj.begin(), pj.end(), i) != pj.end(), "PairPlan: P_i not symmetric");
        }
    }
    // Every LA pair is also GP-positive: |i-j| < t*V implies |i/V - j/V| < t.
    for (const auto& [i, j] : plan.la_pairs) {
        require(plan.views[i].subject_id == plan.views[j].subject_id,
                "PairPlan: LA pair crosses subjects");
        const auto& pi = plan.gp_positives[static_cast<std::size_t>(i)];
        require(std::find(pi.begin(), pi.end(), j) != pi.end(),
                "PairPlan: LA pair (", i, ",", j, ") is not GP-positive");
    }
    (void)t;
}

// One pre-training batch: two scans of different subjects, n/2 slices from
// each (uniform, without replacement), two augmented views per slice.
inline PairPlan sample_pretrain_batch(const Dataset& dataset, const PairingConfig& cfg,
                                      const AugmentConfig& aug, RngStream& rng) {
    cfg.validate();
    require(dataset.volumes.size() >= 2,
            "sample_pretrain_batch: need >= 2 subjects, have ", dataset.volumes.size());

    const int ns = static_cast<int>(dataset.volumes.size());
    const int a = static_cast<int>(rng.randint(0, ns - 1));
    int b = static_cast<int>(rng.randint(0, ns - 2));
    if (b >= a) ++b;

    PairPlan plan;
    const int per_subject = cfg.n / 2;
    for (int vol_idx : {a, b}) {
        const Volume& vol = dataset.volumes[static_cast<std::size_t>(vol_idx)];
        require(vol.V() >= per_subject, "sample_pretrain_batch: subject \"", vol.subject_id(),
                "\" has V=", vol.V(), " < n/2=", per_subject);
        std::vector<int> indices = rng.sample_without_replacement(vol.V(), per_subject);
        for (int idx : indices) {
            SliceRecord rec = get_slice(vol, idx);
            auto [v0, v1] = two_views(rec, aug, rng);
            plan.views.push_back(std::move(v0));
            plan.views.push_back(std::move(v1));
        }
    }

    plan.gp_positives = gp_positive_set(plan.views, cfg.t);
    plan.la_pairs = la_positive_pairs(plan.views, cfg.t);
    check_pair_plan(plan, cfg.t);
    return plan;
}

} // namespace sal
