#pragma once
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sal/training.hpp"

namespace sal {

// Dice similarity coefficient of two binary masks. Empty vs empty counts as
// a perfect 1.0 (class absent in both).
inline double dice(const Tensor<std::int32_t>& pred, const Tensor<std::int32_t>& gt) {
    require(pred.shape() == gt.shape(), "dice: shape mismatch");
    long long inter = 0, a = 0, b = 0;
    for (long long i = 0; i < pred.numel(); ++i) {
        require(pred[i] == 0 || pred[i] == 1, "dice: pred mask is not binary");
        require(gt[i] == 0 || gt[i] == 1, "dice: gt mask is not binary");
        a += pred[i];
        b += gt[i];
        inter += pred[i] & gt[i];
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

struct MeanDsc {
    std::vector<double> per_class; // foreground classes 1..num_classes-1
    double mean = 0.0;
};

// Volume-level Dice per foreground class, then averaged over classes.
inline MeanDsc mean_dsc(const Tensor<std::int32_t>& pred_labels,
                        const Tensor<std::int32_t>& gt_labels, int num_classes) {
    require(pred_labels.shape() == gt_labels.shape(), "mean_dsc: shape mismatch");
    require(num_classes >= 2, "mean_dsc: num_classes must be >= 2");
    for (long long i = 0; i < pred_labels.numel(); ++i) {
        require(pred_labels[i] >= 0 && pred_labels[i] < num_classes,
                "mean_dsc: pred label ", pred_labels[i], " outside [0, ", num_classes, ")");
        require(gt_labels[i] >= 0 && gt_labels[i] < num_classes,
                "mean_dsc: gt label ", gt_labels[i], " outside [0, ", num_classes, ")");
    }
    MeanDsc out;
    for (int cls = 1; cls < num_classes; ++cls) {
        long long inter = 0, a = 0, b = 0;
        for (long long i = 0; i < pred_labels.numel(); ++i) {
            const int p = pred_labels[i] == cls, g = gt_labels[i] == cls;
            a += p;
            b += g;
            inter += p & g;
        }
        const double d = (a + b == 0) ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
        out.per_class.push_back(d);
    }
    double s = 0.0;
    for (double d : out.per_class) s += d;
    out.mean = s / static_cast<double>(out.per_class.size());
    return out;
}

// ---------------------------------------------------------------------------
// k-fold plans with a fixed M-subject labeled subset per fold. Plans are a
// pure function of (subjects, k, M, seed), so different method runs sharing a
// seed train on exactly the same samples.
// ---------------------------------------------------------------------------

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> labeled_ids; // subset of train_ids, size M
};

struct FoldPlan {
    std::vector<Fold> folds;
};

inline void check_fold_plan(const FoldPlan& plan, const std::vector<std::string>& subjects) {
    std::vector<std::string> covered;
    for (const auto& f : plan.folds) {
        for (const auto& id : f.val_ids) {
            require(std::find(covered.begin(), covered.end(), id) == covered.end(),
                    "FoldPlan: subject \"", id, "\" appears in two validation sets");
            covered.push_back(id);
        }
        for (const auto& id : f.labeled_ids)
            require(std::find(f.train_ids.begin(), f.train_ids.end(), id) != f.train_ids.end(),
                    "FoldPlan: labeled subject \"", id, "\" not in the fold's train set");
        for (const auto& id : f.val_ids)
            require(std::find(f.train_ids.begin(), f.train_ids.end(), id) == f.train_ids.end(),
                    "FoldPlan: subject \"", id, "\" is in both train and val");
    }
    require(covered.size() == subjects.size(), "FoldPlan: validation sets do not cover all subjects");
}

inline FoldPlan make_folds(std::vector<std::string> subjects, int k, int M, std::uint64_t seed) {
    require(k >= 2, "make_folds: k must be >= 2");
    require(static_cast<std::size_t>(k) <= subjects.size(), "make_folds: k=", k, " exceeds ",
            subjects.size(), " subjects");
    std::sort(subjects.begin(), subjects.end()); // order-independent input
    RngStream rng(seed);
    rng.derive("fold-shuffle").shuffle(subjects.begin(), subjects.end());

    const int n = static_cast<int>(subjects.size());
    FoldPlan plan;
    int cursor = 0;
    for (int f = 0; f < k; ++f) {
        const int size = n / k + (f < n % k ? 1 : 0);
        Fold fold;
        for (int i = 0; i < size; ++i) fold.val_ids.push_back(subjects[static_cast<std::size_t>(cursor + i)]);
        for (int i = 0; i < n; ++i) {
            const auto& id = subjects[static_cast<std::size_t>(i)];
            if (i < cursor || i >= cursor + size) fold.train_ids.push_back(id);
        }
        require(M <= static_cast<int>(fold.train_ids.size()), "make_folds: M=", M,
                " exceeds fold train size ", fold.train_ids.size());
        fold.labeled_ids.assign(fold.train_ids.begin(), fold.train_ids.begin() + M);
        cursor += size;
        plan.folds.push_back(std::move(fold));
    }
    check_fold_plan(plan, subjects);
    return plan;
}

// ---------------------------------------------------------------------------
// The two-stage protocol: fine-tune per (method, M, fold), evaluate volume
// Dice on the fold's validation subjects, aggregate mean/std over folds.
// ---------------------------------------------------------------------------

struct MethodSpec {
    std::string name;
    std::optional<Checkpoint> init; // empty: train from scratch (Random)
};

struct ResultRow {
    std::string method;
    int M = 0;
    double mean = 0.0;
    double stddev = 0.0; // population std over fold values
    std::vector<double> fold_values;
};

struct ResultTable {
    std::vector<ResultRow> rows;

    std::string to_csv() const {
        std::ostringstream os;
        std::size_t max_folds = 0;
        for (const auto& r : rows) max_folds = std::max(max_folds, r.fold_values.size());
        os << "method,M,mean_dsc,std";
        for (std::size_t f = 0; f < max_folds; ++f) os << ",fold" << f + 1;
        os << "\n";
        for (const auto& r : rows) {
            os << r.method << "," << r.M << "," << r.mean << "," << r.stddev;
            for (double v : r.fold_values) os << "," << v;
            os << "\n";
        }
        return os.str();
    }

    json to_json() const {
        json rows_json = json::array();
        for (const auto& r : rows)
            rows_json.push_back(json{{"method", r.method},
                                     {"M", r.M},
                                     {"mean_dsc", r.mean},
                                     {"std", r.stddev},
                                     {"fold_values", r.fold_values}});
        return json{{"rows", rows_json}};
    }
};

inline double population_std(const std::vector<double>& xs, double mean) {
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

// Evaluate one fine-tuned model on a fold's validation subjects: volume-level
// mean DSC per subject, averaged over subjects.
inline double evaluate_fold(const SegmentationModel<float>& model, const Dataset& dataset,
                            const std::vector<std::string>& val_ids) {
    double sum = 0.0;
    for (const auto& id : val_ids) {
        const Volume& vol = dataset.by_subject(id);
        Tensor<std::int32_t> pred = model.predict_volume(vol);
        sum += mean_dsc(pred, vol.labels(), dataset.num_classes).mean;
    }
    return sum / static_cast<double>(val_ids.size());
}

inline ResultTable run_protocol(const Dataset& dataset, const std::vector<MethodSpec>& methods,
                                const std::vector<int>& Ms, int k, std::uint64_t seed,
                                const ExperimentConfig& cfg) {
    require(!methods.empty(), "run_protocol: no methods given");
    const std::vector<std::string> subjects = dataset.subject_ids();
    for (const auto& v : dataset.volumes)
        require(v.has_labels(), "run_protocol: subject \"", v.subject_id(), "\" has no labels");

    ResultTable table;
    for (int M : Ms) {
        FoldPlan plan = make_folds(subjects, k, M, seed);
        for (const auto& method : methods) {
            ResultRow row;
            row.method = method.name;
            row.M = M;
            for (int f = 0; f < k; ++f) {
                const Fold& fold = plan.folds[static_cast<std::size_t>(f)];
                // Same fine-tune seed for every method: identical batch order
                // and identical decoder initialization, so only the encoder
                // initialization differs between methods.
                const std::uint64_t ft_seed =
                    fnv1a(cat("protocol:", seed, ":fold:", f, ":M:", M));
                FinetuneRun run = finetune(dataset, fold.labeled_ids, cfg,
                                           method.init ? &*method.init : nullptr, ft_seed);
                row.fold_values.push_back(evaluate_fold(run.model, dataset, fold.val_ids));
            }
            double mean = 0.0;
            for (double v : row.fold_values) mean += v;
            mean /= static_cast<double>(row.fold_values.size());
            row.mean = mean;
            row.stddev = population_std(row.fold_values, mean);
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

} // namespace sal
