#include <catch_amalgamated.hpp>

#include "sal/evaluation.hpp"

using namespace sal;
using Catch::Approx;

TEST_CASE("dice on binary masks", "[evaluation]") {
    Tensor<std::int32_t> a({2, 2}), b({2, 2});
    // identical nonempty masks -> 1
    a.at(0, 0) = a.at(1, 1) = 1;
    b = a;
    CHECK(dice(a, b) == 1.0);
    CHECK(dice(a, a) == 1.0);

    // disjoint nonempty -> 0
    Tensor<std::int32_t> c({2, 2});
    c.at(0, 1) = 1;
    Tensor<std::int32_t> d({2, 2});
    d.at(1, 0) = 1;
    CHECK(dice(c, d) == 0.0);

    // |A|=4, |B|=4, overlap 2 -> 0.5
    Tensor<std::int32_t> e({2, 4}), f({2, 4});
    for (int i = 0; i < 4; ++i) e[i] = 1;     // first row
    for (int i = 2; i < 6; ++i) f[i] = 1;     // overlap at indices 2,3
    CHECK(dice(e, f) == 0.5);
    CHECK(dice(f, e) == 0.5); // symmetry

    // empty vs empty -> 1 by convention
    Tensor<std::int32_t> z1({2, 2}), z2({2, 2});
    CHECK(dice(z1, z2) == 1.0);

    // shape mismatch and non-binary input are errors
    Tensor<std::int32_t> wrong({3, 2});
    CHECK_THROWS_AS(dice(a, wrong), Error);
    Tensor<std::int32_t> nb({2, 2});
    nb.at(0, 0) = 2;
    CHECK_THROWS_AS(dice(nb, z1), Error);
}

TEST_CASE("mean_dsc per class with hand-computed overlaps", "[evaluation]") {
    // 2x2x2 volume, classes {0,1,2}
    Tensor<std::int32_t> gt({2, 2, 2}), pred({2, 2, 2});
    // gt: slice 0 all class 1, slice 1 all class 2
    for (int i = 0; i < 4; ++i) gt[i] = 1;
    for (int i = 4; i < 8; ++i) gt[i] = 2;
    // pred: slice 0 has two voxels of class 1; slice 1 all class 2
    pred[0] = pred[1] = 1;
    for (int i = 4; i < 8; ++i) pred[i] = 2;

    MeanDsc res = mean_dsc(pred, gt, 3);
    REQUIRE(res.per_class.size() == 2);
    CHECK(res.per_class[0] == Approx(2.0 * 2 / (2 + 4))); // class 1: 2/3
    CHECK(res.per_class[1] == 1.0);                       // class 2 exact
    CHECK(res.mean == Approx((2.0 / 3.0 + 1.0) / 2.0));

    // pred == gt -> all ones
    MeanDsc perfect = mean_dsc(gt, gt, 3);
    CHECK(perfect.mean == 1.0);

    // all-background prediction -> 0 for every present foreground class
    Tensor<std::int32_t> none({2, 2, 2});
    MeanDsc zero = mean_dsc(none, gt, 3);
    CHECK(zero.per_class[0] == 0.0);
    CHECK(zero.per_class[1] == 0.0);

    // class absent in both gt and pred -> 1.0 for that class
    Tensor<std::int32_t> gt2({2, 2, 2}), pred2({2, 2, 2});
    gt2[0] = pred2[0] = 1; // only class 1 present, class 2 absent in both
    MeanDsc absent = mean_dsc(pred2, gt2, 3);
    CHECK(absent.per_class[1] == 1.0);

    // out-of-range labels rejected
    Tensor<std::int32_t> bad({2, 2, 2});
    bad[0] = 5;
    CHECK_THROWS_AS(mean_dsc(bad, gt, 3), Error);
}

TEST_CASE("fold plans: counting, determinism, shared labeled subsets", "[evaluation]") {
    std::vector<std::string> subjects;
    for (int i = 0; i < 10; ++i) subjects.push_back(cat("s", i));

    FoldPlan plan = make_folds(subjects, 5, 3, 42);
    REQUIRE(plan.folds.size() == 5);
    for (const auto& f : plan.folds) {
        CHECK(f.val_ids.size() == 2);
        CHECK(f.train_ids.size() == 8);
        CHECK(f.labeled_ids.size() == 3);
    }

    // same seed -> identical plan, regardless of input order
    std::vector<std::string> shuffled = subjects;
    RngStream(9).shuffle(shuffled.begin(), shuffled.end());
    FoldPlan plan2 = make_folds(shuffled, 5, 3, 42);
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        CHECK(plan.folds[f].val_ids == plan2.folds[f].val_ids);
        CHECK(plan.folds[f].labeled_ids == plan2.folds[f].labeled_ids);
    }

    // different seed -> different plan (with overwhelming probability)
    FoldPlan plan3 = make_folds(subjects, 5, 3, 43);
    bool any_diff = false;
    for (std::size_t f = 0; f < plan.folds.size(); ++f)
        if (plan.folds[f].val_ids != plan3.folds[f].val_ids) any_diff = true;
    CHECK(any_diff);

    // labeled subsets nest as M grows (same partition, longer prefix)
    FoldPlan plan_m5 = make_folds(subjects, 5, 5, 42);
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        CHECK(plan_m5.folds[f].val_ids == plan.folds[f].val_ids);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(plan_m5.folds[f].labeled_ids[i] == plan.folds[f].labeled_ids[i]);
    }

    CHECK_THROWS_AS(make_folds(subjects, 11, 1, 1), Error);
    CHECK_THROWS_AS(make_folds(subjects, 5, 9, 1), Error); // M > train size
}

TEST_CASE("result table serialization", "[evaluation]") {
    ResultTable t;
    t.rows.push_back(ResultRow{"random", 2, 0.5, 0.1, {0.4, 0.6}});
    t.rows.push_back(ResultRow{"sal", 2, 0.7, 0.05, {0.65, 0.75}});
    const std::string csv = t.to_csv();
    CHECK(csv.find("method,M,mean_dsc,std,fold1,fold2") != std::string::npos);
    CHECK(csv.find("sal,2,0.7,0.05,0.65,0.75") != std::string::npos);
    const json j = t.to_json();
    CHECK(j["rows"].size() == 2);
    CHECK(j["rows"][1]["method"] == "sal");

    // population std over fold values
    CHECK(population_std({1.0, 3.0}, 2.0) == Approx(1.0));
}

TEST_CASE("run_protocol on a tiny phantom problem", "[evaluation]") {
    Dataset ds = make_phantom_dataset_in_memory(4, 10, 32, 32, 55);
    ExperimentConfig cfg;
    cfg.seed = 3;
    cfg.model.base_width = 2;
    cfg.model.proj_dim = 8;
    cfg.augment.output_size = {32, 32};
    cfg.loss.omega = 2;
    cfg.pairing.n = 4;
    cfg.finetune.epochs = 2;
    cfg.finetune.batch_size = 4;
    cfg.validate();

    std::vector<MethodSpec> methods;
    methods.push_back(MethodSpec{"random", std::nullopt});
    ResultTable table = run_protocol(ds, methods, {2}, 2, 3, cfg);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].method == "random");
    CHECK(table.rows[0].M == 2);
    CHECK(table.rows[0].fold_values.size() == 2); // std over exactly k fold values
    for (double v : table.rows[0].fold_values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // deterministic end to end
    ResultTable again = run_protocol(ds, methods, {2}, 2, 3, cfg);
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        CHECK(table.rows[i].fold_values == again.rows[i].fold_values);

    // subject evaluation order does not change the fold value
    FinetuneRun run = finetune(ds, {ds.volumes[0].subject_id(), ds.volumes[1].subject_id()}, cfg);
    std::vector<std::string> val = {ds.volumes[2].subject_id(), ds.volumes[3].subject_id()};
    const double forward_order = evaluate_fold(run.model, ds, val);
    std::reverse(val.begin(), val.end());
    CHECK(evaluate_fold(run.model, ds, val) == Approx(forward_order).margin(1e-12));

    // M larger than any fold's train set is an error
    CHECK_THROWS_AS(run_protocol(ds, methods, {4}, 2, 3, cfg), Error);
}
