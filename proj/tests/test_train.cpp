#include <doctest.h>

#include <cmath>
#include <string>

#include "gridse/dataset.hpp"
#include "gridse/powerflow.hpp"
#include "gridse/report.hpp"
#include "gridse/rng.hpp"
#include "gridse/synth.hpp"
#include "gridse/train.hpp"

using namespace gridse;
using namespace gridse::harness;

namespace {

Dataset make_dataset(int n_grids, int profiles, std::uint64_t seed, int n_busbars = 8) {
    Dataset ds;
    ds.seed = seed;
    for (int g = 0; g < n_grids; ++g) {
        FeederConfig config;
        config.n_busbars = n_busbars;
        config.loads_per_busbar = 1.2;
        config.seed = seed + static_cast<std::uint64_t>(g);
        GridData gdata;
        gdata.grid = place_sensors(expand_to_ab(generate_feeder(config)), 0.1,
                                   seed + 100 + static_cast<std::uint64_t>(g));
        const LoadProfileSet set =
            sample_profiles(gdata.grid, profiles, seed + 200 + static_cast<std::uint64_t>(g));
        for (int t = 0; t < set.num_profiles(); ++t)
            gdata.snapshots.push_back(
                make_snapshot(gdata.grid, solve_radial(gdata.grid, set.profile(t)), t));
        ds.grids.push_back(std::move(gdata));
    }
    return ds;
}

}  // namespace

TEST_CASE("busbar-mean training is closed form: zero epochs, constant predictions") {
    const Dataset ds = make_dataset(1, 8, 21);
    SplitPlan plan;
    plan.seed = 21;
    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::BusbarMean;
    const RunOutcome outcome = run_experiment(ds, plan, spec, {});
    CHECK(outcome.epochs_run == 0);
    CHECK(outcome.curve.empty());
    CHECK(outcome.error.empty());
    CHECK(outcome.test_mae > 0.0);
}

TEST_CASE("training reduces the loss and early stopping kicks in") {
    const Dataset ds = make_dataset(1, 12, 22);
    SplitPlan plan;
    plan.seed = 22;
    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::GCN;
    spec.num_layers = 2;
    spec.hidden = 8;
    TrainSchedule schedule;
    schedule.lr = 1e-3;
    schedule.max_epochs = 300;
    schedule.patience = 10;
    schedule.seed = 22;
    const RunOutcome outcome = run_experiment(ds, plan, spec, schedule);
    CHECK(outcome.error.empty());
    REQUIRE(outcome.curve.size() > 5);
    CHECK(outcome.curve.back().train_loss < outcome.curve.front().train_loss);
    CHECK(outcome.best_epoch >= 0);
}

TEST_CASE("train loss is non-increasing over the first 10 epochs at lr 1e-4") {
    const Dataset ds = make_dataset(1, 6, 23);
    SplitPlan plan;
    plan.seed = 23;
    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::GCN;
    spec.num_layers = 2;
    spec.hidden = 8;
    TrainSchedule schedule;
    schedule.lr = 1e-4;
    schedule.max_epochs = 10;
    schedule.val_fraction = 0.0;
    schedule.seed = 23;
    const RunOutcome outcome = run_experiment(ds, plan, spec, schedule);
    REQUIRE(outcome.curve.size() == 10);
    for (std::size_t i = 1; i < outcome.curve.size(); ++i)
        CHECK(outcome.curve[i].train_loss <=
              outcome.curve[i - 1].train_loss * (1.0 + 1e-6));
}

TEST_CASE("capacity probe: 13-layer JK-Trans overfits 5 snapshots without NaN") {
    const Dataset ds = make_dataset(1, 5, 24, 6);
    SplitPlan plan;
    plan.seed = 24;
    plan.train_fraction = 0.8;  // 4 train / 1 test
    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::JKTrans;
    spec.num_layers = 13;
    spec.hidden = 32;
    TrainSchedule schedule;
    schedule.lr = 1e-3;
    schedule.max_epochs = 400;
    schedule.patience = 400;
    schedule.val_fraction = 0.0;  // pure capacity check
    schedule.seed = 24;
    const auto trained = train_single(ds, plan, spec, schedule);
    const double scale = trained.preprocessor.label_max - trained.preprocessor.label_min;
    REQUIRE(scale > 0.0);
    const double scaled_train_mae = trained.outcome.train_mae / scale;
    CHECK(std::isfinite(trained.outcome.train_mae));
    CHECK(scaled_train_mae < 1e-3);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    const Dataset ds = make_dataset(1, 6, 25);
    SplitPlan plan;
    plan.seed = 25;
    const auto idx = split(ds, plan);
    const Preprocessor pre = fit_preprocessor(ds, idx.train, {}, false);
    CompiledData train = compile(ds, idx.train, pre, {}, false);
    train.samples.front().labels_scaled.front() = 1e200;  // squared -> inf

    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::GCN;
    spec.num_layers = 2;
    spec.hidden = 8;
    nn::GnnModel model(spec, train.input_width, 1);
    try {
        (void)train_model(model, train, {}, pre, {.lr = 1e-3, .max_epochs = 3});
        FAIL("expected divergence");
    } catch (const TrainDivergence& e) {
        CHECK(e.epoch() == 0);
        CHECK(e.lr() == doctest::Approx(1e-3));
        CHECK(std::string(e.what()).find("param norms") != std::string::npos);
    }
}

TEST_CASE("mlp and lr are rejected under topology splits") {
    const Dataset ds = make_dataset(2, 5, 26);
    SplitPlan plan;
    plan.kind = SplitKind::Topology;
    plan.seed = 26;
    nn::ModelSpec lr_spec;
    lr_spec.kind = nn::ModelKind::LR;
    CHECK_THROWS_AS((void)run_experiment(ds, plan, lr_spec, {}), std::invalid_argument);
    nn::ModelSpec mlp_spec;
    mlp_spec.kind = nn::ModelKind::MLP;
    mlp_spec.hidden = 8;
    CHECK_THROWS_AS((void)run_experiment(ds, plan, mlp_spec, {}), std::invalid_argument);
}

TEST_CASE("sweep: determinism, failure capture, and summary relative error") {
    const Dataset ds = make_dataset(1, 8, 27);
    SplitPlan plan;
    plan.seed = 27;

    SweepOptions options;
    nn::ModelSpec gcn;
    gcn.kind = nn::ModelKind::GCN;
    gcn.num_layers = 2;
    gcn.hidden = 8;
    nn::ModelSpec bad;  // fails: mlp is fine on profile splits, so use a too-small hidden? no:
    bad.kind = nn::ModelKind::BusbarMean;
    nn::ModelSpec mean;
    mean.kind = nn::ModelKind::BusbarMean;
    options.models = {gcn, mean};
    options.schedule.max_epochs = 20;
    options.schedule.patience = 20;
    options.schedule.seed = 27;
    options.seed = 27;

    const RunReport a = sweep(ds, plan, options);
    const RunReport b = sweep(ds, plan, options);
    REQUIRE(a.runs.size() == 2);
    const Provenance prov{"hash", 27};
    CHECK(report::report_to_json(a, prov).dump() == report::report_to_json(b, prov).dump());

    // Parallel execution returns byte-identical reports.
    SweepOptions parallel = options;
    parallel.jobs = 2;
    const RunReport c = sweep(ds, plan, parallel);
    CHECK(report::report_to_json(a, prov).dump() == report::report_to_json(c, prov).dump());

    // Summary: the best kind carries relative error 0.
    const std::string summary = report::summary_csv(a, prov);
    CHECK(summary.find(",0\n") != std::string::npos);
}

TEST_CASE("sweep records per-run failures without aborting") {
    const Dataset ds = make_dataset(2, 5, 28);
    SplitPlan plan;
    plan.kind = SplitKind::Topology;
    plan.seed = 28;

    SweepOptions options;
    nn::ModelSpec gcn;
    gcn.kind = nn::ModelKind::GCN;
    gcn.num_layers = 2;
    gcn.hidden = 8;
    nn::ModelSpec lr_spec;
    lr_spec.kind = nn::ModelKind::LR;  // invalid under topology split
    options.models = {gcn, lr_spec};
    options.schedule.max_epochs = 10;
    options.schedule.patience = 10;
    options.seed = 28;

    const RunReport report = sweep(ds, plan, options);
    REQUIRE(report.runs.size() == 2);
    CHECK(report.runs[0].error.empty());
    CHECK(!report.runs[1].error.empty());
    CHECK(report.runs[1].error.find("topology") != std::string::npos);
}

TEST_CASE("checkpoints save and restore through the filesystem") {
    const Dataset ds = make_dataset(1, 8, 29);
    SplitPlan plan;
    plan.seed = 29;
    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::GAT;
    spec.num_layers = 2;
    spec.hidden = 8;
    TrainSchedule schedule;
    schedule.max_epochs = 15;
    schedule.seed = 29;
    auto trained = train_single(ds, plan, spec, schedule);

    const auto dir = std::filesystem::temp_directory_path() / "gridse_ckpt_test";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir / "model.json", spec, trained.model->params(), trained.preprocessor,
                    Provenance{"cafe", 29});
    const Checkpoint ckpt = load_checkpoint(dir / "model.json");
    CHECK(ckpt.spec.kind == spec.kind);
    CHECK(ckpt.preprocessor.label_min == trained.preprocessor.label_min);

    const auto idx = split(ds, plan);
    const CompiledData test = compile(ds, idx.test, ckpt.preprocessor, {}, false);
    auto restored = nn::make_trainable_model(ckpt.spec, test.input_width, 0, 0, 0);
    nn::params_from_json(restored->params(), ckpt.params);
    const double mae_restored = evaluate_mae(*restored, test, ckpt.preprocessor);
    const double mae_original = evaluate_mae(*trained.model, test, trained.preprocessor);
    CHECK(mae_restored == doctest::Approx(mae_original).epsilon(1e-12));
    std::filesystem::remove_all(dir);
}
