#include "gridse/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <sstream>

#include "gridse/optim.hpp"
#include "gridse/rng.hpp"

namespace gridse::harness {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

nn::ModelInput input_of(const CompiledData& data, const CompiledSample& sample) {
    nn::ModelInput in;
    const auto& grid = data.grids[static_cast<std::size_t>(sample.grid)];
    in.graph = &grid.graph;
    in.node_features = &sample.features;
    if (!sample.flat.empty()) in.flat = &sample.flat;
    return in;
}

std::string param_norms(const nn::ParamStore& store) {
    std::ostringstream out;
    for (const auto& p : store.params()) {
        double norm = 0.0;
        for (double v : p.value) norm += v * v;
        out << " " << p.name << "=" << std::sqrt(norm);
    }
    return out.str();
}

std::vector<double> save_values(const nn::ParamStore& store) {
    std::vector<double> out;
    out.reserve(store.total_size());
    for (const auto& p : store.params()) out.insert(out.end(), p.value.begin(), p.value.end());
    return out;
}

void restore_values(nn::ParamStore& store, const std::vector<double>& values) {
    std::size_t offset = 0;
    for (auto& p : store.params()) {
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
                  values.begin() + static_cast<std::ptrdiff_t>(offset + p.value.size()),
                  p.value.begin());
        offset += p.value.size();
    }
}

}  // namespace

TrainResult train_model(nn::TrainableModel& model, const CompiledData& train, const CompiledData& val,
                        const Preprocessor& preprocessor, const TrainSchedule& schedule) {
    if (train.empty()) fail("train_model: empty training set");
    if (schedule.max_epochs < 1) fail("train_model: max_epochs must be >= 1");

    Rng rng(schedule.seed);
    Rng shuffle_rng = rng.derive("shuffle");
    Rng dropout_rng = rng.derive("dropout");
    const ad::AdamConfig adam{schedule.lr, 0.9, 0.999, 1e-8};

    TrainResult result;
    result.best_val_mae = std::numeric_limits<double>::infinity();
    std::vector<double> best_values;
    int epochs_since_best = 0;

    std::vector<std::size_t> order(train.samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (const auto idx : order) {
            const auto& sample = train.samples[idx];
            ad::Tape tape;
            ad::Tensor preds = model.forward(tape, input_of(train, sample), true, &dropout_rng);
            ad::Tensor labels =
                ad::Tensor::constant(sample.labels_scaled.size(), 1, sample.labels_scaled);
            ad::Tensor loss = nn::mse_loss(tape, preds, labels);
            const double loss_value = loss.value();
            if (!std::isfinite(loss_value)) {
                std::ostringstream msg;
                msg << "train_model: non-finite loss at epoch " << epoch << " (lr " << schedule.lr
                    << "; param norms:" << param_norms(model.params()) << ")";
                throw TrainDivergence(msg.str(), epoch, schedule.lr);
            }
            loss_sum += loss_value;
            tape.backward(loss);
            for (const auto& [param, leaf] : model.bindings()) {
                const auto grad = tape.grad(leaf);
                ad::adam_step(param->value, grad, param->opt, adam);
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train.samples.size());
        stats.val_mae = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : evaluate_mae(model, val, preprocessor);
        result.curve.push_back(stats);

        if (!val.empty()) {
            if (stats.val_mae < result.best_val_mae) {
                result.best_val_mae = stats.val_mae;
                result.best_epoch = epoch;
                best_values = save_values(model.params());
                epochs_since_best = 0;
            } else if (++epochs_since_best >= schedule.patience) {
                break;
            }
        }
    }

    if (!best_values.empty()) {
        restore_values(model.params(), best_values);
    } else if (!result.curve.empty()) {
        result.best_epoch = result.curve.back().epoch;
        result.best_val_mae = result.curve.back().val_mae;
    }
    return result;
}

double evaluate_mae(nn::TrainableModel& model, const CompiledData& data,
                    const Preprocessor& preprocessor) {
    if (data.empty()) fail("evaluate_mae: empty dataset");
    double total = 0.0;
    for (const auto& sample : data.samples) {
        ad::Tape tape;
        ad::Tensor preds = model.forward(tape, input_of(data, sample), false, nullptr);
        const auto& values = preds.values();
        double mae = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            mae += std::abs(preprocessor.invert_label(values[i]) - sample.labels_raw[i]);
        total += mae / static_cast<double>(values.size());
    }
    return total / static_cast<double>(data.samples.size());
}

std::vector<std::vector<double>> predict_all(nn::TrainableModel& model, const CompiledData& data,
                                             const Preprocessor& preprocessor) {
    std::vector<std::vector<double>> out;
    out.reserve(data.samples.size());
    for (const auto& sample : data.samples) {
        ad::Tape tape;
        ad::Tensor preds = model.forward(tape, input_of(data, sample), false, nullptr);
        std::vector<double> row(preds.values().size());
        for (std::size_t i = 0; i < row.size(); ++i)
            row[i] = preprocessor.invert_label(preds.values()[i]);
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Single experiment
// ---------------------------------------------------------------------------

namespace {

double mean_abs_error(const std::vector<double>& preds, const std::vector<double>& labels) {
    return nn::loss_and_metrics(preds, labels).mae;
}

/// Mean MAE of a constant per-sample predictor over sample refs.
double baseline_mae(const Dataset& dataset, const std::vector<SampleRef>& refs,
                    const std::function<std::vector<double>(std::size_t)>& predict) {
    double total = 0.0;
    for (const auto& ref : refs) {
        const auto& snap = dataset.grids[static_cast<std::size_t>(ref.grid)]
                               .snapshots[static_cast<std::size_t>(ref.snapshot)];
        std::vector<double> labels;
        labels.reserve(snap.busbar_labels.size());
        for (const auto& [bus, v] : snap.busbar_labels) labels.push_back(v);
        total += mean_abs_error(predict(labels.size()), labels);
    }
    return total / static_cast<double>(refs.size());
}

RunOutcome run_mean_baseline(const Dataset& dataset, const SplitPlan& plan, const SplitIndices& idx,
                             RunOutcome outcome) {
    const bool global = plan.kind == SplitKind::Topology;
    nn::MeanPredictor predictor;
    if (global) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& ref : idx.train) {
            const auto& snap = dataset.grids[static_cast<std::size_t>(ref.grid)]
                                   .snapshots[static_cast<std::size_t>(ref.snapshot)];
            for (const auto& [bus, v] : snap.busbar_labels) {
                sum += v;
                ++count;
            }
        }
        Matrix pooled(1, 1, {sum / static_cast<double>(count)});
        predictor = nn::MeanPredictor::fit(pooled, true);
    } else {
        predictor = nn::MeanPredictor::fit(label_matrix(dataset, idx.train), false);
    }
    auto predict = [&](std::size_t n) { return predictor.predict(n); };
    outcome.train_mae = baseline_mae(dataset, idx.train, predict);
    outcome.test_mae = baseline_mae(dataset, idx.test, predict);
    return outcome;
}

RunOutcome run_lr_baseline(const Dataset& dataset, const SplitPlan& plan, const SplitIndices& idx,
                           const InputFeatureOptions& opts, RunOutcome outcome) {
    if (plan.kind == SplitKind::Topology)
        fail("run_experiment: the lr baseline is topology-bound and not applicable to topology splits");
    const Preprocessor pre = fit_preprocessor(dataset, idx.train, opts, true);
    const auto& gdata = dataset.grids.front();

    auto flat_of = [&](const SampleRef& ref) {
        return pre.apply_flat(
            flatten_snapshot(gdata.grid, gdata.snapshots[static_cast<std::size_t>(ref.snapshot)]));
    };
    const std::size_t d = pre.flat_mean.size();
    Matrix x(idx.train.size(), d);
    for (std::size_t r = 0; r < idx.train.size(); ++r) {
        const auto row = flat_of(idx.train[r]);
        for (std::size_t c = 0; c < d; ++c) x.at(r, c) = row[c];
    }
    const Matrix y = label_matrix(dataset, idx.train);
    const auto model = nn::RidgeRegression::fit(x, y, 1e-8);

    auto eval = [&](const std::vector<SampleRef>& refs) {
        double total = 0.0;
        for (const auto& ref : refs) {
            const auto preds = model.predict(flat_of(ref));
            const auto& snap = gdata.snapshots[static_cast<std::size_t>(ref.snapshot)];
            std::vector<double> labels;
            for (const auto& [bus, v] : snap.busbar_labels) labels.push_back(v);
            total += mean_abs_error(preds, labels);
        }
        return total / static_cast<double>(refs.size());
    };
    outcome.train_mae = eval(idx.train);
    outcome.test_mae = eval(idx.test);
    return outcome;
}

}  // namespace

RunOutcome run_experiment(const Dataset& dataset, const SplitPlan& plan, const nn::ModelSpec& spec,
                          const TrainSchedule& schedule, const InputFeatureOptions& opts) {
    nn::validate(spec);
    RunOutcome outcome;
    outcome.model = spec.name();
    outcome.spec = spec;
    outcome.lr = schedule.lr;

    const SplitIndices idx = split(dataset, plan);

    if (spec.kind == nn::ModelKind::BusbarMean)
        return run_mean_baseline(dataset, plan, idx, std::move(outcome));
    if (spec.kind == nn::ModelKind::LR)
        return run_lr_baseline(dataset, plan, idx, opts, std::move(outcome));

    return train_single(dataset, plan, spec, schedule, opts).outcome;
}

TrainedModel train_single(const Dataset& dataset, const SplitPlan& plan, const nn::ModelSpec& spec,
                          const TrainSchedule& schedule, const InputFeatureOptions& opts) {
    nn::validate(spec);
    if (!nn::is_gnn(spec.kind) && spec.kind != nn::ModelKind::MLP)
        fail("train_single: kind '" + std::string(to_string(spec.kind)) + "' is not gradient-trained");
    const bool needs_flat = spec.kind == nn::ModelKind::MLP;
    if (needs_flat && plan.kind == SplitKind::Topology)
        fail("train_single: the mlp baseline is topology-bound and not applicable to topology splits");

    const SplitIndices idx = split(dataset, plan);
    const auto [fit_refs, val_refs] =
        carve_validation(idx.train, schedule.val_fraction, schedule.seed);

    TrainedModel trained;
    trained.outcome.model = spec.name();
    trained.outcome.spec = spec;
    trained.outcome.lr = schedule.lr;
    trained.preprocessor = fit_preprocessor(dataset, idx.train, opts, needs_flat);
    const Preprocessor& pre = trained.preprocessor;
    const CompiledData train_c = compile(dataset, fit_refs, pre, opts, needs_flat);
    const CompiledData val_c = compile(dataset, val_refs, pre, opts, needs_flat);
    const CompiledData test_c = compile(dataset, idx.test, pre, opts, needs_flat);

    const std::size_t n_busbars = train_c.grids.front().n_busbars;
    const auto model_seed = Rng(schedule.seed).derive(spec.name()).seed();
    trained.model = nn::make_trainable_model(spec, train_c.input_width, train_c.flat_width, n_busbars,
                                             model_seed);

    const TrainResult result = train_model(*trained.model, train_c, val_c, pre, schedule);
    trained.outcome.train_mae = evaluate_mae(*trained.model, train_c, pre);
    trained.outcome.val_mae = val_c.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : evaluate_mae(*trained.model, val_c, pre);
    trained.outcome.test_mae = evaluate_mae(*trained.model, test_c, pre);
    trained.outcome.epochs_run = static_cast<int>(result.curve.size());
    trained.outcome.best_epoch = result.best_epoch;
    trained.outcome.curve = result.curve;
    return trained;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const nn::ModelSpec& spec,
                     const nn::ParamStore& params, const Preprocessor& preprocessor,
                     const std::optional<Provenance>& provenance) {
    OrderedJson doc;
    doc["schema_version"] = 1;
    doc["spec"] = nn::spec_to_json(spec);
    OrderedJson pre;
    pre["feature_mean"] = preprocessor.feature_mean;
    pre["feature_std"] = preprocessor.feature_std;
    pre["flat_mean"] = preprocessor.flat_mean;
    pre["flat_std"] = preprocessor.flat_std;
    pre["label_min"] = preprocessor.label_min;
    pre["label_max"] = preprocessor.label_max;
    doc["preprocessor"] = std::move(pre);
    doc["params"] = nn::params_to_json(params);
    if (provenance)
        doc["provenance"] =
            OrderedJson{{"config_hash", provenance->config_hash}, {"seed", provenance->seed}};
    save_json(path, doc);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto doc = load_json(path);
    const auto ver = doc.find("schema_version");
    if (ver == doc.end() || ver->get<int>() != 1)
        throw std::runtime_error("checkpoint document has unsupported schema_version");
    Checkpoint ckpt;
    ckpt.spec = nn::spec_from_json(doc.at("spec"));
    const auto& pre = doc.at("preprocessor");
    ckpt.preprocessor.feature_mean = pre.at("feature_mean").get<std::vector<double>>();
    ckpt.preprocessor.feature_std = pre.at("feature_std").get<std::vector<double>>();
    ckpt.preprocessor.flat_mean = pre.at("flat_mean").get<std::vector<double>>();
    ckpt.preprocessor.flat_std = pre.at("flat_std").get<std::vector<double>>();
    ckpt.preprocessor.label_min = pre.at("label_min").get<double>();
    ckpt.preprocessor.label_max = pre.at("label_max").get<double>();
    ckpt.params = doc.at("params");
    return ckpt;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

RunReport sweep(const Dataset& dataset, const SplitPlan& plan, const SweepOptions& options) {
    if (options.models.empty()) fail("sweep: no model specs");
    struct Combo {
        nn::ModelSpec spec;
        double lr;
    };
    std::vector<Combo> combos;
    for (const auto& spec : options.models) {
        const bool gradient_trained = nn::is_gnn(spec.kind) || spec.kind == nn::ModelKind::MLP;
        if (gradient_trained) {
            for (double lr : options.lrs) combos.push_back({spec, lr});
        } else {
            combos.push_back({spec, 0.0});
        }
    }
    if (options.max_runs > 0 && combos.size() > static_cast<std::size_t>(options.max_runs)) {
        std::vector<std::size_t> keep(combos.size());
        std::iota(keep.begin(), keep.end(), 0);
        Rng rng = Rng(options.seed).derive("subsample");
        rng.shuffle(keep);
        keep.resize(static_cast<std::size_t>(options.max_runs));
        std::sort(keep.begin(), keep.end());
        std::vector<Combo> sampled;
        sampled.reserve(keep.size());
        for (auto i : keep) sampled.push_back(combos[i]);
        combos = std::move(sampled);
    }

    auto run_one = [&](std::size_t i) {
        const auto& combo = combos[i];
        TrainSchedule schedule = options.schedule;
        schedule.lr = combo.lr > 0.0 ? combo.lr : options.schedule.lr;
        schedule.seed = Rng(options.seed).derive(i).seed();
        RunOutcome outcome;
        try {
            outcome = run_experiment(dataset, plan, combo.spec, schedule, options.features);
        } catch (const std::exception& e) {
            outcome.model = combo.spec.name();
            outcome.spec = combo.spec;
            outcome.lr = schedule.lr;
            outcome.error = e.what();
        }
        outcome.run_id = static_cast<int>(i);
        outcome.noise = options.noise_tag;
        return outcome;
    };

    RunReport report;
    report.runs.resize(combos.size());
    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        for (std::size_t i = 0; i < combos.size(); ++i) report.runs[i] = run_one(i);
    } else {
        std::size_t next = 0;
        while (next < combos.size()) {
            std::vector<std::future<RunOutcome>> batch;
            for (int j = 0; j < jobs && next < combos.size(); ++j, ++next)
                batch.push_back(std::async(std::launch::async, run_one, next));
            for (auto& f : batch) {
                RunOutcome outcome = f.get();
                report.runs[static_cast<std::size_t>(outcome.run_id)] = std::move(outcome);
            }
        }
    }
    return report;
}

}  // namespace gridse::harness
