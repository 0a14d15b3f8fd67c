#include "gridse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gridse/report.hpp"
#include "gridse/rng.hpp"
#include "gridse/stats.hpp"

namespace gridse::pipeline {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_fail(const std::string& msg) { throw ConfigError(msg); }

const nlohmann::json& require_section(const nlohmann::json& doc, const char* key) {
    const auto it = doc.find(key);
    if (it == doc.end()) config_fail("config missing section '" + std::string(key) + "'");
    return *it;
}

Interval interval_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_array() || j.size() != 2) config_fail(std::string("config: '") + what + "' must be [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

nlohmann::ordered_json interval_to_json(const Interval& i) {
    return nlohmann::ordered_json::array({i.lo, i.hi});
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    const auto it = j.find(key);
    if (it != j.end()) out = it->get<T>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

RunConfig config_from_json(const nlohmann::json& doc) {
    RunConfig config;
    read_if(doc, "seed", config.seed);
    read_if(doc, "out", config.out_dir);
    read_if(doc, "grid_count", config.grid_count);
    read_if(doc, "profiles_per_grid", config.profiles_per_grid);
    read_if(doc, "jobs", config.jobs);

    const auto& feeder = require_section(doc, "feeder");
    read_if(feeder, "n_busbars", config.feeder.n_busbars);
    read_if(feeder, "n_arms", config.feeder.n_arms);
    read_if(feeder, "arm_busbar_fraction", config.feeder.arm_busbar_fraction);
    read_if(feeder, "anchor_root_bias", config.feeder.anchor_root_bias);
    read_if(feeder, "lateral_extend_probability", config.feeder.lateral_extend_probability);
    read_if(feeder, "loads_per_busbar", config.feeder.loads_per_busbar);
    read_if(feeder, "generator_share", config.feeder.generator_share);
    read_if(feeder, "sensing_fraction", config.feeder.sensing_fraction);
    read_if(feeder, "nominal_kv", config.feeder.nominal_kv);
    if (feeder.contains("line_r")) config.feeder.line_r = interval_from_json(feeder["line_r"], "line_r");
    if (feeder.contains("line_x")) config.feeder.line_x = interval_from_json(feeder["line_x"], "line_x");
    if (feeder.contains("transformer_r"))
        config.feeder.transformer_r = interval_from_json(feeder["transformer_r"], "transformer_r");
    if (feeder.contains("transformer_x"))
        config.feeder.transformer_x = interval_from_json(feeder["transformer_x"], "transformer_x");
    if (feeder.contains("line_length_km"))
        config.feeder.line_length_km = interval_from_json(feeder["line_length_km"], "line_length_km");
    if (feeder.contains("branch_templates")) {
        config.feeder.branch_templates.clear();
        for (const auto& t : feeder["branch_templates"]) {
            BranchTemplate tmpl;
            tmpl.weight = t.at("weight").get<double>();
            for (const auto& name : t.at("chain")) {
                const auto type = equipment_type_from_string(name.get<std::string>());
                if (!type) config_fail("config: unknown equipment type in branch template");
                tmpl.chain.push_back(*type);
            }
            config.feeder.branch_templates.push_back(std::move(tmpl));
        }
    }

    if (doc.contains("profiles")) {
        const auto& profiles = doc["profiles"];
        if (profiles.contains("load_p"))
            config.profiles.load_p = interval_from_json(profiles["load_p"], "load_p");
        if (profiles.contains("power_factor"))
            config.profiles.power_factor = interval_from_json(profiles["power_factor"], "power_factor");
        read_if(profiles, "cluster_low", config.profiles.cluster_low);
        read_if(profiles, "cluster_high", config.profiles.cluster_high);
        read_if(profiles, "cluster_sigma", config.profiles.cluster_sigma);
        read_if(profiles, "outlier_scale", config.profiles.outlier_scale);
        read_if(profiles, "outlier_min_profiles", config.profiles.outlier_min_profiles);
    }

    if (doc.contains("noise")) {
        const auto& noise = doc["noise"];
        config.noise_levels.clear();
        if (noise.is_array())
            for (const auto& p : noise) config.noise_levels.push_back(p.get<double>());
        else
            config.noise_levels.push_back(noise.get<double>());
        if (config.noise_levels.empty()) config_fail("config: 'noise' must list at least one level");
    }

    const auto& split = require_section(doc, "split");
    const auto kind_name = split.value<std::string>("kind", "profile");
    const auto kind = harness::split_kind_from_string(kind_name);
    if (!kind) config_fail("config: unknown split kind '" + kind_name + "'");
    config.split.kind = *kind;
    read_if(split, "train_fraction", config.split.train_fraction);
    read_if(split, "holdout", config.split.holdout);
    config.split.seed = config.seed;

    const auto& models = require_section(doc, "models");
    read_if(models, "kinds", config.models.kinds);
    read_if(models, "layers", config.models.layers);
    read_if(models, "hidden", config.models.hidden);
    read_if(models, "heads", config.models.heads);
    read_if(models, "dropout", config.models.dropout);
    read_if(models, "lrs", config.models.lrs);
    read_if(models, "max_epochs", config.models.max_epochs);
    read_if(models, "patience", config.models.patience);
    read_if(models, "val_fraction", config.models.val_fraction);
    read_if(models, "max_runs", config.models.max_runs);

    if (config.grid_count < 1) config_fail("config: grid_count must be >= 1");
    if (config.profiles_per_grid < 1) config_fail("config: profiles_per_grid must be >= 1");
    try {
        validate(config.feeder);
        expand_model_grid(config.models);
    } catch (const std::invalid_argument& e) {
        config_fail(e.what());
    }
    return config;
}

OrderedJson config_to_json(const RunConfig& config) {
    OrderedJson doc;
    doc["seed"] = config.seed;
    doc["out"] = config.out_dir;
    doc["grid_count"] = config.grid_count;
    doc["profiles_per_grid"] = config.profiles_per_grid;
    doc["jobs"] = config.jobs;

    auto& feeder = doc["feeder"] = OrderedJson::object();
    feeder["n_busbars"] = config.feeder.n_busbars;
    feeder["n_arms"] = config.feeder.n_arms;
    feeder["arm_busbar_fraction"] = config.feeder.arm_busbar_fraction;
    feeder["anchor_root_bias"] = config.feeder.anchor_root_bias;
    feeder["lateral_extend_probability"] = config.feeder.lateral_extend_probability;
    feeder["loads_per_busbar"] = config.feeder.loads_per_busbar;
    feeder["generator_share"] = config.feeder.generator_share;
    feeder["sensing_fraction"] = config.feeder.sensing_fraction;
    feeder["nominal_kv"] = config.feeder.nominal_kv;
    feeder["line_r"] = interval_to_json(config.feeder.line_r);
    feeder["line_x"] = interval_to_json(config.feeder.line_x);
    feeder["transformer_r"] = interval_to_json(config.feeder.transformer_r);
    feeder["transformer_x"] = interval_to_json(config.feeder.transformer_x);
    feeder["line_length_km"] = interval_to_json(config.feeder.line_length_km);
    auto& templates = feeder["branch_templates"] = OrderedJson::array();
    for (const auto& t : config.feeder.branch_templates) {
        OrderedJson tj;
        auto& chain = tj["chain"] = OrderedJson::array();
        for (const auto type : t.chain) chain.push_back(to_string(type));
        tj["weight"] = t.weight;
        templates.push_back(std::move(tj));
    }

    auto& profiles = doc["profiles"] = OrderedJson::object();
    profiles["load_p"] = interval_to_json(config.profiles.load_p);
    profiles["power_factor"] = interval_to_json(config.profiles.power_factor);
    profiles["cluster_low"] = config.profiles.cluster_low;
    profiles["cluster_high"] = config.profiles.cluster_high;
    profiles["cluster_sigma"] = config.profiles.cluster_sigma;
    profiles["outlier_scale"] = config.profiles.outlier_scale;
    profiles["outlier_min_profiles"] = config.profiles.outlier_min_profiles;

    doc["noise"] = config.noise_levels;

    auto& split = doc["split"] = OrderedJson::object();
    split["kind"] = harness::to_string(config.split.kind);
    split["train_fraction"] = config.split.train_fraction;
    split["holdout"] = config.split.holdout;

    auto& models = doc["models"] = OrderedJson::object();
    models["kinds"] = config.models.kinds;
    models["layers"] = config.models.layers;
    models["hidden"] = config.models.hidden;
    models["heads"] = config.models.heads;
    models["dropout"] = config.models.dropout;
    models["lrs"] = config.models.lrs;
    models["max_epochs"] = config.models.max_epochs;
    models["patience"] = config.models.patience;
    models["val_fraction"] = config.models.val_fraction;
    models["max_runs"] = config.models.max_runs;
    return doc;
}

RunConfig load_config(const fs::path& path) {
    try {
        return config_from_json(load_json(path));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        config_fail(std::string("config: ") + e.what());
    }
}

std::string config_hash(const RunConfig& config) {
    // The output directory does not affect artifact content.
    OrderedJson doc = config_to_json(config);
    doc.erase("out");
    const auto h = fnv1a64(doc.dump());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Provenance provenance_of(const RunConfig& config) { return {config_hash(config), config.seed}; }

std::vector<nn::ModelSpec> expand_model_grid(const ModelsConfig& models) {
    std::vector<nn::ModelSpec> specs;
    for (const auto& kind_name : models.kinds) {
        const auto kind = nn::model_kind_from_string(kind_name);
        if (!kind) throw std::invalid_argument("models: unknown kind '" + kind_name + "'");
        if (*kind == nn::ModelKind::LR || *kind == nn::ModelKind::BusbarMean) {
            nn::ModelSpec spec;
            spec.kind = *kind;
            specs.push_back(spec);
            continue;
        }
        for (const int hidden : models.hidden) {
            for (const double dropout : models.dropout) {
                if (*kind == nn::ModelKind::MLP) {
                    nn::ModelSpec spec;
                    spec.kind = *kind;
                    spec.hidden = hidden;
                    spec.dropout = dropout;
                    nn::validate(spec);
                    specs.push_back(spec);
                    continue;
                }
                const auto& head_list =
                    nn::uses_gat_encoder(*kind) ? models.heads : std::vector<int>{1};
                for (const int layers : models.layers) {
                    for (const int heads : head_list) {
                        nn::ModelSpec spec;
                        spec.kind = *kind;
                        spec.num_layers = layers;
                        spec.hidden = hidden;
                        spec.heads = heads;
                        spec.dropout = dropout;
                        nn::validate(spec);
                        specs.push_back(spec);
                    }
                }
            }
        }
    }
    if (specs.empty()) throw std::invalid_argument("models: empty model grid");
    return specs;
}

// ---------------------------------------------------------------------------
// Profile file format
// ---------------------------------------------------------------------------

OrderedJson profiles_to_json(const LoadProfileSet& profiles,
                             const std::optional<Provenance>& provenance) {
    OrderedJson doc;
    doc["schema_version"] = 1;
    doc["load_vertices"] = profiles.load_vertices;
    auto& base = doc["base_pq"] = OrderedJson::array();
    for (const auto& [p, q] : profiles.base_pq) base.push_back(OrderedJson::array({p, q}));
    auto& scaling = doc["scaling"] = OrderedJson::array();
    for (std::size_t r = 0; r < profiles.scaling.rows(); ++r) {
        OrderedJson row = OrderedJson::array();
        for (std::size_t c = 0; c < profiles.scaling.cols(); ++c)
            row.push_back(profiles.scaling.at(r, c));
        scaling.push_back(std::move(row));
    }
    doc["cluster_labels"] = profiles.cluster_labels;
    if (provenance)
        doc["provenance"] =
            OrderedJson{{"config_hash", provenance->config_hash}, {"seed", provenance->seed}};
    return doc;
}

LoadProfileSet profiles_from_json(const nlohmann::json& doc) {
    const auto ver = doc.find("schema_version");
    if (ver == doc.end() || ver->get<int>() != 1)
        throw std::runtime_error("profiles document has unsupported schema_version");
    LoadProfileSet out;
    out.load_vertices = doc.at("load_vertices").get<std::vector<int>>();
    for (const auto& pq : doc.at("base_pq"))
        out.base_pq.emplace_back(pq[0].get<double>(), pq[1].get<double>());
    const auto& scaling = doc.at("scaling");
    const std::size_t m = scaling.size();
    const std::size_t l = out.load_vertices.size();
    out.scaling = Matrix(m, l);
    for (std::size_t r = 0; r < m; ++r) {
        if (scaling[r].size() != l) throw std::runtime_error("profiles document scaling row width mismatch");
        for (std::size_t c = 0; c < l; ++c) out.scaling.at(r, c) = scaling[r][c].get<double>();
    }
    out.cluster_labels = doc.at("cluster_labels").get<std::vector<int>>();
    return out;
}

// ---------------------------------------------------------------------------
// Stage caching
// ---------------------------------------------------------------------------

namespace {

std::string subset_hash(const OrderedJson& j) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

bool stage_cached(const fs::path& manifest_path, const std::string& hash,
                  const std::vector<fs::path>& files, bool force) {
    if (force) return false;
    if (!fs::exists(manifest_path)) return false;
    try {
        const auto manifest = load_json(manifest_path);
        if (manifest.at("hash").get<std::string>() != hash) return false;
    } catch (...) {
        return false;
    }
    for (const auto& f : files)
        if (!fs::exists(f)) return false;
    return true;
}

void write_manifest(const fs::path& manifest_path, const std::string& stage, const std::string& hash) {
    OrderedJson doc;
    doc["stage"] = stage;
    doc["hash"] = hash;
    save_json(manifest_path, doc);
}

std::string zero_pad(int value, int width) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%0*d", width, value);
    return buf;
}

}  // namespace

std::vector<PowerGrid> ensure_grids(const RunConfig& config, bool force) {
    const fs::path dir = fs::path(config.out_dir) / "grids";
    OrderedJson stage_cfg = config_to_json(config);
    stage_cfg.erase("noise");
    stage_cfg.erase("split");
    stage_cfg.erase("models");
    stage_cfg.erase("out");
    stage_cfg.erase("jobs");
    const std::string hash = subset_hash(stage_cfg);

    std::vector<fs::path> files;
    for (int i = 0; i < config.grid_count; ++i) {
        files.push_back(dir / ("grid_" + zero_pad(i, 3) + ".json"));
        files.push_back(dir / ("profiles_" + zero_pad(i, 3) + ".json"));
    }

    const Provenance prov = provenance_of(config);
    std::vector<PowerGrid> grids;
    if (stage_cached(dir / "manifest.json", hash, files, force)) {
        for (int i = 0; i < config.grid_count; ++i)
            grids.push_back(load_grid(dir / ("grid_" + zero_pad(i, 3) + ".json")));
        return grids;
    }

    const Rng root(config.seed);
    for (int i = 0; i < config.grid_count; ++i) {
        FeederConfig feeder = config.feeder;
        feeder.seed = root.derive("grid").derive(static_cast<std::uint64_t>(i)).seed();
        const BusBranchGrid bus_branch = generate_feeder(feeder);
        PowerGrid expanded = expand_to_ab(bus_branch);
        expanded = place_sensors(expanded, feeder.sensing_fraction,
                                 root.derive("sensors").derive(static_cast<std::uint64_t>(i)).seed());
        const LoadProfileSet profiles =
            sample_profiles(expanded, config.profiles_per_grid,
                            root.derive("profiles").derive(static_cast<std::uint64_t>(i)).seed(),
                            config.profiles);
        save_json(dir / ("grid_" + zero_pad(i, 3) + ".json"), grid_to_json(expanded, prov));
        save_json(dir / ("profiles_" + zero_pad(i, 3) + ".json"), profiles_to_json(profiles, prov));
        grids.push_back(std::move(expanded));
    }
    write_manifest(dir / "manifest.json", "grids", hash);
    return grids;
}

harness::Dataset ensure_dataset(const RunConfig& config, double noise, bool force) {
    const auto it = std::find(config.noise_levels.begin(), config.noise_levels.end(), noise);
    if (it == config.noise_levels.end())
        config_fail("ensure_dataset: noise level not listed in the config");
    const auto noise_index = static_cast<int>(it - config.noise_levels.begin());

    const fs::path dir = fs::path(config.out_dir) / "snapshots" / ("noise" + std::to_string(noise_index));
    OrderedJson stage_cfg = config_to_json(config);
    stage_cfg.erase("split");
    stage_cfg.erase("models");
    stage_cfg.erase("out");
    stage_cfg.erase("jobs");
    stage_cfg["noise_level"] = noise;
    const std::string hash = subset_hash(stage_cfg);

    std::vector<fs::path> files;
    for (int g = 0; g < config.grid_count; ++g)
        for (int t = 0; t < config.profiles_per_grid; ++t)
            files.push_back(dir / ("g" + zero_pad(g, 3)) / ("t" + zero_pad(t, 3) + ".json"));

    const std::vector<PowerGrid> grids = ensure_grids(config, force);
    harness::Dataset dataset;
    dataset.config_hash = config_hash(config);
    dataset.seed = config.seed;

    if (stage_cached(dir / "manifest.json", hash, files, force)) {
        for (int g = 0; g < config.grid_count; ++g) {
            harness::GridData gdata;
            gdata.grid = grids[static_cast<std::size_t>(g)];
            for (int t = 0; t < config.profiles_per_grid; ++t)
                gdata.snapshots.push_back(
                    load_snapshot(dir / ("g" + zero_pad(g, 3)) / ("t" + zero_pad(t, 3) + ".json")));
            dataset.grids.push_back(std::move(gdata));
        }
        return dataset;
    }

    const Provenance prov = provenance_of(config);
    const Rng root(config.seed);
    const fs::path grids_dir = fs::path(config.out_dir) / "grids";
    for (int g = 0; g < config.grid_count; ++g) {
        const PowerGrid& grid = grids[static_cast<std::size_t>(g)];
        const LoadProfileSet profiles =
            profiles_from_json(load_json(grids_dir / ("profiles_" + zero_pad(g, 3) + ".json")));
        harness::GridData gdata;
        gdata.grid = grid;
        for (int t = 0; t < profiles.num_profiles(); ++t) {
            const SolveResult solved = solve_radial(grid, profiles.profile(t));
            gdata.snapshots.push_back(make_snapshot(grid, solved, t));
        }
        if (noise > 0.0) {
            NoiseSpec spec;
            spec.p = noise;
            spec.seed = root.derive("label-noise")
                            .derive(static_cast<std::uint64_t>(noise_index))
                            .derive(static_cast<std::uint64_t>(g))
                            .seed();
            gdata.snapshots = add_label_noise(gdata.snapshots, spec);
        }
        for (int t = 0; t < static_cast<int>(gdata.snapshots.size()); ++t)
            save_json(dir / ("g" + zero_pad(g, 3)) / ("t" + zero_pad(t, 3) + ".json"),
                      snapshot_to_json(gdata.snapshots[static_cast<std::size_t>(t)], prov));
        dataset.grids.push_back(std::move(gdata));
    }
    write_manifest(dir / "manifest.json", "snapshots", hash);
    return dataset;
}

void run_stats_stage(const RunConfig& config, bool force) {
    const fs::path dir = fs::path(config.out_dir) / "stats";
    OrderedJson stage_cfg = config_to_json(config);
    stage_cfg.erase("noise");
    stage_cfg.erase("split");
    stage_cfg.erase("models");
    stage_cfg.erase("out");
    stage_cfg.erase("jobs");
    const std::string hash = subset_hash(stage_cfg);

    std::vector<fs::path> files;
    for (int g = 0; g < config.grid_count; ++g)
        files.push_back(dir / ("stats_" + zero_pad(g, 3) + ".json"));
    files.push_back(dir / "sensor_distances.csv");
    if (stage_cached(dir / "manifest.json", hash, files, force)) return;

    const std::vector<PowerGrid> grids = ensure_grids(config, force);
    const Provenance prov = provenance_of(config);
    std::ostringstream csv;
    csv << "# config_hash=" << prov.config_hash << " seed=" << prov.seed << "\n";
    csv << "grid,busbar,k,distance\n";
    for (int g = 0; g < config.grid_count; ++g) {
        const auto& grid = grids[static_cast<std::size_t>(g)];
        const GraphStats stats = compute_stats(grid);
        OrderedJson doc;
        doc["schema_version"] = 1;
        doc["mean_degree"] = stats.mean_degree;
        doc["diameter"] = stats.diameter;
        doc["mean_shortest_path"] = stats.mean_shortest_path;
        doc["mean_clustering"] = stats.mean_clustering;
        doc["num_vertices"] = grid.num_vertices();
        doc["num_busbars"] = grid.busbars().size();
        doc["sensing_ratio"] =
            static_cast<double>(grid.sensing.size()) / static_cast<double>(grid.num_vertices());
        doc["provenance"] = OrderedJson{{"config_hash", prov.config_hash}, {"seed", prov.seed}};
        save_json(dir / ("stats_" + zero_pad(g, 3) + ".json"), doc);

        const auto busbars = grid.busbars();
        for (std::size_t b = 0; b < stats.busbar_sensor_distances.size(); ++b)
            for (std::size_t k = 0; k < stats.busbar_sensor_distances[b].size(); ++k)
                csv << g << ',' << busbars[b] << ',' << (k + 1) << ','
                    << stats.busbar_sensor_distances[b][k] << '\n';
    }
    std::ofstream out(dir / "sensor_distances.csv");
    out << csv.str();
    write_manifest(dir / "manifest.json", "stats", hash);
}

harness::RunReport run_sweep_stage(const RunConfig& config, bool force) {
    const fs::path dir = fs::path(config.out_dir) / "report";
    const std::string hash = subset_hash(config_to_json(config));
    const Provenance prov = provenance_of(config);

    if (stage_cached(dir / "manifest.json", hash, {dir / "report.json"}, force))
        return report::report_from_json(load_json(dir / "report.json"));

    harness::RunReport merged;
    const Rng root(config.seed);
    for (std::size_t ni = 0; ni < config.noise_levels.size(); ++ni) {
        const double noise = config.noise_levels[ni];
        const harness::Dataset dataset = ensure_dataset(config, noise, force);
        harness::SweepOptions options;
        options.models = expand_model_grid(config.models);
        options.lrs = config.models.lrs;
        options.schedule.max_epochs = config.models.max_epochs;
        options.schedule.patience = config.models.patience;
        options.schedule.val_fraction = config.models.val_fraction;
        options.max_runs = config.models.max_runs;
        options.jobs = config.jobs;
        options.noise_tag = noise;
        options.seed = root.derive("sweep").derive(ni).seed();

        harness::SplitPlan plan = config.split;
        plan.seed = config.seed;
        harness::RunReport part = harness::sweep(dataset, plan, options);
        for (auto& run : part.runs) {
            run.run_id = static_cast<int>(merged.runs.size());
            merged.runs.push_back(std::move(run));
        }
    }

    report::write_report_files(dir, merged, prov);
    write_manifest(dir / "manifest.json", "report", hash);
    return merged;
}

void run_pipeline(const RunConfig& config, bool force) {
    std::cerr << "[pipeline] grids\n";
    ensure_grids(config, force);
    std::cerr << "[pipeline] stats\n";
    run_stats_stage(config, force);
    std::cerr << "[pipeline] sweep\n";
    run_sweep_stage(config, force);
    std::cerr << "[pipeline] done -> " << config.out_dir << "\n";
}

}  // namespace gridse::pipeline
