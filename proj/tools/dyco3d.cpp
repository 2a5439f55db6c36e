// Operator entry point: data generation, training, inference, evaluation,
// qualitative export and the clustering-radius sweep.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
// failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dyco/trainer.hpp"

namespace fs = std::filesystem;
using namespace dyco;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

data::SynthConfig parse_synth_config(const std::string& text) {
    data::SynthConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("synth config line " + std::to_string(lineno) +
                              ": expected key=value");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        try {
            if (key == "num_scenes") cfg.num_scenes = std::stoi(value);
            else if (key == "classes") cfg.classes = std::stoi(value);
            else if (key == "min_instances") cfg.min_instances = std::stoi(value);
            else if (key == "max_instances") cfg.max_instances = std::stoi(value);
            else if (key == "min_points") cfg.min_points = std::stoi(value);
            else if (key == "max_points") cfg.max_points = std::stoi(value);
            else if (key == "room_x") cfg.room[0] = std::stod(value);
            else if (key == "room_y") cfg.room[1] = std::stod(value);
            else if (key == "room_z") cfg.room[2] = std::stod(value);
            else if (key == "noise_sigma") cfg.noise_sigma = std::stod(value);
            else if (key == "separation") cfg.separation = std::stod(value);
            else if (key == "color_noise") cfg.color_noise = std::stod(value);
            else if (key == "floor_points") cfg.floor_points = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else throw ConfigError("synth config: unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("synth config: bad value '" + value + "' for key '" + key + "'");
        }
    }
    return cfg;
}

struct SharedArgs {
    std::string config;
    std::string data;
    std::string checkpoint;
    std::string out;
    int jobs = 1;
    long seed = -1;  // -1: keep the config's seed
};

std::vector<data::Scene> load_scenes(const std::string& manifest) {
    auto scenes = data::load_dataset(manifest);
    if (scenes.empty()) throw DataError("dataset " + manifest + " contains no scenes");
    for (const auto& s : scenes) data::validate_scene(s);
    return scenes;
}

int cmd_gen_data(const SharedArgs& a) {
    data::SynthConfig cfg;
    if (!a.config.empty()) cfg = parse_synth_config(read_file(a.config));
    if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
    auto scenes = data::generate_synthetic(cfg);

    fs::create_directories(a.out);
    std::vector<std::string> names;
    for (const auto& s : scenes) {
        std::string name = s.id + ".ply";
        data::save_ply(s, (fs::path(a.out) / name).string());
        names.push_back(name);
    }
    data::write_manifest((fs::path(a.out) / "manifest.txt").string(), names);
    // Deterministic 80/20 split for held-out evaluation.
    size_t n_train = names.size() - std::max<size_t>(1, names.size() / 5);
    if (names.size() < 2) n_train = names.size();
    std::vector<std::string> train_names(names.begin(), names.begin() + n_train);
    std::vector<std::string> val_names(names.begin() + n_train, names.end());
    data::write_manifest((fs::path(a.out) / "train.txt").string(), train_names);
    if (!val_names.empty())
        data::write_manifest((fs::path(a.out) / "val.txt").string(), val_names);

    std::cout << "generated scenes=" << scenes.size() << " classes=" << cfg.classes
              << " out=" << a.out << " train=" << train_names.size()
              << " val=" << val_names.size() << '\n';
    return 0;
}

int cmd_train(const SharedArgs& a, const std::vector<std::string>& overrides, bool resume,
              const std::string& log_path) {
    train::TrainConfig cfg;
    if (!a.config.empty()) cfg = train::parse_train_config(read_file(a.config));
    for (const std::string& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        train::apply_config_line(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
    cfg.validate();

    auto scenes = load_scenes(a.data);

    std::unique_ptr<train::Model> model;
    int start_iter = 0;
    std::string rng_state;
    if (resume && fs::exists(a.out)) {
        auto [m, meta] = train::load_model(a.out);
        model = std::move(m);
        start_iter = std::stoi(meta.at("iteration"));
        rng_state = meta.at("rng");
    } else {
        model = std::make_unique<train::Model>(cfg.model, cfg.seed);
    }
    train::Trainer trainer(*model, cfg);
    if (start_iter > 0) trainer.restore(start_iter, rng_state);

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, start_iter > 0 ? std::ios::app : std::ios::out);
        if (!log) throw DataError("cannot write training log to " + log_path);
        log.precision(10);
    }
    auto t0 = std::chrono::steady_clock::now();
    trainer.run(scenes, a.out, [&](const train::StepStats& st) {
        double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
        if (log)
            log << st.iter << ' ' << st.l_seg << ' ' << st.l_ctr << ' ' << st.l_mask << ' '
                << st.l_dice << ' ' << st.total << ' ' << st.clusters << ' ' << ms << '\n';
        if ((st.iter + 1) % 100 == 0)
            std::cout << "iter " << st.iter + 1 << "/" << cfg.total_iters << " loss " << st.total
                      << " (seg " << st.l_seg << " ctr " << st.l_ctr << " mask " << st.l_mask
                      << " dice " << st.l_dice << ") clusters " << st.clusters << std::endl;
    });
    std::cout << "trained iters=" << trainer.iteration() << " checkpoint=" << a.out << '\n';
    return 0;
}

train::InferConfig infer_config(double radius, int min_cluster) {
    train::InferConfig ic;
    ic.radius = radius;
    ic.min_cluster = min_cluster;
    ic.finalize.min_points = min_cluster;
    return ic;
}

int cmd_infer(const SharedArgs& a, double radius, int min_cluster) {
    auto [model, meta] = train::load_model(a.checkpoint);
    auto scenes = load_scenes(a.data);
    auto preds = train::predict_records(*model, scenes, infer_config(radius, min_cluster), a.jobs);
    infer::dump_records(a.out, preds);
    std::cout << "predicted instances=" << preds.size() << " scenes=" << scenes.size()
              << " out=" << a.out << '\n';
    return 0;
}

int cmd_eval(const SharedArgs& a, const std::string& pred_path, double radius, int min_cluster) {
    auto scenes = load_scenes(a.data);
    std::vector<infer::InstanceRecord> preds;
    int num_categories = 0;
    if (!pred_path.empty()) {
        preds = infer::load_records(pred_path);
        for (const auto& s : scenes)
            for (int l : s.sem_labels) num_categories = std::max(num_categories, l + 1);
    } else {
        if (a.checkpoint.empty())
            throw ConfigError("eval needs --pred or --checkpoint");
        auto [model, meta] = train::load_model(a.checkpoint);
        preds = train::predict_records(*model, scenes, infer_config(radius, min_cluster), a.jobs);
        num_categories = model->cfg.num_classes();
    }
    auto report =
        eval::evaluate_records(preds, train::gt_records(scenes), scenes, num_categories);
    std::cout << eval::report_text(report);
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw DataError("cannot write report to " + a.out);
        f << eval::report_text(report);
    }
    return 0;
}

int cmd_export_ply(const SharedArgs& a, const std::string& scene_path, double radius,
                   int min_cluster) {
    auto [model, meta] = train::load_model(a.checkpoint);
    auto scene = data::load_ply(scene_path);
    auto instances = train::infer_scene(*model, scene, infer_config(radius, min_cluster));
    std::vector<std::vector<int>> masks;
    for (const auto& fi : instances) masks.push_back(fi.mask);
    data::save_colored_ply(scene, masks, a.out);
    std::cout << "exported instances=" << masks.size() << " out=" << a.out << '\n';
    return 0;
}

int cmd_sweep_radius(const SharedArgs& a, const std::string& values, int min_cluster) {
    auto [model, meta] = train::load_model(a.checkpoint);
    auto scenes = load_scenes(a.data);
    std::vector<double> radii;
    std::stringstream ss(values);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            radii.push_back(std::stod(tok));
        } catch (const std::invalid_argument&) {
            throw ConfigError("sweep-radius: bad radius '" + tok + "'");
        }
    }
    if (radii.empty()) throw ConfigError("sweep-radius: no radii given");

    std::ostringstream table;
    table.precision(6);
    table << "radius AP@50 AP@25 mAP mCov\n";
    for (double r : radii) {
        auto report = train::evaluate_model(*model, scenes, infer_config(r, min_cluster), a.jobs);
        table << r << ' ' << report.ap50 << ' ' << report.ap25 << ' ' << report.mAP << ' '
              << (report.coverage ? report.coverage->mCov : 0.0) << '\n';
    }
    std::cout << table.str();
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw DataError("cannot write sweep table to " + a.out);
        f << table.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-cloud instance segmentation via per-cluster dynamic filters"};
    app.require_subcommand(1);

    SharedArgs a;
    std::vector<std::string> overrides;
    bool resume = false;
    std::string log_path, pred_path, scene_path, radii = "0.015,0.03,0.06";
    double radius = 0.03;
    int min_cluster = 50;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--config", a.config, "Synthetic config file (key=value)");
    gen->add_option("--seed", a.seed, "Override the config seed");
    gen->add_option("--out", a.out, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--config", a.config, "Training config file (key=value)");
    tr->add_option("--data", a.data, "Dataset manifest")->required();
    tr->add_option("--out", a.out, "Checkpoint path")->required();
    tr->add_option("--set", overrides, "Config overrides, key=value (repeatable)");
    tr->add_option("--seed", a.seed, "Override the config seed");
    tr->add_option("--log", log_path, "Training log path");
    tr->add_flag("--resume", resume, "Resume from the checkpoint if it exists");

    auto* inf = app.add_subcommand("infer", "Run inference, write a prediction dump");
    inf->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
    inf->add_option("--data", a.data, "Dataset manifest")->required();
    inf->add_option("--out", a.out, "Prediction dump path")->required();
    inf->add_option("--radius", radius, "Clustering radius, meters");
    inf->add_option("--min-cluster", min_cluster, "Minimum cluster/instance size");
    inf->add_option("--jobs", a.jobs, "Parallel scene workers (1 = deterministic reference)");

    auto* ev = app.add_subcommand("eval", "Evaluate predictions or a checkpoint");
    ev->add_option("--pred", pred_path, "Prediction dump (skips inference)");
    ev->add_option("--checkpoint", a.checkpoint, "Model checkpoint");
    ev->add_option("--data", a.data, "Dataset manifest")->required();
    ev->add_option("--out", a.out, "Also write the report here");
    ev->add_option("--radius", radius, "Clustering radius, meters");
    ev->add_option("--min-cluster", min_cluster, "Minimum cluster/instance size");
    ev->add_option("--jobs", a.jobs, "Parallel scene workers");

    auto* ex = app.add_subcommand("export-ply", "Colored instance segmentation of one scene");
    ex->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
    ex->add_option("--scene", scene_path, "Input scene PLY")->required();
    ex->add_option("--out", a.out, "Output PLY path")->required();
    ex->add_option("--radius", radius, "Clustering radius, meters");
    ex->add_option("--min-cluster", min_cluster, "Minimum cluster/instance size");

    auto* sw = app.add_subcommand("sweep-radius", "Evaluate across clustering radii");
    sw->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
    sw->add_option("--data", a.data, "Dataset manifest")->required();
    sw->add_option("--values", radii, "Comma-separated radii, meters");
    sw->add_option("--min-cluster", min_cluster, "Minimum cluster/instance size");
    sw->add_option("--jobs", a.jobs, "Parallel scene workers");
    sw->add_option("--out", a.out, "Also write the table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(a);
        if (tr->parsed()) return cmd_train(a, overrides, resume, log_path);
        if (inf->parsed()) return cmd_infer(a, radius, min_cluster);
        if (ev->parsed()) return cmd_eval(a, pred_path, radius, min_cluster);
        if (ex->parsed()) return cmd_export_ply(a, scene_path, radius, min_cluster);
        if (sw->parsed()) return cmd_sweep_radius(a, radii, min_cluster);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const TrainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
