// SPDX-License-Identifier: Apache-2.0
//
// dmae command-line driver.
//
// Data directories hold train.csv, val.csv and test.csv (series rows
// `sample_id,variable_index,v_0,...`), optional <part>_labels.csv
// (`sample_id,label`) or <part>_horizon.csv for forecasting, and the
// standardizer.json written by `prepare`.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numeric
// failure (NaN/Inf).

#include "dmae/dmae.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace dmae;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    bool checked = false;
    std::string out = ".";
};

TrainConfig load_config(const Globals& g) {
    TrainConfig c;
    if (!g.config.empty()) {
        std::ifstream in(g.config);
        if (!in) throw ConfigError("cannot read config file " + g.config);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + g.config + " is not valid JSON: " + e.what());
        }
        c = train_config_from_json(j);
    }
    if (g.seed) c.seed = *g.seed;
    if (g.checked) c.checked = true;
    c.validate();
    return c;
}

SyntheticKind synthetic_kind(const std::string& s) {
    try {
        return parse_synthetic_kind(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

TaskKind parse_task(const std::string& s) {
    if (s == "cls") return TaskKind::classification;
    if (s == "reg") return TaskKind::regression;
    if (s == "fcst") return TaskKind::forecasting;
    throw ConfigError("unknown task '" + s + "' (expected cls, reg or fcst)");
}

fs::path out_dir(const Globals& g) {
    fs::create_directories(g.out);
    return g.out;
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

/// One split of a prepared data directory with labels for the given task.
SeriesBatch load_part(const fs::path& dir, const std::string& part, std::optional<TaskKind> task) {
    SeriesBatch b = load_csv(dir / (part + ".csv"));
    if (!task) return b;
    const auto labels = dir / (part + "_labels.csv");
    const auto horizon = dir / (part + "_horizon.csv");
    if (*task == TaskKind::forecasting) {
        if (!fs::exists(horizon)) throw LoadError("missing " + horizon.string());
        attach_horizon(b, load_csv(horizon));
    } else {
        if (!fs::exists(labels)) throw LoadError("missing " + labels.string());
        load_labels(b, labels, *task);
    }
    return b;
}

/// Class names must agree across splits: take them from the training split.
void align_classes(const SeriesBatch& train, SeriesBatch& other, const fs::path& dir, const std::string& part) {
    if (!train.labels || train.labels->kind != TaskKind::classification) return;
    load_labels(other, dir / (part + "_labels.csv"), TaskKind::classification, train.labels->class_names);
}

void save_part(const SeriesBatch& b, const fs::path& dir, const std::string& part) {
    save_csv(b, dir / (part + ".csv"));
    if (!b.labels) return;
    if (b.labels->kind == TaskKind::forecasting)
        save_csv(horizon_batch(b), dir / (part + "_horizon.csv"));
    else
        save_labels(b, dir / (part + "_labels.csv"));
}

std::string metrics_csv(const std::vector<std::pair<std::string, Metrics>>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "split,task,metric,value\n";
    for (const auto& [split, m] : rows) {
        const std::string task = to_string(m.kind);
        if (m.accuracy) os << split << ',' << task << ",accuracy," << *m.accuracy << '\n';
        if (m.rmse) os << split << ',' << task << ",rmse," << *m.rmse << '\n';
        if (m.mse) os << split << ',' << task << ",mse," << *m.mse << '\n';
        if (m.mae) os << split << ',' << task << ",mae," << *m.mae << '\n';
        os << split << ',' << task << ",loss," << m.loss << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
    std::string synthetic;
    std::size_t vars = 3, length = 64, samples = 96;
    double noise = 0.1;
    std::string data, test;
    std::string task = "cls";
    bool unlabeled = false;
    std::vector<double> split{0.6, 0.2, 0.2};
    std::string scale = "std";
};

int cmd_prepare(const Globals& g, const PrepareArgs& a) {
    const auto cfg = load_config(g);
    const auto out = out_dir(g);
    std::optional<TaskKind> task;
    if (!a.unlabeled) task = parse_task(a.task);
    SeriesBatch train, val, test;
    if (!a.synthetic.empty()) {
        auto d = generate_synthetic(synthetic_kind(a.synthetic), a.vars, a.length, a.samples, cfg.seed,
                                    {.noise = a.noise});
        auto s = split_dataset(d, a.split.at(0), a.split.at(1), a.split.at(2), cfg.seed);
        train = std::move(s.train), val = std::move(s.val), test = std::move(s.test);
    } else {
        if (a.data.empty()) throw ConfigError("prepare needs --synthetic or --data");
        const fs::path src = a.data;
        auto d = load_csv(src);
        auto attach = [&](SeriesBatch& b, const fs::path& series, const std::vector<std::string>& names = {}) {
            if (!task) return;
            const auto stem = series.parent_path() / series.stem();
            if (*task == TaskKind::forecasting)
                attach_horizon(b, load_csv(stem.string() + "_horizon.csv"));
            else
                load_labels(b, stem.string() + "_labels.csv", *task, names);
        };
        attach(d, src);
        if (!a.test.empty()) {
            auto [tr, va] = split_holdout(d, a.split.at(1), cfg.seed);
            train = std::move(tr), val = std::move(va);
            test = load_csv(a.test);
            attach(test, a.test, d.labels ? d.labels->class_names : std::vector<std::string>{});
        } else {
            auto s = split_dataset(d, a.split.at(0), a.split.at(1), a.split.at(2), cfg.seed);
            train = std::move(s.train), val = std::move(s.val), test = std::move(s.test);
        }
    }
    if (!task) {
        train.labels.reset();
        val.labels.reset();
        test.labels.reset();
    }
    if (a.scale != "std" && a.scale != "variance") throw ConfigError("--scale must be std or variance");
    const auto st = fit_standardizer(train, a.scale == "std" ? ScaleRule::std_dev : ScaleRule::variance);
    for (auto* b : {&train, &val, &test}) {
        *b = apply_standardizer(*b, st);
        standardize_horizon(*b, st);
    }
    save_part(train, out, "train");
    save_part(val, out, "val");
    save_part(test, out, "test");
    write_json(out / "standardizer.json", st.to_json());
    std::cout << "prepared " << train.size() << "/" << val.size() << "/" << test.size() << " samples, V=" << train.n_vars()
              << ", T=" << train.length() << " -> " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain

template <typename S>
int run_pretrain(const TrainConfig& cfg, const fs::path& data, const fs::path& out) {
    const auto train = load_part(data, "train", std::nullopt);
    const auto val = load_part(data, "val", std::nullopt);
    Model<S> model(cfg.model_config(train.n_vars(), train.length()));
    std::ofstream log(out / "epochs.csv");
    log.precision(10);
    log << "epoch,L,L_dec,L_ali,val_L\n";
    PretrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& e) {
        log << e.epoch << ',' << e.loss << ',' << e.dec << ',' << e.ali << ',';
        if (e.val_loss) log << *e.val_loss;
        log << '\n' << std::flush;
        std::cerr << "epoch " << e.epoch << "  L=" << e.loss << "  L_dec=" << e.dec << "  L_ali=" << e.ali;
        if (e.val_loss) std::cerr << "  val_L=" << *e.val_loss;
        std::cerr << "\n";
    };
    const auto rec = pretrain(model, train, val, cfg, hooks);
    auto run = rec.to_json();
    run["config"] = to_json(cfg);
    write_json(out / "run.json", run);
    write_text(out / "epochs.csv", rec.epoch_csv());
    save_checkpoint(model, out / "best.ckpt", {{"train_config", to_json(cfg)}, {"selected_epoch", rec.selected_epoch}});
    std::cout << "selected epoch " << rec.selected_epoch << " (val_L=" << rec.best_val_loss << ") -> "
              << (out / "best.ckpt").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// finetune / evaluate

struct TaskArgs {
    std::string task = "cls";
    std::string ckpt;
    std::string data;
    bool linear_probe = false;
    std::optional<std::size_t> channel;
    std::string split = "test";
};

template <typename S>
int run_finetune(const TrainConfig& cfg, const TaskArgs& a, const fs::path& out) {
    const auto kind = parse_task(a.task);
    const fs::path dir = a.data;
    auto train = load_part(dir, "train", kind);
    auto val = load_part(dir, "val", kind);
    auto test = load_part(dir, "test", kind);
    align_classes(train, val, dir, "val");
    align_classes(train, test, dir, "test");
    const auto task = task_from_labels(train, a.channel);
    Model<S> model = load_checkpoint<S>(a.ckpt);
    auto fc = cfg.finetune;
    fc.linear_probe = fc.linear_probe || a.linear_probe;
    const auto res = finetune(model, train, val, task, fc, cfg.seed, cfg.checked, [](const FinetuneEpoch& e) {
        std::cerr << "epoch " << e.epoch << "  loss=" << e.train_loss << "  val=" << e.val.to_json().dump() << "\n";
    });
    const auto test_m = evaluate(model, test, task);
    nlohmann::json task_json = {{"kind", to_string(task.kind)}, {"n", task.n}, {"horizon", task.horizon}};
    if (task.channel) task_json["channel"] = *task.channel;
    if (train.labels->kind == TaskKind::classification) task_json["class_names"] = train.labels->class_names;
    save_checkpoint(model, out / "tuned.ckpt", {{"task", task_json}, {"selected_epoch", res.selected_epoch}},
                    [&](const std::string& n) { return model.is_downstream_tensor(n); });
    auto report = res.to_json();
    report["test"] = test_m.to_json();
    report["task"] = task_json;
    write_json(out / "finetune.json", report);
    write_json(out / "metrics.json", {{"val", res.best_val.to_json()}, {"test", test_m.to_json()}});
    write_text(out / "metrics.csv", metrics_csv({{"val", res.best_val}, {"test", test_m}}));
    std::cout << "test " << test_m.to_json().dump() << "\n";
    return 0;
}

template <typename S>
int run_evaluate(const TaskArgs& a, const fs::path& out) {
    nlohmann::json extra;
    Model<S> model = load_checkpoint<S>(a.ckpt, &extra);
    if (!model.has_head()) throw ConfigError("checkpoint has no task head; run finetune first");
    const auto kind = parse_task(a.task);
    auto part = load_part(a.data, a.split, std::nullopt);
    if (kind == TaskKind::classification && extra.contains("task") && extra["task"].contains("class_names"))
        load_labels(part, fs::path(a.data) / (a.split + "_labels.csv"), kind,
                    extra["task"]["class_names"].get<std::vector<std::string>>());
    else
        part = load_part(a.data, a.split, kind);
    const auto task = task_from_labels(part, a.channel);
    const auto m = evaluate(model, part, task);
    write_json(out / "metrics.json", {{a.split, m.to_json()}});
    write_text(out / "metrics.csv", metrics_csv({{a.split, m}}));
    std::cout << a.split << " " << m.to_json().dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
    std::string data;
    std::string plan;
    std::string task = "cls";
    std::size_t vars = 3, length = 32, samples = 64;
};

template <typename S>
int run_ablate(const TrainConfig& cfg, const AblateArgs& a, const fs::path& out) {
    AblationData data;
    if (a.data.empty()) {
        // Synthetic two-class data; pretraining uses the same series unlabeled.
        auto d = generate_synthetic(SyntheticKind::two_class_frequency, a.vars, a.length, a.samples, cfg.seed,
                                    {.noise = 0.2});
        auto s = split_dataset(d, 0.5, 0.25, 0.25, cfg.seed);
        const auto st = fit_standardizer(s.train);
        for (auto* b : {&s.train, &s.val, &s.test}) *b = apply_standardizer(*b, st);
        data.task_train = s.train;
        data.task_val = s.val;
        data.task_test = s.test;
        data.pretrain_train = s.train;
        data.pretrain_val = s.val;
    } else {
        const auto kind = parse_task(a.task);
        const fs::path dir = a.data;
        data.pretrain_train = load_part(dir, "train", std::nullopt);
        data.pretrain_val = load_part(dir, "val", std::nullopt);
        auto tr = load_part(dir, "train", kind), va = load_part(dir, "val", kind), te = load_part(dir, "test", kind);
        align_classes(tr, va, dir, "val");
        align_classes(tr, te, dir, "test");
        data.task_train = std::move(tr);
        data.task_val = std::move(va);
        data.task_test = std::move(te);
    }
    AblationPlan plan = AblationPlan::standard();
    if (!a.plan.empty()) {
        std::ifstream in(a.plan);
        if (!in) throw ConfigError("cannot read plan " + a.plan);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("plan is not valid JSON: ") + e.what());
        }
        plan = AblationPlan::from_json(j);
    }
    plan.validate(cfg);
    write_json(out / "plan.json", plan.to_json());
    const auto rows = run_ablation<S>(plan, cfg, data, [](const AblationRow& r) {
        std::cerr << "arm " << r.arm << ": " << (r.ok ? "ok" : "failed: " + r.error) << "\n";
    });
    write_text(out / "ablation.csv", ablation_csv(rows));
    write_text(out / "ablation.md", ablation_markdown(rows));
    std::cout << ablation_markdown(rows);
    return 0;
}

// ---------------------------------------------------------------------------
// mask-viz, export-sim, export-features

struct VizArgs {
    std::size_t vars = 8, length = 200, count = 1;
};

int cmd_mask_viz(const Globals& g, const VizArgs& a) {
    const auto cfg = load_config(g);
    const auto out = out_dir(g);
    std::vector<MaskMatrix> masks;
    for (std::size_t i = 0; i < a.count; ++i) {
        std::mt19937_64 rng(mask_seed(cfg.seed, "mask-viz", i));
        masks.push_back(sample_mask(a.vars, a.length, cfg.mask, rng));
    }
    write_text(out / "mask.pgm", mask_pgm(masks.front()));
    const auto rep = mask_stats(masks);
    write_text(out / "runs.csv", run_histogram_csv(rep));
    std::cout << "masked fraction " << rep.masked_fraction() << ", mean masked run " << rep.masked_runs.mean()
              << ", mean visible run " << rep.visible_runs.mean() << "\n";
    return 0;
}

struct ExportArgs {
    std::string ckpt;
    std::string data;
    std::string sample;
    std::optional<std::uint64_t> mask_seed;
    bool average = false;
};

SeriesBatch load_series(const std::string& path) {
    fs::path p = path;
    if (fs::is_directory(p)) p /= "test.csv";
    return load_csv(p);
}

template <typename S>
int run_export_sim(const TrainConfig& cfg, const ExportArgs& a, const fs::path& out) {
    const auto model = load_checkpoint<S>(a.ckpt);
    const auto data = load_series(a.data);
    const auto seed = a.mask_seed.value_or(cfg.seed);
    Tensor<double> s;
    if (a.average) {
        s = mean_similarity_matrix(model, data, cfg.mask, seed);
    } else {
        std::size_t idx = 0;
        if (!a.sample.empty()) {
            const auto it = std::find(data.sample_ids.begin(), data.sample_ids.end(), a.sample);
            if (it == data.sample_ids.end()) throw ConfigError("no sample '" + a.sample + "' in " + a.data);
            idx = static_cast<std::size_t>(it - data.sample_ids.begin());
        }
        s = similarity_matrix(model, data, idx, cfg.mask, seed);
    }
    write_text(out / "similarity.csv", matrix_csv(s));
    write_text(out / "similarity.pgm", matrix_pgm(s));
    const auto c = diagonal_contrast(s);
    write_json(out / "similarity.json",
               {{"mean_diagonal", c.mean_diagonal}, {"mean_off_diagonal", c.mean_off_diagonal}, {"gap", c.gap()}});
    std::cout << "mean diagonal " << c.mean_diagonal << ", mean off-diagonal " << c.mean_off_diagonal << "\n";
    return 0;
}

template <typename S>
int run_export_features(const TrainConfig& cfg, const ExportArgs& a, const fs::path& out) {
    const auto model = load_checkpoint<S>(a.ckpt);
    const auto data = load_series(a.data);
    write_text(out / "features.csv", export_features(model, data, cfg.mask, a.mask_seed.value_or(cfg.seed)));
    return 0;
}

template <template <typename> class F, typename... A>
int dispatch(bool checked, A&&... args) {
    return checked ? F<double>::run(std::forward<A>(args)...) : F<float>::run(std::forward<A>(args)...);
}

#define DMAE_RUNNER(name, fn)                                   \
    template <typename S>                                       \
    struct name {                                               \
        template <typename... A>                                \
        static int run(A&&... a) {                              \
            return fn<S>(std::forward<A>(a)...);                \
        }                                                       \
    };
DMAE_RUNNER(PretrainRunner, run_pretrain)
DMAE_RUNNER(FinetuneRunner, run_finetune)
DMAE_RUNNER(EvaluateRunner, run_evaluate)
DMAE_RUNNER(AblateRunner, run_ablate)
DMAE_RUNNER(SimRunner, run_export_sim)
DMAE_RUNNER(FeatureRunner, run_export_features)
#undef DMAE_RUNNER

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-masked autoencoder for multivariate time series"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Global seed (overrides the config)");
    app.add_option("--config", g.config, "Training config JSON");
    app.add_flag("--checked", g.checked, "64-bit numerics with finiteness checks after every op");
    app.add_option("--out", g.out, "Output directory");

    PrepareArgs pa;
    auto* prep = app.add_subcommand("prepare", "Split, standardize and write a data directory");
    prep->add_option("--synthetic", pa.synthetic, "sinusoid-mix | ar-process | two-class-frequency");
    prep->add_option("--vars", pa.vars);
    prep->add_option("--length", pa.length);
    prep->add_option("--samples", pa.samples);
    prep->add_option("--noise", pa.noise);
    prep->add_option("--data", pa.data, "Series CSV (labels read from <stem>_labels.csv)");
    prep->add_option("--test", pa.test, "Separate test CSV; --data is then split into train/val");
    prep->add_option("--task", pa.task, "cls | reg | fcst");
    prep->add_flag("--unlabeled", pa.unlabeled, "Ignore labels");
    prep->add_option("--split", pa.split, "train,val,test fractions")->delimiter(',')->expected(3);
    prep->add_option("--scale", pa.scale, "std | variance");

    std::string data_dir;
    auto* pre = app.add_subcommand("pretrain", "Pretrain on <data>/train.csv with <data>/val.csv for selection");
    pre->add_option("--data", data_dir)->required();

    TaskArgs ta;
    auto* fin = app.add_subcommand("finetune", "Attach a head and fine-tune a pretrained checkpoint");
    fin->add_option("--task", ta.task)->required();
    fin->add_option("--ckpt", ta.ckpt)->required();
    fin->add_option("--data", ta.data)->required();
    fin->add_flag("--linear-probe", ta.linear_probe, "Train the head only (diagnostic)");
    fin->add_option("--channel", ta.channel, "Forecast a single variable");

    auto* ev = app.add_subcommand("evaluate", "Metrics of a fine-tuned checkpoint on one split");
    ev->add_option("--task", ta.task)->required();
    ev->add_option("--ckpt", ta.ckpt)->required();
    ev->add_option("--data", ta.data)->required();
    ev->add_option("--split", ta.split, "train | val | test");
    ev->add_option("--channel", ta.channel);

    AblateArgs aa;
    auto* abl = app.add_subcommand("ablate", "Run an ablation plan (standard arms by default)");
    abl->add_option("--data", aa.data, "Prepared labeled data directory (synthetic when omitted)");
    abl->add_option("--plan", aa.plan, "JSON array of {name, delta}");
    abl->add_option("--task", aa.task);
    abl->add_option("--vars", aa.vars);
    abl->add_option("--length", aa.length);
    abl->add_option("--samples", aa.samples);

    VizArgs va;
    auto* viz = app.add_subcommand("mask-viz", "Write a mask picture and run-length histogram");
    viz->add_option("--vars", va.vars);
    viz->add_option("--length", va.length);
    viz->add_option("--count", va.count, "Masks pooled into the histogram");

    ExportArgs ea;
    auto* sim = app.add_subcommand("export-sim", "Cosine similarity of predicted and teacher latents");
    sim->add_option("--ckpt", ea.ckpt)->required();
    sim->add_option("--data", ea.data, "Series CSV or data directory (test.csv)")->required();
    sim->add_option("--sample", ea.sample, "Sample id (first sample by default)");
    sim->add_option("--mask-seed", ea.mask_seed);
    sim->add_flag("--average", ea.average, "Average over every sample");

    auto* feat = app.add_subcommand("export-features", "Dump per-timestep predicted and teacher latents");
    feat->add_option("--ckpt", ea.ckpt)->required();
    feat->add_option("--data", ea.data)->required();
    feat->add_option("--mask-seed", ea.mask_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*prep) return cmd_prepare(g, pa);
        if (*viz) return cmd_mask_viz(g, va);
        const auto cfg = load_config(g);
        const auto out = out_dir(g);
        if (*pre) return dispatch<PretrainRunner>(cfg.checked, cfg, fs::path(data_dir), out);
        if (*fin) return dispatch<FinetuneRunner>(cfg.checked, cfg, ta, out);
        if (*ev) return dispatch<EvaluateRunner>(cfg.checked, ta, out);
        if (*abl) return dispatch<AblateRunner>(cfg.checked, cfg, aa, out);
        if (*sim) return dispatch<SimRunner>(cfg.checked, cfg, ea, out);
        if (*feat) return dispatch<FeatureRunner>(cfg.checked, cfg, ea, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
