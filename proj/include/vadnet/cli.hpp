#pragma once

// Implementation of the `vadnet` command-line tool. Kept in a header so the
// test suite can drive every subcommand in-process through run_cli().

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vadnet/annotation_service.hpp"
#include "vadnet/checkpoint.hpp"
#include "vadnet/dataset.hpp"
#include "vadnet/grad_check.hpp"
#include "vadnet/ortho.hpp"
#include "vadnet/report.hpp"
#include "vadnet/synthetic.hpp"
#include "vadnet/train.hpp"

#ifndef VADNET_VERSION
#define VADNET_VERSION "0.1.0"
#endif

namespace vadnet::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kBadInput = 2, kDiverged = 3 };

inline constexpr const char* kOutDirEnv = "VADNET_OUT_DIR";
inline constexpr const char* kPortEnv = "VADNET_PORT";
inline constexpr const char* kLogEnv = "VADNET_ANNOTATION_LOG";

// ---------------------------------------------------------------------------
// Options shared by several subcommands.

struct DataOptions {
    std::string fer2013;
    std::string labels;
    std::string exclude;
    std::size_t min_annotators = 1;
    int max_spread = 1;

    void add(CLI::App& app, bool labels_required) {
        app.add_option("--fer2013", fer2013, "FER2013 CSV (emotion,pixels,Usage)")->required();
        auto* opt = app.add_option("--labels", labels, "VAD annotation CSV (canonical or image_index,v,a,d)");
        if (labels_required) opt->required();
        app.add_option("--exclude", exclude, "File of image indices to drop, one per line");
        app.add_option("--min-annotators", min_annotators, "Consistency: annotators required per image")
            ->capture_default_str();
        app.add_option("--max-spread", max_spread, "Consistency: allowed max-min per dimension")->capture_default_str();
    }

    ordered_json json() const {
        return {{"fer2013", fer2013},
                {"labels", labels},
                {"exclude", exclude},
                {"min_annotators", min_annotators},
                {"max_spread", max_spread}};
    }
};

struct ModelOptions {
    std::string preset = "mini";
    std::size_t width = 0;
    std::string ortho_layers = "all";
    double lambda = 0.1;
    std::size_t epochs = 120;
    double lr = 0.01;
    std::size_t batch_size = 64;
    double lr_decay = 10.0;
    std::size_t lr_decay_every = 10000;
    std::size_t max_iterations = 0;
    std::uint64_t seed = 42;
    bool parallel = false;

    void add(CLI::App& app, bool with_lambda = true) {
        app.add_option("--preset", preset, "Network preset")
            ->check(CLI::IsMember({"mini", "resnet18"}))
            ->capture_default_str();
        app.add_option("--width", width, "Base channel width (0 = preset default)")->capture_default_str();
        app.add_option("--ortho-layers", ortho_layers, "Regularized conv layers: all, none, or e.g. 0,2")
            ->capture_default_str();
        if (with_lambda) {
            app.add_option("--lambda", lambda, "Weight of the orthogonality loss")
                ->check(CLI::NonNegativeNumber)
                ->capture_default_str();
        }
        app.add_option("--epochs", epochs, "Training epochs")->capture_default_str();
        app.add_option("--lr", lr, "Initial learning rate")->check(CLI::PositiveNumber)->capture_default_str();
        app.add_option("--batch-size", batch_size, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
        app.add_option("--lr-decay", lr_decay, "Learning-rate divisor per decay step")->capture_default_str();
        app.add_option("--lr-decay-every", lr_decay_every, "Iterations between decays")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app.add_option("--max-iterations", max_iterations, "Stop after this many SGD steps (0 = no cap)")
            ->capture_default_str();
        app.add_option("--seed", seed, "Seed for initialization and batch order")->capture_default_str();
        app.add_flag("--parallel", parallel, "Train the three dimensions concurrently when --dim all");
    }

    NetworkConfig network() const {
        NetworkConfig cfg;
        cfg.preset = *parse_preset(preset);
        cfg.width = width;
        cfg.seed = seed;
        if (ortho_layers == "none") {
            cfg.ortho_layers = std::set<std::size_t>{};
        } else if (ortho_layers != "all") {
            std::set<std::size_t> layers;
            std::istringstream list(ortho_layers);
            for (std::string item; std::getline(list, item, ',');) {
                const auto value = detail::parse_int<std::size_t>(item);
                if (!value) throw Error(ErrorKind::Validation, "--ortho-layers: bad layer '" + item + "'");
                layers.insert(*value);
            }
            cfg.ortho_layers = std::move(layers);
        }
        return cfg;
    }

    TrainConfig training(double lambda_value) const {
        TrainConfig cfg;
        cfg.batch_size = batch_size;
        cfg.lr0 = lr;
        cfg.lr_decay_factor = lr_decay;
        cfg.lr_decay_every = lr_decay_every;
        cfg.epochs = epochs;
        cfg.lambda = lambda_value;
        cfg.seed = seed;
        if (max_iterations > 0) cfg.max_iterations = max_iterations;
        return cfg;
    }

    ordered_json network_json() const {
        const NetworkConfig cfg = network();
        return {{"preset", preset}, {"width", cfg.resolved_width()}, {"ortho_layers", ortho_layers}, {"seed", seed}};
    }

    ordered_json training_json(double lambda_value) const {
        return {{"lambda", lambda_value},
                {"epochs", epochs},
                {"lr", lr},
                {"batch_size", batch_size},
                {"lr_decay", lr_decay},
                {"lr_decay_every", lr_decay_every},
                {"max_iterations", max_iterations},
                {"seed", seed}};
    }
};

// ---------------------------------------------------------------------------
// Helpers.

inline fs::path resolve_out_dir(const std::string& flag, const std::string& fallback) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return fallback;
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

/// Manifest: subcommand, resolved config, output directory, tool version.
/// Written before any work so a failed run still documents what was asked.
inline void write_manifest(const fs::path& dir, const std::string& subcommand, const ordered_json& config) {
    ensure_dir(dir);
    const ordered_json manifest{{"tool", "vadnet"},
                                {"version", VADNET_VERSION},
                                {"subcommand", subcommand},
                                {"output_dir", dir.string()},
                                {"config", config}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline std::ifstream open_input(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, std::string("cannot open ") + what + " file: " + path);
    return in;
}

struct LoadedData {
    std::vector<FaceImage> images;
    std::vector<AnnotationRecord> records;
    std::map<std::size_t, VadTriple> labels;  // consistency-accepted, exclusions removed
    std::size_t rejected = 0;
    std::size_t excluded = 0;
};

inline LoadedData load_data(const DataOptions& opts, bool need_labels) {
    LoadedData data;
    {
        auto in = open_input(opts.fer2013, "FER2013");
        data.images = parse_fer2013(in);
    }
    if (!need_labels && opts.labels.empty()) return data;
    {
        auto in = open_input(opts.labels, "labels");
        data.records = load_annotations(in);
    }
    const auto outcomes = consistency_filter(data.records, opts.min_annotators, opts.max_spread);
    data.labels = accepted_labels(outcomes);
    data.rejected = outcomes.size() - data.labels.size();
    if (!opts.exclude.empty()) {
        auto in = open_input(opts.exclude, "exclusion");
        for (std::size_t index : read_exclusion_list(in)) data.excluded += data.labels.erase(index);
    }
    return data;
}

inline std::vector<Dimension> parse_dims(const std::string& text) {
    if (text == "all") return {kDimensions.begin(), kDimensions.end()};
    const auto dim = parse_dimension(text);
    if (!dim) throw Error(ErrorKind::Validation, "--dim must be v, a, d or all");
    return {*dim};
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trace_csv(const std::vector<TraceEntry>& trace) {
    std::string out = "iteration,epoch,task_loss,orth_loss,lr\n";
    for (const TraceEntry& e : trace) {
        out += std::to_string(e.iteration) + "," + std::to_string(e.epoch) + "," + format_double(e.task) + "," +
               format_double(e.orth) + "," + format_double(e.lr) + "\n";
    }
    return out;
}

struct TrainedDimension {
    Dimension dim;
    DimensionModel model;
    std::vector<TraceEntry> trace;
};

/// Trains one model per dimension (optionally concurrently), writing the
/// trace and checkpoint of each into `dir` as it finishes.
inline std::vector<TrainedDimension> train_dimensions(const std::vector<Dimension>& dims, const LabeledSet& set,
                                                      const ModelOptions& opts, double lambda, const fs::path& dir,
                                                      const std::string& dataset_hash, std::ostream& log) {
    std::mutex log_mutex;
    const TrainConfig tcfg = opts.training(lambda);
    const NetworkConfig ncfg = opts.network();
    auto run = [&](Dimension dim) {
        TrainedDimension out{dim, build_model(ncfg, dim), {}};
        const char letter = dimension_letter(dim);
        auto progress = [&](const TraceEntry& e) {
            out.trace.push_back(e);
            if (e.iteration % 100 == 0) {
                std::lock_guard lock(log_mutex);
                log << "[" << letter << "] iter " << e.iteration << " epoch " << e.epoch << " task " << e.task
                    << " orth " << e.orth << " lr " << e.lr << "\n";
            }
        };
        const std::string trace_path = (dir / ("trace_" + std::string(dimension_name(dim)) + ".csv")).string();
        try {
            train(out.model, set, tcfg, progress);
        } catch (const TrainingDiverged&) {
            write_text(trace_path, trace_csv(out.trace));
            throw;
        }
        write_text(trace_path, trace_csv(out.trace));
        CheckpointMeta meta;
        meta.entries["lambda"] = format_double(lambda);
        meta.entries["dataset_fingerprint"] = dataset_hash;
        meta.entries["train_images"] = std::to_string(set.size());
        save_checkpoint((dir / ("checkpoint_" + std::string(dimension_name(dim)) + ".txt")).string(), out.model, meta);
        return out;
    };

    std::vector<TrainedDimension> results;
    if (opts.parallel && dims.size() > 1) {
        std::vector<std::future<TrainedDimension>> jobs;
        for (Dimension dim : dims) jobs.push_back(std::async(std::launch::async, run, dim));
        for (auto& job : jobs) results.push_back(job.get());
    } else {
        for (Dimension dim : dims) results.push_back(run(dim));
    }
    return results;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// Subcommands.

struct TrainArgs {
    DataOptions data;
    ModelOptions model;
    std::string dim = "all";
    std::string out_dir;
};

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
    const fs::path dir = resolve_out_dir(args.out_dir, "vadnet-train");
    const auto dims = parse_dims(args.dim);
    args.model.network();  // validate the layer mask before writing anything
    write_manifest(dir, "train",
                   {{"dim", args.dim},
                    {"network", args.model.network_json()},
                    {"training", args.model.training_json(args.model.lambda)},
                    {"data", args.data.json()}});
    const LoadedData data = load_data(args.data, true);
    const LabeledSet set = to_training_set(data.images, data.labels, Split::Training);
    if (set.empty()) throw Error(ErrorKind::EmptyInput, "no labeled training images");
    const std::string hash = hex64(fingerprint(set));
    out << "training " << dims.size() << " model(s) on " << set.size() << " images (dataset " << hash << ")\n";
    const auto trained = train_dimensions(dims, set, args.model, args.model.lambda, dir, hash, err);
    for (const auto& t : trained) {
        const TraceEntry& last = t.trace.back();
        out << dimension_name(t.dim) << ": " << t.trace.size() << " iterations, task " << last.task << ", orth "
            << last.orth << "\n";
    }
    out << "outputs in " << dir.string() << "\n";
    return kOk;
}

struct EvaluateArgs {
    DataOptions data;
    std::vector<std::string> checkpoints;
    std::string out_dir;
};

inline int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream&) {
    const fs::path dir = resolve_out_dir(args.out_dir, "vadnet-evaluate");
    write_manifest(dir, "evaluate", {{"checkpoints", args.checkpoints}, {"data", args.data.json()}});
    const LoadedData data = load_data(args.data, true);
    std::string lines;
    for (const std::string& path : args.checkpoints) {
        if (!fs::exists(path)) throw Error(ErrorKind::Io, "checkpoint not found: " + path);
        LoadedCheckpoint ckpt = load_checkpoint(path);
        DimensionModel& model = ckpt.model;
        for (EvalSplit split : kEvalSplits) {
            const LabeledSet set = to_training_set(data.images, data.labels, dataset_split(split));
            const double value = evaluate([&](std::span<const double> px) { return predict(model, px); }, set, model.dimension);
            const std::string line = "dimension=" + std::string(dimension_name(model.dimension)) +
                                     " split=" + std::string(split_key(split)) + " n=" + std::to_string(set.size()) +
                                     " rmse=" + format_double(value) + " rmse_normalized=" + format_double(value / 2.0);
            out << line << "\n";
            lines += line + "\n";
        }
    }
    write_text(dir / "evaluation.txt", lines);
    return kOk;
}

struct AblateArgs {
    DataOptions data;
    ModelOptions model;
    std::string from_report;
    std::string out_dir;
};

inline void emit_report(const EvalReport& report, const fs::path& dir, std::ostream& out) {
    const std::string tables = render_tables(report, {.normalized_columns = true});
    std::string ranks;
    for (Method m : kMethods) ranks += render_ranks(rank_aggregate(report, m)) + "\n";
    std::ostringstream machine;
    write_report(machine, report);
    write_text(dir / "report.txt", machine.str());
    write_text(dir / "tables.md", tables);
    write_text(dir / "ranks.md", ranks);
    out << tables << ranks;
}

inline int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
    const fs::path dir = resolve_out_dir(args.out_dir, "vadnet-ablate");
    if (!args.from_report.empty()) {
        write_manifest(dir, "ablate", {{"from_report", args.from_report}});
        auto in = open_input(args.from_report, "report");
        emit_report(read_report(in), dir, out);
        return kOk;
    }
    if (args.data.fer2013.empty() || args.data.labels.empty()) {
        throw Error(ErrorKind::Validation, "ablate needs --fer2013 and --labels (or --from-report)");
    }
    args.model.network();
    const ordered_json shared{{"network", args.model.network_json()}, {"data", args.data.json()}};
    write_manifest(dir, "ablate", {{"runs", {"baseline", "ortho"}}, {"shared", shared}});
    const std::vector<std::pair<Method, double>> runs{{Method::Baseline, 0.0}, {Method::Ortho, args.model.lambda}};
    for (const auto& [method, lambda] : runs) {
        ordered_json cfg = shared;
        cfg["training"] = args.model.training_json(lambda);
        write_manifest(dir / std::string(method_key(method)), "ablate", cfg);
    }

    const LoadedData data = load_data(args.data, true);
    const LabeledSet train_set = to_training_set(data.images, data.labels, Split::Training);
    if (train_set.empty()) throw Error(ErrorKind::EmptyInput, "no labeled training images");
    std::map<EvalSplit, LabeledSet> eval_sets;
    for (EvalSplit s : kEvalSplits) eval_sets[s] = to_training_set(data.images, data.labels, dataset_split(s));
    const std::string hash = hex64(fingerprint(train_set));

    EvalReport report;
    report.metadata["dataset_fingerprint"] = hash;
    report.metadata["lambda"] = format_double(args.model.lambda);
    report.metadata["preset"] = args.model.preset;
    for (const auto& [method, lambda] : runs) {
        out << "== " << method_key(method) << " (lambda " << lambda << ")\n";
        auto trained = train_dimensions({kDimensions.begin(), kDimensions.end()}, train_set, args.model, lambda,
                                        dir / std::string(method_key(method)), hash, err);
        for (auto& t : trained) {
            for (EvalSplit s : kEvalSplits) {
                const double value = evaluate([&](std::span<const double> px) { return predict(t.model, px); },
                                              eval_sets[s], t.dim);
                report.set(t.dim, s, method, value);
            }
        }
    }
    emit_report(report, dir, out);
    return kOk;
}

struct StatsArgs {
    std::string labels;
    std::string fer2013;
    std::string exclude;
    std::size_t min_annotators = 1;
    int max_spread = 1;
    std::string out_dir;
};

inline int cmd_stats(const StatsArgs& args, std::ostream& out, std::ostream&) {
    const fs::path dir = resolve_out_dir(args.out_dir, "vadnet-stats");
    write_manifest(dir, "stats",
                   {{"labels", args.labels},
                    {"fer2013", args.fer2013},
                    {"exclude", args.exclude},
                    {"min_annotators", args.min_annotators},
                    {"max_spread", args.max_spread}});
    std::vector<AnnotationRecord> records;
    {
        auto in = open_input(args.labels, "labels");
        records = load_annotations(in);
    }
    const auto outcomes = consistency_filter(records, args.min_annotators, args.max_spread);
    auto labels = accepted_labels(outcomes);
    if (!args.exclude.empty()) {
        auto in = open_input(args.exclude, "exclusion");
        for (std::size_t index : read_exclusion_list(in)) labels.erase(index);
    }
    std::vector<VadTriple> triples;
    for (const auto& [index, t] : labels) triples.push_back(t);
    const VadDistribution table = vad_distribution(triples);

    std::ostringstream text;
    text << "records=" << records.size() << " images=" << outcomes.size() << " accepted=" << labels.size()
         << " rejected=" << outcomes.size() - accepted_labels(outcomes).size() << "\n\n";
    text << "VAD value counts\n| Dimension |   -2 |   -1 |    0 |    1 |    2 |\n|-----------|------|------|------|------|------|\n";
    for (std::size_t k = 0; k < 3; ++k) {
        char row[128];
        std::snprintf(row, sizeof row, "| %-9s | %4zu | %4zu | %4zu | %4zu | %4zu |",
                      std::string(dimension_name(kDimensions[k])).c_str(), table[k][0], table[k][1], table[k][2],
                      table[k][3], table[k][4]);
        text << row << "\n";
    }
    if (!args.fer2013.empty()) {
        auto in = open_input(args.fer2013, "FER2013");
        const auto images = parse_fer2013(in);
        const SplitCounts all = count_images_by_split(images);
        const SplitCounts labeled = count_labels_by_split(labels, images);
        text << "\nSplit counts\n| Split       | Images | Labeled |\n|-------------|--------|---------|\n";
        const std::pair<const char*, Split> rows[] = {
            {"Training", Split::Training}, {"PublicTest", Split::PublicTest}, {"PrivateTest", Split::PrivateTest}};
        SplitCounts a = all, l = labeled;
        for (const auto& [name, split] : rows) {
            char row[96];
            std::snprintf(row, sizeof row, "| %-11s | %6zu | %7zu |", name, a[split], l[split]);
            text << row << "\n";
        }
        char row[96];
        std::snprintf(row, sizeof row, "| %-11s | %6zu | %7zu |", "Total", all.total(), labeled.total());
        text << row << "\n";
        if (labeled.unmatched) text << "labels without an image: " << labeled.unmatched << "\n";
    }
    out << text.str();
    write_text(dir / "stats.md", text.str());
    return kOk;
}

struct OracleArgs {
    std::uint64_t seed = 1;
    std::size_t kernels = 5;
    std::size_t grad_points = 3;
    bool force_failure = false;
    std::string out_dir;
};

struct OracleResult {
    std::string name;
    double max_error;
    double tolerance;
    std::size_t cases;
    bool pass() const { return max_error < tolerance; }
};

/// Cross-checks between independent code paths: dense DBT product vs.
/// direct convolution, circular Gram vs. self-convolution loss, and
/// reverse-mode gradients vs. central differences on the mini preset.
inline std::vector<OracleResult> run_oracles(const OracleArgs& args) {
    std::mt19937_64 rng(args.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto random_tensor = [&](Shape shape) {
        std::vector<double> v(shape_size(shape));
        for (double& x : v) x = unit(rng);
        return Tensor::from(std::move(shape), std::move(v));
    };

    OracleResult dbt{"dbt-vs-conv2d", 0.0, 1e-10, 0};
    for (std::size_t c : {1, 2})
        for (std::size_t m : {1, 2})
            for (std::size_t k : {1, 2, 3})
                for (std::size_t s : {1, 2})
                    for (std::size_t h : {4, 6})
                        for (std::size_t n = 0; n < args.kernels; ++n) {
                            const ConvKernel kernel(random_tensor({m, c, k, k}), s, k / 2);
                            const Tensor x = random_tensor({c, h, h});
                            const DbtMatrix a = build_dbt(kernel, {c, h, h});
                            const Eigen::VectorXd y =
                                a.matrix * Eigen::Map<const Eigen::VectorXd>(x.data().data(), static_cast<Eigen::Index>(x.size()));
                            const Tensor direct = conv2d(x, kernel);
                            for (std::size_t i = 0; i < direct.size(); ++i) {
                                dbt.max_error = std::max(dbt.max_error, std::abs(direct[i] - y(static_cast<Eigen::Index>(i))));
                            }
                            ++dbt.cases;
                        }

    OracleResult gram{"circular-gram-vs-orth-loss", 0.0, 1e-10, 0};
    for (std::size_t s : {1, 2})
        for (std::size_t k : {1, 2, 3})
            for (std::size_t h : {4, 6, 8})
                for (std::size_t n = 0; n < args.kernels; ++n) {
                    const std::size_t q = (k - 1) / s;
                    if (h % s != 0 || h < 2 * s * q + 1 || h < k) continue;
                    const ConvKernel kernel(random_tensor({2, 2, k, k}), s, k / 2);
                    const DbtMatrix a = build_dbt(kernel, {2, h, h}, PaddingMode::Circular);
                    const double dense = std::pow(kernel_orth_loss_row(a), 2);
                    const double scaled = static_cast<double>(a.out_h * a.out_w) * orth_loss(kernel).item();
                    gram.max_error = std::max(gram.max_error, std::abs(dense - scaled) / std::max(1.0, std::abs(dense)));
                    ++gram.cases;
                }

    OracleResult grad{"mini-gradient-vs-finite-difference", 0.0, 1e-4, 0};
    const auto fx = make_fixture(2 * args.grad_points, args.seed, true);
    std::map<std::size_t, VadTriple> labels;
    for (const auto& r : fx.records) labels[r.image_index] = r.triple;
    const LabeledSet set = to_training_set(fx.images, labels);
    for (double lambda : {0.0, 0.1}) {
        for (std::size_t p = 0; p < args.grad_points; ++p) {
            NetworkConfig cfg;
            cfg.seed = args.seed * 1000 + p;
            DimensionModel model = build_model(cfg, kDimensions[p % 3]);
            const std::vector<std::size_t> rows{2 * p, 2 * p + 1};
            const Batch batch = make_batch(set, rows, model.dimension);
            const auto r = finite_diff_check([&] { return total_loss(model, batch, lambda).total; }, model.parameters(), 1e-7);
            grad.max_error = std::max(grad.max_error, r.max_error);
            ++grad.cases;
        }
    }
    return {dbt, gram, grad};
}

inline int cmd_oracle_check(const OracleArgs& args, std::ostream& out, std::ostream&) {
    const fs::path dir = resolve_out_dir(args.out_dir, "vadnet-oracle-check");
    write_manifest(dir, "oracle-check",
                   {{"seed", args.seed}, {"kernels", args.kernels}, {"grad_points", args.grad_points},
                    {"force_failure", args.force_failure}});
    auto results = run_oracles(args);
    if (args.force_failure) results.push_back({"forced-failure", 1.0, 0.0, 1});
    std::ostringstream text;
    bool ok = true;
    for (const auto& r : results) {
        char line[200];
        std::snprintf(line, sizeof line, "%s %-36s cases=%-4zu max_error=%.3e tolerance=%.0e", r.pass() ? "PASS" : "FAIL",
                      r.name.c_str(), r.cases, r.max_error, r.tolerance);
        text << line << "\n";
        ok = ok && r.pass();
    }
    text << (ok ? "all oracle checks passed" : "oracle checks FAILED") << "\n";
    out << text.str();
    write_text(dir / "oracle_check.txt", text.str());
    return ok ? kOk : kCheckFailed;
}

struct ServeArgs {
    std::string fer2013;
    std::size_t fixture = 0;
    std::string log;
    std::string exclude;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    std::string cors_origin = "*";
    std::size_t min_annotators = 1;
    int max_spread = 1;
};

inline httplib::Server* g_server = nullptr;

inline int cmd_serve(ServeArgs args, std::ostream& out, std::ostream&) {
    if (args.log.empty()) {
        const char* env = std::getenv(kLogEnv);
        if (!env || !*env) throw Error(ErrorKind::Validation, std::string("--log or ") + kLogEnv + " is required");
        args.log = env;
    }
    ServiceConfig cfg;
    if (!args.fer2013.empty()) {
        auto in = open_input(args.fer2013, "FER2013");
        cfg.images = parse_fer2013(in);
    } else if (args.fixture > 0) {
        cfg.images = make_fixture(args.fixture, 1).images;
    } else {
        throw Error(ErrorKind::Validation, "serve needs --fer2013 or --fixture N");
    }
    if (!args.exclude.empty()) {
        auto in = open_input(args.exclude, "exclusion");
        cfg.excluded = read_exclusion_list(in);
    }
    if (!args.static_dir.empty()) {
        if (!fs::is_directory(args.static_dir)) throw Error(ErrorKind::Io, "static dir not found: " + args.static_dir);
        cfg.static_dir = args.static_dir;
    }
    cfg.cors_origin = args.cors_origin;
    cfg.min_annotators = args.min_annotators;
    cfg.max_spread = args.max_spread;

    AnnotationStore store{fs::path(args.log)};
    AnnotationService service(std::move(cfg), store);
    httplib::Server server;
    service.mount(server);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    if (!server.bind_to_port(args.host, args.port)) {
        throw Error(ErrorKind::Io, "cannot bind " + args.host + ":" + std::to_string(args.port));
    }
    out << "serving " << service.annotatable_count() << " images on http://" << args.host << ":" << args.port
        << " (log " << args.log << ", " << store.size() << " records)" << std::endl;
    server.listen_after_bind();
    g_server = nullptr;
    return kOk;
}

struct ExportArgs {
    std::string log;
    std::string output;
};

inline int cmd_export(const ExportArgs& args, std::ostream& out, std::ostream&) {
    if (!fs::exists(args.log)) throw Error(ErrorKind::Io, "annotation log not found: " + args.log);
    AnnotationStore store{fs::path(args.log)};
    if (args.output.empty() || args.output == "-") {
        store.export_csv(out);
    } else {
        store.export_csv(fs::path(args.output));
    }
    return kOk;
}

struct FixtureArgs {
    std::size_t count = 500;
    std::uint64_t seed = 2024;
    bool all_training = false;
    std::string out_dir;
};

inline int cmd_make_fixture(const FixtureArgs& args, std::ostream& out, std::ostream&) {
    const fs::path dir = resolve_out_dir(args.out_dir, "vadnet-fixture");
    write_manifest(dir, "make-fixture", {{"count", args.count}, {"seed", args.seed}, {"all_training", args.all_training}});
    const SyntheticFixture fx = make_fixture(args.count, args.seed, args.all_training);
    std::ostringstream images, labels;
    write_fer2013(images, fx.images);
    write_annotations(labels, fx.records);
    write_text(dir / "fer2013.csv", images.str());
    write_text(dir / "labels.csv", labels.str());
    out << "wrote " << fx.images.size() << " images to " << (dir / "fer2013.csv").string() << " and labels to "
        << (dir / "labels.csv").string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

inline int exit_code_for(ErrorKind kind) {
    return kind == ErrorKind::TrainingDiverged ? kDiverged : kBadInput;
}

/// Parses `args` (without the program name) and runs one subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"VAD facial-expression regression with orthogonal convolution regularization", "vadnet"};
    app.require_subcommand(1);
    app.set_version_flag("--version", VADNET_VERSION);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train one regression network per VAD dimension");
    train_args.data.add(*train, true);
    train_args.model.add(*train);
    train->add_option("--dim", train_args.dim, "Dimension: v, a, d or all")
        ->check(CLI::IsMember({"v", "a", "d", "all", "V", "A", "D"}))
        ->capture_default_str();
    train->add_option("--out-dir", train_args.out_dir, std::string("Run directory (env ") + kOutDirEnv + ")");

    EvaluateArgs eval_args;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "RMSE of checkpoints on the public and private test splits");
    eval_args.data.add(*evaluate_cmd, true);
    evaluate_cmd->add_option("--checkpoint", eval_args.checkpoints, "Checkpoint file(s)")->required();
    evaluate_cmd->add_option("--out-dir", eval_args.out_dir, "Run directory");

    AblateArgs ablate_args;
    auto* ablate = app.add_subcommand("ablate", "Baseline vs. regularized runs, result tables and rank summary");
    ablate->add_option("--fer2013", ablate_args.data.fer2013, "FER2013 CSV");
    ablate->add_option("--labels", ablate_args.data.labels, "VAD annotation CSV");
    ablate->add_option("--exclude", ablate_args.data.exclude, "Exclusion list");
    ablate->add_option("--min-annotators", ablate_args.data.min_annotators)->capture_default_str();
    ablate->add_option("--max-spread", ablate_args.data.max_spread)->capture_default_str();
    ablate_args.model.add(*ablate);
    ablate->add_option("--from-report", ablate_args.from_report, "Render an existing machine-readable report instead");
    ablate->add_option("--out-dir", ablate_args.out_dir, "Run directory");

    StatsArgs stats_args;
    auto* stats = app.add_subcommand("stats", "Label distribution and per-split counts");
    stats->add_option("--labels", stats_args.labels, "VAD annotation CSV")->required();
    stats->add_option("--fer2013", stats_args.fer2013, "FER2013 CSV for split counts");
    stats->add_option("--exclude", stats_args.exclude, "Exclusion list");
    stats->add_option("--min-annotators", stats_args.min_annotators)->capture_default_str();
    stats->add_option("--max-spread", stats_args.max_spread)->capture_default_str();
    stats->add_option("--out-dir", stats_args.out_dir, "Run directory");

    OracleArgs oracle_args;
    auto* oracle = app.add_subcommand("oracle-check", "Run the DBT / self-convolution / gradient cross-checks");
    oracle->add_option("--seed", oracle_args.seed)->capture_default_str();
    oracle->add_option("--kernels", oracle_args.kernels, "Random kernels per grid cell")->capture_default_str();
    oracle->add_option("--grad-points", oracle_args.grad_points, "Gradient-check points per lambda")
        ->check(CLI::Range(1, 50))
        ->capture_default_str();
    oracle->add_flag("--force-failure", oracle_args.force_failure, "Inject a failing check (tests the exit path)");
    oracle->add_option("--out-dir", oracle_args.out_dir, "Run directory");

    ServeArgs serve_args;
    if (const char* port = std::getenv(kPortEnv); port && *port) {
        if (const auto p = detail::parse_int<int>(port)) serve_args.port = *p;
    }
    auto* serve = app.add_subcommand("serve", "Annotation HTTP service");
    serve->add_option("--fer2013", serve_args.fer2013, "FER2013 CSV with the images to annotate");
    serve->add_option("--fixture", serve_args.fixture, "Serve N synthetic images instead");
    serve->add_option("--log", serve_args.log, std::string("Append-only annotation log (env ") + kLogEnv + ")");
    serve->add_option("--exclude", serve_args.exclude, "Exclusion list");
    serve->add_option("--host", serve_args.host)->capture_default_str();
    serve->add_option("--port", serve_args.port, std::string("Port (env ") + kPortEnv + ")")->capture_default_str();
    serve->add_option("--static", serve_args.static_dir, "Directory with the browser UI");
    serve->add_option("--cors-origin", serve_args.cors_origin)->capture_default_str();
    serve->add_option("--min-annotators", serve_args.min_annotators)->capture_default_str();
    serve->add_option("--max-spread", serve_args.max_spread)->capture_default_str();

    ExportArgs export_args;
    auto* export_cmd = app.add_subcommand("export", "Write the canonical annotation CSV from a service log");
    export_cmd->add_option("--log", export_args.log, "Annotation log")->required();
    export_cmd->add_option("--output,-o", export_args.output, "Output CSV (default stdout)");

    FixtureArgs fixture_args;
    auto* fixture = app.add_subcommand("make-fixture", "Write a synthetic FER2013-format dataset with VAD labels");
    fixture->add_option("--count", fixture_args.count)->check(CLI::PositiveNumber)->capture_default_str();
    fixture->add_option("--seed", fixture_args.seed)->capture_default_str();
    fixture->add_flag("--all-training", fixture_args.all_training, "Put every image in the Training split");
    fixture->add_option("--out-dir", fixture_args.out_dir, "Output directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << VADNET_VERSION << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }

    try {
        if (train->parsed()) return cmd_train(train_args, out, err);
        if (evaluate_cmd->parsed()) return cmd_evaluate(eval_args, out, err);
        if (ablate->parsed()) return cmd_ablate(ablate_args, out, err);
        if (stats->parsed()) return cmd_stats(stats_args, out, err);
        if (oracle->parsed()) return cmd_oracle_check(oracle_args, out, err);
        if (serve->parsed()) return cmd_serve(serve_args, out, err);
        if (export_cmd->parsed()) return cmd_export(export_args, out, err);
        if (fixture->parsed()) return cmd_make_fixture(fixture_args, out, err);
    } catch (const TrainingDiverged& e) {
        err << "error: " << e.what();
        if (e.last_finite) {
            err << " (last finite: iteration " << e.last_finite->iteration << ", task " << e.last_finite->task
                << ", orth " << e.last_finite->orth << ")";
        }
        err << "\n";
        return kDiverged;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kCheckFailed;
    }
    return kBadInput;
}

}  // namespace vadnet::cli
