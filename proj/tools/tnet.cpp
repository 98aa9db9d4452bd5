// tnet — command-line front end for the transit-classification library.
//
// Subcommands:
//   preprocess  build view shards from a TCE table plus raw light-curve CSVs
//   synth       build view shards from the synthetic generator
//   train       train a preset architecture on a shard directory
//   evaluate    score a saved checkpoint on one split
//   params      print the parameter count of a preset
//   bench       train a grid of (architecture, dropout) cells and write a CSV
//
// Any flag may also be supplied through a JSON config file (--config);
// explicit command-line flags take precedence over config-file values.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tnet/dataio.hpp"
#include "tnet/error.hpp"
#include "tnet/lightcurve.hpp"
#include "tnet/model.hpp"
#include "tnet/training.hpp"

namespace {

using nlohmann::json;

std::string format_double(double v, const char* fmt = "%.17g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

// ---------------------------------------------------------------------------
// --config support: read a JSON object and splice its entries into argv as
// ordinary tokens placed before the user's explicit flags, so the parser's
// take-last policy gives the command line precedence.
// ---------------------------------------------------------------------------

std::vector<std::string> config_tokens(const std::string& path, const CLI::App* sub) {
    std::string text = tnet::read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        tnet::fail(tnet::ErrorCategory::config,
                   "cannot parse config file '" + path + "': " + e.what());
    }
    if (!j.is_object())
        tnet::fail(tnet::ErrorCategory::config,
                   "config file '" + path + "' must contain a JSON object");

    std::vector<std::string> tokens;
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = it.key();
        for (char& c : key)
            if (c == '_') c = '-';
        if (key == "config") continue;
        const std::string flag = "--" + key;
        if (sub->get_option_no_throw(flag) == nullptr)
            tnet::fail(tnet::ErrorCategory::config,
                       "unknown config key '" + it.key() + "' for subcommand '" +
                           sub->get_name() + "'");
        const json& v = it.value();
        if (v.is_boolean()) {
            if (v.get<bool>()) tokens.push_back(flag);
        } else if (v.is_string()) {
            tokens.push_back(flag);
            tokens.push_back(v.get<std::string>());
        } else if (v.is_number_integer()) {
            tokens.push_back(flag);
            tokens.push_back(std::to_string(v.get<long long>()));
        } else if (v.is_number_unsigned()) {
            tokens.push_back(flag);
            tokens.push_back(std::to_string(v.get<unsigned long long>()));
        } else if (v.is_number_float()) {
            tokens.push_back(flag);
            tokens.push_back(format_double(v.get<double>()));
        } else {
            tnet::fail(tnet::ErrorCategory::config,
                       "config key '" + it.key() + "' has an unsupported value type");
        }
    }
    return tokens;
}

// Locate the subcommand name and any --config value without a full parse.
struct PreScan {
    std::string subcommand;
    std::string config_path;
};

PreScan pre_scan(int argc, char** argv) {
    PreScan out;
    for (int i = 1; i < argc; ++i) {
        const std::string tok = argv[i];
        if (out.subcommand.empty()) {
            if (!tok.empty() && tok[0] != '-') out.subcommand = tok;
            continue;
        }
        if (tok == "--config" && i + 1 < argc)
            out.config_path = argv[i + 1];
        else if (tok.rfind("--config=", 0) == 0)
            out.config_path = tok.substr(9);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommand option bundles
// ---------------------------------------------------------------------------

struct PreprocessOpts {
    std::string tce_table;
    std::string lightcurve_dir;
    std::string out_dir;
    std::uint64_t seed = 0;
};

struct SynthOpts {
    std::size_t n = 0;
    double positive_frac = 0.229;
    double noise_sigma = 0.001;
    std::string out_dir;
    std::uint64_t seed = 0;
};

struct TrainOpts {
    std::string arch;
    std::string data_dir;
    std::uint64_t steps = 10000;
    std::size_t batch = 64;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t val_interval = 500;
    std::string model_out;
    std::string metrics_out;
};

struct EvaluateOpts {
    std::string model_path;
    std::string data_dir;
    std::string split = "test";
    std::string out_csv;
};

struct ParamsOpts {
    std::string arch;
    bool include_optimizer_slots = false;
};

struct BenchOpts {
    std::string archs = "baseline,ddn,ddmsn";
    std::string dropouts = "0.0";
    std::string data_dir;
    std::uint64_t steps = 200;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    std::string out_csv;
};

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        std::size_t comma = csv.find(',', start);
        if (comma == std::string::npos) comma = csv.size();
        std::string item = csv.substr(start, comma - start);
        while (!item.empty() && item.front() == ' ') item.erase(item.begin());
        while (!item.empty() && item.back() == ' ') item.pop_back();
        if (!item.empty()) out.push_back(item);
        start = comma + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

void run_preprocess(const PreprocessOpts& o) {
    auto rows = tnet::read_tce_table(o.tce_table);
    std::vector<tnet::TceRecord> records;
    std::size_t n_pc = 0, n_afp = 0, n_ntp = 0, n_unk = 0, n_skipped = 0;
    for (const auto& row : rows) {
        if (row.meta.label_raw == tnet::LabelRaw::UNK) {
            ++n_unk;
            continue;
        }
        const std::string path =
            (std::filesystem::path(o.lightcurve_dir) / (row.id + ".csv")).string();
        try {
            tnet::LightCurve lc = tnet::read_lightcurve_csv(path);
            tnet::LightCurve flat = tnet::flatten(lc, row.meta);
            tnet::ViewSet views = tnet::make_views(flat, row.meta);
            records.push_back({row.id, tnet::label_for(row.meta.label_raw),
                               row.meta.label_raw, std::move(views)});
        } catch (const tnet::Error& e) {
            // Data-content failures skip the TCE; broken files abort the run.
            if (e.category() == tnet::ErrorCategory::preprocessing ||
                e.category() == tnet::ErrorCategory::argument) {
                ++n_skipped;
                std::fprintf(stderr, "skipped %s: %s\n", row.id.c_str(), e.what());
                continue;
            }
            throw;
        }
        switch (row.meta.label_raw) {
            case tnet::LabelRaw::PC: ++n_pc; break;
            case tnet::LabelRaw::AFP: ++n_afp; break;
            case tnet::LabelRaw::NTP: ++n_ntp; break;
            case tnet::LabelRaw::UNK: break;
        }
    }
    tnet::ShardSet set = tnet::split_shards(std::move(records), o.seed);
    tnet::write_shards(set, o.out_dir);
    std::printf("PC: %zu\nAFP: %zu\nNTP: %zu\n", n_pc, n_afp, n_ntp);
    std::printf("excluded UNK: %zu\nskipped: %zu\n", n_unk, n_skipped);
    std::printf("wrote %d shards (%zu records) to %s\n", tnet::ShardSet::kShards,
                set.total(), o.out_dir.c_str());
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void run_synth(const SynthOpts& o) {
    tnet::SynthConfig cfg;
    cfg.n = o.n;
    cfg.positive_frac = o.positive_frac;
    cfg.noise_sigma = o.noise_sigma;
    cfg.seed = o.seed;
    std::vector<tnet::TceRecord> records = tnet::synth_generate(cfg);
    std::size_t n_pos = 0;
    for (const auto& r : records) n_pos += r.label;
    const std::size_t n_neg = records.size() - n_pos;
    tnet::ShardSet set = tnet::split_shards(std::move(records), o.seed);
    tnet::write_shards(set, o.out_dir);
    std::printf("generated %zu records (%zu positive, %zu negative)\n",
                set.total(), n_pos, n_neg);
    std::printf("wrote %d shards to %s\n", tnet::ShardSet::kShards, o.out_dir.c_str());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void run_train(const TrainOpts& o) {
    tnet::ArchitectureSpec spec = tnet::preset(o.arch);
    spec.dropout_rate = o.dropout;

    tnet::TrainConfig cfg;
    cfg.steps = o.steps;
    cfg.batch_size = o.batch;
    cfg.dropout_rate = o.dropout;
    cfg.seed = o.seed;
    cfg.val_interval = o.val_interval;
    tnet::validate_train_config(cfg);

    tnet::ShardSet set = tnet::read_shards(o.data_dir);
    tnet::Rng init_rng(tnet::Rng::mix(o.seed, 0x17));
    tnet::Model model = tnet::Model::build(spec, init_rng);

    std::printf("arch: %s, params: %zu\n", o.arch.c_str(),
                model.count_params(false));
    std::printf("train: %zu, validation: %zu, test: %zu\n", set.train().size(),
                set.validation().size(), set.test().size());
    std::printf("steps: %" PRIu64 ", batch: %zu, epochs: %s\n", o.steps, o.batch,
                tnet::format_epochs(
                    tnet::epochs_for(o.steps, o.batch, set.train().size()))
                    .c_str());

    tnet::TrainHistory history = tnet::train(model, set, cfg);

    tnet::save_checkpoint(model, o.model_out);
    tnet::write_metrics_csv(history, o.metrics_out);

    if (!set.validation().empty())
        std::printf("final validation accuracy: %.6f\n",
                    history.final_val_accuracy());
    std::printf("training wall time: %.3f s\n", history.train_seconds);
    std::printf("wrote checkpoint: %s\nwrote metrics: %s\n", o.model_out.c_str(),
                o.metrics_out.c_str());
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void run_evaluate(const EvaluateOpts& o) {
    tnet::Model model = tnet::load_checkpoint(o.model_path);
    tnet::ShardSet set = tnet::read_shards(o.data_dir);
    std::vector<const tnet::TceRecord*> recs = set.split_view(o.split);
    tnet::Metrics m = tnet::evaluate(model, recs);
    std::printf("split: %s\n", o.split.c_str());
    std::printf("accuracy: %.6f\nprecision: %.6f\nrecall: %.6f\n", m.accuracy,
                m.precision, m.recall);
    std::printf("loss: %.6f\nn: %zu\n", m.loss, m.n_examples);
    if (!o.out_csv.empty()) {
        std::string text = "accuracy,precision,recall,loss,n\n";
        text += format_double(m.accuracy, "%.10g");
        text += ',';
        text += format_double(m.precision, "%.10g");
        text += ',';
        text += format_double(m.recall, "%.10g");
        text += ',';
        text += format_double(m.loss, "%.10g");
        text += ',';
        text += std::to_string(m.n_examples);
        text += '\n';
        tnet::atomic_write(o.out_csv, text);
        std::printf("wrote metrics: %s\n", o.out_csv.c_str());
    }
}

// ---------------------------------------------------------------------------
// params
// ---------------------------------------------------------------------------

void run_params(const ParamsOpts& o) {
    tnet::ArchitectureSpec spec = tnet::preset(o.arch);
    tnet::Model model = tnet::Model::build_uninitialized(spec);
    const std::size_t count = model.count_params(o.include_optimizer_slots);
    std::printf("%s: %zu parameters (%.1fM)\n", o.arch.c_str(), count,
                static_cast<double>(count) / 1e6);
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

constexpr std::uint64_t kBenchWarmupSteps = 20;

void run_bench(const BenchOpts& o) {
    const std::vector<std::string> archs = split_list(o.archs);
    if (archs.empty())
        tnet::fail(tnet::ErrorCategory::argument, "bench needs at least one architecture");
    for (const auto& a : archs) tnet::preset(a);  // validate names up front

    std::vector<double> dropouts;
    for (const auto& tok : split_list(o.dropouts)) {
        double v = 0.0;
        try {
            v = std::stod(tok);
        } catch (const std::exception&) {
            tnet::fail(tnet::ErrorCategory::argument,
                       "bad dropout value '" + tok + "' in grid");
        }
        dropouts.push_back(v);
    }
    if (dropouts.empty())
        tnet::fail(tnet::ErrorCategory::argument, "bench needs at least one dropout rate");
    if (o.steps == 0)
        tnet::fail(tnet::ErrorCategory::argument, "bench needs steps >= 1");

    tnet::ShardSet set = tnet::read_shards(o.data_dir);

    std::string csv = "arch,dropout,params,train_seconds,test_accuracy,seed\n";
    std::uint64_t cell = 0;
    for (const auto& arch : archs) {
        for (double d : dropouts) {
            const std::string cell_name =
                "arch=" + arch + ", dropout=" + format_double(d, "%.1f");
            try {
                tnet::ArchitectureSpec spec = tnet::preset(arch);
                spec.dropout_rate = d;

                tnet::TrainConfig cfg;
                cfg.steps = kBenchWarmupSteps + o.steps;
                cfg.batch_size = o.batch;
                cfg.dropout_rate = d;
                cfg.seed = tnet::Rng::mix(o.seed, cell);
                cfg.val_interval = cfg.steps + 1;  // skip periodic validation
                tnet::validate_train_config(cfg);

                tnet::Rng init_rng(tnet::Rng::mix(cfg.seed, 0x17));
                tnet::Model model = tnet::Model::build(spec, init_rng);
                tnet::TrainHistory history = tnet::train(model, set, cfg);

                double timed_seconds = 0.0;
                std::uint64_t timed_steps = 0;
                for (const auto& e : history.entries) {
                    if (e.step <= kBenchWarmupSteps) continue;
                    timed_seconds += e.seconds;
                    ++timed_steps;
                }
                tnet::Metrics m = tnet::evaluate(model, set.test());

                csv += arch;
                csv += ',';
                csv += format_double(d, "%.1f");
                csv += ',';
                csv += std::to_string(model.count_params(false));
                csv += ',';
                csv += format_double(timed_seconds, "%.6f");
                csv += ',';
                csv += format_double(m.accuracy, "%.10g");
                csv += ',';
                csv += std::to_string(o.seed);
                csv += '\n';

                std::printf("bench %s dropout %.1f: %" PRIu64 "+%" PRIu64
                            " steps, %.3f s (%.5f s/step), test accuracy %.4f\n",
                            arch.c_str(), d, kBenchWarmupSteps, timed_steps,
                            timed_seconds,
                            timed_seconds / static_cast<double>(timed_steps),
                            m.accuracy);
            } catch (const tnet::Error& e) {
                tnet::fail(e.category(),
                           "bench cell (" + cell_name + "): " + e.what());
            }
            ++cell;
        }
    }
    tnet::atomic_write(o.out_csv, csv);
    std::printf("wrote bench results: %s\n", o.out_csv.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"1D CNN transit classifier: preprocessing, training, evaluation"};
    app.require_subcommand(1);

    PreprocessOpts pre;
    SynthOpts synth;
    TrainOpts tr;
    EvaluateOpts ev;
    ParamsOpts par;
    BenchOpts bench;

    // Parsed for real by pre_scan(); registered here only so the parser
    // accepts the flag. The sink must outlive parse().
    std::string config_sink;
    auto add_config = [&config_sink](CLI::App* sub) {
        sub->add_option("--config", config_sink, "JSON config file supplying flag values")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    };
    auto opt = [](CLI::Option* o2) {
        o2->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        return o2;
    };

    CLI::App* s_pre = app.add_subcommand(
        "preprocess", "Build view shards from a TCE table and light-curve CSVs");
    opt(s_pre->add_option("--tce-table", pre.tce_table, "TCE table CSV"))->required();
    opt(s_pre->add_option("--lightcurve-dir", pre.lightcurve_dir,
                          "directory of <id>.csv light curves"))
        ->required();
    opt(s_pre->add_option("--out-dir", pre.out_dir, "output shard directory"))
        ->required();
    opt(s_pre->add_option("--seed", pre.seed, "shuffle seed"));
    add_config(s_pre);
    s_pre->callback([&] { run_preprocess(pre); });

    CLI::App* s_synth =
        app.add_subcommand("synth", "Build view shards from the synthetic generator");
    opt(s_synth->add_option("--n", synth.n, "number of records"))->required();
    opt(s_synth->add_option("--positive-frac", synth.positive_frac,
                            "fraction of positive records"));
    opt(s_synth->add_option("--noise-sigma", synth.noise_sigma,
                            "relative white-noise level"));
    opt(s_synth->add_option("--out-dir", synth.out_dir, "output shard directory"))
        ->required();
    opt(s_synth->add_option("--seed", synth.seed, "generator seed"));
    add_config(s_synth);
    s_synth->callback([&] { run_synth(synth); });

    CLI::App* s_train = app.add_subcommand("train", "Train a preset architecture");
    opt(s_train->add_option("--arch", tr.arch, "baseline, ddn or ddmsn"))->required();
    opt(s_train->add_option("--data-dir", tr.data_dir, "shard directory"))->required();
    opt(s_train->add_option("--steps", tr.steps, "training steps"));
    opt(s_train->add_option("--batch", tr.batch, "batch size"));
    opt(s_train->add_option("--dropout", tr.dropout, "dropout rate"));
    opt(s_train->add_option("--seed", tr.seed, "training seed"));
    opt(s_train->add_option("--val-interval", tr.val_interval,
                            "steps between validation passes"));
    opt(s_train->add_option("--model-out", tr.model_out, "checkpoint output path"))
        ->required();
    opt(s_train->add_option("--metrics-out", tr.metrics_out, "metrics CSV path"))
        ->required();
    add_config(s_train);
    s_train->callback([&] { run_train(tr); });

    CLI::App* s_eval = app.add_subcommand("evaluate", "Score a checkpoint on a split");
    opt(s_eval->add_option("--model-path", ev.model_path, "checkpoint path"))
        ->required();
    opt(s_eval->add_option("--data-dir", ev.data_dir, "shard directory"))->required();
    opt(s_eval->add_option("--split", ev.split, "train, val or test"));
    opt(s_eval->add_option("--out-csv", ev.out_csv, "optional metrics CSV path"));
    add_config(s_eval);
    s_eval->callback([&] { run_evaluate(ev); });

    CLI::App* s_par = app.add_subcommand("params", "Print preset parameter counts");
    opt(s_par->add_option("--arch", par.arch, "baseline, ddn or ddmsn"))->required();
    s_par->add_flag("--include-optimizer-slots", par.include_optimizer_slots,
                    "count Adam moment slots as well");
    add_config(s_par);
    s_par->callback([&] { run_params(par); });

    CLI::App* s_bench =
        app.add_subcommand("bench", "Train an (arch, dropout) grid and write a CSV");
    opt(s_bench->add_option("--archs", bench.archs, "comma-separated architectures"));
    opt(s_bench->add_option("--dropouts", bench.dropouts,
                            "comma-separated dropout rates"));
    opt(s_bench->add_option("--data-dir", bench.data_dir, "shard directory"))
        ->required();
    opt(s_bench->add_option("--steps", bench.steps, "timed steps per cell"));
    opt(s_bench->add_option("--batch", bench.batch, "batch size"));
    opt(s_bench->add_option("--seed", bench.seed, "run seed"));
    opt(s_bench->add_option("--out-csv", bench.out_csv, "results CSV path"))
        ->required();
    add_config(s_bench);
    s_bench->callback([&] { run_bench(bench); });

    try {
        const PreScan scan = pre_scan(argc, argv);
        std::vector<std::string> args;
        for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
        if (!scan.config_path.empty()) {
            const CLI::App* sub = app.get_subcommand_no_throw(scan.subcommand);
            if (sub != nullptr) {
                std::vector<std::string> injected =
                    config_tokens(scan.config_path, sub);
                // Insert right after the subcommand token so explicit flags,
                // which come later, win under the take-last policy.
                auto it = std::find(args.begin(), args.end(), scan.subcommand);
                if (it != args.end())
                    args.insert(it + 1, injected.begin(), injected.end());
            }
        }
        // CLI11 consumes the reversed vector form.
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: argument: %s\n", e.what());
        return 1;
    } catch (const tnet::Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", to_string(e.category()), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: state: %s\n", e.what());
        return 1;
    }
    return 0;
}
