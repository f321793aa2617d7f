#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gramreg/checkpoint.hpp"
#include "gramreg/config.hpp"
#include "gramreg/dataset.hpp"
#include "gramreg/errors.hpp"
#include "gramreg/eval.hpp"
#include "gramreg/network.hpp"
#include "gramreg/trainer.hpp"

namespace gramreg {
namespace cli_detail {

inline std::uint64_t parse_u64_token(const std::string& t) {
    std::uint64_t v{};
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size())
        throw ConfigError("not a non-negative integer: '" + t + "'");
    return v;
}

inline double parse_double_token(const std::string& t) {
    double v{};
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size())
        throw ConfigError("not a number: '" + t + "'");
    return v;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(',', start);
        out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    for (const auto& t : out)
        if (t.empty()) throw ConfigError("empty entry in list '" + s + "'");
    return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("cannot write " + p.string());
}

inline std::string sanitize_cell(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n') c = ';';
    return s;
}

struct GenFlags {
    std::uint64_t seed = 0;
    std::size_t views = 8;
    std::size_t size = 32;
    std::size_t classes = 6;
    std::size_t shapes_per_class = 50;
    std::string out_dir;
};

struct TrainFlags {
    std::string arch = "mvcnn";
    std::string data;
    std::string out_dir;
    std::string config_file;
    double lr = 1e-2;
    std::size_t epochs = 60;
    std::size_t batch = 16;
    double momentum = 0.9;
    double lambda1 = 1e-3;
    double lambda2 = 1e-4;
    std::uint64_t seed = 0;
    std::size_t lr_drop_epoch = 40;
    double lr_drop_factor = 10.0;
    double step_lr1 = 1e-2;
    double step_lr2 = 1e-2;
    double step_lr3 = 1e-3;
};

struct EvalFlags {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string out_dir;
};

struct GradcheckFlags {
    std::string layout = "network";
    std::size_t trials = 5;
    std::uint64_t seed = 0;
    double tol = 0.0;  // 0 picks the per-layout default
};

struct SweepFlags {
    std::string param;
    std::string values;
    std::string seeds = "0";
    std::string data;
    std::string out_dir;
    std::uint64_t gen_seed = 0;
    std::size_t size = 32;
    std::size_t classes = 6;
    std::size_t shapes_per_class = 50;
};

/// Hyper-parameter flags shared by train and sweep; --seed, --data, --out and
/// --config are registered per command because their roles differ.
inline void add_train_options(CLI::App* sub, TrainFlags& f) {
    sub->add_option("--arch", f.arch, "network: view-cnn, mvcnn or cnn-lstm")
        ->capture_default_str();
    sub->add_option("--lr", f.lr, "base learning rate")->capture_default_str();
    sub->add_option("--epochs", f.epochs, "epochs per training phase")->capture_default_str();
    sub->add_option("--batch", f.batch, "mini-batch size")->capture_default_str();
    sub->add_option("--momentum", f.momentum, "SGD momentum")->capture_default_str();
    sub->add_option("--lambda1", f.lambda1, "weight of the kernel cross-correlation penalty")
        ->capture_default_str();
    sub->add_option("--lambda2", f.lambda2, "weight of the squared-kernel penalty")
        ->capture_default_str();
    sub->add_option("--lr-drop-epoch", f.lr_drop_epoch, "epoch at which the rate divides")
        ->capture_default_str();
    sub->add_option("--lr-drop-factor", f.lr_drop_factor, "division factor at the drop epoch")
        ->capture_default_str();
    sub->add_option("--step-lr1", f.step_lr1, "cnn-lstm phase 1 base rate")->capture_default_str();
    sub->add_option("--step-lr2", f.step_lr2, "cnn-lstm phase 2 base rate")->capture_default_str();
    sub->add_option("--step-lr3", f.step_lr3, "cnn-lstm phase 3 base rate")->capture_default_str();
}

/// Config-file values fill in exactly the options the command line left at
/// their defaults, so flags always win.
inline void apply_config_file(const CLI::App* sub, TrainFlags& f) {
    if (f.config_file.empty()) return;
    std::ifstream in(f.config_file);
    if (!in) throw ConfigError("cannot open config file " + f.config_file);
    const KeyValues kv = parse_key_values(in, f.config_file);
    const auto from_flag = [&](const char* flag) {
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        return opt != nullptr && opt->count() > 0;
    };
    for (const auto& [key, value] : kv.items()) {
        if (key == "arch") {
            if (!from_flag("--arch")) f.arch = value;
        } else if (key == "lr") {
            if (!from_flag("--lr")) f.lr = parse_double_token(value);
        } else if (key == "epochs") {
            if (!from_flag("--epochs")) f.epochs = parse_u64_token(value);
        } else if (key == "batch") {
            if (!from_flag("--batch")) f.batch = parse_u64_token(value);
        } else if (key == "momentum") {
            if (!from_flag("--momentum")) f.momentum = parse_double_token(value);
        } else if (key == "lambda1") {
            if (!from_flag("--lambda1")) f.lambda1 = parse_double_token(value);
        } else if (key == "lambda2") {
            if (!from_flag("--lambda2")) f.lambda2 = parse_double_token(value);
        } else if (key == "seed") {
            if (!from_flag("--seed")) f.seed = parse_u64_token(value);
        } else if (key == "lr_drop_epoch") {
            if (!from_flag("--lr-drop-epoch")) f.lr_drop_epoch = parse_u64_token(value);
        } else if (key == "lr_drop_factor") {
            if (!from_flag("--lr-drop-factor")) f.lr_drop_factor = parse_double_token(value);
        } else if (key == "step_lr1") {
            if (!from_flag("--step-lr1")) f.step_lr1 = parse_double_token(value);
        } else if (key == "step_lr2") {
            if (!from_flag("--step-lr2")) f.step_lr2 = parse_double_token(value);
        } else if (key == "step_lr3") {
            if (!from_flag("--step-lr3")) f.step_lr3 = parse_double_token(value);
        } else {
            throw ConfigError(f.config_file + ": unknown config key '" + key + "'");
        }
    }
}

inline TrainConfig to_train_config(const TrainFlags& f) {
    TrainConfig cfg;
    cfg.base_lr = f.lr;
    cfg.lr_drop_epoch = f.lr_drop_epoch;
    cfg.lr_drop_factor = f.lr_drop_factor;
    cfg.total_epochs = f.epochs;
    cfg.batch_size = f.batch;
    cfg.momentum = f.momentum;
    cfg.reg.lambda1 = f.lambda1;
    cfg.reg.lambda2 = f.lambda2;
    cfg.seed = f.seed;
    cfg.step_lr[0] = f.step_lr1;
    cfg.step_lr[1] = f.step_lr2;
    cfg.step_lr[2] = f.step_lr3;
    cfg.validate();
    return cfg;
}

inline KeyValues resolved_train_config(Architecture arch, const TrainConfig& cfg,
                                       const std::string& data_dir) {
    KeyValues kv;
    kv.set("arch", architecture_name(arch));
    kv.set("data", data_dir);
    kv.set("epochs", std::to_string(cfg.total_epochs));
    kv.set("batch", std::to_string(cfg.batch_size));
    kv.set("lr", format_double(cfg.base_lr));
    kv.set("momentum", format_double(cfg.momentum));
    kv.set("lr_drop_epoch", std::to_string(cfg.lr_drop_epoch));
    kv.set("lr_drop_factor", format_double(cfg.lr_drop_factor));
    kv.set("lambda1", format_double(cfg.reg.lambda1));
    kv.set("lambda2", format_double(cfg.reg.lambda2));
    kv.set("seed", std::to_string(cfg.seed));
    kv.set("step_lr1", format_double(cfg.step_lr[0]));
    kv.set("step_lr2", format_double(cfg.step_lr[1]));
    kv.set("step_lr3", format_double(cfg.step_lr[2]));
    return kv;
}

inline int fail(std::ostream& err, int code, const std::string& msg) {
    err << "error: " << msg << "\n";
    return code;
}

inline int cmd_gen(const GenFlags& f, std::ostream& out, std::ostream& err) {
    DatasetManifest m;
    m.seed = f.seed;
    m.classes = f.classes;
    m.shapes_per_class = f.shapes_per_class;
    m.views = f.views;
    m.height = m.width = f.size;
    try {
        m.validate();
    } catch (const Error& e) {
        return fail(err, 2, e.what());
    }
    try {
        const Dataset ds = generate_dataset(m);
        write_dataset(ds, f.out_dir);
        out << "wrote " << ds.samples.size() << " shapes (" << ds.samples.size() * m.views
            << " views) to " << f.out_dir << "\n";
    } catch (const Error& e) {
        return fail(err, 4, e.what());
    }
    return 0;
}

/// Trains the standard stack sized to the dataset's images. cnn_lstm runs the
/// three-phase schedule; the others run single-phase.
inline TrainResult<double> run_training(Architecture arch, const NetworkSpec& spec,
                                        const Dataset& ds, const TrainConfig& cfg) {
    if (arch == Architecture::cnn_lstm) return train_cnn_lstm_multistep<double>(spec, ds, cfg);
    return train<double>(spec, ds, cfg);
}

inline NetworkSpec spec_for_dataset(Architecture arch, const Dataset& ds) {
    if (ds.manifest.height != ds.manifest.width)
        throw ConfigError("the standard stack expects square images, dataset is " +
                          std::to_string(ds.manifest.height) + "x" +
                          std::to_string(ds.manifest.width));
    return desk_spec(arch, ds.class_names.size(), ds.manifest.views, ds.manifest.height);
}

inline int cmd_train(const CLI::App* sub, TrainFlags& f, std::ostream& out, std::ostream& err) {
    Architecture arch{};
    TrainConfig cfg;
    try {
        apply_config_file(sub, f);
        arch = architecture_from(f.arch);
        cfg = to_train_config(f);
    } catch (const Error& e) {
        return fail(err, 2, e.what());
    }

    Dataset ds;
    NetworkSpec spec;
    try {
        ds = load_dataset(f.data);
        spec = spec_for_dataset(arch, ds);
        detail::check_compatible(spec, ds);
    } catch (const Error& e) {
        return fail(err, 4, e.what());
    }

    std::ostringstream resolved;
    write_key_values(resolved, resolved_train_config(arch, cfg, f.data));
    try {
        std::filesystem::create_directories(f.out_dir);
        write_text(std::filesystem::path(f.out_dir) / "train_config.cfg", resolved.str());
    } catch (const Error& e) {
        return fail(err, 4, e.what());
    }
    out << resolved.str();

    TrainResult<double> r;
    try {
        r = run_training(arch, spec, ds, cfg);
    } catch (const TrainingError& e) {
        return fail(err, 3, e.what());
    }

    try {
        write_text(std::filesystem::path(f.out_dir) / "loss.csv", loss_csv(r.log));
        save_checkpoint(r.net, std::filesystem::path(f.out_dir) / "model.ckpt");
    } catch (const Error& e) {
        return fail(err, 4, e.what());
    }
    out << "final epoch " << r.log.back().epoch << ": total loss "
        << format_double(r.log.back().total) << "\n";
    return 0;
}

inline int cmd_eval(const EvalFlags& f, std::ostream& out, std::ostream& err) {
    Split split{};
    if (f.split == "test")
        split = Split::test;
    else if (f.split == "train")
        split = Split::train;
    else
        return fail(err, 2, "unknown split '" + f.split + "' (expected test or train)");

    try {
        const Dataset ds = load_dataset(f.data);
        MetricsReport rep;
        if (checkpoint_precision(f.checkpoint) == 'f') {
            const auto net = load_checkpoint<float>(f.checkpoint);
            rep = rank_and_score(extract_features(net, ds, split));
        } else {
            const auto net = load_checkpoint<double>(f.checkpoint);
            rep = rank_and_score(extract_features(net, ds, split));
        }

        std::filesystem::path dir = f.out_dir.empty()
                                        ? std::filesystem::path(f.checkpoint).parent_path()
                                        : std::filesystem::path(f.out_dir);
        if (dir.empty()) dir = ".";
        std::filesystem::create_directories(dir);
        write_text(dir / "per_query.csv", per_query_csv(rep));
        write_text(dir / "summary.csv", summary_csv(rep));
        write_text(dir / "pr_curve.csv", pr_curve_csv(rep));
        KeyValues kv;
        kv.set("checkpoint", f.checkpoint);
        kv.set("data", f.data);
        kv.set("split", f.split);
        std::ostringstream cfg_text;
        write_key_values(cfg_text, kv);
        write_text(dir / "eval_config.cfg", cfg_text.str());

        if (rep.excluded_queries > 0)
            err << "warning: " << rep.excluded_queries
                << " queries had no relevant gallery shape\n";
        out << "MAP=" << format_double(rep.map) << " AUC=" << format_double(rep.auc) << "\n";
    } catch (const Error& e) {
        return fail(err, 4, e.what());
    }
    return 0;
}

struct FdWorst {
    double rel = 0.0;
    std::string where = "-";
};

// 6x6 single-conv stack matching the unit-test fixtures.
inline NetworkSpec gc_spec(Architecture arch) {
    NetworkSpec s;
    s.architecture = arch;
    s.views = 3;
    s.input_channels = 1;
    s.input_height = s.input_width = 6;
    s.classes = 2;
    s.layers = {conv_layer("conv1", 2, 3, 1), relu_layer()};
    if (arch == Architecture::mvcnn) s.layers.push_back(pool_layer());
    s.layers.push_back(fc_layer("fc1", 4));
    if (arch == Architecture::cnn_lstm) s.layers.push_back(lstm_layer("lstm", 3));
    s.layers.push_back(fc_layer("classifier", 2));
    s.feature_layer = s.layers.size() - 2;
    s.validate();
    return s;
}

inline NetworkSpec gc_fc_spec() {
    NetworkSpec s;
    s.architecture = Architecture::view_cnn;
    s.views = 1;
    s.input_channels = 1;
    s.input_height = 2;
    s.input_width = 3;
    s.classes = 3;
    s.layers = {fc_layer("fc1", 5), fc_layer("classifier", 3)};
    s.feature_layer = 0;
    s.validate();
    return s;
}

template <typename LossFn>
void fd_scan(LossFn&& loss, Tensor<double>& param, const Tensor<double>& analytic,
             const std::string& name, FdWorst& w) {
    const double h = 1e-6;
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double saved = param[i];
        param[i] = saved + h;
        const double up = loss();
        param[i] = saved - h;
        const double down = loss();
        param[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - fd) / std::max(std::max(std::abs(a), std::abs(fd)), 1e-4);
        if (rel > w.rel) {
            w.rel = rel;
            w.where = name + "[" + std::to_string(i) + "]";
        }
    }
}

/// One finite-difference pass over every parameter of a freshly seeded net on
/// a random two-item batch; returns the worst relative error seen.
inline FdWorst gradcheck_net(const NetworkSpec& spec, std::uint64_t seed, const RegConfig& reg) {
    auto net = init_network<double>(spec, seed);
    Rng rng(Rng::derive(seed, 9001));
    std::vector<Tensor<double>> items;
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < 2; ++b) {
        Tensor<double> t(spec.architecture == Architecture::view_cnn
                             ? std::vector<std::size_t>{spec.input_channels, spec.input_height,
                                                        spec.input_width}
                             : std::vector<std::size_t>{spec.views, spec.input_channels,
                                                        spec.input_height, spec.input_width});
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
        items.push_back(std::move(t));
        labels.push_back(static_cast<std::size_t>(rng.uniform_index(spec.classes)));
    }

    auto loss = [&]() {
        auto fwd = network_forward(net, items);
        return softmax_ce(fwd.logits, labels).loss + network_gram_loss(net, reg).total;
    };
    auto fwd = network_forward(net, items);
    auto sm = softmax_ce(fwd.logits, labels);
    auto grads = network_backward(net, fwd.cache, sm.dlogits, reg);

    FdWorst w;
    for (std::size_t p = 0; p < net.params.size(); ++p) {
        const std::string& name = net.params[p].weights.name;
        fd_scan(loss, net.params[p].weights.kernels, grads.kernels[p], name, w);
        if (net.params[p].weights.bias.numel() > 0)
            fd_scan(loss, net.params[p].weights.bias, grads.bias[p], name + ".bias", w);
    }
    return w;
}

inline int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out, std::ostream& err) {
    std::vector<NetworkSpec> specs;
    RegConfig reg;
    double default_tol = 1e-5;
    if (f.layout == "fc") {
        specs = {gc_fc_spec()};
        reg.lambda1 = reg.lambda2 = 0.0;
        default_tol = 1e-6;
    } else if (f.layout == "conv") {
        specs = {gc_spec(Architecture::view_cnn)};
        reg.lambda1 = reg.lambda2 = 0.0;
    } else if (f.layout == "lstm") {
        specs = {gc_spec(Architecture::cnn_lstm)};
        reg.lambda1 = reg.lambda2 = 0.0;
    } else if (f.layout == "network") {
        specs = {gc_spec(Architecture::view_cnn), gc_spec(Architecture::mvcnn),
                 gc_spec(Architecture::cnn_lstm)};
    } else {
        return fail(err, 2, "unknown layout '" + f.layout + "' (expected fc, conv, lstm or network)");
    }
    if (f.trials == 0) return fail(err, 2, "--trials must be at least 1");
    const double tol = f.tol > 0.0 ? f.tol : default_tol;

    out << "layout = " << f.layout << "\ntrials = " << f.trials << "\nseed = " << f.seed
        << "\ntol = " << format_double(tol) << "\n";
    FdWorst worst;
    for (std::size_t t = 0; t < f.trials; ++t) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const FdWorst w =
                gradcheck_net(specs[i], Rng::derive(f.seed, t * specs.size() + i), reg);
            if (w.rel > worst.rel) worst = w;
        }
    }
    out << f.layout << ": worst relative error " << format_double(worst.rel) << " at "
        << worst.where << "\n";
    if (worst.rel > tol)
        return fail(err, 5, "gradient check failed at " + worst.where + ": relative error " +
                                format_double(worst.rel) + " exceeds " + format_double(tol));
    return 0;
}

inline int cmd_sweep(const CLI::App* sub, SweepFlags& sf, TrainFlags& tf, std::ostream& out,
                     std::ostream& err) {
    Architecture arch{};
    TrainConfig base_cfg;
    std::vector<std::string> values, seeds;
    try {
        apply_config_file(sub, tf);
        arch = architecture_from(tf.arch);
        base_cfg = to_train_config(tf);
        values = split_list(sf.values);
        seeds = split_list(sf.seeds);
        if (values.empty()) throw ConfigError("sweep: empty value list");
        if (seeds.empty()) throw ConfigError("sweep: empty seed list");
        if (sf.param != "lambda1" && sf.param != "lambda2" && sf.param != "views" &&
            sf.param != "lr")
            throw ConfigError("sweep: unknown parameter '" + sf.param +
                              "' (expected lambda1, lambda2, views or lr)");
        if (sf.param != "views" && sf.data.empty())
            throw ConfigError("sweep: --data is required unless sweeping views");
        for (const auto& v : values) {
            if (sf.param == "views")
                parse_u64_token(v);
            else
                parse_double_token(v);
        }
        for (const auto& s : seeds) parse_u64_token(s);
    } catch (const Error& e) {
        return fail(err, 2, e.what());
    }

    Dataset shared;
    const std::filesystem::path out_dir(sf.out_dir);
    try {
        if (sf.param != "views") shared = load_dataset(sf.data);
        std::filesystem::create_directories(out_dir);
        KeyValues kv = resolved_train_config(arch, base_cfg, sf.data);
        kv.set("param", sf.param);
        kv.set("values", sf.values);
        kv.set("seeds", sf.seeds);
        if (sf.param == "views") {
            kv.set("gen_seed", std::to_string(sf.gen_seed));
            kv.set("size", std::to_string(sf.size));
            kv.set("classes", std::to_string(sf.classes));
            kv.set("shapes_per_class", std::to_string(sf.shapes_per_class));
        }
        std::ostringstream cfg_text;
        write_key_values(cfg_text, kv);
        write_text(out_dir / "sweep_config.cfg", cfg_text.str());
    } catch (const Error& e) {
        return fail(err, 4, e.what());
    }

    std::string csv = "kind,param,value,seed,map,auc,map_std,auc_std,status\n";
    for (const auto& value : values) {
        std::vector<double> maps, aucs;
        for (const auto& seed_token : seeds) {
            std::string status = "ok";
            double map = 0.0, auc = 0.0;
            bool ok = true;
            try {
                const std::filesystem::path rundir =
                    out_dir / (sf.param + "_" + value) / ("seed_" + seed_token);
                std::filesystem::create_directories(rundir);

                TrainConfig cfg = base_cfg;
                cfg.seed = parse_u64_token(seed_token);
                Dataset local;
                const Dataset* ds = &shared;
                if (sf.param == "views") {
                    DatasetManifest m;
                    m.seed = sf.gen_seed;
                    m.classes = sf.classes;
                    m.shapes_per_class = sf.shapes_per_class;
                    m.views = parse_u64_token(value);
                    m.height = m.width = sf.size;
                    local = generate_dataset(m);
                    write_dataset(local, rundir / "data");
                    ds = &local;
                } else if (sf.param == "lambda1") {
                    cfg.reg.lambda1 = parse_double_token(value);
                } else if (sf.param == "lambda2") {
                    cfg.reg.lambda2 = parse_double_token(value);
                } else {
                    const double lr = parse_double_token(value);
                    cfg.base_lr = lr;
                    cfg.step_lr[0] = cfg.step_lr[1] = cfg.step_lr[2] = lr;
                }
                cfg.validate();

                const NetworkSpec spec = spec_for_dataset(arch, *ds);
                detail::check_compatible(spec, *ds);
                std::ostringstream cfg_text;
                write_key_values(cfg_text, resolved_train_config(arch, cfg, sf.data));
                write_text(rundir / "train_config.cfg", cfg_text.str());

                auto r = run_training(arch, spec, *ds, cfg);
                write_text(rundir / "loss.csv", loss_csv(r.log));
                save_checkpoint(r.net, rundir / "model.ckpt");

                const auto rep = rank_and_score(extract_features(r.net, *ds, Split::test));
                map = rep.map;
                auc = rep.auc;
                maps.push_back(map);
                aucs.push_back(auc);
            } catch (const Error& e) {
                ok = false;
                status = "error: " + sanitize_cell(e.what());
            }
            csv += "run," + sf.param + "," + value + "," + seed_token + "," +
                   (ok ? format_double(map) : "") + "," + (ok ? format_double(auc) : "") + ",,," +
                   status + "\n";
        }

        auto mean_of = [](const std::vector<double>& xs) {
            double s = 0.0;
            for (double x : xs) s += x;
            return s / static_cast<double>(xs.size());
        };
        auto std_of = [&](const std::vector<double>& xs, double m) {
            if (xs.size() < 2) return 0.0;
            double s = 0.0;
            for (double x : xs) s += (x - m) * (x - m);
            return std::sqrt(s / static_cast<double>(xs.size() - 1));
        };
        std::string agg = "aggregate," + sf.param + "," + value + ",,";
        if (maps.empty()) {
            agg += ",,,,n=0\n";
        } else {
            const double mm = mean_of(maps), ma = mean_of(aucs);
            agg += format_double(mm) + "," + format_double(ma) + "," +
                   format_double(std_of(maps, mm)) + "," + format_double(std_of(aucs, ma)) +
                   ",n=" + std::to_string(maps.size()) + "\n";
        }
        csv += agg;
    }

    try {
        write_text(out_dir / "results.csv", csv);
    } catch (const Error& e) {
        return fail(err, 4, e.what());
    }
    out << csv;
    return 0;
}

}  // namespace cli_detail

/// In-process entry point: args excludes the program name. Exit codes:
/// 0 success, 2 usage, 3 training divergence, 4 artifact mismatch,
/// 5 gradient-check failure.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"deterministic multi-view shape retrieval workbench"};
    app.name("gramreg");
    app.require_subcommand(1);

    cli_detail::GenFlags gen;
    auto* gen_cmd =
        app.add_subcommand("gen-data", "render a synthetic multi-view silhouette dataset");
    gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
    gen_cmd->add_option("--views", gen.views, "views per shape")->capture_default_str();
    gen_cmd->add_option("--size", gen.size, "image height and width")->capture_default_str();
    gen_cmd->add_option("--classes", gen.classes, "number of shape classes (2..6)")
        ->capture_default_str();
    gen_cmd->add_option("--shapes-per-class", gen.shapes_per_class, "shapes drawn per class")
        ->capture_default_str();
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();

    cli_detail::TrainFlags tf;
    auto* train_cmd =
        app.add_subcommand("train", "train a network, write checkpoint and loss curve");
    cli_detail::add_train_options(train_cmd, tf);
    train_cmd->add_option("--seed", tf.seed, "initialization and shuffle seed")
        ->capture_default_str();
    train_cmd->add_option("--data", tf.data, "dataset directory")->required();
    train_cmd->add_option("--out", tf.out_dir, "output directory")->required();
    train_cmd->add_option("--config", tf.config_file,
                          "key = value file; command-line flags override it");

    cli_detail::EvalFlags ef;
    auto* eval_cmd = app.add_subcommand("eval", "score retrieval quality of a checkpoint");
    eval_cmd->add_option("--checkpoint", ef.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", ef.data, "dataset directory")->required();
    eval_cmd->add_option("--split", ef.split, "test or train")->capture_default_str();
    eval_cmd->add_option("--out", ef.out_dir,
                         "directory for metric CSVs (default: beside the checkpoint)");

    cli_detail::GradcheckFlags gf;
    auto* gc_cmd =
        app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    gc_cmd->add_option("--layout", gf.layout, "fc, conv, lstm or network")->capture_default_str();
    gc_cmd->add_option("--trials", gf.trials, "random trials per layout")->capture_default_str();
    gc_cmd->add_option("--seed", gf.seed, "trial seed")->capture_default_str();
    gc_cmd->add_option("--tol", gf.tol, "override the per-layout tolerance");

    cli_detail::SweepFlags sf;
    cli_detail::TrainFlags stf;
    auto* sweep_cmd =
        app.add_subcommand("sweep", "train and score a grid of one hyper-parameter");
    sweep_cmd->add_option("--param", sf.param, "lambda1, lambda2, views or lr")->required();
    sweep_cmd->add_option("--values", sf.values, "comma-separated values")->required();
    sweep_cmd->add_option("--seeds", sf.seeds, "comma-separated training seeds")
        ->capture_default_str();
    cli_detail::add_train_options(sweep_cmd, stf);
    sweep_cmd->add_option("--data", sf.data, "dataset directory (ignored for a views sweep)");
    sweep_cmd->add_option("--out", sf.out_dir, "output directory")->required();
    sweep_cmd->add_option("--config", stf.config_file,
                          "key = value file; command-line flags override it");
    sweep_cmd->add_option("--gen-seed", sf.gen_seed, "dataset seed for a views sweep")
        ->capture_default_str();
    sweep_cmd->add_option("--size", sf.size, "image size for a views sweep")
        ->capture_default_str();
    sweep_cmd->add_option("--classes", sf.classes, "class count for a views sweep")
        ->capture_default_str();
    sweep_cmd->add_option("--shapes-per-class", sf.shapes_per_class,
                          "shapes per class for a views sweep")
        ->capture_default_str();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? 0 : 2;
    }

    if (gen_cmd->parsed()) return cli_detail::cmd_gen(gen, out, err);
    if (train_cmd->parsed()) return cli_detail::cmd_train(train_cmd, tf, out, err);
    if (eval_cmd->parsed()) return cli_detail::cmd_eval(ef, out, err);
    if (gc_cmd->parsed()) return cli_detail::cmd_gradcheck(gf, out, err);
    if (sweep_cmd->parsed()) return cli_detail::cmd_sweep(sweep_cmd, sf, stf, out, err);
    return 2;
}

inline int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(std::move(args), std::cout, std::cerr);
}

}  // namespace gramreg
