// Command-line front end: corpus generation, blur simulation, training,
// evaluation, gradient checks and cost reports.
#include <yaml-cpp/yaml.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>

#include "tbe/blur.hpp"
#include "tbe/checkpoint.hpp"
#include "tbe/corpus.hpp"
#include "tbe/costs.hpp"
#include "tbe/dataset.hpp"
#include "tbe/errors.hpp"
#include "tbe/eval.hpp"
#include "tbe/gradcheck.hpp"
#include "tbe/manifest.hpp"
#include "tbe/model.hpp"
#include "tbe/trainer.hpp"

namespace fs = std::filesystem;
using namespace tbe;

namespace {

class UsageError : public Error {
  public:
    using Error::Error;
};

// Values that may come from --config and be overridden by flags.
struct RunConfig {
    std::optional<std::uint64_t> seed;
    std::string preset = "mini_tbe";
    std::string model_config;
    std::string manifest;
    std::string weights;
    std::string init;
    std::string resume;
    std::string out;
    std::string log;
    std::string stage = "all";
    std::string protocol = "v2v";
    std::string mining = "semi_hard";
    std::string metric_loss = "mdr_tl";
    double alpha = 2.0;
    double beta = 0.2;
    bool stills_only = false;
    double occlusion = 0.0;
    TrainConfig train = TrainConfig::desk_defaults();
    CorpusOptions corpus;
};

void load_config_file(const std::string& path, RunConfig& rc) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path);
    } catch (const YAML::BadFile&) {
        throw ConfigError("cannot read config " + path);
    } catch (const YAML::Exception& e) {
        throw ConfigError("config " + path + " is not valid YAML: " + e.what());
    }
    if (!root.IsMap()) throw ConfigError("config " + path + " must be a mapping");
    auto get = [&](const YAML::Node& n, const std::string& key, auto& dst) {
        try {
            dst = n.as<std::remove_reference_t<decltype(dst)>>();
        } catch (const YAML::Exception&) {
            throw ConfigError("config key '" + key + "' has a bad value");
        }
    };
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        const YAML::Node& v = kv.second;
        if (key == "seed") {
            std::uint64_t s = 0;
            get(v, key, s);
            rc.seed = s;
        } else if (key == "preset") get(v, key, rc.preset);
        else if (key == "model_config") get(v, key, rc.model_config);
        else if (key == "manifest") get(v, key, rc.manifest);
        else if (key == "weights") get(v, key, rc.weights);
        else if (key == "init") get(v, key, rc.init);
        else if (key == "out") get(v, key, rc.out);
        else if (key == "log") get(v, key, rc.log);
        else if (key == "stage") get(v, key, rc.stage);
        else if (key == "protocol") get(v, key, rc.protocol);
        else if (key == "mining") get(v, key, rc.mining);
        else if (key == "metric_loss") get(v, key, rc.metric_loss);
        else if (key == "alpha") get(v, key, rc.alpha);
        else if (key == "beta") get(v, key, rc.beta);
        else if (key == "stills_only") get(v, key, rc.stills_only);
        else if (key == "occlusion") get(v, key, rc.occlusion);
        else if (key == "batch_size") get(v, key, rc.train.batch_size);
        else if (key == "subjects_per_batch") get(v, key, rc.train.subjects_per_batch);
        else if (key == "images_per_subject") get(v, key, rc.train.images_per_subject);
        else if (key == "jitter") get(v, key, rc.train.jitter);
        else if (key == "grad_clip") get(v, key, rc.train.grad_clip);
        else if (key == "schedule") {
            if (!v.IsMap()) throw ConfigError("'schedule' must map stage names to settings");
            for (const auto& st : v) {
                const auto name = st.first.as<std::string>();
                TrainStage s;
                try {
                    s = parse_stage(name);
                } catch (const Error&) {
                    throw ConfigError("schedule: unknown stage '" + name + "'");
                }
                for (const auto& f : st.second) {
                    const auto field = f.first.as<std::string>();
                    auto& sch = rc.train[s];
                    if (field == "epochs") get(f.second, field, sch.epochs);
                    else if (field == "lr_start") get(f.second, field, sch.lr_start);
                    else if (field == "lr_end") get(f.second, field, sch.lr_end);
                    else if (field == "momentum") get(f.second, field, sch.momentum);
                    else throw ConfigError("schedule." + name + ": unknown key '" + field + "'");
                }
            }
        } else if (key == "corpus") {
            for (const auto& f : v) {
                const auto field = f.first.as<std::string>();
                auto& c = rc.corpus;
                if (field == "n_subjects") get(f.second, field, c.n_subjects);
                else if (field == "frames_per_video") get(f.second, field, c.frames_per_video);
                else if (field == "train_stills") get(f.second, field, c.train_stills);
                else if (field == "gallery_stills") get(f.second, field, c.gallery_stills);
                else if (field == "videos") get(f.second, field, c.videos);
                else if (field == "blur_videos") get(f.second, field, c.blur_videos);
                else throw ConfigError("corpus: unknown key '" + field + "'");
            }
        } else {
            throw ConfigError("config " + path + ": unknown key '" + key + "'");
        }
    }
}

std::uint64_t require_seed(const RunConfig& rc) {
    if (!rc.seed) throw UsageError("this command needs an explicit --seed (or 'seed' in the config)");
    return *rc.seed;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

ModelConfig model_config(const RunConfig& rc) {
    return rc.model_config.empty() ? load_preset(rc.preset) : load_model_config(rc.model_config);
}

int cmd_gen_corpus(RunConfig& rc) {
    require(rc.out, "--out");
    const auto seed = require_seed(rc);
    if (rc.corpus.n_subjects == 0) throw UsageError("--n-subjects must be positive");
    if (rc.corpus.videos > 0 && rc.corpus.frames_per_video == 0) throw UsageError("--frames must be positive");
    const Manifest m = generate_corpus(rc.corpus, rc.out, seed);
    std::cout << "wrote " << m.records.size() << " records to " << (fs::path(rc.out) / "manifest.jsonl").string()
              << "\n";
    return 0;
}

int cmd_simulate(RunConfig& rc) {
    require(rc.manifest, "--manifest");
    require(rc.out, "--out");
    const auto seed = require_seed(rc);
    const Manifest in = read_manifest(rc.manifest);
    const TwoStreamResult r = build_two_stream(in, rc.out, seed);
    write_manifest(rc.out, r.manifest);
    for (const auto& e : r.errors) std::cerr << "error: " << e << "\n";
    std::cout << "wrote " << r.manifest.records.size() << " records to " << rc.out << " (" << r.errors.size()
              << " errors)\n";
    return r.errors.empty() ? 0 : 1;
}

int cmd_train(RunConfig& rc) {
    require(rc.manifest, "--manifest");
    require(rc.out, "--out");
    TrainConfig tc = rc.train;
    tc.seed = require_seed(rc);
    tc.alpha = rc.alpha;
    tc.beta = rc.beta;
    try {
        tc.mining = parse_mining(rc.mining);
        if (rc.stage == "all") {
            tc.stages = {TrainStage::A, TrainStage::B, TrainStage::C, TrainStage::D};
        } else {
            tc.stages.clear();
            for (char c : rc.stage) {
                if (c == ',') continue;
                tc.stages.push_back(parse_stage(std::string(1, c)));
            }
        }
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    if (rc.metric_loss == "mdr_tl") tc.metric_loss = MetricLoss::mdr_tl;
    else if (rc.metric_loss == "triplet") tc.metric_loss = MetricLoss::triplet;
    else throw UsageError("metric_loss must be mdr_tl or triplet");

    const Manifest manifest = read_manifest(rc.manifest);
    const Dataset data = load_dataset(manifest, training_filter(!rc.stills_only));
    Model model(model_config(rc), data.num_classes(), tc.seed);
    if (!rc.init.empty()) {
        if (!fs::exists(rc.init)) throw IoError("missing checkpoint " + rc.init);
        model.load_state(load_weights(rc.init));
    }
    std::ofstream log_file;
    std::ostream* log = nullptr;
    if (!rc.log.empty()) {
        log_file.open(rc.log, std::ios::binary);
        if (!log_file) throw IoError("cannot write log " + rc.log);
        log = &log_file;
    }
    Trainer trainer(model, data, tc, log);
    if (!rc.resume.empty()) trainer.load_checkpoint(rc.resume);
    trainer.run();
    trainer.save_checkpoint(rc.out);
    for (const auto& e : trainer.epochs()) {
        std::cout << "stage " << stage_name(e.stage) << " epoch " << e.epoch << " loss " << e.mean_loss;
        if (e.max_p) std::cout << " N_mean " << *e.mean_n << " P_max " << *e.max_p;
        std::cout << "\n";
    }
    std::cout << "saved " << rc.out << " after " << trainer.steps_taken() << " steps\n";
    return 0;
}

int cmd_eval(RunConfig& rc) {
    require(rc.manifest, "--manifest");
    require(rc.out, "--out");
    if (rc.weights.empty() || !fs::exists(rc.weights)) {
        throw IoError("missing checkpoint" + (rc.weights.empty() ? std::string() : " " + rc.weights));
    }
    Protocol protocol;
    try {
        protocol = parse_protocol(rc.protocol);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    const NamedTensors weights = load_weights(rc.weights);
    std::size_t classes = 0;
    if (auto it = weights.find("classifier.trunk.b"); it != weights.end()) classes = it->second.numel();
    Model model(model_config(rc), classes, 0);
    model.load_state(weights);
    EvalOptions opt;
    opt.occlusion_area = rc.occlusion;
    if (rc.occlusion > 0.0) opt.seed = require_seed(rc);
    const EvalReport report = run_protocol(protocol, read_manifest(rc.manifest), model, opt);
    write_report(report, rc.out);
    std::cout << protocol_name(protocol) << ": " << report.scores.size() << " pairs";
    for (const auto& [far, vr] : report.roc.vr_at_far) std::cout << ", VR@" << far << "FAR=" << vr;
    if (report.rank1) std::cout << ", rank-1=" << *report.rank1;
    std::cout << "\n";
    return 0;
}

int cmd_gradcheck(std::size_t seeds) {
    bool ok = true;
    for (const auto& r : run_gradcheck(seeds)) {
        std::cout << std::left << std::setw(22) << r.op << " max_rel_err " << std::scientific << std::setprecision(3)
                  << r.max_rel_error << std::defaultfloat << "  " << (r.pass ? "PASS" : "FAIL") << "\n";
        ok = ok && r.pass;
    }
    std::cout << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? 0 : 1;
}

int cmd_costs(RunConfig& rc) {
    const ModelConfig cfg = model_config(rc);
    const CostReport c = count_costs(cfg);
    std::cout << "preset " << cfg.preset << "\n"
              << "trunk mult-adds      " << c.trunk.mult_adds << "\n"
              << "full mult-adds       " << c.full.mult_adds << "\n"
              << "no-sharing mult-adds " << c.no_sharing.mult_adds << "\n"
              << "full/trunk ratio     " << c.ratio() << "\n"
              << "no-sharing ratio     " << c.no_sharing_ratio() << "\n"
              << "peak activations     trunk " << c.trunk.peak_activation_floats << ", full "
              << c.full.peak_activation_floats << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trunk-branch video face recognition toolkit"};
    app.require_subcommand(1);
    RunConfig rc;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset, manifest, weights, out, stage, protocol, mining, init, resume, log,
        model_cfg, metric_loss;
    std::optional<double> alpha, beta, occlusion;
    std::optional<std::size_t> n_subjects, frames, train_stills, gallery_stills, videos;
    bool stills_only = false;
    std::size_t gc_seeds = 5;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "YAML run configuration");
        sub->add_option("--seed", seed, "Root random seed");
        sub->add_option("--out", out, "Output path");
    };
    auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic identity corpus");
    common(gen);
    gen->add_option("--n-subjects", n_subjects, "Number of identities");
    gen->add_option("--frames", frames, "Frames per video");
    gen->add_option("--train-stills", train_stills, "Training stills per identity");
    gen->add_option("--gallery-stills", gallery_stills, "Gallery stills per identity");
    gen->add_option("--videos", videos, "Videos per identity");

    auto* sim = app.add_subcommand("simulate", "Add blurred sim_video twins of every still");
    common(sim);
    sim->add_option("--manifest", manifest, "Input manifest");

    auto* train = app.add_subcommand("train", "Run training stages");
    common(train);
    train->add_option("--manifest", manifest, "Training manifest");
    train->add_option("--preset", preset, "Model preset name");
    train->add_option("--model-config", model_cfg, "Model config file (overrides --preset)");
    train->add_option("--stage", stage, "Stages to run: A, B, C, D, a list such as ACD, or all");
    train->add_option("--mining", mining, "semi_hard, hard or hardest");
    train->add_option("--metric-loss", metric_loss, "mdr_tl or triplet");
    train->add_option("--alpha", alpha, "Mean-distance margin");
    train->add_option("--beta", beta, "Triplet margin");
    train->add_option("--init", init, "Start from these weights");
    train->add_option("--resume", resume, "Resume a saved training state");
    train->add_option("--log", log, "Training log (JSON lines)");
    train->add_flag("--stills-only", stills_only, "Train on stills only");

    auto* ev = app.add_subcommand("eval", "Evaluate a protocol and write a report");
    common(ev);
    ev->add_option("--manifest", manifest, "Evaluation manifest");
    ev->add_option("--weights", weights, "Trained weights");
    ev->add_option("--preset", preset, "Model preset name");
    ev->add_option("--model-config", model_cfg, "Model config file");
    ev->add_option("--protocol", protocol, "v2v, s2v, v2s or id");
    ev->add_option("--occlusion", occlusion, "Blank this fraction of every video frame");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    gc->add_option("--seeds", gc_seeds, "Random instances per op");

    auto* costs = app.add_subcommand("costs", "Static compute cost of trunk vs trunk-branch");
    costs->add_option("--config", config_path, "YAML run configuration");
    costs->add_option("--preset", preset, "Model preset name");
    costs->add_option("--model-config", model_cfg, "Model config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (!config_path.empty()) load_config_file(config_path, rc);
        if (seed) rc.seed = seed;
        if (preset) rc.preset = *preset;
        if (model_cfg) rc.model_config = *model_cfg;
        if (manifest) rc.manifest = *manifest;
        if (weights) rc.weights = *weights;
        if (out) rc.out = *out;
        if (stage) rc.stage = *stage;
        if (protocol) rc.protocol = *protocol;
        if (mining) rc.mining = *mining;
        if (metric_loss) rc.metric_loss = *metric_loss;
        if (init) rc.init = *init;
        if (resume) rc.resume = *resume;
        if (log) rc.log = *log;
        if (alpha) rc.alpha = *alpha;
        if (beta) rc.beta = *beta;
        if (occlusion) rc.occlusion = *occlusion;
        if (stills_only) rc.stills_only = true;
        if (n_subjects) rc.corpus.n_subjects = *n_subjects;
        if (frames) rc.corpus.frames_per_video = *frames;
        if (train_stills) rc.corpus.train_stills = *train_stills;
        if (gallery_stills) rc.corpus.gallery_stills = *gallery_stills;
        if (videos) rc.corpus.videos = *videos;

        if (*gen) return cmd_gen_corpus(rc);
        if (*sim) return cmd_simulate(rc);
        if (*train) return cmd_train(rc);
        if (*ev) return cmd_eval(rc);
        if (*gc) return cmd_gradcheck(gc_seeds);
        if (*costs) return cmd_costs(rc);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
