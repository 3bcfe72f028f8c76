#include "tbe/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <ostream>

#include <json.hpp>

#include "tbe/errors.hpp"
#include "tbe/image.hpp"
#include "tbe/losses.hpp"
#include "tbe/ops.hpp"
#include "tbe/rng.hpp"

namespace tbe {

const char* stage_name(TrainStage s) {
    switch (s) {
        case TrainStage::A: return "A";
        case TrainStage::B: return "B";
        case TrainStage::C: return "C";
        case TrainStage::D: return "D";
    }
    return "?";
}

TrainStage parse_stage(const std::string& name) {
    if (name == "A") return TrainStage::A;
    if (name == "B") return TrainStage::B;
    if (name == "C") return TrainStage::C;
    if (name == "D") return TrainStage::D;
    throw ParameterError("unknown stage '" + name + "' (A, B, C, D)");
}

TrainConfig TrainConfig::desk_defaults() {
    TrainConfig c;
    c[TrainStage::A] = {20, 0.05f, 0.005f, 0.9f};
    c[TrainStage::B] = {8, 0.01f, 0.001f, 0.9f};
    c[TrainStage::C] = {8, 0.005f, 0.005f, 0.9f};
    c[TrainStage::D] = {5, 0.005f, 0.005f, 0.9f};
    return c;
}

// ---------------------------------------------------------------- batches

BatchComposer::BatchComposer(const Dataset& data, std::uint64_t seed) : data_(data), seed_(seed) {
    subject_still_.resize(data.num_classes());
    subject_sim_.resize(data.num_classes());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto label = static_cast<std::size_t>(data.labels[i]);
        if (data.records[i].stream == Stream::sim_video) {
            sim_.push_back(i);
            subject_sim_[label].push_back(i);
        } else {
            still_.push_back(i);
            subject_still_[label].push_back(i);
        }
    }
}

std::vector<std::size_t> BatchComposer::permuted(const std::vector<std::size_t>& v, std::string_view stream,
                                                 std::initializer_list<std::uint64_t> counters) const {
    std::vector<std::size_t> out = v;
    auto rng = make_rng(seed_, stream, counters);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

std::size_t BatchComposer::softmax_steps(std::size_t batch_size) const {
    if (batch_size < 2) {
        throw CompositionError("batch size must be at least 2");
    }
    if (two_stream()) {
        const std::size_t half = batch_size / 2;
        return (std::max(still_.size(), sim_.size()) + half - 1) / half;
    }
    return (still_.size() + batch_size - 1) / batch_size;
}

std::vector<std::size_t> BatchComposer::softmax_rows(TrainStage stage, std::size_t epoch, std::size_t step,
                                                     std::size_t batch_size) const {
    const auto st = static_cast<std::uint64_t>(stage);
    std::vector<std::size_t> rows;
    auto take = [&](const std::vector<std::size_t>& perm, std::size_t per_batch) {
        const std::size_t lo = std::min(perm.size(), step * per_batch);
        const std::size_t hi = std::min(perm.size(), lo + per_batch);
        rows.insert(rows.end(), perm.begin() + static_cast<std::ptrdiff_t>(lo),
                    perm.begin() + static_cast<std::ptrdiff_t>(hi));
    };
    if (two_stream()) {
        take(permuted(still_, "epoch/still", {st, epoch}), batch_size / 2);
        take(permuted(sim_, "epoch/sim", {st, epoch}), batch_size / 2);
    } else {
        take(permuted(still_, "epoch/still", {st, epoch}), batch_size);
    }
    return rows;
}

std::size_t BatchComposer::metric_steps(std::size_t subjects_per_batch) const {
    if (subjects_per_batch < 2) {
        throw CompositionError("metric batches need at least 2 subjects");
    }
    if (data_.num_classes() < subjects_per_batch) {
        throw CompositionError("metric batch needs " + std::to_string(subjects_per_batch) +
                               " subjects but the training set has " + std::to_string(data_.num_classes()) +
                               " (short by " + std::to_string(subjects_per_batch - data_.num_classes()) + ")");
    }
    return data_.num_classes() / subjects_per_batch;
}

std::vector<std::size_t> BatchComposer::metric_rows(std::size_t epoch, std::size_t step,
                                                    std::size_t subjects_per_batch, std::size_t per_subject) const {
    if (per_subject < 2) {
        throw CompositionError("metric batches need at least 2 images per subject");
    }
    std::vector<std::size_t> subjects(data_.num_classes());
    for (std::size_t i = 0; i < subjects.size(); ++i) subjects[i] = i;
    subjects = permuted(subjects, "epoch/subjects", {epoch});
    std::vector<std::size_t> rows;
    for (std::size_t k = step * subjects_per_batch; k < (step + 1) * subjects_per_batch; ++k) {
        const std::size_t s = subjects.at(k);
        auto pick = [&](const std::vector<std::size_t>& pool, std::size_t n, std::string_view stream) {
            if (pool.size() < n) {
                throw CompositionError("subject " + data_.subjects[s] + " has " + std::to_string(pool.size()) +
                                       " images in a stream, batch needs " + std::to_string(n));
            }
            const auto perm = permuted(pool, stream, {epoch, step, s});
            rows.insert(rows.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
        };
        if (two_stream()) {
            const std::size_t n_still = (per_subject + 1) / 2;
            pick(subject_still_[s], n_still, "metric/still");
            pick(subject_sim_[s], per_subject - n_still, "metric/sim");
        } else {
            pick(subject_still_[s], per_subject, "metric/still");
        }
    }
    return rows;
}

Batch BatchComposer::make_batch(const std::vector<std::size_t>& rows, std::mt19937_64* jitter_rng) const {
    Batch b;
    std::vector<Tensor> images;
    std::uniform_real_distribution<double> shift(-2.0, 2.0), scale(0.95, 1.05);
    for (std::size_t r : rows) {
        Tensor img = data_.images[r];
        if (jitter_rng) {
            const double sx = shift(*jitter_rng), sy = shift(*jitter_rng), sc = scale(*jitter_rng);
            img = warp_similarity(img, sx, sy, sc, 0.0);
        }
        images.push_back(std::move(img));
        b.labels.push_back(data_.labels[r]);
        b.streams.push_back(data_.records[r].stream);
    }
    b.images = stack_images(images);
    b.rows = rows;
    return b;
}

// ---------------------------------------------------------------- trainer

namespace {

float to_float_bits(std::uint32_t v) { return std::bit_cast<float>(v); }
std::uint32_t from_float_bits(float v) { return std::bit_cast<std::uint32_t>(v); }

void push_double(std::vector<float>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    out.push_back(to_float_bits(static_cast<std::uint32_t>(bits)));
    out.push_back(to_float_bits(static_cast<std::uint32_t>(bits >> 32)));
}

double read_double(std::span<const float> v, std::size_t at) {
    const std::uint64_t lo = from_float_bits(v[at]), hi = from_float_bits(v[at + 1]);
    return std::bit_cast<double>(lo | (hi << 32));
}

}  // namespace

Trainer::Trainer(Model& model, const Dataset& data, TrainConfig config, std::ostream* log)
    : model_(model), data_(data), config_(std::move(config)), composer_(data, config_.seed), log_(log) {
    if (data.num_classes() != model.num_classes()) {
        throw TrainingError("model has " + std::to_string(model.num_classes()) + " classes but data has " +
                            std::to_string(data.num_classes()) + " subjects");
    }
    for (std::size_t i = 1; i < config_.stages.size(); ++i) {
        if (config_.stages[i] <= config_.stages[i - 1]) {
            throw ConfigError("stages must run in A, B, C, D order");
        }
    }
}

float Trainer::stage_lr(TrainStage s, std::size_t epoch) const {
    const auto& sch = config_[s];
    if (sch.epochs <= 1) return sch.lr_start;
    const double t = static_cast<double>(epoch) / static_cast<double>(sch.epochs - 1);
    return static_cast<float>(sch.lr_start * std::pow(static_cast<double>(sch.lr_end) / sch.lr_start, t));
}

std::size_t Trainer::steps_in_epoch(TrainStage s) const {
    if (s == TrainStage::B && model_.config().branches.empty()) return 0;
    if (s == TrainStage::D) return composer_.metric_steps(config_.subjects_per_batch);
    return composer_.softmax_steps(config_.batch_size);
}

void Trainer::configure_stage(TrainStage s) {
    model_.set_trainable("", false);
    std::vector<std::string> on;
    switch (s) {
        case TrainStage::A: on = {"trunk.", "trunk_head.", "classifier.trunk."}; break;
        case TrainStage::B: on = {"branch.", "branch_head.", "classifier.branch."}; break;
        case TrainStage::C: on = {"trunk.", "branch.", "fusion.", "classifier.fusion."}; break;
        case TrainStage::D: on = {"trunk.", "branch.", "fusion."}; break;
    }
    for (const auto& p : on) model_.set_trainable(p, true);
}

void Trainer::enter_stage(TrainStage s) {
    optimizer_ = Sgd(config_[s].lr_start, config_[s].momentum);
    if (s == TrainStage::C) {
        model_.warm_start_fusion();
        model_.warm_start_fusion_classifier();
    }
}

void Trainer::log_line(const std::string& json) {
    if (log_) *log_ << json << '\n';
}

StepLog Trainer::step(TrainStage s) {
    const auto st = static_cast<std::uint64_t>(s);
    StepLog out{s, epoch_, step_, 0.0, stage_lr(s, epoch_), std::nullopt, std::nullopt};
    optimizer_.set_lr(out.lr);
    const float p_drop = model_.config().dropout;

    Tensor loss;
    if (s == TrainStage::D) {
        const auto rows = composer_.metric_rows(epoch_, step_, config_.subjects_per_batch, config_.images_per_subject);
        const Batch batch = composer_.make_batch(rows, nullptr);
        const auto f = model_.features(batch.images);
        const Tensor z = l2_normalize(model_.head("fusion", model_.fusion_input(f)));
        const Matrix m = to_matrix(z);
        auto rng = make_rng(config_.seed, "mining", {st, epoch_, step_});
        const TripletSet triples = mine_negatives(m, batch.labels, config_.beta, config_.mining, rng);
        if (config_.metric_loss == MetricLoss::mdr_tl) {
            MdrOptions opt;
            opt.alpha = config_.alpha;
            const MdrResult r = mdr_tl(m, batch.labels, triples, opt);
            out.p_violators = r.mean_violators;
            out.n_violators = r.violators;
            loss = as_loss(z, r);
        } else {
            const LossResult r = triplet_loss(m, batch.labels, triples);
            out.n_violators = r.violators;
            MdrOptions opt;
            opt.alpha = config_.alpha;
            out.p_violators = mean_distance_term(m, batch.labels, opt).mean_violators;
            loss = as_loss(z, r);
        }
    } else {
        const auto rows = composer_.softmax_rows(s, epoch_, step_, config_.batch_size);
        auto jitter = make_rng(config_.seed, "jitter", {st, epoch_, step_});
        auto drop = make_rng(config_.seed, "dropout", {st, epoch_, step_});
        const Batch batch = composer_.make_batch(rows, config_.jitter ? &jitter : nullptr);
        auto ce = [&](const Tensor& logits) { return as_loss(logits, softmax_ce(to_matrix(logits), batch.labels)); };
        if (s == TrainStage::A) {
            const auto f = model_.features(batch.images, false);
            const Tensor e = model_.head("trunk_head", dropout(f.trunk, p_drop, drop));
            loss = ce(model_.head("classifier.trunk", e));
        } else if (s == TrainStage::B) {
            const auto f = model_.features(batch.images);
            for (std::size_t b = 0; b < f.branches.size(); ++b) {
                const std::string name = model_.config().branches[b].name;
                const Tensor h = model_.head("branch_head." + name, dropout(f.branches[b], p_drop, drop));
                const Tensor l = ce(model_.head("classifier.branch." + name, h));
                loss = loss.defined() ? add(loss, l) : l;
            }
        } else {
            const auto f = model_.features(batch.images);
            const Tensor e = model_.head("fusion", dropout(model_.fusion_input(f), p_drop, drop));
            loss = ce(model_.head("classifier.fusion", e));
        }
    }
    out.loss = loss.item();
    loss.backward();
    clip_grad_norm(model_.params(), config_.grad_clip);
    optimizer_.step(model_.params());
    for (auto& [name, p] : model_.params()) p.zero_grad();
    return out;
}

std::size_t Trainer::run(std::optional<std::size_t> max_steps) {
    std::size_t taken = 0;
    std::size_t configured = static_cast<std::size_t>(-1);
    while (!done() && (!max_steps || taken < *max_steps)) {
        const TrainStage s = config_.stages[stage_index_];
        const std::size_t steps = steps_in_epoch(s);
        if (steps == 0 || config_[s].epochs == 0) {
            ++stage_index_;
            epoch_ = step_ = 0;
            continue;
        }
        if (configured != stage_index_) {
            configure_stage(s);
            configured = stage_index_;
        }
        if (epoch_ == 0 && step_ == 0) {
            enter_stage(s);
        }
        if (step_ == 0 || last_good_.empty()) {
            last_good_ = model_.state();
        }
        if (step_ == 0) {
            epoch_loss_ = epoch_n_ = 0.0;
            epoch_max_p_ = 0;
        }
        StepLog log;
        try {
            log = step(s);
        } catch (const NonFiniteError& e) {
            model_.load_state(last_good_);
            throw TrainingError(std::string("stage ") + stage_name(s) + " epoch " + std::to_string(epoch_) +
                                " step " + std::to_string(step_) + ": " + e.what() +
                                "; weights restored to the start of the epoch");
        }
        nlohmann::ordered_json j;
        j["event"] = "step";
        j["stage"] = stage_name(s);
        j["epoch"] = epoch_;
        j["step"] = step_;
        j["loss"] = log.loss;
        j["lr"] = log.lr;
        j["N"] = log.n_violators ? nlohmann::ordered_json(*log.n_violators) : nlohmann::ordered_json(nullptr);
        j["P"] = log.p_violators ? nlohmann::ordered_json(*log.p_violators) : nlohmann::ordered_json(nullptr);
        log_line(j.dump());

        epoch_loss_ += log.loss;
        if (log.n_violators) epoch_n_ += static_cast<double>(*log.n_violators);
        if (log.p_violators) epoch_max_p_ = std::max(epoch_max_p_, *log.p_violators);
        ++taken;
        ++total_steps_;
        if (++step_ == steps) {
            EpochLog e{s, epoch_, epoch_loss_ / static_cast<double>(steps), std::nullopt, std::nullopt};
            if (s == TrainStage::D) {
                e.mean_n = epoch_n_ / static_cast<double>(steps);
                e.max_p = epoch_max_p_;
            }
            epoch_logs_.push_back(e);
            nlohmann::ordered_json je;
            je["event"] = "epoch";
            je["stage"] = stage_name(s);
            je["epoch"] = epoch_;
            je["loss_mean"] = e.mean_loss;
            if (e.mean_n) je["N_mean"] = *e.mean_n;
            if (e.max_p) je["P_max"] = *e.max_p;
            log_line(je.dump());
            step_ = 0;
            if (++epoch_ == config_[s].epochs) {
                epoch_ = 0;
                ++stage_index_;
            }
        }
    }
    return taken;
}

std::vector<std::size_t> Trainer::metric_violators(std::size_t epoch) const {
    NoGradGuard no_grad;
    std::vector<std::size_t> out;
    const std::size_t steps = composer_.metric_steps(config_.subjects_per_batch);
    MdrOptions opt;
    opt.alpha = config_.alpha;
    for (std::size_t k = 0; k < steps; ++k) {
        const auto rows = composer_.metric_rows(epoch, k, config_.subjects_per_batch, config_.images_per_subject);
        const Batch batch = composer_.make_batch(rows, nullptr);
        const Tensor z = l2_normalize(model_.forward_embed(batch.images));
        out.push_back(mean_distance_term(to_matrix(z), batch.labels, opt).mean_violators);
    }
    return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    NamedTensors all = model_.state();
    for (const auto& [name, v] : optimizer_.velocity()) {
        all.emplace("velocity/" + name, Tensor(Shape{v.size()}, v));
    }
    std::vector<float> cursor;
    for (std::size_t v : {stage_index_, epoch_, step_, total_steps_, epoch_max_p_}) {
        push_double(cursor, static_cast<double>(v));
    }
    push_double(cursor, epoch_loss_);
    push_double(cursor, epoch_n_);
    all.emplace("trainer/cursor", Tensor(Shape{cursor.size()}, cursor));
    save_weights(path, all);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    const NamedTensors all = load_weights(path);
    model_.load_state(all);
    auto it = all.find("trainer/cursor");
    if (it == all.end() || it->second.numel() != 14) {
        throw IoError("checkpoint " + path.string() + " has no trainer state");
    }
    const auto c = it->second.data();
    stage_index_ = static_cast<std::size_t>(read_double(c, 0));
    epoch_ = static_cast<std::size_t>(read_double(c, 2));
    step_ = static_cast<std::size_t>(read_double(c, 4));
    total_steps_ = static_cast<std::size_t>(read_double(c, 6));
    epoch_max_p_ = static_cast<std::size_t>(read_double(c, 8));
    epoch_loss_ = read_double(c, 10);
    epoch_n_ = read_double(c, 12);
    if (!done()) {
        const TrainStage s = config_.stages[stage_index_];
        optimizer_ = Sgd(config_[s].lr_start, config_[s].momentum);
        for (const auto& [name, t] : all) {
            if (name.rfind("velocity/", 0) == 0) {
                optimizer_.velocity()[name.substr(9)] = std::vector<float>(t.data().begin(), t.data().end());
            }
        }
    }
}

}  // namespace tbe
