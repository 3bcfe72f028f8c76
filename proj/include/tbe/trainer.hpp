#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tbe/dataset.hpp"
#include "tbe/mining.hpp"
#include "tbe/model.hpp"

namespace tbe {

enum class TrainStage { A, B, C, D };

const char* stage_name(TrainStage s);
TrainStage parse_stage(const std::string& name);

struct StageSchedule {
    std::size_t epochs = 0;
    float lr_start = 0.01f;
    float lr_end = 0.01f;  // geometric decay across epochs
    float momentum = 0.9f;
};

enum class MetricLoss { mdr_tl, triplet };

struct TrainConfig {
    std::uint64_t seed = 0;
    std::vector<TrainStage> stages{TrainStage::A, TrainStage::B, TrainStage::C, TrainStage::D};
    std::array<StageSchedule, 4> schedule{};

    // Softmax stages: images per batch, split evenly between still and
    // sim_video when both streams are present.
    std::size_t batch_size = 32;
    bool jitter = true;
    // Global gradient-norm cap; without batch norm the plain schedule diverges.
    double grad_clip = 2.0;

    // Metric stage: subjects x images per subject.
    std::size_t subjects_per_batch = 8;
    std::size_t images_per_subject = 4;
    MetricLoss metric_loss = MetricLoss::mdr_tl;
    MiningStrategy mining = MiningStrategy::semi_hard;
    double alpha = 2.0;
    double beta = 0.2;

    StageSchedule& operator[](TrainStage s) { return schedule[static_cast<std::size_t>(s)]; }
    const StageSchedule& operator[](TrainStage s) const { return schedule[static_cast<std::size_t>(s)]; }

    /// Desk-scale defaults.
    static TrainConfig desk_defaults();
};

/// A mini-batch of stacked images with labels and stream tags.
struct Batch {
    Tensor images;                 // [N,C,H,W]
    std::vector<int> labels;
    std::vector<Stream> streams;
    std::vector<std::size_t> rows;  // dataset indices
};

/// Deterministic batch composition over a loaded training set.
class BatchComposer {
  public:
    BatchComposer(const Dataset& data, std::uint64_t seed);

    bool two_stream() const { return !sim_.empty(); }

    /// Softmax stages: one permutation per epoch of each stream; batch k
    /// takes the k-th slice of each, so every record appears once per epoch.
    std::size_t softmax_steps(std::size_t batch_size) const;
    std::vector<std::size_t> softmax_rows(TrainStage stage, std::size_t epoch, std::size_t step,
                                          std::size_t batch_size) const;

    /// Metric stage: subjects in a fresh order each epoch, `per_subject`
    /// images each, half from each stream when both exist.
    std::size_t metric_steps(std::size_t subjects_per_batch) const;
    std::vector<std::size_t> metric_rows(std::size_t epoch, std::size_t step, std::size_t subjects_per_batch,
                                         std::size_t per_subject) const;

    Batch make_batch(const std::vector<std::size_t>& rows, std::mt19937_64* jitter_rng) const;

  private:
    std::vector<std::size_t> permuted(const std::vector<std::size_t>& v, std::string_view stream,
                                      std::initializer_list<std::uint64_t> counters) const;

    const Dataset& data_;
    std::uint64_t seed_;
    std::vector<std::size_t> still_, sim_;
    std::vector<std::vector<std::size_t>> subject_still_, subject_sim_;
};

struct StepLog {
    TrainStage stage;
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
    float lr = 0.0f;
    std::optional<std::size_t> n_violators;
    std::optional<std::size_t> p_violators;
};

struct EpochLog {
    TrainStage stage;
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    std::optional<double> mean_n;
    std::optional<std::size_t> max_p;
};

/// Stage-wise trainer. Progress is a cursor (stage, epoch, step); all
/// randomness for a step derives from (seed, stage, epoch, step), so a run
/// resumed from a checkpoint continues bit-exactly.
class Trainer {
  public:
    Trainer(Model& model, const Dataset& data, TrainConfig config, std::ostream* log = nullptr);

    bool done() const { return stage_index_ >= config_.stages.size(); }

    /// Runs at most `max_steps` steps (all remaining steps when omitted) and
    /// returns the number taken.
    std::size_t run(std::optional<std::size_t> max_steps = std::nullopt);

    const std::vector<EpochLog>& epochs() const { return epoch_logs_; }
    std::size_t steps_taken() const { return total_steps_; }

    /// Weights, optimizer velocities and cursor in the weight file format.
    void save_checkpoint(const std::filesystem::path& path) const;
    void load_checkpoint(const std::filesystem::path& path);

    /// Metric-stage violator count P for every batch of one pass, without
    /// dropout or updates.
    std::vector<std::size_t> metric_violators(std::size_t epoch) const;

  private:
    void enter_stage(TrainStage s);
    void configure_stage(TrainStage s);
    float stage_lr(TrainStage s, std::size_t epoch) const;
    std::size_t steps_in_epoch(TrainStage s) const;
    StepLog step(TrainStage s);
    void log_line(const std::string& json);

    Model& model_;
    const Dataset& data_;
    TrainConfig config_;
    BatchComposer composer_;
    std::ostream* log_;
    Sgd optimizer_{0.01f, 0.0f};

    std::size_t stage_index_ = 0;
    std::size_t epoch_ = 0;
    std::size_t step_ = 0;
    std::size_t total_steps_ = 0;
    double epoch_loss_ = 0.0, epoch_n_ = 0.0;
    std::size_t epoch_max_p_ = 0;
    NamedTensors last_good_;
    std::vector<EpochLog> epoch_logs_;
};

}  // namespace tbe
