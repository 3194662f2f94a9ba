#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ieces/augment.hpp"
#include "ieces/classifier.hpp"
#include "ieces/dataset.hpp"
#include "ieces/siamese.hpp"

namespace ieces {

struct TrainConfig {
    double learning_rate = 3e-4;
    double weight_decay = 2e-7;
    int batch_size = 64;          // desk-scale default; full-scale runs use 512
    int epochs = 10;
    int patience = 3;             // epochs without relative improvement >= 1e-4
    std::uint64_t seed = 0;
    int checkpoint_interval = 20; // in batches
    FloatMode mode = FloatMode::f32;
    int threads = 4;              // deterministic per fixed (seed, threads)
    bool classifier_only = false; // ablation baseline without the Siamese path

    void validate() const;
};

struct OptimizerState {
    std::map<std::string, std::vector<double>> m, v;
    std::int64_t step = 0;
};

// Raised when a training step produces a non-finite loss.
struct NumericalAbort : std::runtime_error {
    explicit NumericalAbort(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
    enum class Kind { bad_magic, bad_version, truncated, checksum_mismatch, malformed };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct Checkpoint {
    std::uint32_t version = 1;
    EncoderConfig encoder_config;
    int class_count = 0;
    EncoderParams encoder;
    ClassifierParams classifier;
    OptimizerState opt;
    TrainConfig train_config;
    SiameseConfig siamese_config;
    AugmentConfig augment_config;
    // progress / RNG state (stream seeds are derived from seed + counters)
    int epoch = 0;
    int batch = 0;
    double best_val_acc = -1.0;
    FloatMode saved_mode = FloatMode::f32;
    std::optional<TemplateCodebook> ema_codebook;  // prototype_ema mode only
};

// Decoupled weight decay, then the bias-corrected moment update.
void adam_step(const std::map<std::string, ValuePtr>& params,
               const std::map<std::string, std::vector<double>>& grads, OptimizerState& state,
               double lr, double wd, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

struct StepResult {
    double loss = 0.0;
    double loss_sim = 0.0;
    double loss_class = 0.0;
};

// One optimization step over a batch: augment, encode, pair against the
// freshly re-encoded (stop-gradient) codebook, combine losses, backward, Adam.
StepResult train_step(const std::vector<const SignImage*>& batch, const TemplateSet& templates,
                      Checkpoint& state, std::uint64_t step_seed);

struct TrainResult {
    Checkpoint checkpoint;
    std::string log;              // epoch\tbatch\tL\tL_sim\tL_class\tval_acc lines
    std::vector<std::filesystem::path> checkpoint_files;
};

Checkpoint init_checkpoint(const EncoderConfig& enc_cfg, int class_count,
                           const TrainConfig& tc, const SiameseConfig& sc,
                           const AugmentConfig& ac);

TrainResult train(const DatasetSplit& data, const TemplateSet& templates, Checkpoint start,
                  const std::filesystem::path& out_dir);

double validation_accuracy(const Checkpoint& ckpt, const std::vector<SignImage>& images);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

}  // namespace ieces
