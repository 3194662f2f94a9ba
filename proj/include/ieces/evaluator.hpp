#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ieces/trainer.hpp"

namespace ieces {

struct ConfusionMatrix {
    int class_count = 0;
    std::vector<long> counts;  // row = true class, column = predicted

    explicit ConfusionMatrix(int c = 0)
        : class_count(c), counts(static_cast<std::size_t>(c) * c, 0) {}
    long& at(int actual, int predicted) {
        return counts[static_cast<std::size_t>(actual) * class_count + predicted];
    }
    long at(int actual, int predicted) const {
        return counts[static_cast<std::size_t>(actual) * class_count + predicted];
    }
    long total() const;
};

ConfusionMatrix confusion(const std::vector<std::pair<int, int>>& predictions, int class_count);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double accuracy = 0.0;
    long support = 0;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double accuracy = 0.0;  // micro: correct / total
    long sample_count = 0;
};

// One-vs-rest P/R/A per class; zero-denominator cells report 0 and still
// participate in the macro averages.
MetricsReport metrics(const ConfusionMatrix& cm);

ConfusionMatrix evaluate(const Checkpoint& ckpt, const std::vector<SignImage>& images);

struct HeatmapCell {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    long count = 0;  // 0 marks an absent (class, template) cell
};

struct HeatmapMatrix {
    int class_count = 0;
    std::vector<HeatmapCell> cells;

    explicit HeatmapMatrix(int c = 0)
        : class_count(c), cells(static_cast<std::size_t>(c) * c) {}
    HeatmapCell& at(int cls, int tmpl) {
        return cells[static_cast<std::size_t>(cls) * class_count + tmpl];
    }
    const HeatmapCell& at(int cls, int tmpl) const {
        return cells[static_cast<std::size_t>(cls) * class_count + tmpl];
    }
};

// Entry (i, j): distance between codes of class-i test images and the
// class-j template code.
HeatmapMatrix heatmap(const Checkpoint& ckpt, const TemplateCodebook& codebook,
                      const std::vector<SignImage>& images);

struct HeatmapStats {
    double diagonal_argmin_fraction = 0.0;  // rows whose argmin is the diagonal
    double intra_mean = 0.0;                // mean of diagonal cells
    double inter_mean = 0.0;                // mean of off-diagonal cells
};

HeatmapStats heatmap_stats(const HeatmapMatrix& hm);

struct RobustnessReport {
    MetricsReport clean;
    MetricsReport blurred;
    MetricsReport occluded;
    double blur_delta = 0.0;      // clean accuracy minus blurred accuracy
    double occlusion_delta = 0.0;
};

// Evaluates the untouched test set, then motion-blurred and fully occluded
// variants produced with fixed derived seeds.
RobustnessReport robustness_report(const Checkpoint& ckpt, const std::vector<SignImage>& images,
                                   const AugmentConfig& ac, std::uint64_t seed);

// Confirms exactly one encoder pass per classified image and zero template
// encodings; for the inference path only.
bool single_branch_check(const Checkpoint& ckpt, const std::vector<SignImage>& images);

std::string metrics_text(const MetricsReport& r);
void write_metrics_report(const std::filesystem::path& txt_path,
                          const std::filesystem::path& csv_path, const MetricsReport& r);
void write_heatmap_csv(const std::filesystem::path& path, const HeatmapMatrix& hm);
void write_heatmap_pgm(const std::filesystem::path& path, const HeatmapMatrix& hm);

}  // namespace ieces
