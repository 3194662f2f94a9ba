#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ieces {

enum class CorruptionTag { clean, motion_blur, occluded, combined };

const char* tag_name(CorruptionTag tag);

// 3 x 48 x 48 CHW pixel block in [0,1] with class label and provenance.
struct SignImage {
    std::vector<double> pixels;   // length 3*48*48
    int class_id = -1;
    CorruptionTag tag = CorruptionTag::clean;
    std::string source_id;

    bool valid_shape() const;
};

// Exactly one clean exemplar per class.
struct TemplateSet {
    std::vector<SignImage> images;   // index == class id

    int class_count() const { return static_cast<int>(images.size()); }
};

struct DatasetSplit {
    std::vector<SignImage> train, validation, test;
    int class_count = 0;
};

// Raw 8-bit interleaved RGB image as read from a PPM file.
struct RawImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> rgb;   // H*W*3, row-major interleaved
};

RawImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const SignImage& image);
void write_pgm(const std::filesystem::path& path, const std::vector<double>& values,
               int width, int height);

// 1/255 scaling plus direct bilinear resize to 48 x 48.
std::vector<double> normalize(const RawImage& raw);

// Procedural desk-scale dataset: C archetypes from shape x rim color x glyph.
std::pair<DatasetSplit, TemplateSet> gen_synthetic(int classes, int per_class,
                                                   std::uint64_t seed);

// GTSRB on-disk layout: per-class directories of P6 PPMs plus semicolon CSVs.
std::pair<DatasetSplit, TemplateSet> load_gtsrb(const std::filesystem::path& root,
                                                std::uint64_t seed);

// Generic layout root/{train,val,test}/<class>/*.ppm + root/templates/<class>.ppm
std::pair<DatasetSplit, TemplateSet> load_directory(const std::filesystem::path& root);

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split);

// Dispatch on "synthetic:C,n" vs directory layouts; used by the CLI.
std::pair<DatasetSplit, TemplateSet> load_data(const std::string& source, std::uint64_t seed);

}  // namespace ieces
