#include "ieces/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ieces/rng.hpp"

namespace ieces {

namespace {

void run_chunked(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t)>& fn) {
    const int t = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (t == 1) {
        if (n) fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t per = (n + t - 1) / t;
    for (int c = 0; c < t; ++c) {
        const std::size_t lo = c * per, hi = std::min(n, (c + 1) * per);
        if (lo < hi) pool.emplace_back([&fn, lo, hi]() { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

std::vector<int> predict_all(const Checkpoint& ckpt, const std::vector<SignImage>& images) {
    std::vector<int> out(images.size());
    run_chunked(images.size(), ckpt.train_config.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto code = encode(ckpt.encoder, ckpt.encoder_config, images[i].pixels);
            out[i] = predict(ckpt.classifier, code).class_id;
        }
    });
    return out;
}

}  // namespace

long ConfusionMatrix::total() const {
    long t = 0;
    for (long c : counts) t += c;
    return t;
}

ConfusionMatrix confusion(const std::vector<std::pair<int, int>>& predictions, int class_count) {
    if (class_count < 1) throw std::invalid_argument("confusion: class count must be >= 1");
    ConfusionMatrix cm(class_count);
    for (const auto& [actual, predicted] : predictions) {
        if (actual < 0 || actual >= class_count || predicted < 0 || predicted >= class_count)
            throw std::invalid_argument("confusion: label out of range");
        ++cm.at(actual, predicted);
    }
    return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
    const int c = cm.class_count;
    if (c < 1) throw std::invalid_argument("metrics: empty confusion matrix");
    MetricsReport r;
    const long total = cm.total();
    long diag = 0;
    for (int k = 0; k < c; ++k) {
        long tp = cm.at(k, k);
        long fp = 0, fn = 0;
        for (int j = 0; j < c; ++j) {
            if (j == k) continue;
            fp += cm.at(j, k);
            fn += cm.at(k, j);
        }
        const long tn = total - tp - fp - fn;
        ClassMetrics m;
        m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        m.accuracy = total > 0 ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
        m.support = tp + fn;
        r.per_class.push_back(m);
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        diag += tp;
    }
    r.macro_precision /= c;
    r.macro_recall /= c;
    r.accuracy = total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
    r.sample_count = total;
    return r;
}

ConfusionMatrix evaluate(const Checkpoint& ckpt, const std::vector<SignImage>& images) {
    const auto preds = predict_all(ckpt, images);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        pairs.emplace_back(images[i].class_id, preds[i]);
    return confusion(pairs, ckpt.class_count);
}

HeatmapMatrix heatmap(const Checkpoint& ckpt, const TemplateCodebook& codebook,
                      const std::vector<SignImage>& images) {
    const int c = codebook.class_count();
    if (c < 1) throw std::invalid_argument("heatmap: empty codebook");
    HeatmapMatrix hm(c);
    std::vector<FeatureCode> codes(images.size());
    run_chunked(images.size(), ckpt.train_config.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            codes[i] = encode(ckpt.encoder, ckpt.encoder_config, images[i].pixels);
    });
    for (std::size_t i = 0; i < images.size(); ++i) {
        const int cls = images[i].class_id;
        if (cls < 0 || cls >= c) throw std::invalid_argument("heatmap: class id out of range");
        for (int j = 0; j < c; ++j) {
            const double d = distance(codes[i], codebook.at(j));
            auto& cell = hm.at(cls, j);
            if (cell.count == 0) {
                cell.mean = cell.min = cell.max = d;
            } else {
                cell.mean += d;
                cell.min = std::min(cell.min, d);
                cell.max = std::max(cell.max, d);
            }
            ++cell.count;
        }
    }
    for (auto& cell : hm.cells)
        if (cell.count > 0) cell.mean /= static_cast<double>(cell.count);
    return hm;
}

HeatmapStats heatmap_stats(const HeatmapMatrix& hm) {
    HeatmapStats s;
    const int c = hm.class_count;
    int rows = 0, diag_rows = 0;
    double intra = 0.0, inter = 0.0;
    long intra_n = 0, inter_n = 0;
    for (int i = 0; i < c; ++i) {
        int argmin = -1;
        double best = 0.0;
        for (int j = 0; j < c; ++j) {
            const auto& cell = hm.at(i, j);
            if (cell.count == 0) continue;
            if (argmin < 0 || cell.mean < best) {
                best = cell.mean;
                argmin = j;
            }
            if (i == j) {
                intra += cell.mean;
                ++intra_n;
            } else {
                inter += cell.mean;
                ++inter_n;
            }
        }
        if (argmin >= 0) {
            ++rows;
            if (argmin == i) ++diag_rows;
        }
    }
    s.diagonal_argmin_fraction = rows ? static_cast<double>(diag_rows) / rows : 0.0;
    s.intra_mean = intra_n ? intra / intra_n : 0.0;
    s.inter_mean = inter_n ? inter / inter_n : 0.0;
    return s;
}

RobustnessReport robustness_report(const Checkpoint& ckpt, const std::vector<SignImage>& images,
                                   const AugmentConfig& ac, std::uint64_t seed) {
    RobustnessReport r;
    r.clean = metrics(evaluate(ckpt, images));

    std::vector<SignImage> blurred(images.size());
    std::vector<SignImage> occluded(images.size());
    AugmentConfig occ = ac;
    occ.erase_prob = 1.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        Rng rng(mix_seed(seed, 0xb10b, i));
        const double len = rng.uniform(static_cast<double>(ac.blur_len_lo),
                                       static_cast<double>(ac.blur_len_hi));
        const double ang = rng.uniform(ac.blur_angle_lo, ac.blur_angle_hi);
        blurred[i] = motion_blur(images[i], len, ang);
        occluded[i] = random_erase(images[i], occ, mix_seed(seed, 0x0cc1, i));
    }
    r.blurred = metrics(evaluate(ckpt, blurred));
    r.occluded = metrics(evaluate(ckpt, occluded));
    r.blur_delta = r.clean.accuracy - r.blurred.accuracy;
    r.occlusion_delta = r.clean.accuracy - r.occluded.accuracy;
    return r;
}

bool single_branch_check(const Checkpoint& ckpt, const std::vector<SignImage>& images) {
    reset_encoder_counters();
    for (const auto& img : images) {
        const auto code = encode(ckpt.encoder, ckpt.encoder_config, img.pixels);
        (void)predict(ckpt.classifier, code);
    }
    return encoder_invocations() == static_cast<long>(images.size()) &&
           template_encoder_invocations() == 0;
}

std::string metrics_text(const MetricsReport& r) {
    std::ostringstream out;
    out.precision(6);
    out << "samples=" << r.sample_count << '\n';
    out << "accuracy=" << r.accuracy << '\n';
    out << "macro_precision=" << r.macro_precision << '\n';
    out << "macro_recall=" << r.macro_recall << '\n';
    return out.str();
}

void write_metrics_report(const std::filesystem::path& txt_path,
                          const std::filesystem::path& csv_path, const MetricsReport& r) {
    {
        std::ofstream out(txt_path);
        if (!out) throw std::runtime_error("cannot write " + txt_path.string());
        out << metrics_text(r);
    }
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    csv.precision(6);
    csv << "class,precision,recall,accuracy,support\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const auto& m = r.per_class[k];
        csv << k << ',' << m.precision << ',' << m.recall << ',' << m.accuracy << ','
            << m.support << '\n';
    }
}

void write_heatmap_csv(const std::filesystem::path& path, const HeatmapMatrix& hm) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(6);
    for (int i = 0; i < hm.class_count; ++i) {
        for (int j = 0; j < hm.class_count; ++j) {
            if (j) out << ',';
            const auto& cell = hm.at(i, j);
            if (cell.count == 0)
                out << "absent";
            else
                out << cell.mean;
        }
        out << '\n';
    }
}

void write_heatmap_pgm(const std::filesystem::path& path, const HeatmapMatrix& hm) {
    const int c = hm.class_count;
    double lo = 0.0, hi = 0.0;
    bool seen = false;
    for (const auto& cell : hm.cells) {
        if (cell.count == 0) continue;
        if (!seen) {
            lo = hi = cell.mean;
            seen = true;
        } else {
            lo = std::min(lo, cell.mean);
            hi = std::max(hi, cell.mean);
        }
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << c << ' ' << c << "\n255\n";
    for (const auto& cell : hm.cells) {
        const double v = cell.count == 0 ? 1.0 : (cell.mean - lo) / span;
        out.put(static_cast<char>(std::lround(v * 255.0)));
    }
}

}  // namespace ieces
