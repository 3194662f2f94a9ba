#include "ieces/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "ieces/rng.hpp"

namespace ieces {

namespace fs = std::filesystem;

namespace {

using ParamMap = std::map<std::string, ValuePtr>;

ParamMap param_map(const EncoderParams& enc, const ClassifierParams& cls) {
    ParamMap m;
    for (const auto& [name, v] : enc.tensors) m["enc/" + name] = v;
    m["cls/w"] = cls.weight;
    m["cls/b"] = cls.bias;
    return m;
}

void run_chunked(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t, int)>& fn) {
    const int t = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (t == 1) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(t);
    const std::size_t per = (n + t - 1) / t;
    for (int c = 0; c < t; ++c) {
        const std::size_t lo = c * per, hi = std::min(n, (c + 1) * per);
        pool.emplace_back([&, lo, hi, c]() {
            try {
                if (lo < hi) fn(lo, hi, c);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct ChunkResult {
    std::map<std::string, std::vector<double>> grads;
    double sim_sum = 0.0;
    double class_sum = 0.0;
    bool finite = true;
};

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (checkpoint_interval < 1) throw std::invalid_argument("train config: interval must be >= 1");
    if (epochs < 0 || patience < 1 || threads < 1)
        throw std::invalid_argument("train config: epochs/patience/threads ill-formed");
}

void adam_step(const ParamMap& params, const std::map<std::string, std::vector<double>>& grads,
               OptimizerState& state, double lr, double wd, double beta1, double beta2,
               double eps) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (const auto& [name, p] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) continue;
        const auto& g = git->second;
        if (g.size() != p->size()) throw std::invalid_argument("adam: gradient shape mismatch for " + name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != g.size()) m.assign(g.size(), 0.0);
        if (v.size() != g.size()) v.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            // decoupled weight decay before the moment update
            p->data[i] -= lr * wd * p->data[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p->data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
        p->finalize();
    }
}

Checkpoint init_checkpoint(const EncoderConfig& enc_cfg, int class_count, const TrainConfig& tc,
                           const SiameseConfig& sc, const AugmentConfig& ac) {
    enc_cfg.validate();
    tc.validate();
    sc.validate();
    ac.validate();
    if (class_count < 2) throw std::invalid_argument("init: need at least two classes");
    Checkpoint ckpt;
    ckpt.encoder_config = enc_cfg;
    ckpt.class_count = class_count;
    ckpt.train_config = tc;
    ckpt.siamese_config = sc;
    ckpt.augment_config = ac;
    ckpt.saved_mode = tc.mode;
    FloatModeGuard guard(tc.mode);
    ckpt.encoder = build_encoder(enc_cfg, tc.seed);
    ckpt.classifier = build_classifier(class_count, enc_cfg.code_length, tc.seed);
    return ckpt;
}

StepResult train_step(const std::vector<const SignImage*>& batch, const TemplateSet& templates,
                      Checkpoint& ckpt, std::uint64_t step_seed) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const auto& tc = ckpt.train_config;
    const auto& sc = ckpt.siamese_config;
    FloatModeGuard guard(tc.mode);

    // Template branch, always under stop-gradient.
    TemplateCodebook book;
    if (!tc.classifier_only) {
        if (sc.mode == TemplateMode::template_code) {
            book = encode_templates(ckpt.encoder, ckpt.encoder_config, templates);
        } else {
            if (!ckpt.ema_codebook)
                ckpt.ema_codebook = encode_templates(ckpt.encoder, ckpt.encoder_config, templates);
            book = *ckpt.ema_codebook;
        }
    }

    const std::size_t b = batch.size();
    const int k = sc.negatives_per_sample;
    const std::size_t pair_count = b * (1 + static_cast<std::size_t>(k));
    const int threads = std::max(1, std::min<int>(tc.threads, static_cast<int>(b)));

    std::vector<ChunkResult> chunks(threads);
    std::vector<FeatureCode> sample_codes(b);

    run_chunked(b, threads, [&](std::size_t lo, std::size_t hi, int chunk) {
        // Per-chunk parameter clones keep backward accumulation race-free;
        // the numbers are identical to running on the originals.
        EncoderParams enc;
        for (const auto& [name, v] : ckpt.encoder.tensors) {
            enc.tensors[name] = v->detach_copy();
            enc.tensors[name]->requires_grad = true;
        }
        ClassifierParams cls;
        cls.weight = ckpt.classifier.weight->detach_copy();
        cls.weight->requires_grad = true;
        cls.bias = ckpt.classifier.bias->detach_copy();
        cls.bias->requires_grad = true;

        ChunkResult& out = chunks[chunk];
        for (std::size_t i = lo; i < hi; ++i) {
            const SignImage aug =
                compose_augment(*batch[i], ckpt.augment_config, mix_seed(step_seed, 0xa06, i));
            auto img = Value::make({kImageChannels, ckpt.encoder_config.input_size,
                                    ckpt.encoder_config.input_size},
                                   aug.pixels);
            auto code = encode_value(enc, ckpt.encoder_config, img);

            std::vector<ValuePtr> items;
            std::vector<double> coeffs;
            auto lc = class_loss(cls, code, aug.class_id);
            out.class_sum += lc->item();
            items.push_back(lc);
            coeffs.push_back(1.0 / static_cast<double>(b));
            if (!tc.classifier_only) {
                auto pairs =
                    pair_batch({{code, aug.class_id}}, book, k, mix_seed(step_seed, 0x9a12, i));
                for (const auto& pr : pairs) {
                    auto dsq = sum_squares(sub(pr.sample_code, pr.template_code));
                    auto pl = contrastive_loss_value(dsq, pr.gamma, sc.margin);
                    out.sim_sum += pl->item();
                    items.push_back(pl);
                    coeffs.push_back(sc.alpha / static_cast<double>(pair_count));
                }
                if (sc.mode == TemplateMode::prototype_ema) sample_codes[i] = code->data;
            }
            auto total = weighted_sum(items, coeffs);
            if (!std::isfinite(total->item())) out.finite = false;
            backward(total);
        }
        for (const auto& [name, v] : param_map(enc, cls)) {
            v->ensure_grad();
            out.grads[name] = v->grad;
        }
    });

    // Fixed-order reduction across chunks.
    std::map<std::string, std::vector<double>> grads;
    double sim_sum = 0.0, class_sum = 0.0;
    bool finite = true;
    for (const auto& c : chunks) {
        finite = finite && c.finite;
        sim_sum += c.sim_sum;
        class_sum += c.class_sum;
        for (const auto& [name, g] : c.grads) {
            auto& acc = grads[name];
            if (acc.empty())
                acc = g;
            else
                for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
    }

    StepResult res;
    res.loss_sim = tc.classifier_only ? 0.0 : sim_sum / static_cast<double>(pair_count);
    res.loss_class = class_sum / static_cast<double>(b);
    res.loss = combined_loss(res.loss_sim, res.loss_class, tc.classifier_only ? 0.0 : sc.alpha);
    if (!finite || !std::isfinite(res.loss))
        throw NumericalAbort("train_step: non-finite loss encountered");

    if (!tc.classifier_only && sc.mode == TemplateMode::prototype_ema) {
        for (std::size_t i = 0; i < b; ++i)
            update_prototypes_ema(*ckpt.ema_codebook, batch[i]->class_id, sample_codes[i],
                                  sc.ema_decay);
    }

    adam_step(param_map(ckpt.encoder, ckpt.classifier), grads, ckpt.opt, tc.learning_rate,
              tc.weight_decay);
    return res;
}

double validation_accuracy(const Checkpoint& ckpt, const std::vector<SignImage>& images) {
    if (images.empty()) return -1.0;
    std::vector<int> correct(images.size(), 0);
    run_chunked(images.size(), ckpt.train_config.threads, [&](std::size_t lo, std::size_t hi, int) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto code = encode(ckpt.encoder, ckpt.encoder_config, images[i].pixels);
            correct[i] = predict(ckpt.classifier, code).class_id == images[i].class_id ? 1 : 0;
        }
    });
    long hits = 0;
    for (int c : correct) hits += c;
    return static_cast<double>(hits) / static_cast<double>(images.size());
}

TrainResult train(const DatasetSplit& data, const TemplateSet& templates, Checkpoint ckpt,
                  const fs::path& out_dir) {
    if (data.train.empty()) throw std::invalid_argument("train: empty training split");
    if (data.class_count != ckpt.class_count)
        throw std::invalid_argument("train: dataset class count " +
                                    std::to_string(data.class_count) +
                                    " does not match checkpoint " +
                                    std::to_string(ckpt.class_count));
    const auto& tc = ckpt.train_config;
    fs::create_directories(out_dir);

    TrainResult result;
    std::ostringstream log;
    const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
    const std::size_t bpe = (data.train.size() + bs - 1) / bs;
    long global_batch = static_cast<long>(ckpt.epoch) * static_cast<long>(bpe) + ckpt.batch;
    fs::path last_saved;

    double prev_epoch_loss = -1.0;
    int stall = 0;
    for (int epoch = ckpt.epoch; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(data.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle(mix_seed(tc.seed, 0x5f1e, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.below(i)]);

        double epoch_l = 0.0, epoch_sim = 0.0, epoch_cls = 0.0;
        std::size_t steps = 0;
        for (std::size_t bi = (epoch == ckpt.epoch ? static_cast<std::size_t>(ckpt.batch) : 0);
             bi < bpe; ++bi) {
            std::vector<const SignImage*> batch;
            for (std::size_t i = bi * bs; i < std::min(data.train.size(), (bi + 1) * bs); ++i)
                batch.push_back(&data.train[order[i]]);
            StepResult res;
            try {
                res = train_step(batch, templates, ckpt,
                                 mix_seed(tc.seed, static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(bi)));
            } catch (const NumericalAbort& e) {
                throw NumericalAbort(std::string(e.what()) + "; last good checkpoint: " +
                                     (last_saved.empty() ? "<none>" : last_saved.string()));
            }
            ckpt.epoch = epoch;
            ckpt.batch = static_cast<int>(bi) + 1;
            ++global_batch;
            epoch_l += res.loss;
            epoch_sim += res.loss_sim;
            epoch_cls += res.loss_class;
            ++steps;
            log << epoch << '\t' << global_batch << '\t' << res.loss << '\t' << res.loss_sim
                << '\t' << res.loss_class << "\t-\n";
            if (global_batch % tc.checkpoint_interval == 0) {
                char name[64];
                std::snprintf(name, sizeof(name), "ckpt_%06ld.ieces", global_batch);
                last_saved = out_dir / name;
                save_checkpoint(last_saved, ckpt);
                result.checkpoint_files.push_back(last_saved);
            }
        }
        ckpt.epoch = epoch + 1;
        ckpt.batch = 0;
        const double val = validation_accuracy(ckpt, data.validation);
        if (steps > 0) {
            epoch_l /= static_cast<double>(steps);
            epoch_sim /= static_cast<double>(steps);
            epoch_cls /= static_cast<double>(steps);
        }
        log << epoch << '\t' << global_batch << '\t' << epoch_l << '\t' << epoch_sim << '\t'
            << epoch_cls << '\t';
        if (val >= 0.0)
            log << val << '\n';
        else
            log << "-\n";
        if (val > ckpt.best_val_acc) {
            ckpt.best_val_acc = val;
            const fs::path best = out_dir / "best.ieces";
            save_checkpoint(best, ckpt);
            last_saved = best;
        }
        // convergence: relative train-loss improvement below 1e-4 for `patience` epochs
        if (prev_epoch_loss >= 0.0) {
            const double rel = (prev_epoch_loss - epoch_l) / std::max(prev_epoch_loss, 1e-12);
            stall = rel < 1e-4 ? stall + 1 : 0;
        }
        prev_epoch_loss = epoch_l;
        if (stall >= tc.patience) break;
    }

    const fs::path final_path = out_dir / "final.ieces";
    save_checkpoint(final_path, ckpt);
    result.checkpoint_files.push_back(final_path);
    result.checkpoint = std::move(ckpt);
    result.log = log.str();
    return result;
}

// ---- checkpoint serialization -----------------------------------------

namespace {

constexpr char kMagic[8] = {'I', 'E', 'C', 'E', 'S', 'N', 'E', 'T'};

struct Section {
    std::string name;
    std::vector<int> dims;
    std::uint8_t dtype;   // 0: f32 LE, 1: f64 LE
    std::vector<double> data;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back(v >> 8);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

std::vector<double> train_config_doubles(const TrainConfig& t) {
    return {t.learning_rate,
            t.weight_decay,
            static_cast<double>(t.batch_size),
            static_cast<double>(t.epochs),
            static_cast<double>(t.patience),
            static_cast<double>(t.seed & 0xffffffffull),
            static_cast<double>(t.seed >> 32),
            static_cast<double>(t.checkpoint_interval),
            t.mode == FloatMode::f64 ? 1.0 : 0.0,
            static_cast<double>(t.threads),
            t.classifier_only ? 1.0 : 0.0};
}

TrainConfig train_config_from(const std::vector<double>& v) {
    if (v.size() != 11) throw CheckpointError(CheckpointError::Kind::malformed, "bad train config");
    TrainConfig t;
    t.learning_rate = v[0];
    t.weight_decay = v[1];
    t.batch_size = static_cast<int>(v[2]);
    t.epochs = static_cast<int>(v[3]);
    t.patience = static_cast<int>(v[4]);
    t.seed = static_cast<std::uint64_t>(v[5]) | (static_cast<std::uint64_t>(v[6]) << 32);
    t.checkpoint_interval = static_cast<int>(v[7]);
    t.mode = v[8] != 0.0 ? FloatMode::f64 : FloatMode::f32;
    t.threads = static_cast<int>(v[9]);
    t.classifier_only = v[10] != 0.0;
    return t;
}

std::vector<double> siamese_config_doubles(const SiameseConfig& s) {
    return {s.margin, s.alpha, static_cast<double>(s.negatives_per_sample),
            s.mode == TemplateMode::prototype_ema ? 1.0 : 0.0, s.ema_decay};
}

SiameseConfig siamese_config_from(const std::vector<double>& v) {
    if (v.size() != 5) throw CheckpointError(CheckpointError::Kind::malformed, "bad siamese config");
    SiameseConfig s;
    s.margin = v[0];
    s.alpha = v[1];
    s.negatives_per_sample = static_cast<int>(v[2]);
    s.mode = v[3] != 0.0 ? TemplateMode::prototype_ema : TemplateMode::template_code;
    s.ema_decay = v[4];
    return s;
}

std::vector<double> augment_config_doubles(const AugmentConfig& a) {
    return {a.erase_prob, a.erase_area_lo, a.erase_area_hi, a.erase_aspect_lo, a.erase_aspect_hi,
            static_cast<double>(a.blur_len_lo), static_cast<double>(a.blur_len_hi),
            a.blur_angle_lo, a.blur_angle_hi, a.rotate_lo, a.rotate_hi,
            static_cast<double>(a.scale_lo), static_cast<double>(a.scale_hi),
            a.perspective_jitter, a.rotate_prob, a.scale_prob, a.perspective_prob, a.blur_prob};
}

AugmentConfig augment_config_from(const std::vector<double>& v) {
    if (v.size() != 18) throw CheckpointError(CheckpointError::Kind::malformed, "bad augment config");
    AugmentConfig a;
    a.erase_prob = v[0];
    a.erase_area_lo = v[1];
    a.erase_area_hi = v[2];
    a.erase_aspect_lo = v[3];
    a.erase_aspect_hi = v[4];
    a.blur_len_lo = static_cast<int>(v[5]);
    a.blur_len_hi = static_cast<int>(v[6]);
    a.blur_angle_lo = v[7];
    a.blur_angle_hi = v[8];
    a.rotate_lo = v[9];
    a.rotate_hi = v[10];
    a.scale_lo = static_cast<int>(v[11]);
    a.scale_hi = static_cast<int>(v[12]);
    a.perspective_jitter = v[13];
    a.rotate_prob = v[14];
    a.scale_prob = v[15];
    a.perspective_prob = v[16];
    a.blur_prob = v[17];
    return a;
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    const std::uint8_t param_dtype = ckpt.train_config.mode == FloatMode::f64 ? 1 : 0;
    std::vector<Section> sections;
    auto meta = [&](const std::string& name, std::vector<double> v) {
        sections.push_back({name, {static_cast<int>(v.size())}, 1, std::move(v)});
    };
    auto tensor = [&](const std::string& name, const ValuePtr& v) {
        sections.push_back({name, v->shape, param_dtype, v->data});
    };
    // Optimizer state and EMA templates are kept in f64 regardless of the
    // compute mode so a round trip restores them bit-exactly.
    auto raw = [&](const std::string& name, std::vector<int> dims, const std::vector<double>& v) {
        sections.push_back({name, std::move(dims), 1, v});
    };

    meta("cfg/encoder", ckpt.encoder_config.serialize());
    meta("cfg/train", train_config_doubles(ckpt.train_config));
    meta("cfg/siamese", siamese_config_doubles(ckpt.siamese_config));
    meta("cfg/augment", augment_config_doubles(ckpt.augment_config));
    meta("meta/state",
         {static_cast<double>(ckpt.class_count), static_cast<double>(ckpt.epoch),
          static_cast<double>(ckpt.batch), ckpt.best_val_acc,
          static_cast<double>(ckpt.opt.step),
          ckpt.train_config.mode == FloatMode::f64 ? 1.0 : 0.0});
    for (const auto& [name, v] : ckpt.encoder.tensors) tensor("enc/" + name, v);
    tensor("cls/w", ckpt.classifier.weight);
    tensor("cls/b", ckpt.classifier.bias);
    for (const auto& [name, m] : ckpt.opt.m)
        raw("opt/m/" + name, {static_cast<int>(m.size())}, m);
    for (const auto& [name, v] : ckpt.opt.v)
        raw("opt/v/" + name, {static_cast<int>(v.size())}, v);
    if (ckpt.ema_codebook) {
        std::vector<double> flat;
        for (const auto& code : ckpt.ema_codebook->codes)
            flat.insert(flat.end(), code.begin(), code.end());
        raw("ema/codebook",
            {ckpt.ema_codebook->class_count(),
             ckpt.ema_codebook->class_count() ? static_cast<int>(ckpt.ema_codebook->codes[0].size())
                                              : 0},
            flat);
    }

    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 8);
    put_u32(buf, ckpt.version);
    put_u32(buf, static_cast<std::uint32_t>(sections.size()));
    for (const auto& s : sections) {
        put_u16(buf, static_cast<std::uint16_t>(s.name.size()));
        buf.insert(buf.end(), s.name.begin(), s.name.end());
        buf.push_back(static_cast<std::uint8_t>(s.dims.size()));
        for (int d : s.dims) put_u32(buf, static_cast<std::uint32_t>(d));
        buf.push_back(s.dtype);
        if (s.dtype == 0) {
            for (double x : s.data) {
                const float f = static_cast<float>(x);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                put_u32(buf, bits);
            }
        } else {
            for (double x : s.data) {
                std::uint64_t bits;
                std::memcpy(&bits, &x, 8);
                put_u32(buf, static_cast<std::uint32_t>(bits & 0xffffffffull));
                put_u32(buf, static_cast<std::uint32_t>(bits >> 32));
            }
        }
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 20)
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint file too short");
    if (std::memcmp(buf.data(), kMagic, 8) != 0)
        throw CheckpointError(CheckpointError::Kind::bad_magic, "bad checkpoint magic");

    std::size_t pos = 8;
    auto need = [&](std::size_t n) {
        if (pos + n > buf.size() - 4)
            throw CheckpointError(CheckpointError::Kind::truncated, "truncated checkpoint");
    };
    auto get_u16 = [&]() {
        need(2);
        const std::uint16_t v = buf[pos] | (buf[pos + 1] << 8);
        pos += 2;
        return v;
    };
    auto get_u32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    };

    const std::uint32_t version = get_u32();
    const std::uint32_t count = get_u32();

    std::map<std::string, Section> sections;
    for (std::uint32_t s = 0; s < count; ++s) {
        Section sec;
        const std::uint16_t name_len = get_u16();
        need(name_len);
        sec.name.assign(reinterpret_cast<const char*>(buf.data() + pos), name_len);
        pos += name_len;
        need(1);
        const std::uint8_t rank = buf[pos++];
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            sec.dims.push_back(static_cast<int>(get_u32()));
            numel *= static_cast<std::size_t>(sec.dims.back());
        }
        need(1);
        sec.dtype = buf[pos++];
        if (sec.dtype > 1)
            throw CheckpointError(CheckpointError::Kind::malformed, "unknown dtype");
        sec.data.resize(numel);
        if (sec.dtype == 0) {
            for (std::size_t i = 0; i < numel; ++i) {
                const std::uint32_t bits = get_u32();
                float f;
                std::memcpy(&f, &bits, 4);
                sec.data[i] = static_cast<double>(f);   // exact widening
            }
        } else {
            for (std::size_t i = 0; i < numel; ++i) {
                const std::uint64_t lo = get_u32();
                const std::uint64_t hi = get_u32();
                const std::uint64_t bits = lo | (hi << 32);
                double d;
                std::memcpy(&d, &bits, 8);
                sec.data[i] = d;
            }
        }
        sections[sec.name] = std::move(sec);
    }

    // Structural damage (truncation, bad lengths) is reported above; only an
    // intact layout gets as far as the integrity and version checks.
    const std::uint32_t stored_crc = buf[buf.size() - 4] | (buf[buf.size() - 3] << 8) |
                                     (buf[buf.size() - 2] << 16) |
                                     (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw CheckpointError(CheckpointError::Kind::checksum_mismatch,
                              "checkpoint checksum mismatch");
    if (version != 1)
        throw CheckpointError(CheckpointError::Kind::bad_version,
                              "unknown checkpoint version " + std::to_string(version));

    auto require = [&](const std::string& name) -> Section& {
        auto it = sections.find(name);
        if (it == sections.end())
            throw CheckpointError(CheckpointError::Kind::malformed, "missing section " + name);
        return it->second;
    };

    Checkpoint ckpt;
    ckpt.version = version;
    ckpt.encoder_config = EncoderConfig::deserialize(require("cfg/encoder").data);
    ckpt.train_config = train_config_from(require("cfg/train").data);
    ckpt.siamese_config = siamese_config_from(require("cfg/siamese").data);
    ckpt.augment_config = augment_config_from(require("cfg/augment").data);
    const auto& st = require("meta/state").data;
    if (st.size() != 6) throw CheckpointError(CheckpointError::Kind::malformed, "bad meta/state");
    ckpt.class_count = static_cast<int>(st[0]);
    ckpt.epoch = static_cast<int>(st[1]);
    ckpt.batch = static_cast<int>(st[2]);
    ckpt.best_val_acc = st[3];
    ckpt.opt.step = static_cast<std::int64_t>(st[4]);
    ckpt.saved_mode = st[5] != 0.0 ? FloatMode::f64 : FloatMode::f32;

    for (auto& [name, sec] : sections) {
        if (name.rfind("enc/", 0) == 0) {
            auto v = Value::make(sec.dims, sec.data, true);
            v->requires_grad = true;
            ckpt.encoder.tensors[name.substr(4)] = v;
        } else if (name == "cls/w") {
            ckpt.classifier.weight = Value::make(sec.dims, sec.data, true);
            ckpt.classifier.weight->requires_grad = true;
        } else if (name == "cls/b") {
            ckpt.classifier.bias = Value::make(sec.dims, sec.data, true);
            ckpt.classifier.bias->requires_grad = true;
        } else if (name.rfind("opt/m/", 0) == 0) {
            ckpt.opt.m[name.substr(6)] = sec.data;
        } else if (name.rfind("opt/v/", 0) == 0) {
            ckpt.opt.v[name.substr(6)] = sec.data;
        } else if (name == "ema/codebook") {
            TemplateCodebook book;
            if (sec.dims.size() == 2 && sec.dims[0] > 0) {
                const int c = sec.dims[0], len = sec.dims[1];
                for (int i = 0; i < c; ++i)
                    book.codes.emplace_back(sec.data.begin() + static_cast<std::size_t>(i) * len,
                                            sec.data.begin() + static_cast<std::size_t>(i + 1) * len);
            }
            ckpt.ema_codebook = std::move(book);
        }
    }
    if (!ckpt.classifier.weight || !ckpt.classifier.bias)
        throw CheckpointError(CheckpointError::Kind::malformed, "missing classifier parameters");
    return ckpt;
}

}  // namespace ieces
