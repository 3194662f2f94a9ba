#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ieces/evaluator.hpp"
#include "ieces/rng.hpp"
#include "ieces/theory.hpp"

namespace {

using namespace ieces;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

void echo_config(const Checkpoint& ckpt) {
    const auto& t = ckpt.train_config;
    const auto& s = ckpt.siamese_config;
    std::cout << "config: lr=" << t.learning_rate << " wd=" << t.weight_decay
              << " batch=" << t.batch_size << " epochs=" << t.epochs
              << " alpha=" << s.alpha << " margin=" << s.margin << " k="
              << s.negatives_per_sample << " mode="
              << (s.mode == TemplateMode::template_code ? "template" : "ema")
              << " float=" << (t.mode == FloatMode::f64 ? "f64" : "f32")
              << " threads=" << t.threads << " seed=" << t.seed << "\n";
}

int cmd_train(const std::string& data, const std::string& out, double lr, double wd, int batch,
              double alpha, double margin, const std::string& mode, int epochs,
              std::uint64_t seed, bool f64, int threads, bool print_config,
              const std::string& resume) {
    TrainConfig tc;
    tc.learning_rate = lr;
    tc.weight_decay = wd;
    tc.batch_size = batch;
    tc.epochs = epochs;
    tc.seed = seed;
    tc.mode = f64 ? FloatMode::f64 : FloatMode::f32;
    tc.threads = threads;
    tc.classifier_only = alpha == 0.0;
    SiameseConfig sc;
    sc.alpha = alpha;
    sc.margin = margin;
    sc.mode = mode == "ema" ? TemplateMode::prototype_ema : TemplateMode::template_code;
    AugmentConfig ac;

    auto [split, templates] = load_data(data, seed);
    Checkpoint ckpt;
    if (!resume.empty()) {
        ckpt = load_checkpoint(resume);
        if (ckpt.class_count != split.class_count)
            throw std::runtime_error("resume: dataset class count does not match checkpoint");
    } else {
        ckpt = init_checkpoint(EncoderConfig{}, split.class_count, tc, sc, ac);
    }
    echo_config(ckpt);
    if (print_config) return kExitOk;

    std::filesystem::create_directories(out);
    write_split_manifest(std::filesystem::path(out) / "manifest.tsv", split);
    auto result = train(split, templates, std::move(ckpt), out);
    std::ofstream log(std::filesystem::path(out) / "train.log");
    log << result.log;
    std::cout << "final val accuracy: "
              << validation_accuracy(result.checkpoint, split.validation) << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data,
             const std::string& conditions, std::uint64_t seed, const std::string& out,
             bool print_config) {
    auto ckpt = load_checkpoint(ckpt_path);
    echo_config(ckpt);
    if (print_config) return kExitOk;
    auto [split, templates] = load_data(data, seed);
    if (split.class_count != ckpt.class_count)
        throw std::runtime_error("eval: dataset class count " +
                                 std::to_string(split.class_count) +
                                 " does not match checkpoint " +
                                 std::to_string(ckpt.class_count));
    std::filesystem::create_directories(out);
    const std::filesystem::path dir(out);

    const bool all = conditions == "all";
    const bool want_clean = all || conditions.find("clean") != std::string::npos;
    const bool want_blur = all || conditions.find("blur") != std::string::npos;
    const bool want_occ = all || conditions.find("occ") != std::string::npos;
    if (want_blur || want_occ) {
        auto rr = robustness_report(ckpt, split.test, ckpt.augment_config, seed);
        if (want_clean)
            write_metrics_report(dir / "clean.txt", dir / "clean.csv", rr.clean);
        if (want_blur)
            write_metrics_report(dir / "blur.txt", dir / "blur.csv", rr.blurred);
        if (want_occ)
            write_metrics_report(dir / "occ.txt", dir / "occ.csv", rr.occluded);
        std::ofstream summary(dir / "summary.txt");
        summary.precision(6);
        summary << "clean_accuracy=" << rr.clean.accuracy << "\n"
                << "blur_accuracy=" << rr.blurred.accuracy << "\n"
                << "occ_accuracy=" << rr.occluded.accuracy << "\n"
                << "blur_delta=" << rr.blur_delta << "\n"
                << "occ_delta=" << rr.occlusion_delta << "\n";
        std::cout << "clean " << rr.clean.accuracy << ", blur " << rr.blurred.accuracy
                  << ", occ " << rr.occluded.accuracy << "\n";
    } else {
        auto report = metrics(evaluate(ckpt, split.test));
        write_metrics_report(dir / "clean.txt", dir / "clean.csv", report);
        std::cout << "clean " << report.accuracy << "\n";
    }
    return kExitOk;
}

int cmd_infer(const std::string& ckpt_path, const std::vector<std::string>& paths) {
    auto ckpt = load_checkpoint(ckpt_path);
    reset_encoder_counters();
    int failures = 0;
    double total_ms = 0.0;
    int done = 0;
    for (const auto& p : paths) {
        try {
            const auto raw = read_ppm(p);
            SignImage img;
            img.pixels = normalize(raw);
            const auto t0 = std::chrono::steady_clock::now();
            const auto code = encode(ckpt.encoder, ckpt.encoder_config, img.pixels);
            const auto pred = predict(ckpt.classifier, code);
            const auto t1 = std::chrono::steady_clock::now();
            const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            total_ms += ms;
            ++done;
            std::cout << p << '\t' << pred.class_id << '\t' << pred.max_probability << "\n";
            std::cout << "# time " << ms << " ms\n";
        } catch (const std::exception& e) {
            std::cerr << "error: " << p << ": " << e.what() << "\n";
            ++failures;
        }
    }
    if (done > 0) std::cout << "# mean time " << total_ms / done << " ms\n";
    if (encoder_invocations() != done || template_encoder_invocations() != 0) {
        std::cerr << "error: single-branch check failed\n";
        return kExitNumerical;
    }
    return failures ? kExitData : kExitOk;
}

int cmd_augment(const std::string& in, const std::string& out, const std::string& op,
                std::uint64_t seed) {
    const auto raw = read_ppm(in);
    SignImage img;
    img.pixels = normalize(raw);
    img.class_id = 0;
    std::filesystem::create_directories(out);
    const std::filesystem::path dir(out);
    AugmentConfig ac;
    auto name = [&](const std::string& o) {
        return dir / (o + "_s" + std::to_string(seed) + ".ppm");
    };
    if (op == "erase") {
        AugmentConfig forced = ac;
        forced.erase_prob = 1.0;
        write_ppm(name(op), random_erase(img, forced, seed));
    } else if (op == "blur") {
        Rng rng(mix_seed(seed, 0xb102));
        const double len = rng.uniform(static_cast<double>(ac.blur_len_lo),
                                       static_cast<double>(ac.blur_len_hi));
        const double ang = rng.uniform(ac.blur_angle_lo, ac.blur_angle_hi);
        write_ppm(name(op), motion_blur(img, len, ang));
    } else if (op == "rotate") {
        Rng rng(mix_seed(seed, 0x2074));
        write_ppm(name(op), rotate(img, rng.uniform(ac.rotate_lo, ac.rotate_hi)));
    } else if (op == "perspective") {
        write_ppm(name(op), perspective_jitter(img, ac.perspective_jitter, seed));
    } else if (op == "compose") {
        AugmentConfig forced = ac;
        forced.erase_prob = 1.0;
        forced.blur_prob = 1.0;
        forced.rotate_prob = 1.0;
        Rng rng(mix_seed(seed, 0xb102));
        write_ppm(name("blur"),
                  motion_blur(img,
                              rng.uniform(static_cast<double>(ac.blur_len_lo),
                                          static_cast<double>(ac.blur_len_hi)),
                              rng.uniform(ac.blur_angle_lo, ac.blur_angle_hi)));
        write_ppm(name("erase"), random_erase(img, forced, seed));
        write_ppm(name("compose"), compose_augment(img, forced, seed));
    } else {
        std::cerr << "error: unknown op '" << op << "'\n";
        return kExitUsage;
    }
    return kExitOk;
}

int cmd_heatmap(const std::string& ckpt_path, const std::string& data, const std::string& out,
                std::uint64_t seed) {
    auto ckpt = load_checkpoint(ckpt_path);
    auto [split, templates] = load_data(data, seed);
    if (split.class_count != ckpt.class_count)
        throw std::runtime_error("heatmap: dataset class count does not match checkpoint");
    const auto codebook = encode_templates(ckpt.encoder, ckpt.encoder_config, templates);
    const auto hm = heatmap(ckpt, codebook, split.test);
    std::filesystem::create_directories(out);
    write_heatmap_csv(std::filesystem::path(out) / "heatmap.csv", hm);
    write_heatmap_pgm(std::filesystem::path(out) / "heatmap.pgm", hm);
    const auto stats = heatmap_stats(hm);
    std::cout << "diagonal argmin fraction: " << stats.diagonal_argmin_fraction
              << "\nintra mean: " << stats.intra_mean << "\ninter mean: " << stats.inter_mean
              << "\n";
    return kExitOk;
}

int cmd_selfcheck(int grid) {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok, const std::string& note = "") {
        std::cout << (ok ? "pass" : "FAIL") << "  " << name;
        if (!note.empty()) std::cout << "  (" << note << ")";
        std::cout << "\n";
        if (!ok) ++failures;
    };

    {
        FloatModeGuard guard(FloatMode::f64);
        Rng rng(42);
        auto mk = [&](std::vector<int> shape) {
            auto v = Value::make(shape, true);
            for (auto& x : v->data) x = rng.uniform(-1.0, 1.0);
            v->requires_grad = true;
            return v;
        };
        auto kernel = mk({2, 3, 3, 3});
        auto kbias = mk({2});
        auto point = mk({3, 8, 8});
        const double conv_err = grad_check(
            [&](const ValuePtr& p) { return sum_squares(conv2d(p, kernel, kbias, 1, 1)); },
            point);
        check("gradient oracle: conv2d", conv_err <= 1e-4,
              "worst rel err " + std::to_string(conv_err));
        const double relu_err = grad_check(
            [&](const ValuePtr& p) { return sum_squares(relu(p)); }, mk({4, 5, 5}));
        check("gradient oracle: relu", relu_err <= 1e-4);
        auto enc_cfg = reduced_encoder_config();
        auto enc = build_encoder(enc_cfg, 7);
        auto img = mk({3, enc_cfg.input_size, enc_cfg.input_size});
        for (auto& x : img->data) x = std::abs(x);
        // smaller step: the pooling stack is dense with kinks at this depth
        const double enc_err = grad_check(
            [&](const ValuePtr& p) { return sum_squares(encode_value(enc, enc_cfg, p)); }, img,
            1e-5);
        check("gradient oracle: reduced encoder", enc_err <= 1e-3,
              "worst rel err " + std::to_string(enc_err));
    }

    {
        Rng rng(7);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const double d = rng.uniform(0.0, 5.0);
            const int gamma = rng.below(2) ? 1 : 0;
            const double m = 6.25;
            const double expect = gamma == 0 ? d * d : std::max(0.0, m - d * d);
            worst = std::max(worst, std::abs(contrastive_loss(d, gamma, m) - expect));
        }
        check("loss oracle: contrastive", worst <= 1e-12);
    }

    bool boundary_ok = true;
    std::string boundary_note;
    for (double m : {1.0, 6.25, 25.0})
        for (double ms : {0.1, 0.5, 1.0}) {
            const auto r = boundary_gradient_check(m, ms, grid);
            if (!r.pass) {
                boundary_ok = false;
                boundary_note = "m=" + std::to_string(m) + " m_sep=" + std::to_string(ms);
            }
        }
    check("boundary gradient condition", boundary_ok, boundary_note);

    bool minimizer_ok = true;
    for (double m : {1.0, 6.25, 25.0})
        for (double ms : {0.1, 0.5}) {
            if (m <= ms * ms) continue;
            const auto r = boundary_minimizer(m, ms);
            if (std::abs(r.d_star - (std::sqrt(m) - ms)) > 1e-6) minimizer_ok = false;
        }
    check("boundary minimizer closed form", minimizer_ok);

    const auto probe = convexity_probe(6.25, 20000, 1);
    std::cout << "info  convexity violation fraction " << probe.violation_fraction
              << " (informational; the hinge branch is not globally convex)\n";

    if (failures) {
        std::cerr << "error: " << failures << " selfcheck properties failed\n";
        return kExitNumerical;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"traffic-sign recognition toolkit"};
    app.require_subcommand(1);

    std::string data, out = "out", ckpt_path, conditions = "clean,blur,occ", in_path;
    std::string mode = "template", op = "compose", resume;
    std::vector<std::string> images;
    double lr = 3e-4, wd = 2e-7, alpha = 0.1, margin = 6.25;
    int batch = 64, epochs = 10, threads = 4, grid = 100;
    std::uint64_t seed = 0;
    bool f64 = false, print_config = false;

    auto* t = app.add_subcommand("train", "train a model");
    t->add_option("--data", data)->required();
    t->add_option("--out", out);
    t->add_option("--lr", lr);
    t->add_option("--wd", wd);
    t->add_option("--batch", batch);
    t->add_option("--alpha", alpha);
    t->add_option("--margin", margin);
    t->add_option("--mode", mode)->check(CLI::IsMember({"template", "ema"}));
    t->add_option("--epochs", epochs);
    t->add_option("--seed", seed);
    t->add_option("--threads", threads);
    t->add_option("--resume", resume);
    t->add_flag("--f64", f64);
    t->add_flag("--print-config", print_config);

    auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
    e->add_option("--ckpt", ckpt_path)->required();
    e->add_option("--data", data)->required();
    e->add_option("--conditions", conditions);
    e->add_option("--seed", seed);
    e->add_option("--out", out);
    e->add_flag("--print-config", print_config);

    auto* i = app.add_subcommand("infer", "classify images");
    i->add_option("--ckpt", ckpt_path)->required();
    i->add_option("--image", images)->required();

    auto* a = app.add_subcommand("augment", "corruption previews");
    a->add_option("--in", in_path)->required();
    a->add_option("--out", out);
    a->add_option("--op", op);
    a->add_option("--seed", seed);

    auto* h = app.add_subcommand("heatmap", "code-distance heatmap");
    h->add_option("--ckpt", ckpt_path)->required();
    h->add_option("--data", data)->required();
    h->add_option("--out", out);
    h->add_option("--seed", seed);

    auto* s = app.add_subcommand("selfcheck", "numerical self checks");
    s->add_option("--grid", grid);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) ? kExitUsage : kExitOk;
    }

    try {
        if (t->parsed())
            return cmd_train(data, out, lr, wd, batch, alpha, margin, mode, epochs, seed, f64,
                             threads, print_config, resume);
        if (e->parsed()) return cmd_eval(ckpt_path, data, conditions, seed, out, print_config);
        if (i->parsed()) return cmd_infer(ckpt_path, images);
        if (a->parsed()) return cmd_augment(in_path, out, op, seed);
        if (h->parsed()) return cmd_heatmap(ckpt_path, data, out, seed);
        if (s->parsed()) return cmd_selfcheck(grid);
    } catch (const ieces::NumericalAbort& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
