#include "ieces/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ieces/augment.hpp"
#include "ieces/encoder.hpp"
#include "ieces/rng.hpp"

namespace ieces {

namespace fs = std::filesystem;

namespace {

constexpr int N = kImageSize;

[[noreturn]] void data_error(const std::string& msg) { throw std::runtime_error(msg); }

int ppm_token(std::istream& in) {
    // whitespace/comment-aware header token
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            in.unget();
            int v;
            if (!(in >> v)) data_error("ppm: malformed header token");
            return v;
        }
    }
    data_error("ppm: truncated header");
}

double sample_edge_bilinear(const std::vector<double>& p, int c, double y, double x, int h,
                            int w) {
    auto at = [&](int yy, int xx) {
        yy = std::clamp(yy, 0, h - 1);
        xx = std::clamp(xx, 0, w - 1);
        return p[(static_cast<std::size_t>(c) * h + yy) * w + xx];
    };
    const double fy = std::floor(y), fx = std::floor(x);
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const double wy = y - fy, wx = x - fx;
    return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
           wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
}

// --- synthetic archetype rendering -------------------------------------

// Signed inset from the shape boundary; >= 0 means inside.
double shape_margin(int shape, double dx, double dy) {
    const double r = 20.0;
    switch (shape) {
        case 0:  // circle
            return r - std::sqrt(dx * dx + dy * dy);
        case 1: {  // triangle, apex up (clockwise in y-down image coords)
            const double x0[3] = {0.0, 23.0, -23.0};
            const double y0[3] = {-23.0, 22.0, 22.0};
            double m = 1e9;
            for (int i = 0; i < 3; ++i) {
                const int j = (i + 1) % 3;
                const double ex = x0[j] - x0[i], ey = y0[j] - y0[i];
                const double len = std::sqrt(ex * ex + ey * ey);
                // interior lies to the left of each directed edge
                const double d = (ex * (dy - y0[i]) - ey * (dx - x0[i])) / len;
                m = std::min(m, d);
            }
            return m;
        }
        case 2:  // octagon, kept visibly smaller than the circle
            return std::min(0.78 * r - std::max(std::fabs(dx), std::fabs(dy)),
                            (1.10 * r - (std::fabs(dx) + std::fabs(dy))) / std::sqrt(2.0));
        case 3:  // square
            return 0.9 * r - std::max(std::fabs(dx), std::fabs(dy));
        default:  // diamond
            return (1.25 * r - (std::fabs(dx) + std::fabs(dy))) / std::sqrt(2.0);
    }
}

bool glyph_hit(int glyph, double dx, double dy) {
    switch (glyph) {
        case 0:  // two horizontal bars ("digit" block)
            return std::fabs(dx) <= 8.0 &&
                   ((dy >= -7.0 && dy <= -3.0) || (dy >= 3.0 && dy <= 7.0));
        case 1:  // upward arrow
            return (std::fabs(dx) <= 2.0 && dy >= -9.0 && dy <= 10.0) ||
                   (dy >= -10.0 && dy <= -4.0 && std::fabs(dx) <= -dy - 3.0);
        default:  // single bar
            return std::fabs(dx) <= 10.0 && std::fabs(dy) <= 3.0;
    }
}

SignImage render_template(int cls) {
    const int shape = cls % 5;
    const int color = (cls / 5) % 3;
    const int glyph = (cls / 15) % 3;
    const double rim[3][3] = {{0.85, 0.08, 0.08}, {0.08, 0.18, 0.85}, {0.90, 0.78, 0.08}};

    SignImage img;
    img.pixels.assign(static_cast<std::size_t>(kImageChannels) * N * N, 0.0);
    img.class_id = cls;
    img.tag = CorruptionTag::clean;
    img.source_id = "syn/template/" + std::to_string(cls);
    const double cc = (N - 1) / 2.0;
    for (int y = 0; y < N; ++y) {
        for (int x = 0; x < N; ++x) {
            const double dx = x - cc, dy = y - cc;
            const double m = shape_margin(shape, dx, dy);
            double px[3] = {0.55, 0.55, 0.55};
            if (m >= 0.0) {
                if (m < 3.5) {
                    px[0] = rim[color][0];
                    px[1] = rim[color][1];
                    px[2] = rim[color][2];
                } else {
                    px[0] = px[1] = px[2] = 0.95;
                    if (m >= 4.5 && glyph_hit(glyph, dx, dy)) px[0] = px[1] = px[2] = 0.05;
                }
            }
            for (int c = 0; c < 3; ++c)
                img.pixels[(static_cast<std::size_t>(c) * N + y) * N + x] = px[c];
        }
    }
    return img;
}

SignImage jitter_sample(const SignImage& tmpl, Rng& rng) {
    SignImage out = rotate(tmpl, rng.uniform(-5.0, 5.0));
    const double ty = rng.uniform(-1.5, 1.5), tx = rng.uniform(-1.5, 1.5);
    SignImage shifted = out;
    for (int c = 0; c < kImageChannels; ++c)
        for (int y = 0; y < N; ++y)
            for (int x = 0; x < N; ++x)
                shifted.pixels[(static_cast<std::size_t>(c) * N + y) * N + x] =
                    sample_edge_bilinear(out.pixels, c, y - ty, x - tx, N, N);
    for (double& v : shifted.pixels)
        v = std::clamp(v + rng.normal(0.0, 0.02), 0.0, 1.0);
    return shifted;
}

SignImage from_raw(const RawImage& raw, int cls, const std::string& source) {
    SignImage img;
    img.pixels = normalize(raw);
    img.class_id = cls;
    img.tag = CorruptionTag::clean;
    img.source_id = source;
    return img;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, const std::string& ext) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<int, fs::path>> class_dirs(const fs::path& root) {
    std::vector<std::pair<int, fs::path>> out;
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_directory()) continue;
        const std::string name = e.path().filename().string();
        if (name.empty() || !std::all_of(name.begin(), name.end(),
                                         [](char c) { return std::isdigit(c); }))
            continue;
        out.emplace_back(std::stoi(name), e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct GtsrbRow {
    std::string filename;
    int width, height, x1, y1, x2, y2, class_id;
};

std::vector<GtsrbRow> parse_gtsrb_csv(const fs::path& csv) {
    std::ifstream in(csv);
    if (!in) data_error("gtsrb: cannot open " + csv.string());
    std::string line;
    if (!std::getline(in, line)) data_error("gtsrb: empty annotation file " + csv.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId")
        data_error("gtsrb: unexpected CSV header in " + csv.string() + ": " + line);

    std::vector<GtsrbRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ';')) fields.push_back(field);
        if (fields.size() != 8)
            data_error("gtsrb: malformed row at " + csv.string() + ":" + std::to_string(lineno));
        GtsrbRow r;
        try {
            r.filename = fields[0];
            r.width = std::stoi(fields[1]);
            r.height = std::stoi(fields[2]);
            r.x1 = std::stoi(fields[3]);
            r.y1 = std::stoi(fields[4]);
            r.x2 = std::stoi(fields[5]);
            r.y2 = std::stoi(fields[6]);
            r.class_id = std::stoi(fields[7]);
        } catch (const std::exception&) {
            data_error("gtsrb: malformed row at " + csv.string() + ":" + std::to_string(lineno));
        }
        if (r.class_id < 0)
            data_error("gtsrb: unknown class id at " + csv.string() + ":" + std::to_string(lineno));
        rows.push_back(r);
    }
    return rows;
}

SignImage load_gtsrb_sample(const fs::path& dir, const GtsrbRow& row) {
    const fs::path file = dir / row.filename;
    if (!fs::exists(file)) data_error("gtsrb: missing file referenced by CSV: " + file.string());
    RawImage raw = read_ppm(file);
    if (raw.width != row.width || raw.height != row.height)
        data_error("gtsrb: " + file.string() + " size " + std::to_string(raw.width) + "x" +
                   std::to_string(raw.height) + " disagrees with CSV " +
                   std::to_string(row.width) + "x" + std::to_string(row.height));
    // crop to the annotated ROI (inclusive corners), clamped to the frame
    const int x1 = std::clamp(row.x1, 0, raw.width - 1);
    const int y1 = std::clamp(row.y1, 0, raw.height - 1);
    const int x2 = std::clamp(row.x2, x1, raw.width - 1);
    const int y2 = std::clamp(row.y2, y1, raw.height - 1);
    RawImage crop;
    crop.width = x2 - x1 + 1;
    crop.height = y2 - y1 + 1;
    crop.rgb.resize(static_cast<std::size_t>(crop.width) * crop.height * 3);
    for (int y = 0; y < crop.height; ++y)
        for (int x = 0; x < crop.width; ++x)
            for (int c = 0; c < 3; ++c)
                crop.rgb[(static_cast<std::size_t>(y) * crop.width + x) * 3 + c] =
                    raw.rgb[(static_cast<std::size_t>(y + y1) * raw.width + x + x1) * 3 + c];
    return from_raw(crop, row.class_id, file.string());
}

}  // namespace

const char* tag_name(CorruptionTag tag) {
    switch (tag) {
        case CorruptionTag::clean: return "clean";
        case CorruptionTag::motion_blur: return "motion-blur";
        case CorruptionTag::occluded: return "occluded";
        default: return "combined";
    }
}

bool SignImage::valid_shape() const {
    if (pixels.size() != static_cast<std::size_t>(kImageChannels) * N * N) return false;
    for (double v : pixels)
        if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
}

RawImage read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) data_error("ppm: cannot open " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P6") data_error("ppm: " + path.string() + " is not a P6 file");
    RawImage img;
    img.width = ppm_token(in);
    img.height = ppm_token(in);
    const int maxval = ppm_token(in);
    if (maxval != 255) data_error("ppm: " + path.string() + " maxval must be 255");
    in.get();  // the single whitespace byte after maxval
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.rgb.size())
        data_error("ppm: truncated pixel payload in " + path.string());
    return img;
}

void write_ppm(const fs::path& path, const SignImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) data_error("ppm: cannot write " + path.string());
    out << "P6\n" << N << " " << N << "\n255\n";
    for (int y = 0; y < N; ++y)
        for (int x = 0; x < N; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = image.pixels[(static_cast<std::size_t>(c) * N + y) * N + x];
                out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
            }
}

void write_pgm(const fs::path& path, const std::vector<double>& values, int width, int height) {
    if (values.size() != static_cast<std::size_t>(width) * height)
        data_error("pgm: value count does not match extents");
    double lo = values.empty() ? 0.0 : values[0], hi = lo;
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream out(path, std::ios::binary);
    if (!out) data_error("pgm: cannot write " + path.string());
    out << "P5\n" << width << " " << height << "\n255\n";
    for (double v : values)
        out.put(static_cast<char>(std::lround((v - lo) / span * 255.0)));
}

std::vector<double> normalize(const RawImage& raw) {
    if (raw.width < 1 || raw.height < 1) data_error("normalize: empty image");
    // planar in [0,1] first, then direct resize to 48x48
    std::vector<double> planar(static_cast<std::size_t>(3) * raw.height * raw.width);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            for (int c = 0; c < 3; ++c)
                planar[(static_cast<std::size_t>(c) * raw.height + y) * raw.width + x] =
                    raw.rgb[(static_cast<std::size_t>(y) * raw.width + x) * 3 + c] / 255.0;
    if (raw.width == N && raw.height == N) return planar;
    return resize_bilinear(planar, 3, raw.height, raw.width, N, N);
}

std::pair<DatasetSplit, TemplateSet> gen_synthetic(int classes, int per_class,
                                                   std::uint64_t seed) {
    if (classes < 2 || per_class < 2)
        throw std::invalid_argument("gen_synthetic: need C >= 2 and n >= 2");
    if (classes > 45)
        throw std::invalid_argument("gen_synthetic: at most 45 distinct archetypes");

    TemplateSet templates;
    DatasetSplit split;
    split.class_count = classes;
    for (int cls = 0; cls < classes; ++cls) {
        templates.images.push_back(render_template(cls));
        const int n_train = per_class * 7 / 10;
        const int n_val = per_class / 10;
        for (int i = 0; i < per_class; ++i) {
            Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cls) * 100003 + i));
            SignImage s = jitter_sample(templates.images.back(), rng);
            s.class_id = cls;
            s.source_id = "syn/c" + std::to_string(cls) + "/i" + std::to_string(i);
            if (i < n_train)
                split.train.push_back(std::move(s));
            else if (i < n_train + n_val)
                split.validation.push_back(std::move(s));
            else
                split.test.push_back(std::move(s));
        }
    }
    return {std::move(split), std::move(templates)};
}

std::pair<DatasetSplit, TemplateSet> load_gtsrb(const fs::path& root, std::uint64_t seed) {
    if (!fs::is_directory(root)) data_error("gtsrb: no such directory: " + root.string());
    const fs::path train_root = fs::is_directory(root / "train") ? root / "train" : root;
    const bool has_test = fs::is_directory(root / "test");

    auto load_tree = [](const fs::path& base) {
        std::vector<SignImage> images;
        std::map<int, std::pair<long, SignImage>> best;  // class -> (area, largest sample)
        for (const auto& [cls, dir] : class_dirs(base)) {
            for (const auto& csv : sorted_entries(dir, ".csv")) {
                for (const auto& row : parse_gtsrb_csv(csv)) {
                    SignImage img = load_gtsrb_sample(dir, row);
                    const long area = static_cast<long>(row.width) * row.height;
                    auto it = best.find(img.class_id);
                    if (it == best.end() || area > it->second.first)
                        best[img.class_id] = {area, img};
                    images.push_back(std::move(img));
                }
            }
        }
        return std::make_pair(std::move(images), std::move(best));
    };

    auto [train_all, best] = load_tree(train_root);
    if (train_all.empty()) data_error("gtsrb: no annotated images under " + root.string());

    DatasetSplit split;
    int max_cls = 0;
    for (const auto& img : train_all) max_cls = std::max(max_cls, img.class_id);
    if (has_test) {
        auto [test_imgs, ignore] = load_tree(root / "test");
        split.test = std::move(test_imgs);
        for (const auto& img : split.test) max_cls = std::max(max_cls, img.class_id);
    }
    split.class_count = max_cls + 1;

    // Template: each class's highest-resolution training sample.
    TemplateSet templates;
    templates.images.resize(split.class_count);
    for (int cls = 0; cls < split.class_count; ++cls) {
        auto it = best.find(cls);
        if (it == best.end()) data_error("gtsrb: class " + std::to_string(cls) + " has no training images");
        templates.images[cls] = it->second.second;
        templates.images[cls].tag = CorruptionTag::clean;
        templates.images[cls].source_id = "template/" + std::to_string(cls);
    }

    // Seeded 20% validation carve-out from train only, never from test.
    Rng rng(mix_seed(seed, 0x6d5b));
    std::vector<std::size_t> order(train_all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t n_val = order.size() / 5;
    std::set<std::size_t> val_set(order.begin(), order.begin() + n_val);
    for (std::size_t i = 0; i < train_all.size(); ++i)
        (val_set.count(i) ? split.validation : split.train).push_back(std::move(train_all[i]));
    return {std::move(split), std::move(templates)};
}

std::pair<DatasetSplit, TemplateSet> load_directory(const fs::path& root) {
    if (!fs::is_directory(root)) data_error("dataset: no such directory: " + root.string());
    DatasetSplit split;
    int max_cls = -1;
    auto load_split = [&](const char* name, std::vector<SignImage>& into) {
        const fs::path dir = root / name;
        if (!fs::is_directory(dir)) return;
        for (const auto& [cls, cdir] : class_dirs(dir)) {
            max_cls = std::max(max_cls, cls);
            for (const auto& file : sorted_entries(cdir, ".ppm"))
                into.push_back(from_raw(read_ppm(file), cls, file.string()));
        }
    };
    load_split("train", split.train);
    load_split("val", split.validation);
    load_split("test", split.test);
    if (max_cls < 0) data_error("dataset: no class directories under " + root.string());
    split.class_count = max_cls + 1;

    TemplateSet templates;
    templates.images.resize(split.class_count);
    for (int cls = 0; cls < split.class_count; ++cls) {
        const fs::path file = root / "templates" / (std::to_string(cls) + ".ppm");
        if (!fs::exists(file))
            data_error("dataset: class " + std::to_string(cls) + " has no template at " +
                       file.string());
        templates.images[cls] = from_raw(read_ppm(file), cls, file.string());
    }
    return {std::move(split), std::move(templates)};
}

void write_split_manifest(const fs::path& path, const DatasetSplit& split) {
    std::ofstream out(path);
    if (!out) data_error("manifest: cannot write " + path.string());
    auto dump = [&](const char* name, const std::vector<SignImage>& images) {
        for (const auto& img : images)
            out << img.source_id << '\t' << name << '\t' << img.class_id << '\n';
    };
    dump("train", split.train);
    dump("val", split.validation);
    dump("test", split.test);
}

std::pair<DatasetSplit, TemplateSet> load_data(const std::string& source, std::uint64_t seed) {
    if (source.rfind("synthetic:", 0) == 0) {
        const std::string spec = source.substr(10);
        const auto comma = spec.find(',');
        if (comma == std::string::npos)
            data_error("data source: expected synthetic:<classes>,<per_class>");
        return gen_synthetic(std::stoi(spec.substr(0, comma)), std::stoi(spec.substr(comma + 1)),
                             seed);
    }
    const fs::path root(source);
    if (fs::is_directory(root / "templates")) return load_directory(root);
    return load_gtsrb(root, seed);
}

}  // namespace ieces
