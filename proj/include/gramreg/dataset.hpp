#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gramreg/config.hpp"
#include "gramreg/errors.hpp"
#include "gramreg/rng.hpp"
#include "gramreg/tensor.hpp"

namespace gramreg {

/// Generation parameters. Shapes are split per class: the first
/// train_per_class of each class train, the rest test.
struct DatasetManifest {
    std::uint64_t seed = 0;
    std::size_t classes = 6;
    std::size_t shapes_per_class = 50;
    std::size_t views = 8;
    std::size_t height = 32;
    std::size_t width = 32;

    std::size_t test_per_class() const { return shapes_per_class / 5; }
    std::size_t train_per_class() const { return shapes_per_class - test_per_class(); }

    void validate() const {
        if (classes < 2 || classes > 6)
            throw ConfigError("dataset: class count must be between 2 and 6");
        if (shapes_per_class == 0 || views == 0 || height == 0 || width == 0)
            throw ConfigError("dataset: extents must be positive");
    }
};

enum class Split : std::uint8_t { train = 0, test = 1 };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct ViewSample {
    std::size_t shape_id = 0;
    std::size_t class_id = 0;
    Split split = Split::train;
    std::vector<Tensor<double>> views;  // each (1, H, W), values in [0,1]
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<std::string> class_names;
    std::vector<ViewSample> samples;  // ascending shape_id
};

inline const std::array<const char*, 6>& class_library() {
    static const std::array<const char*, 6> names = {"sphere",        "cube",     "pyramid",
                                                     "torus_profile", "cylinder", "cross"};
    return names;
}

// ---------------------------------------------------------------------------
// Silhouette geometry. Each view is an orthographic projection: for a pixel
// at world coordinates (u, v) the ray runs along the depth axis w, and the
// shape is rotated by the view azimuth about the vertical axis, so body
// coordinates are bx = u cos + w sin, bz = -u sin + w cos, by = v. Brightness
// is the chord length of the ray through the solid.
// ---------------------------------------------------------------------------

namespace detail {

struct RayFrame {
    double u, v, c, s;
};

inline double ellipsoid_chord(const RayFrame& r, double ax, double ay, double az) {
    const double qa = r.s * r.s / (ax * ax) + r.c * r.c / (az * az);
    const double qb = 2.0 * r.u * r.c * r.s * (1.0 / (ax * ax) - 1.0 / (az * az));
    const double qc = (r.u * r.c) * (r.u * r.c) / (ax * ax) +
                      (r.u * r.s) * (r.u * r.s) / (az * az) + r.v * r.v / (ay * ay) - 1.0;
    const double disc = qb * qb - 4.0 * qa * qc;
    return disc > 0.0 ? std::sqrt(disc) / qa : 0.0;
}

inline double cylinder_chord(const RayFrame& r, double rx, double hy, double rz) {
    if (std::abs(r.v) > hy) return 0.0;
    const double qa = r.s * r.s / (rx * rx) + r.c * r.c / (rz * rz);
    const double qb = 2.0 * r.u * r.c * r.s * (1.0 / (rx * rx) - 1.0 / (rz * rz));
    const double qc =
        (r.u * r.c) * (r.u * r.c) / (rx * rx) + (r.u * r.s) * (r.u * r.s) / (rz * rz) - 1.0;
    const double disc = qb * qb - 4.0 * qa * qc;
    return disc > 0.0 ? std::sqrt(disc) / qa : 0.0;
}

struct WInterval {
    double lo, hi;
    bool empty;
};

/// Range of w with |a*w + b| <= h.
inline WInterval slab(double a, double b, double h) {
    if (std::abs(a) < 1e-12) {
        if (std::abs(b) > h) return {0.0, 0.0, true};
        return {-1e30, 1e30, false};
    }
    double w1 = (-h - b) / a, w2 = (h - b) / a;
    if (w1 > w2) std::swap(w1, w2);
    return {w1, w2, false};
}

inline double box_chord_extents(const RayFrame& r, double hx, double hz) {
    const WInterval ix = slab(r.s, r.u * r.c, hx);
    const WInterval iz = slab(r.c, -r.u * r.s, hz);
    if (ix.empty || iz.empty) return 0.0;
    return std::max(0.0, std::min(ix.hi, iz.hi) - std::max(ix.lo, iz.lo));
}

inline double box_chord(const RayFrame& r, double hx, double hy, double hz) {
    if (std::abs(r.v) > hy) return 0.0;
    return box_chord_extents(r, hx, hz);
}

/// Box tapering linearly to an apex at v = +hy.
inline double pyramid_chord(const RayFrame& r, double hx, double hy, double hz) {
    if (std::abs(r.v) > hy) return 0.0;
    const double scale = (hy - r.v) / (2.0 * hy);
    if (scale <= 0.0) return 0.0;
    return box_chord_extents(r, hx * scale, hz * scale);
}

struct ShapeParams {
    std::size_t cls;
    double j1, j2, j3;  // per-shape size jitters
    double phase;       // per-shape azimuth offset
};

inline double shape_thickness(const ShapeParams& p, const RayFrame& r) {
    switch (p.cls) {
        case 0:
            return ellipsoid_chord(r, 0.62 * p.j1, 0.62 * p.j2, 0.62 * p.j3);
        case 1:
            return box_chord(r, 0.52 * p.j1, 0.52 * p.j2, 0.52 * p.j3);
        case 2:
            return pyramid_chord(r, 0.60 * p.j1, 0.62 * p.j2, 0.60 * p.j3);
        case 3: {
            const double disc = ellipsoid_chord(r, 0.68 * p.j1, 0.26 * p.j2, 0.68 * p.j3);
            const double hole = cylinder_chord(r, 0.24 * p.j3, 1.0, 0.24 * p.j3);
            return std::max(0.0, disc - hole);
        }
        case 4:
            return cylinder_chord(r, 0.52 * p.j1, 0.58 * p.j2, 0.52 * p.j3);
        default:
            return box_chord(r, 0.66 * p.j1, 0.20 * p.j2, 0.20 * p.j3) +
                   box_chord(r, 0.20 * p.j1, 0.66 * p.j2, 0.20 * p.j3);
    }
}

inline std::uint8_t quantize_255(double b) {
    b = std::min(1.0, std::max(0.0, b));
    return static_cast<std::uint8_t>(std::floor(b * 255.0 + 0.5));
}

inline Tensor<double> render_view(const ShapeParams& p, double theta, std::size_t h,
                                  std::size_t w) {
    Tensor<double> img({1, h, w});
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t py = 0; py < h; ++py) {
        const double v = 1.0 - 2.0 * (static_cast<double>(py) + 0.5) / static_cast<double>(h);
        for (std::size_t px = 0; px < w; ++px) {
            const double u = 2.0 * (static_cast<double>(px) + 0.5) / static_cast<double>(w) - 1.0;
            const double t = shape_thickness(p, {u, v, c, s});
            img[py * w + px] =
                static_cast<double>(quantize_255(t / 2.0)) / 255.0;
        }
    }
    return img;
}

inline ShapeParams draw_shape_params(std::size_t cls, std::uint64_t seed, std::size_t shape_id) {
    Rng rng(Rng::derive(seed, shape_id));
    ShapeParams p{};
    p.cls = cls;
    p.j1 = rng.uniform(0.85, 1.15);
    p.j2 = rng.uniform(0.85, 1.15);
    p.j3 = rng.uniform(0.85, 1.15);
    p.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    return p;
}

}  // namespace detail

/// Renders the full dataset in memory. Pixels are already quantized to the
/// 256 levels the files will carry, so writing and reloading changes nothing.
inline Dataset generate_dataset(const DatasetManifest& m) {
    m.validate();
    Dataset ds;
    ds.manifest = m;
    for (std::size_t c = 0; c < m.classes; ++c) ds.class_names.push_back(class_library()[c]);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t c = 0; c < m.classes; ++c) {
        for (std::size_t i = 0; i < m.shapes_per_class; ++i) {
            ViewSample sample;
            sample.shape_id = c * m.shapes_per_class + i;
            sample.class_id = c;
            sample.split = i < m.train_per_class() ? Split::train : Split::test;
            const auto params = detail::draw_shape_params(c, m.seed, sample.shape_id);
            for (std::size_t k = 0; k < m.views; ++k) {
                const double theta =
                    params.phase + two_pi * static_cast<double>(k) / static_cast<double>(m.views);
                sample.views.push_back(detail::render_view(params, theta, m.height, m.width));
            }
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk form: binary 8-bit PGM images, meta.cfg with the generation
// parameters, and manifest.csv listing every shape with its view files.
// ---------------------------------------------------------------------------

inline void write_pgm(const std::filesystem::path& path, const Tensor<double>& img) {
    const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<char> bytes(h * w);
    for (std::size_t i = 0; i < h * w; ++i)
        bytes[i] = static_cast<char>(detail::quantize_255(img[i]));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

namespace detail {

inline int pgm_token(std::istream& in, const std::string& file) {
    // Skips whitespace and '#' comment lines, then reads one decimal token.
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (std::isspace(ch)) {
            ch = in.get();
        } else {
            break;
        }
    }
    if (ch == EOF || !std::isdigit(ch)) throw FormatError(file + ": malformed image header");
    long value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        if (value > 1000000) throw FormatError(file + ": image header value out of range");
        ch = in.get();
    }
    return static_cast<int>(value);
}

}  // namespace detail

inline Tensor<double> read_pgm(const std::filesystem::path& path) {
    const std::string file = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(file + ": cannot open image");
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw FormatError(file + ": not a binary PGM file");
    const int w = detail::pgm_token(in, file);
    const int h = detail::pgm_token(in, file);
    const int maxval = detail::pgm_token(in, file);
    if (w <= 0 || h <= 0) throw FormatError(file + ": bad image extents");
    if (maxval != 255) throw FormatError(file + ": expected 8-bit image (maxval 255)");
    // pgm_token consumed the single whitespace byte after the maxval, so the
    // stream sits exactly at the first pixel.
    std::vector<char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError(file + ": truncated pixel data");
    Tensor<double> img({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img[i] = static_cast<double>(static_cast<std::uint8_t>(bytes[i])) / 255.0;
    return img;
}

inline std::string view_relpath(const std::string& class_name, std::size_t shape_id,
                                std::size_t view) {
    std::ostringstream os;
    os << class_name << "/";
    os.width(4);
    os.fill('0');
    os << shape_id;
    os << "_" << view << ".pgm";
    return os.str();
}

inline std::string manifest_header(std::size_t views) {
    std::string h = "shape_id,class_id,class_name,split";
    for (std::size_t v = 0; v < views; ++v) h += ",path_" + std::to_string(v);
    return h;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (const auto& name : ds.class_names) {
        std::filesystem::create_directories(dir / name, ec);
        if (ec) throw IoError("cannot create class directory " + name + ": " + ec.message());
    }

    {
        KeyValues kv;
        kv.set("seed", std::to_string(ds.manifest.seed));
        std::string names;
        for (const auto& n : ds.class_names) names += (names.empty() ? "" : ",") + n;
        kv.set("classes", names);
        kv.set("shapes_per_class", std::to_string(ds.manifest.shapes_per_class));
        kv.set("train_per_class", std::to_string(ds.manifest.train_per_class()));
        kv.set("test_per_class", std::to_string(ds.manifest.test_per_class()));
        kv.set("views", std::to_string(ds.manifest.views));
        kv.set("height", std::to_string(ds.manifest.height));
        kv.set("width", std::to_string(ds.manifest.width));
        std::ofstream meta(dir / "meta.cfg");
        if (!meta) throw IoError("cannot write " + (dir / "meta.cfg").string());
        write_key_values(meta, kv);
        if (!meta.good()) throw IoError("write failed for " + (dir / "meta.cfg").string());
    }

    std::ofstream man(dir / "manifest.csv");
    if (!man) throw IoError("cannot write " + (dir / "manifest.csv").string());
    man << manifest_header(ds.manifest.views) << "\n";
    for (const auto& s : ds.samples) {
        man << s.shape_id << "," << s.class_id << "," << ds.class_names[s.class_id] << ","
            << split_name(s.split);
        for (std::size_t v = 0; v < s.views.size(); ++v) {
            const std::string rel = view_relpath(ds.class_names[s.class_id], s.shape_id, v);
            man << "," << rel;
            write_pgm(dir / rel, s.views[v]);
        }
        man << "\n";
    }
    if (!man.good()) throw IoError("write failed for " + (dir / "manifest.csv").string());
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::size_t parse_index(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw FormatError("");
        return static_cast<std::size_t>(v);
    } catch (...) {
        throw FormatError(what + ": '" + s + "' is not an index");
    }
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    {
        std::ifstream meta(dir / "meta.cfg");
        if (!meta) throw FormatError((dir / "meta.cfg").string() + ": cannot open");
        const KeyValues kv = parse_key_values(meta, (dir / "meta.cfg").string());
        ds.manifest.seed = kv.get_u64("seed");
        ds.manifest.shapes_per_class = kv.get_u64("shapes_per_class");
        ds.manifest.views = kv.get_u64("views");
        ds.manifest.height = kv.get_u64("height");
        ds.manifest.width = kv.get_u64("width");
        std::string names = kv.get("classes");
        for (const auto& n : detail::split_csv(names))
            if (!n.empty()) ds.class_names.push_back(n);
        ds.manifest.classes = ds.class_names.size();
        ds.manifest.validate();
        if (kv.get_u64("train_per_class") != ds.manifest.train_per_class() ||
            kv.get_u64("test_per_class") != ds.manifest.test_per_class())
            throw FormatError((dir / "meta.cfg").string() + ": split counts are inconsistent");
    }

    const std::string man_file = (dir / "manifest.csv").string();
    std::ifstream man(dir / "manifest.csv");
    if (!man) throw FormatError(man_file + ": cannot open");
    std::string line;
    if (!std::getline(man, line)) throw FormatError(man_file + ": empty manifest");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != manifest_header(ds.manifest.views))
        throw FormatError(man_file + ": unexpected header row");

    std::size_t lineno = 1;
    while (std::getline(man, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cols = detail::split_csv(line);
        const std::string where = man_file + " line " + std::to_string(lineno);
        if (cols.size() != 4 + ds.manifest.views)
            throw FormatError(where + ": expected " + std::to_string(4 + ds.manifest.views) +
                              " columns");
        ViewSample s;
        s.shape_id = detail::parse_index(cols[0], where);
        s.class_id = detail::parse_index(cols[1], where);
        if (s.class_id >= ds.class_names.size())
            throw FormatError(where + ": class id out of range");
        if (cols[2] != ds.class_names[s.class_id])
            throw FormatError(where + ": class name does not match class id");
        if (cols[3] == "train")
            s.split = Split::train;
        else if (cols[3] == "test")
            s.split = Split::test;
        else
            throw FormatError(where + ": split must be train or test");
        if (!ds.samples.empty() && s.shape_id <= ds.samples.back().shape_id)
            throw FormatError(where + ": shape ids must be strictly increasing");
        for (std::size_t v = 0; v < ds.manifest.views; ++v) {
            Tensor<double> img = read_pgm(dir / cols[4 + v]);
            if (img.dim(1) != ds.manifest.height || img.dim(2) != ds.manifest.width)
                throw FormatError((dir / cols[4 + v]).string() + ": image extents " +
                                  std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(1)) +
                                  " do not match the manifest");
            s.views.push_back(std::move(img));
        }
        ds.samples.push_back(std::move(s));
    }

    if (ds.samples.size() != ds.manifest.classes * ds.manifest.shapes_per_class)
        throw FormatError(man_file + ": shape count does not match meta.cfg");
    std::vector<std::size_t> train_count(ds.class_names.size(), 0),
        test_count(ds.class_names.size(), 0);
    for (const auto& s : ds.samples)
        (s.split == Split::train ? train_count : test_count)[s.class_id]++;
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
        if (train_count[c] != ds.manifest.train_per_class() ||
            test_count[c] != ds.manifest.test_per_class())
            throw FormatError(man_file + ": per-class split counts do not match meta.cfg");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Batch assembly.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> view_item(const ViewSample& s, std::size_t v) {
    const Tensor<double>& src = s.views.at(v);
    Tensor<T> out(src.shape());
    for (std::size_t i = 0; i < src.numel(); ++i) out[i] = static_cast<T>(src[i]);
    return out;
}

template <typename T>
Tensor<T> shape_item(const ViewSample& s) {
    const std::size_t v = s.views.size();
    const std::size_t per = s.views[0].numel();
    Tensor<T> out({v, s.views[0].dim(0), s.views[0].dim(1), s.views[0].dim(2)});
    for (std::size_t k = 0; k < v; ++k)
        for (std::size_t i = 0; i < per; ++i)
            out[k * per + i] = static_cast<T>(s.views[k][i]);
    return out;
}

inline std::vector<const ViewSample*> split_samples(const Dataset& ds, Split split) {
    std::vector<const ViewSample*> out;
    for (const auto& s : ds.samples)
        if (s.split == split) out.push_back(&s);
    return out;
}

}  // namespace gramreg
