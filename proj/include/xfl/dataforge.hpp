#ifndef XFL_DATAFORGE_HPP
#define XFL_DATAFORGE_HPP

/// @file dataforge.hpp Image-pair dataset synthesis with a controlled label
/// correlation knob, plus IDX ingestion and the correlation estimator that
/// verifies the knob does what it claims.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xfl/error.hpp"
#include "xfl/numkit.hpp"

namespace xfl::dataforge {

using numkit::RngStream;

constexpr std::size_t kNumClasses = 10;

/* Domains
 * -------
 */

/** A labeled pool of same-shaped byte images, classes 0..9. Immutable once
 * built; the per-class index makes conditional sampling O(1). */
struct Domain {
    std::size_t h = 0, w = 0, c = 0;
    std::vector<std::vector<std::uint8_t>> images; // each h*w*c, row-major HWC
    std::vector<std::uint8_t> labels;
    std::string name;
    std::vector<std::vector<std::uint32_t>> by_class; // built by finalize()

    std::size_t size() const { return images.size(); }

    void finalize() {
        by_class.assign(kNumClasses, {});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= kNumClasses)
                throw data_error("BadLabel", "class id " + std::to_string(labels[i]) +
                                                 " outside 0..9 in domain " + name);
            by_class[labels[i]].push_back(static_cast<std::uint32_t>(i));
        }
    }
};

/** Horizontally concatenated image pairs with one label per side.
 * Width is the sum of the two source widths. */
struct PairedDataset {
    std::size_t h = 0, w = 0, c = 0; // w is the concatenated width
    std::vector<std::vector<std::uint8_t>> x;
    std::vector<std::uint8_t> y_alice;
    std::vector<std::uint8_t> y_bob;
    double beta = 0.0;
    std::string left_name, right_name;

    std::size_t size() const { return x.size(); }
};

struct CorrelationReport {
    std::array<double, kNumClasses> per_class_corr{};
    std::array<bool, kNumClasses> defined{};
    double mean_corr = 0.0;
    std::size_t sample_count = 0;
};

/* IDX ingestion
 * -------------
 *
 * Big-endian headers; image magic 0x00000803 with (count, rows, cols),
 * label magic 0x00000801 with (count); unsigned byte payloads.
 */

namespace detail {

inline std::uint32_t read_u32be(std::istream &in, const std::string &path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char *>(b), 4))
        throw data_error("Truncated", "short read in header of " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

} // namespace detail

inline Domain load_idx(const std::string &images_path, const std::string &labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw data_error("IoError", "cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw data_error("IoError", "cannot open " + labels_path);

    std::uint32_t img_magic = detail::read_u32be(img, images_path);
    if (img_magic != 0x00000803u)
        throw data_error("BadMagic", images_path + " has magic " + std::to_string(img_magic) +
                                         ", expected image magic 0x00000803");
    std::uint32_t n = detail::read_u32be(img, images_path);
    std::uint32_t rows = detail::read_u32be(img, images_path);
    std::uint32_t cols = detail::read_u32be(img, images_path);

    std::uint32_t lab_magic = detail::read_u32be(lab, labels_path);
    if (lab_magic != 0x00000801u)
        throw data_error("BadMagic", labels_path + " has magic " + std::to_string(lab_magic) +
                                         ", expected label magic 0x00000801");
    std::uint32_t n_labels = detail::read_u32be(lab, labels_path);
    if (n != n_labels)
        throw data_error("CountMismatch", "image header says " + std::to_string(n) +
                                              " samples, label header says " +
                                              std::to_string(n_labels));

    Domain d;
    d.h = rows;
    d.w = cols;
    d.c = 1;
    d.name = images_path;
    d.images.resize(n);
    d.labels.resize(n);
    const std::size_t px = std::size_t(rows) * cols;
    for (std::uint32_t i = 0; i < n; ++i) {
        d.images[i].resize(px);
        if (!img.read(reinterpret_cast<char *>(d.images[i].data()),
                      static_cast<std::streamsize>(px)))
            throw data_error("Truncated", images_path + " ends inside image " +
                                              std::to_string(i));
    }
    if (!lab.read(reinterpret_cast<char *>(d.labels.data()), n))
        throw data_error("Truncated", labels_path + " ends inside label payload");
    d.finalize();
    return d;
}

/* Resizing
 * --------
 */

/// Bilinear resize with pixel-center alignment (an identity when the shape
/// is unchanged), plus grayscale-to-color channel replication.
inline Domain rescale_domain(const Domain &d, std::size_t h, std::size_t w, std::size_t c) {
    if (h < 1 || w < 1 || c < 1)
        throw config_error("ConfigInvalid", "rescale target dims must be positive");
    if (!(c == d.c || d.c == 1))
        throw data_error("ShapeMismatch", "cannot map " + std::to_string(d.c) +
                                              " channels onto " + std::to_string(c));

    Domain out;
    out.h = h;
    out.w = w;
    out.c = c;
    out.name = d.name;
    out.labels = d.labels;
    out.images.resize(d.size());

    const double sy = static_cast<double>(d.h) / static_cast<double>(h);
    const double sx = static_cast<double>(d.w) / static_cast<double>(w);

    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto &src = d.images[i];
        auto &dst = out.images[i];
        dst.resize(h * w * c);
        for (std::size_t y = 0; y < h; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            fy = std::min(std::max(fy, 0.0), static_cast<double>(d.h - 1));
            std::size_t y0 = static_cast<std::size_t>(fy);
            std::size_t y1 = std::min(y0 + 1, d.h - 1);
            double wy = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < w; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                fx = std::min(std::max(fx, 0.0), static_cast<double>(d.w - 1));
                std::size_t x0 = static_cast<std::size_t>(fx);
                std::size_t x1 = std::min(x0 + 1, d.w - 1);
                double wx = fx - static_cast<double>(x0);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t sc = (d.c == 1) ? 0 : ch;
                    auto at = [&](std::size_t yy, std::size_t xx) {
                        return static_cast<double>(src[(yy * d.w + xx) * d.c + sc]);
                    };
                    double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                               wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                    dst[(y * w + x) * c + ch] =
                        static_cast<std::uint8_t>(std::lround(std::min(std::max(v, 0.0), 255.0)));
                }
            }
        }
    }
    out.finalize();
    return out;
}

/* Procedural glyph domains
 * ------------------------
 *
 * Ten stroke-pattern classes rendered onto a small canvas, with per-sample
 * translation jitter and pixel noise. Two style seeds give two visually
 * distinct domains, standing in for the usual handwritten/street-number
 * pair so the whole pipeline runs without external data.
 */

namespace detail {

struct Segment {
    double x0, y0, x1, y1;
};

inline const std::vector<Segment> &glyph_segments(std::size_t cls) {
    static const std::vector<std::vector<Segment>> table = {
        // 0: box outline
        {{0.18, 0.18, 0.82, 0.18}, {0.82, 0.18, 0.82, 0.82}, {0.82, 0.82, 0.18, 0.82},
         {0.18, 0.82, 0.18, 0.18}},
        // 1: vertical bar
        {{0.5, 0.15, 0.5, 0.85}},
        // 2: horizontal bar
        {{0.15, 0.5, 0.85, 0.5}},
        // 3: main diagonal
        {{0.15, 0.15, 0.85, 0.85}},
        // 4: anti-diagonal
        {{0.85, 0.15, 0.15, 0.85}},
        // 5: X
        {{0.15, 0.15, 0.85, 0.85}, {0.85, 0.15, 0.15, 0.85}},
        // 6: plus
        {{0.5, 0.15, 0.5, 0.85}, {0.15, 0.5, 0.85, 0.5}},
        // 7: T
        {{0.15, 0.2, 0.85, 0.2}, {0.5, 0.2, 0.5, 0.85}},
        // 8: L
        {{0.2, 0.15, 0.2, 0.85}, {0.2, 0.85, 0.85, 0.85}},
        // 9: two horizontal bars
        {{0.15, 0.35, 0.85, 0.35}, {0.15, 0.65, 0.85, 0.65}},
    };
    return table[cls];
}

inline double segment_distance(double px, double py, const Segment &s) {
    double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::min(std::max(t, 0.0), 1.0);
    double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
    return std::sqrt((px - cx) * (px - cx) + (py - cy) * (py - cy));
}

struct GlyphStyle {
    double thickness;     // stroke half-width in unit coords
    double foreground;    // stroke intensity in [0,1]
    double background;    // canvas intensity in [0,1]
    double noise_sigma;   // per-pixel additive noise
    double channel_gain[3];
};

inline GlyphStyle draw_style(RngStream rng) {
    GlyphStyle st;
    st.thickness = 0.055 + 0.05 * rng.next_double();
    st.foreground = 0.72 + 0.28 * rng.next_double();
    st.background = 0.12 * rng.next_double();
    st.noise_sigma = 0.02 + 0.04 * rng.next_double();
    for (double &g : st.channel_gain) g = 0.55 + 0.45 * rng.next_double();
    return st;
}

} // namespace detail

inline Domain synth_glyph_domain(std::size_t n_per_class, std::size_t h, std::size_t w,
                                 std::size_t c, const RngStream &style_seed) {
    if (n_per_class < 1) throw config_error("ConfigInvalid", "n_per_class must be >= 1");
    if (c != 1 && c != 3) throw config_error("ConfigInvalid", "glyph channels must be 1 or 3");

    detail::GlyphStyle style = detail::draw_style(style_seed.derive("style"));
    RngStream jitter_root = style_seed.derive("samples");

    Domain d;
    d.h = h;
    d.w = w;
    d.c = c;
    d.name = "glyph-" + std::to_string(style_seed.seed()) + "-" +
             std::to_string(style_seed.stream_id());
    d.images.reserve(n_per_class * kNumClasses);
    d.labels.reserve(n_per_class * kNumClasses);

    const double feather = 0.04;
    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
        const auto &segs = detail::glyph_segments(cls);
        for (std::size_t s = 0; s < n_per_class; ++s) {
            RngStream rng = jitter_root.derive(cls * 1000003 + s);
            int dx = static_cast<int>(rng.next_index(5)) - 2;
            int dy = static_cast<int>(rng.next_index(5)) - 2;
            double gain = 0.9 + 0.2 * rng.next_double();

            std::vector<std::uint8_t> img(h * w * c);
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double px = (static_cast<double>(x) - dx + 0.5) / static_cast<double>(w);
                    double py = (static_cast<double>(y) - dy + 0.5) / static_cast<double>(h);
                    double dist = 1e9;
                    for (const auto &seg : segs)
                        dist = std::min(dist, detail::segment_distance(px, py, seg));
                    double ink = std::min(
                        std::max(1.0 - (dist - style.thickness) / feather, 0.0), 1.0);
                    double base = style.background +
                                  ink * gain * (style.foreground - style.background);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double v = base * (c == 3 ? style.channel_gain[ch] : 1.0) +
                                   style.noise_sigma * rng.next_gaussian();
                        img[(y * w + x) * c + ch] = static_cast<std::uint8_t>(
                            std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0));
                    }
                }
            }
            d.images.push_back(std::move(img));
            d.labels.push_back(static_cast<std::uint8_t>(cls));
        }
    }
    d.finalize();
    return d;
}

/* Controlled-correlation pairing
 * ------------------------------
 *
 * For each output sample: draw a left image uniformly and take its label as
 * Alice's; with probability beta pick the right image uniformly among those
 * sharing Alice's label, otherwise uniformly from the whole right pool; take
 * the right label as Bob's; emit the horizontal concatenation.
 */

inline PairedDataset sample_concat(double beta, const Domain &left, const Domain &right,
                                   std::size_t n, RngStream &rng) {
    if (!(beta >= 0.0 && beta <= 1.0))
        throw config_error("ConfigInvalid", "beta must lie in [0,1]");
    if (left.size() == 0 || right.size() == 0)
        throw data_error("EmptyDomain", "both domains must be non-empty");
    if (left.h != right.h || left.c != right.c)
        throw data_error("ShapeMismatch", "domains must agree on height and channels");
    if (beta > 0.0) {
        for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
            if (!left.by_class[cls].empty() && right.by_class[cls].empty())
                throw data_error("EmptyClass", "beta > 0 but right domain has no class " +
                                                   std::to_string(cls));
        }
    }

    PairedDataset ds;
    ds.h = left.h;
    ds.w = left.w + right.w;
    ds.c = left.c;
    ds.beta = beta;
    ds.left_name = left.name;
    ds.right_name = right.name;
    ds.x.resize(n);
    ds.y_alice.resize(n);
    ds.y_bob.resize(n);

    const std::size_t lrow = left.w * left.c;
    const std::size_t rrow = right.w * right.c;

    for (std::size_t s = 0; s < n; ++s) {
        std::size_t i = rng.next_index(left.size());
        std::uint8_t y_a = left.labels[i];
        double u = rng.next_double();
        std::size_t j;
        if (u < beta) {
            const auto &pool = right.by_class[y_a];
            j = pool[rng.next_index(pool.size())];
        } else {
            j = rng.next_index(right.size());
        }
        ds.y_alice[s] = y_a;
        ds.y_bob[s] = right.labels[j];

        auto &img = ds.x[s];
        img.resize(ds.h * ds.w * ds.c);
        const auto &li = left.images[i];
        const auto &ri = right.images[j];
        for (std::size_t y = 0; y < ds.h; ++y) {
            std::memcpy(img.data() + y * (lrow + rrow), li.data() + y * lrow, lrow);
            std::memcpy(img.data() + y * (lrow + rrow) + lrow, ri.data() + y * rrow, rrow);
        }
    }
    return ds;
}

/// Fresh dataset for a training epoch; epoch e always reproduces the same
/// bytes for the same base stream.
inline PairedDataset epoch_resample(double beta, const Domain &left, const Domain &right,
                                    std::size_t epoch_index, const RngStream &base_rng,
                                    std::size_t n) {
    RngStream rng = base_rng.derive("epoch").derive(epoch_index);
    return sample_concat(beta, left, right, n, rng);
}

/* Correlation estimation
 * ----------------------
 *
 * Per class A, the Pearson correlation of the indicators X = 1[y_alice = A]
 * and Y = 1[y_bob = A], from the empirical estimators
 * cov = E[XY] - E[X]E[Y], var = E[X^2] - E[X]^2. Classes whose indicator has
 * zero variance on either side are reported as undefined and excluded from
 * the mean.
 */

inline CorrelationReport estimate_task_correlation(const PairedDataset &ds) {
    if (ds.size() == 0) throw data_error("EmptyDataset", "cannot estimate on zero samples");
    const double n = static_cast<double>(ds.size());

    CorrelationReport rep;
    rep.sample_count = ds.size();
    double sum = 0.0;
    std::size_t defined_count = 0;

    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
        double ex = 0.0, ey = 0.0, exy = 0.0;
        for (std::size_t s = 0; s < ds.size(); ++s) {
            double xs = ds.y_alice[s] == cls ? 1.0 : 0.0;
            double ys = ds.y_bob[s] == cls ? 1.0 : 0.0;
            ex += xs;
            ey += ys;
            exy += xs * ys;
        }
        ex /= n;
        ey /= n;
        exy /= n;
        double var_x = ex - ex * ex;
        double var_y = ey - ey * ey;
        if (var_x <= 0.0 || var_y <= 0.0) {
            rep.defined[cls] = false;
            rep.per_class_corr[cls] = 0.0; // DegenerateClass: excluded from the mean
            continue;
        }
        double corr = (exy - ex * ey) / std::sqrt(var_x * var_y);
        rep.per_class_corr[cls] = corr;
        rep.defined[cls] = true;
        sum += corr;
        ++defined_count;
    }
    rep.mean_corr = defined_count > 0 ? sum / static_cast<double>(defined_count) : 0.0;
    return rep;
}

/* Dataset container
 * -----------------
 *
 * Layout: "XFL1" | u32le n,h,w,c | f32le beta | two length-prefixed UTF-8
 * domain names | n*h*w*c pixel bytes | n bytes y_alice | n bytes y_bob.
 */

namespace detail {

inline void write_u32le(std::ostream &out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char *>(b), 4);
}

inline std::uint32_t read_u32le(std::istream &in, const std::string &path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char *>(b), 4))
        throw data_error("Truncated", "short read in " + path);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline void write_name(std::ostream &out, const std::string &s) {
    write_u32le(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_name(std::istream &in, const std::string &path) {
    std::uint32_t len = read_u32le(in, path);
    std::string s(len, '\0');
    if (len > 0 && !in.read(s.data(), len))
        throw data_error("Truncated", "short name read in " + path);
    return s;
}

} // namespace detail

inline void save_dataset(const PairedDataset &ds, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("IoError", "cannot write " + path);
    out.write("XFL1", 4);
    detail::write_u32le(out, static_cast<std::uint32_t>(ds.size()));
    detail::write_u32le(out, static_cast<std::uint32_t>(ds.h));
    detail::write_u32le(out, static_cast<std::uint32_t>(ds.w));
    detail::write_u32le(out, static_cast<std::uint32_t>(ds.c));
    float beta = static_cast<float>(ds.beta);
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char *>(&beta), 4);
    detail::write_name(out, ds.left_name);
    detail::write_name(out, ds.right_name);
    for (const auto &img : ds.x)
        out.write(reinterpret_cast<const char *>(img.data()),
                  static_cast<std::streamsize>(img.size()));
    out.write(reinterpret_cast<const char *>(ds.y_alice.data()),
              static_cast<std::streamsize>(ds.y_alice.size()));
    out.write(reinterpret_cast<const char *>(ds.y_bob.data()),
              static_cast<std::streamsize>(ds.y_bob.size()));
    if (!out) throw data_error("IoError", "write failed for " + path);
}

inline PairedDataset load_dataset(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("IoError", "cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "XFL1", 4) != 0)
        throw data_error("BadMagic", path + " is not an XFL1 dataset");

    PairedDataset ds;
    std::uint32_t n = detail::read_u32le(in, path);
    ds.h = detail::read_u32le(in, path);
    ds.w = detail::read_u32le(in, path);
    ds.c = detail::read_u32le(in, path);
    float beta;
    if (!in.read(reinterpret_cast<char *>(&beta), 4))
        throw data_error("Truncated", "short beta read in " + path);
    ds.beta = beta;
    ds.left_name = detail::read_name(in, path);
    ds.right_name = detail::read_name(in, path);

    const std::size_t px = ds.h * ds.w * ds.c;
    ds.x.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        ds.x[i].resize(px);
        if (!in.read(reinterpret_cast<char *>(ds.x[i].data()),
                     static_cast<std::streamsize>(px)))
            throw data_error("Truncated", path + " ends inside image " + std::to_string(i));
    }
    ds.y_alice.resize(n);
    ds.y_bob.resize(n);
    if (!in.read(reinterpret_cast<char *>(ds.y_alice.data()), n) ||
        !in.read(reinterpret_cast<char *>(ds.y_bob.data()), n))
        throw data_error("Truncated", path + " ends inside label payload");
    return ds;
}

} // namespace xfl::dataforge

#endif // XFL_DATAFORGE_HPP
