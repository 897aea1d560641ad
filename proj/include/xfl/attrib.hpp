#ifndef XFL_ATTRIB_HPP
#define XFL_ATTRIB_HPP

/// @file attrib.hpp Integrated-gradients attribution against a black-image
/// baseline, with per-side aggregation for concatenated-pair inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "xfl/error.hpp"
#include "xfl/nncore.hpp"

namespace xfl::attrib {

using nncore::Mode;
using nncore::Network;
using nncore::Shape;
using nncore::Tensor;

struct AttributionMap {
    Tensor values; // shape {1,h,w,c}
    std::size_t target_class = 0;
    std::size_t steps = 0;
    double completeness_gap = 0.0; // |sum(values) - (F(x) - F(black))|
};

struct SideSummary {
    double left_mean = 0.0;
    double right_mean = 0.0;
};

/* Integrated gradients
 * --------------------
 *
 * Midpoint Riemann approximation of the path integral from the black image
 * to x:  IG_i = x_i * (1/steps) * sum_s dF_c/dx_i at x*(s-0.5)/steps.
 * F_c is the pre-softmax logit of the target class; gradients of the
 * post-softmax probability are available behind `use_probability`.
 */

inline AttributionMap integrated_gradients(Network &net, const Tensor &x,
                                           std::size_t target_class, std::size_t steps = 128,
                                           bool use_probability = false) {
    if (x.shape.n != 1)
        throw numeric_error("ShapeMismatch", "attribution expects a single sample");
    if (steps < 1) throw config_error("ConfigInvalid", "steps must be >= 1");

    const std::size_t feat = x.shape.features();

    // all interpolation points ride in one Eval-mode batch
    Tensor points({steps, x.shape.h, x.shape.w, x.shape.c});
    for (std::size_t s = 0; s < steps; ++s) {
        double scale = (static_cast<double>(s) + 0.5) / static_cast<double>(steps);
        double *row = points.row(s);
        for (std::size_t i = 0; i < feat; ++i) row[i] = x.v[i] * scale;
    }

    Tensor probs = net.forward(points, Mode::Eval);
    auto &out = net.output_layer();
    Tensor dlogits(probs.shape);
    for (std::size_t s = 0; s < steps; ++s) {
        if (use_probability) {
            // dP_c/dlogit_k = p_c (delta_ck - p_k)
            const double *p = probs.row(s);
            double pc = p[target_class];
            for (std::size_t k = 0; k < probs.shape.c; ++k)
                dlogits.row(s)[k] = pc * ((k == target_class ? 1.0 : 0.0) - p[k]);
        } else {
            dlogits.row(s)[target_class] = 1.0;
        }
    }
    Tensor grads = net.backward(dlogits, /*to_input=*/true);

    AttributionMap map;
    map.target_class = target_class;
    map.steps = steps;
    map.values = Tensor({1, x.shape.h, x.shape.w, x.shape.c});
    double sum = 0.0;
    for (std::size_t i = 0; i < feat; ++i) {
        double avg = 0.0;
        for (std::size_t s = 0; s < steps; ++s) avg += grads.row(s)[i];
        avg /= static_cast<double>(steps);
        map.values.v[i] = x.v[i] * avg;
        sum += map.values.v[i];
    }

    // completeness: sum of attributions vs F(x) - F(black)
    Tensor endpoints({2, x.shape.h, x.shape.w, x.shape.c});
    for (std::size_t i = 0; i < feat; ++i) endpoints.row(1)[i] = x.v[i];
    Tensor end_probs = net.forward(endpoints, Mode::Eval);
    double f_black, f_x;
    if (use_probability) {
        f_black = end_probs.row(0)[target_class];
        f_x = end_probs.row(1)[target_class];
    } else {
        f_black = out.logits().row(0)[target_class];
        f_x = out.logits().row(1)[target_class];
    }
    map.completeness_gap = std::abs(sum - (f_x - f_black));
    return map;
}

/* Side aggregation
 * ----------------
 */

/// Means over the left and right image halves (columns [0, W/2) and
/// [W/2, W)), averaged across rows and channels. `absolute` switches to
/// mean |value|, which is what the histogram comparisons use.
inline SideSummary side_means(const AttributionMap &a, bool absolute = false) {
    const Shape s = a.values.shape;
    if (s.w % 2 != 0)
        throw numeric_error("OddWidth", "side means need an even image width");
    const std::size_t half = s.w / 2;
    double left = 0.0, right = 0.0;
    for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
            for (std::size_t ch = 0; ch < s.c; ++ch) {
                double v = a.values.v[(y * s.w + x) * s.c + ch];
                if (absolute) v = std::abs(v);
                (x < half ? left : right) += v;
            }
        }
    }
    const double denom = static_cast<double>(s.h * half * s.c);
    return {left / denom, right / denom};
}

/* Histograms
 * ----------
 */

struct SideHistograms {
    std::vector<double> bin_edges;    // bins+1 edges, shared by both sides
    std::vector<double> left_density; // integrates to 1
    std::vector<double> right_density;
};

inline SideHistograms side_histograms(const std::vector<SideSummary> &summaries,
                                      std::size_t bins) {
    if (bins < 2) throw config_error("ConfigInvalid", "need at least 2 bins");
    if (summaries.empty()) throw data_error("EmptyDataset", "no summaries to histogram");

    double lo = summaries[0].left_mean, hi = lo;
    for (const auto &s : summaries) {
        lo = std::min({lo, s.left_mean, s.right_mean});
        hi = std::max({hi, s.left_mean, s.right_mean});
    }
    if (hi - lo < 1e-300) { // degenerate range: pad to unit width
        lo -= 0.5;
        hi += 0.5;
    }

    SideHistograms out;
    const double width = (hi - lo) / static_cast<double>(bins);
    out.bin_edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b)
        out.bin_edges[b] = lo + width * static_cast<double>(b);
    out.left_density.assign(bins, 0.0);
    out.right_density.assign(bins, 0.0);

    auto bin_of = [&](double v) {
        auto b = static_cast<std::size_t>((v - lo) / width);
        return std::min(b, bins - 1); // values at the top edge land in the last bin
    };
    for (const auto &s : summaries) {
        out.left_density[bin_of(s.left_mean)] += 1.0;
        out.right_density[bin_of(s.right_mean)] += 1.0;
    }
    const double norm = 1.0 / (static_cast<double>(summaries.size()) * width);
    for (std::size_t b = 0; b < bins; ++b) {
        out.left_density[b] *= norm;
        out.right_density[b] *= norm;
    }
    return out;
}

/// Shared area under two densities on the same edges; 1 means identical
/// supports, 0 means disjoint.
inline double overlap_coefficient(const SideHistograms &h) {
    double o = 0.0;
    for (std::size_t b = 0; b + 1 < h.bin_edges.size(); ++b) {
        double width = h.bin_edges[b + 1] - h.bin_edges[b];
        o += std::min(h.left_density[b], h.right_density[b]) * width;
    }
    return o;
}

/// Per-sample |IG| side means over a batch of samples, attributing each
/// sample's own label class.
inline std::vector<SideSummary> side_means_for_samples(Network &net, const Tensor &xs,
                                                       const std::vector<std::uint8_t> &labels,
                                                       std::size_t steps = 128,
                                                       bool absolute = true) {
    std::vector<SideSummary> out;
    out.reserve(xs.shape.n);
    const std::size_t feat = xs.shape.features();
    for (std::size_t i = 0; i < xs.shape.n; ++i) {
        Tensor x({1, xs.shape.h, xs.shape.w, xs.shape.c});
        std::copy(xs.row(i), xs.row(i) + feat, x.v.begin());
        AttributionMap map = integrated_gradients(net, x, labels[i], steps);
        out.push_back(side_means(map, absolute));
    }
    return out;
}

} // namespace xfl::attrib

#endif // XFL_ATTRIB_HPP
