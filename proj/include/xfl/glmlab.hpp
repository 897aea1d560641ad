#ifndef XFL_GLMLAB_HPP
#define XFL_GLMLAB_HPP

/// @file glmlab.hpp Two-feature-group GLM study: how feature correlation
/// governs what a pre-trained linear backbone is worth to a second task.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xfl/error.hpp"
#include "xfl/numkit.hpp"

namespace xfl::glmlab {

using numkit::Matrix;
using numkit::RngStream;
using numkit::stable_sigmoid;

enum class Scenario { Pairwise, Global };

inline const char *scenario_name(Scenario s) {
    return s == Scenario::Pairwise ? "pairwise" : "global";
}

/** Correlation level alpha in [-1,1], feature-group size k, and the coupling
 * pattern between the first k features (Alice's) and the last k (Bob's). */
struct CorrelationSpec {
    double alpha = 0.0;
    std::size_t k = 1;
    Scenario scenario = Scenario::Pairwise;

    void validate() const {
        if (!(alpha >= -1.0 && alpha <= 1.0))
            throw config_error("ConfigInvalid", "alpha must lie in [-1,1], got " +
                                                    std::to_string(alpha));
        if (k < 1) throw config_error("ConfigInvalid", "k must be >= 1");
    }
};

/// First-layer weights w (length 2k), output scalar v, and the L2 weight
/// lambda they were trained under.
struct GlmParams {
    std::vector<double> w;
    double v = 1.0;
    double lambda = 0.0;
    double final_grad_norm = 0.0;
    std::size_t steps_taken = 0;
    bool converged = false;
    std::vector<double> loss_history; // regularized loss before each step
};

/// Feature matrix (n x 2k) with one binary label per row for each task.
struct GlmDataset {
    Matrix x;
    std::vector<std::uint8_t> y_alice;
    std::vector<std::uint8_t> y_bob;
};

/* Covariance construction
 * -----------------------
 *
 * Pairwise: Sigma(alpha) = (1-alpha) I + alpha D, where D pairs feature i
 * with feature k+i (identity blocks everywhere).
 *
 * Global:   Sigma(alpha) = (1-alpha) I + D(alpha), with |alpha| all-ones
 * blocks on the diagonal and alpha all-ones blocks off it. Note the printed
 * formula makes the marginal variance 1 + 2|alpha| when alpha < 0; it is
 * kept exactly as stated.
 */

inline Matrix build_covariance(const CorrelationSpec &spec) {
    spec.validate();
    const std::size_t k = spec.k, n = 2 * k;
    const double a = spec.alpha;
    Matrix sigma(n, n);

    for (std::size_t i = 0; i < n; ++i) sigma(i, i) = 1.0 - a;

    if (spec.scenario == Scenario::Pairwise) {
        for (std::size_t i = 0; i < n; ++i) sigma(i, i) += a; // diagonal of D
        for (std::size_t i = 0; i < k; ++i) {
            sigma(i, k + i) += a;
            sigma(k + i, i) += a;
        }
    } else {
        double aa = std::abs(a);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                bool same_block = (i < k) == (j < k);
                sigma(i, j) += same_block ? aa : a;
            }
        }
    }
    return sigma;
}

/* Data generation
 * ---------------
 */

/// x ~ MVN(0, Sigma(alpha)); labels are Bernoulli with success probability
/// sigmoid of the sum over each task's own feature block.
inline GlmDataset sample_glm_dataset(const CorrelationSpec &spec, std::size_t n,
                                     RngStream &rng) {
    if (n < 1) throw config_error("ConfigInvalid", "dataset size must be >= 1");
    const std::size_t k = spec.k;
    Matrix factor = numkit::cholesky(build_covariance(spec));

    GlmDataset ds;
    ds.x = numkit::sample_mvn(factor, n, rng);
    ds.y_alice.resize(n);
    ds.y_bob.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < k; ++i) sa += ds.x(r, i);
        for (std::size_t i = k; i < 2 * k; ++i) sb += ds.x(r, i);
        ds.y_alice[r] = rng.next_double() < stable_sigmoid(sa) ? 1 : 0;
        ds.y_bob[r] = rng.next_double() < stable_sigmoid(sb) ? 1 : 0;
    }
    return ds;
}

/* Training
 * --------
 */

namespace detail {

inline const std::vector<std::uint8_t> &labels_for(const GlmDataset &data, bool alice) {
    return alice ? data.y_alice : data.y_bob;
}

} // namespace detail

/// Safe full-batch step size for the regularized logistic objective:
/// curvature is bounded by lambda_max(Sigma)/4 + 2*lambda, and lambda_max
/// has a closed form for both scenarios.
inline double suggested_glm_lr(const CorrelationSpec &spec, double lambda) {
    double a = spec.alpha, k = static_cast<double>(spec.k);
    double lam_max;
    if (spec.scenario == Scenario::Pairwise) {
        lam_max = std::max(1.0 + a, 1.0 - a);
    } else {
        lam_max = (1.0 - a) + 2.0 * k * std::abs(a);
    }
    return 1.0 / (0.25 * lam_max + 2.0 * lambda);
}

/** Full-batch gradient descent on the empirical cross-entropy of
 * sigmoid(w^T x) against Alice's labels, plus lambda*||w||^2, with the
 * output scalar clamped to v = 1. Exits early once the gradient norm
 * drops below 1e-5. */
inline GlmParams train_alice_glm(const GlmDataset &data, double lambda, std::size_t steps,
                                 double lr) {
    if (!(lambda > 0.0))
        throw config_error("ConfigInvalid", "lambda must be > 0 so the optimum is unique");
    const std::size_t n = data.x.rows(), d = data.x.cols();

    GlmParams p;
    p.w.assign(d, 0.0);
    p.v = 1.0;
    p.lambda = lambda;

    std::vector<double> grad(d);
    for (std::size_t step = 0; step < steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double z = 0.0;
            for (std::size_t i = 0; i < d; ++i) z += p.w[i] * data.x(r, i);
            double y = static_cast<double>(data.y_alice[r]);
            // cross-entropy via softplus keeps large |z| finite
            loss += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - y * z;
            double resid = stable_sigmoid(z) - y;
            for (std::size_t i = 0; i < d; ++i) grad[i] += resid * data.x(r, i);
        }
        loss /= static_cast<double>(n);
        double gnorm2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            loss += lambda * p.w[i] * p.w[i];
            grad[i] = grad[i] / static_cast<double>(n) + 2.0 * lambda * p.w[i];
            gnorm2 += grad[i] * grad[i];
        }
        p.loss_history.push_back(loss);
        if (!std::isfinite(gnorm2) || !std::isfinite(loss))
            throw numeric_error("NonFinite", "GLM loss gradient diverged; lower the lr");

        p.final_grad_norm = std::sqrt(gnorm2);
        p.steps_taken = step;
        if (p.final_grad_norm < 1e-5) {
            p.converged = true;
            return p;
        }
        for (std::size_t i = 0; i < d; ++i) p.w[i] -= lr * grad[i];
        p.steps_taken = step + 1;
    }
    return p;
}

/** Bob's one-parameter fine-tune: minimize cross-entropy of
 * sigmoid(v' * w^T x) against his labels over v' alone, with the backbone
 * w frozen. The problem is 1-D and convex; plain gradient descent with a
 * curvature-derived step size reaches gradient < 1e-6. */
inline double finetune_bob_scalar(const std::vector<double> &w_star, const GlmDataset &data,
                                  std::size_t steps, double lr = 0.0) {
    const std::size_t n = data.x.rows(), d = data.x.cols();
    std::vector<double> f(n);
    double mean_f2 = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double z = 0.0;
        for (std::size_t i = 0; i < d; ++i) z += w_star[i] * data.x(r, i);
        if (!std::isfinite(z)) throw numeric_error("NonFinite", "backbone output not finite");
        f[r] = z;
        mean_f2 += z * z;
    }
    mean_f2 /= static_cast<double>(n);
    if (mean_f2 < 1e-300) return 0.0; // dead backbone: any v' is a stationary point
    if (lr <= 0.0) lr = 4.0 / mean_f2;

    double v = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
        double g = 0.0;
        for (std::size_t r = 0; r < n; ++r)
            g += (stable_sigmoid(v * f[r]) - static_cast<double>(data.y_bob[r])) * f[r];
        g /= static_cast<double>(n);
        if (!std::isfinite(g)) throw numeric_error("NonFinite", "fine-tune gradient diverged");
        if (std::abs(g) < 1e-6) break;
        v -= lr * g;
    }
    return v;
}

/* Evaluation
 * ----------
 */

/// Accuracy (percent) of the thresholded predictor 1[sigmoid(v*w^T x) > 0.5]
/// against the chosen labels. Ties at exactly 0.5 go to class 0.
inline double evaluate_glm(const std::vector<double> &w, double v, const GlmDataset &data,
                           bool against_alice = false) {
    const std::size_t n = data.x.rows(), d = data.x.cols();
    const auto &labels = detail::labels_for(data, against_alice);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
        double z = 0.0;
        for (std::size_t i = 0; i < d; ++i) z += w[i] * data.x(r, i);
        int pred = (v * z > 0.0) ? 1 : 0; // sigmoid(t) > 0.5 iff t > 0
        hits += (pred == static_cast<int>(labels[r]));
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

/* Alpha sweeps
 * ------------
 */

struct SweepConfig {
    std::size_t n_train = 50000;
    std::size_t n_test = 50000;
    double lambda = 1e-3;
    std::size_t train_steps = 1500;
    std::size_t finetune_steps = 2000;
    std::size_t seeds = 3;
    std::uint64_t master_seed = 0;
};

struct SweepCell {
    Scenario scenario;
    double alpha;
    std::size_t k;
    std::size_t seed_count;
    double acc_pretrained;     // Alice's (w*, v = 1) used directly on Bob's labels
    double acc_finetuned;      // after Bob's scalar fine-tune
    double stderr_pretrained;
    double stderr_finetuned;
};

namespace detail {

struct MeanStderr {
    double mean = 0.0, stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double> &xs) {
    MeanStderr out;
    const double n = static_cast<double>(xs.size());
    for (double x : xs) out.mean += x;
    out.mean /= n;
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    }
    return out;
}

} // namespace detail

/// One pre-train + fine-tune cycle at a fixed spec and seed. Returns the
/// pair (accuracy with Alice's network as-is, accuracy after fine-tuning),
/// both measured on held-out data against Bob's labels.
inline std::pair<double, double> run_glm_cell(const CorrelationSpec &spec,
                                              const SweepConfig &cfg, RngStream cell_rng) {
    RngStream train_rng = cell_rng.derive("train-data");
    RngStream test_rng = cell_rng.derive("test-data");
    GlmDataset train = sample_glm_dataset(spec, cfg.n_train, train_rng);
    GlmDataset test = sample_glm_dataset(spec, cfg.n_test, test_rng);

    double lr = suggested_glm_lr(spec, cfg.lambda);
    GlmParams alice = train_alice_glm(train, cfg.lambda, cfg.train_steps, lr);
    double acc_as_is = evaluate_glm(alice.w, 1.0, test);

    double v_prime = finetune_bob_scalar(alice.w, train, cfg.finetune_steps);
    double acc_ft = evaluate_glm(alice.w, v_prime, test);
    return {acc_as_is, acc_ft};
}

/// Full (alpha, k) grid. Cell (i,j,scenario) draws its RNG stream from the
/// master seed and the cell coordinates only, so results do not depend on
/// traversal order.
inline std::vector<SweepCell> sweep_alpha(const std::vector<double> &alpha_grid,
                                          const std::vector<std::size_t> &ks,
                                          Scenario scenario, const SweepConfig &cfg) {
    RngStream root(cfg.master_seed, 0);
    RngStream sweep_rng = root.derive("glm-sweep").derive(scenario == Scenario::Pairwise ? 1 : 2);

    std::vector<SweepCell> table;
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        for (std::size_t ai = 0; ai < alpha_grid.size(); ++ai) {
            if (!(alpha_grid[ai] >= -1.0 && alpha_grid[ai] <= 1.0))
                throw config_error("ConfigInvalid", "alpha grid value out of [-1,1]");
            CorrelationSpec spec{alpha_grid[ai], ks[ki], scenario};
            RngStream cell_rng = sweep_rng.derive(ki * 4096 + ai);

            std::vector<double> pre, fin;
            for (std::size_t s = 0; s < cfg.seeds; ++s) {
                auto [a, f] = run_glm_cell(spec, cfg, cell_rng.derive(s));
                pre.push_back(a);
                fin.push_back(f);
            }
            auto mp = detail::mean_stderr(pre);
            auto mf = detail::mean_stderr(fin);
            table.push_back({scenario, alpha_grid[ai], ks[ki], cfg.seeds, mp.mean, mf.mean,
                             mp.stderr_, mf.stderr_});
        }
    }
    return table;
}

} // namespace xfl::glmlab

#endif // XFL_GLMLAB_HPP
