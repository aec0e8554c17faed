#include "adaptest/irt.hpp"

#include "adaptest/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace adaptest::irt {

namespace {

double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

double log_prob(const ItemParams& p, double theta, bool correct) {
    double prob = irf(p, theta);
    prob = std::clamp(prob, 1e-300, 1.0);
    double q = std::clamp(1.0 - irf(p, theta), 1e-300, 1.0);
    return correct ? std::log(prob) : std::log(q);
}

double log_likelihood(std::span<const ItemParams> items, std::span<const bool> answers, double theta) {
    double ll = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) ll += log_prob(items[i], theta, answers[i]);
    return ll;
}

// Golden-section maximization of f on [lo, hi].
template <typename F>
double golden_section_max(F f, double lo, double hi, double tol) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    while (hi - lo > tol) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    return 0.5 * (lo + hi);
}

struct Responses {
    // -1 missing, 0 incorrect, 1 correct; student-major
    std::vector<signed char> cells;
    std::size_t students = 0;
    std::size_t items = 0;

    signed char at(std::size_t s, std::size_t i) const { return cells[s * items + i]; }
};

Responses binary_responses(const ResponseDataset& dataset) {
    Responses r;
    r.students = dataset.students.size();
    r.items = dataset.item_count();
    r.cells.assign(r.students * r.items, -1);
    for (std::size_t s = 0; s < r.students; ++s) {
        for (std::size_t i = 0; i < r.items; ++i) {
            const auto& g = dataset.students[s].grades[i];
            if (!g) continue;
            if (*g != 0 && *g != 1) {
                throw ValidationError("IRT calibration needs 0/1 grades; item '" + dataset.item_ids[i] +
                                      "' has grade " + std::to_string(*g));
            }
            r.cells[s * r.items + i] = static_cast<signed char>(*g);
        }
    }
    return r;
}

// Expected complete-data log-likelihood of one item and its gradient in (a, b, c).
struct ItemObjective {
    const std::vector<double>& nodes;
    const std::vector<double>& expected_n;  // expected examinees per node who answered
    const std::vector<double>& expected_r;  // expected correct answers per node

    double value(const std::array<double, 3>& x, std::array<double, 3>* grad) const {
        double f = 0.0;
        std::array<double, 3> g{0.0, 0.0, 0.0};
        const double a = x[0], b = x[1], c = x[2];
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            double n = expected_n[k];
            if (n <= 0.0) continue;
            double r = expected_r[k];
            double l = logistic(a * (nodes[k] - b));
            double p = std::clamp(c + (1.0 - c) * l, 1e-12, 1.0 - 1e-12);
            double q = 1.0 - p;
            f += r * std::log(p) + (n - r) * std::log(q);
            if (grad) {
                double dfdp = r / p - (n - r) / q;
                double dl = l * (1.0 - l);
                g[0] += dfdp * (1.0 - c) * dl * (nodes[k] - b);
                g[1] += dfdp * (-(1.0 - c) * dl * a);
                g[2] += dfdp * (1.0 - l);
            }
        }
        if (grad) *grad = g;
        return f;
    }
};

// Projected BFGS maximizing `obj` inside the box [lo, hi]. Never returns a
// point worse than the start.
std::array<double, 3> maximize_in_box(const ItemObjective& obj, std::array<double, 3> x,
                                      const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
    for (int d = 0; d < 3; ++d) x[d] = std::clamp(x[d], lo[d], hi[d]);
    std::array<double, 3> g;
    double f = obj.value(x, &g);

    // Inverse Hessian approximation of -f.
    std::array<std::array<double, 3>, 3> h{};
    for (int d = 0; d < 3; ++d) h[d][d] = 0.1;

    for (int iter = 0; iter < 100; ++iter) {
        std::array<bool, 3> fixed{};
        for (int d = 0; d < 3; ++d) {
            fixed[d] = lo[d] == hi[d] || (x[d] <= lo[d] && g[d] < 0.0) || (x[d] >= hi[d] && g[d] > 0.0);
        }
        // Ascent direction H g restricted to free coordinates.
        std::array<double, 3> dir{};
        for (int i = 0; i < 3; ++i) {
            if (fixed[i]) continue;
            for (int j = 0; j < 3; ++j) {
                if (!fixed[j]) dir[i] += h[i][j] * g[j];
            }
        }
        double slope = 0.0;
        for (int d = 0; d < 3; ++d) slope += dir[d] * g[d];
        if (!(slope > 0.0)) {
            for (int d = 0; d < 3; ++d) dir[d] = fixed[d] ? 0.0 : g[d] * 0.01;
            for (auto& row : h) row.fill(0.0);
            for (int d = 0; d < 3; ++d) h[d][d] = 0.01;
        }
        double pg_norm = 0.0;
        for (int d = 0; d < 3; ++d) {
            if (!fixed[d]) pg_norm = std::max(pg_norm, std::abs(g[d]));
        }
        if (pg_norm < 1e-8) break;

        double step = 1.0;
        bool accepted = false;
        std::array<double, 3> xn{}, gn{};
        double fn = f;
        for (int ls = 0; ls < 40; ++ls) {
            for (int d = 0; d < 3; ++d) xn[d] = std::clamp(x[d] + step * dir[d], lo[d], hi[d]);
            fn = obj.value(xn, &gn);
            double gain = 0.0;
            for (int d = 0; d < 3; ++d) gain += g[d] * (xn[d] - x[d]);
            if (std::isfinite(fn) && fn >= f + 1e-4 * gain && fn >= f) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        std::array<double, 3> s{}, y{};
        for (int d = 0; d < 3; ++d) {
            s[d] = xn[d] - x[d];
            y[d] = g[d] - gn[d];  // gradient change of -f
        }
        double sy = s[0] * y[0] + s[1] * y[1] + s[2] * y[2];
        double improvement = fn - f;
        x = xn;
        g = gn;
        f = fn;
        if (sy > 1e-12) {
            std::array<double, 3> hy{};
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) hy[i] += h[i][j] * y[j];
            }
            double yhy = y[0] * hy[0] + y[1] * hy[1] + y[2] * hy[2];
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    h[i][j] += ((sy + yhy) * s[i] * s[j]) / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if (improvement < 1e-12 * (1.0 + std::abs(f))) break;
    }
    return x;
}

}  // namespace

void validate(const ItemParams& params) {
    if (!std::isfinite(params.a) || !std::isfinite(params.b)) {
        throw ValidationError("IRT item parameters a and b must be finite");
    }
    if (!(params.c >= 0.0 && params.c < 1.0)) throw ValidationError("IRT guessing parameter c must lie in [0, 1)");
}

double irf(const ItemParams& params, double theta) {
    return params.c + (1.0 - params.c) * logistic(params.a * (theta - params.b));
}

double irf_derivative(const ItemParams& params, double theta) {
    double l = logistic(params.a * (theta - params.b));
    return params.a * (1.0 - params.c) * l * (1.0 - l);
}

ItemInformation item_information(const ItemParams& params, double theta) {
    double p = irf(params, theta);
    double q = 1.0 - p;
    constexpr double eps = 1e-15;
    if (p <= eps || q <= eps) return {0.0, true};
    double dp = irf_derivative(params, theta);
    return {dp * dp / (p * q), false};
}

double standard_error(double info) {
    if (!(info > 0.0)) return std::numeric_limits<double>::infinity();
    return 1.0 / std::sqrt(info);
}

QuadratureGrid::QuadratureGrid(std::vector<double> nodes, std::vector<double> weights, double prior_mean,
                               double prior_sd)
    : nodes_(std::move(nodes)), weights_(std::move(weights)), prior_mean_(prior_mean), prior_sd_(prior_sd) {
    if (nodes_.empty() || nodes_.size() != weights_.size()) {
        throw ValidationError("quadrature grid needs matching, non-empty nodes and weights");
    }
    for (std::size_t k = 1; k < nodes_.size(); ++k) {
        if (!(nodes_[k] > nodes_[k - 1])) throw ValidationError("quadrature nodes must be strictly increasing");
    }
    double total = 0.0;
    for (double w : weights_) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("quadrature weights must be positive");
        total += w;
    }
    // Already-normalized weights are kept as given so a reload is bit-exact.
    if (std::abs(total - 1.0) > 1e-12) {
        for (double& w : weights_) w /= total;
    }
    if (!(prior_sd_ > 0.0)) throw ValidationError("quadrature prior sd must be positive");
}

QuadratureGrid QuadratureGrid::normal(std::size_t count, double lo, double hi, double mean, double sd) {
    if (count < 2 || !(hi > lo)) throw ValidationError("normal quadrature grid needs >= 2 nodes on a non-empty range");
    std::vector<double> nodes(count), weights(count);
    for (std::size_t k = 0; k < count; ++k) {
        nodes[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
        double z = (nodes[k] - mean) / sd;
        weights[k] = std::exp(-0.5 * z * z);
    }
    return QuadratureGrid(std::move(nodes), std::move(weights), mean, sd);
}

std::string to_string(EstimationMethod method) {
    switch (method) {
        case EstimationMethod::eap: return "eap";
        case EstimationMethod::map: return "map";
        case EstimationMethod::mle: return "mle";
    }
    return "eap";
}

EstimationMethod estimation_method_from_string(const std::string& s) {
    if (s == "eap") return EstimationMethod::eap;
    if (s == "map") return EstimationMethod::map;
    if (s == "mle") return EstimationMethod::mle;
    throw ValidationError("unknown estimation method '" + s + "'");
}

std::vector<double> posterior_weights(std::span<const ItemParams> items, std::span<const bool> answers,
                                      const QuadratureGrid& grid) {
    if (items.size() != answers.size()) throw ValidationError("estimate_theta: items and answers differ in length");
    const auto& nodes = grid.nodes();
    const auto& w = grid.weights();
    std::vector<double> logpost(nodes.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        logpost[k] = std::log(w[k]) + log_likelihood(items, answers, nodes[k]);
        mx = std::max(mx, logpost[k]);
    }
    double total = 0.0;
    std::vector<double> post(nodes.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        post[k] = std::exp(logpost[k] - mx);
        total += post[k];
    }
    for (double& p : post) p /= total;
    return post;
}

ThetaEstimate estimate_theta(std::span<const ItemParams> items, std::span<const bool> answers,
                             const QuadratureGrid& grid, EstimationMethod method) {
    if (items.size() != answers.size()) throw ValidationError("estimate_theta: items and answers differ in length");
    const auto& nodes = grid.nodes();
    ThetaEstimate est;
    est.method = method;

    if (method == EstimationMethod::eap) {
        auto post = posterior_weights(items, answers, grid);
        double mean = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) mean += post[k] * nodes[k];
        double var = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) var += post[k] * (nodes[k] - mean) * (nodes[k] - mean);
        est.theta = mean;
        est.se = std::sqrt(var);
        return est;
    }

    if (method == EstimationMethod::mle && items.empty()) {
        throw ValidationError("MLE ability estimate needs at least one answer");
    }
    const double pm = grid.prior_mean(), psd = grid.prior_sd();
    auto objective = [&](double theta) {
        double v = log_likelihood(items, answers, theta);
        if (method == EstimationMethod::map) {
            double z = (theta - pm) / psd;
            v -= 0.5 * z * z;
        }
        return v;
    };
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        double v = objective(nodes[k]);
        if (v > best_v) {
            best_v = v;
            best = k;
        }
    }
    double lo = nodes[best == 0 ? 0 : best - 1];
    double hi = nodes[best + 1 < nodes.size() ? best + 1 : best];
    est.theta = hi > lo ? golden_section_max(objective, lo, hi, 1e-6) : nodes[best];

    double info = 0.0;
    for (const auto& p : items) info += item_information(p, est.theta).value;
    if (method == EstimationMethod::map) info += 1.0 / (psd * psd);
    est.se = standard_error(info);
    return est;
}

std::size_t select_max_information(std::span<const ItemParams> candidates, double theta) {
    if (candidates.empty()) throw ValidationError("select_max_information: no candidates");
    std::size_t best = 0;
    double best_info = item_information(candidates[0], theta).value;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        double info = item_information(candidates[i], theta).value;
        if (info > best_info) {
            best_info = info;
            best = i;
        }
    }
    return best;
}

double marginal_log_likelihood(const ResponseDataset& dataset, std::span<const ItemParams> params,
                               const QuadratureGrid& grid) {
    if (params.size() != dataset.item_count()) throw ValidationError("marginal_log_likelihood: parameter count mismatch");
    Responses resp = binary_responses(dataset);
    const auto& nodes = grid.nodes();
    const auto& w = grid.weights();
    double total = 0.0;
    std::vector<double> logl(nodes.size());
    for (std::size_t s = 0; s < resp.students; ++s) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            double ll = std::log(w[k]);
            for (std::size_t i = 0; i < resp.items; ++i) {
                auto x = resp.at(s, i);
                if (x >= 0) ll += log_prob(params[i], nodes[k], x == 1);
            }
            logl[k] = ll;
            mx = std::max(mx, ll);
        }
        double sum = 0.0;
        for (double v : logl) sum += std::exp(v - mx);
        total += mx + std::log(sum);
    }
    return total;
}

CalibrationResult calibrate_mml(const ResponseDataset& dataset, const QuadratureGrid& grid,
                                const CalibrationConfig& config) {
    CalibrationResult result;
    Responses resp = binary_responses(dataset);
    const std::size_t n_items = resp.items;
    const auto& nodes = grid.nodes();
    const auto& w = grid.weights();
    const std::size_t K = nodes.size();

    if (resp.students < config.min_students) {
        result.warnings.push_back("only " + std::to_string(resp.students) + " examinees; at least " +
                                  std::to_string(config.min_students) + " recommended");
    }

    // Exclude items without both outcomes observed.
    std::vector<bool> active(n_items, true);
    std::vector<ItemParams> params(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
        std::size_t n = 0, r = 0;
        for (std::size_t s = 0; s < resp.students; ++s) {
            auto x = resp.at(s, i);
            if (x < 0) continue;
            ++n;
            r += static_cast<std::size_t>(x);
        }
        if (n == 0 || r == 0 || r == n) {
            active[i] = false;
            std::string why = n == 0 ? "no observed answers" : (r == 0 ? "all answers incorrect" : "all answers correct");
            result.excluded.push_back(dataset.item_ids[i] + ": " + why);
            continue;
        }
        double pbar = std::clamp(static_cast<double>(r) / static_cast<double>(n), 0.02, 0.98);
        params[i].a = std::clamp(1.0, config.a_min, config.a_max);
        params[i].b = std::clamp(-std::log(pbar / (1.0 - pbar)) * 1.4, config.b_min, config.b_max);
        params[i].c = config.estimate_guessing ? std::min(0.1, config.c_max) : 0.0;
    }

    const std::array<double, 3> lo{config.a_min, config.b_min, 0.0};
    const std::array<double, 3> hi{config.a_max, config.b_max, config.estimate_guessing ? config.c_max : 0.0};

    std::vector<std::vector<double>> exp_n(n_items, std::vector<double>(K));
    std::vector<std::vector<double>> exp_r(n_items, std::vector<double>(K));
    std::vector<double> logw(K), logl(K), post(K);
    for (std::size_t k = 0; k < K; ++k) logw[k] = std::log(w[k]);
    // log p and log q per item and node for the current parameters
    std::vector<double> lp(n_items * K), lq(n_items * K);

    auto e_step = [&]() {
        for (std::size_t i = 0; i < n_items; ++i) {
            std::fill(exp_n[i].begin(), exp_n[i].end(), 0.0);
            std::fill(exp_r[i].begin(), exp_r[i].end(), 0.0);
            for (std::size_t k = 0; k < K; ++k) {
                double p = std::clamp(irf(params[i], nodes[k]), 1e-300, 1.0);
                double q = std::clamp(1.0 - irf(params[i], nodes[k]), 1e-300, 1.0);
                lp[i * K + k] = std::log(p);
                lq[i * K + k] = std::log(q);
            }
        }
        double total = 0.0;
        for (std::size_t s = 0; s < resp.students; ++s) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                double ll = logw[k];
                for (std::size_t i = 0; i < n_items; ++i) {
                    if (!active[i]) continue;
                    auto x = resp.at(s, i);
                    if (x == 1) {
                        ll += lp[i * K + k];
                    } else if (x == 0) {
                        ll += lq[i * K + k];
                    }
                }
                logl[k] = ll;
                mx = std::max(mx, ll);
            }
            double sum = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                post[k] = std::exp(logl[k] - mx);
                sum += post[k];
            }
            total += mx + std::log(sum);
            for (std::size_t k = 0; k < K; ++k) post[k] /= sum;
            for (std::size_t i = 0; i < n_items; ++i) {
                if (!active[i]) continue;
                auto x = resp.at(s, i);
                if (x < 0) continue;
                for (std::size_t k = 0; k < K; ++k) {
                    exp_n[i][k] += post[k];
                    if (x == 1) exp_r[i][k] += post[k];
                }
            }
        }
        return total;
    };

    double ll = e_step();
    result.loglik_trace.push_back(ll);
    for (int iter = 0; iter < config.max_iters; ++iter) {
        for (std::size_t i = 0; i < n_items; ++i) {
            if (!active[i]) continue;
            ItemObjective obj{nodes, exp_n[i], exp_r[i]};
            auto x = maximize_in_box(obj, {params[i].a, params[i].b, params[i].c}, lo, hi);
            params[i] = {x[0], x[1], x[2]};
        }
        double next = e_step();
        result.loglik_trace.push_back(next);
        result.iterations = iter + 1;
        double gain = next - ll;
        ll = next;
        if (gain < config.tol) {
            result.converged = true;
            break;
        }
    }
    if (!result.converged) {
        result.warnings.push_back("EM did not converge within " + std::to_string(config.max_iters) +
                                  " iterations; returning best-so-far parameters");
    }

    result.params.resize(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
        if (active[i]) result.params[i] = params[i];
    }
    return result;
}

}  // namespace adaptest::irt
