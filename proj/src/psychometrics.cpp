#include "adaptest/psychometrics.hpp"

#include "adaptest/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

namespace adaptest::psychometrics {

namespace {

double population_variance(std::span<const double> v) {
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size());
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

}  // namespace

double ScoreStats::sd() const { return std::sqrt(variance); }

ScoreStats score_stats(std::span<const double> scores) {
    if (scores.empty()) throw ValidationError("score_stats: no scores");
    ScoreStats s;
    s.n = scores.size();
    s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(s.n);
    s.variance = population_variance(scores);
    return s;
}

StandardScale z_scale() { return {"z", 0.0, 1.0}; }
StandardScale iq_scale() { return {"IQ", 100.0, 15.0}; }

StandardScale make_scale(std::string name, double target_mean, double target_sd) {
    if (!(target_sd > 0.0)) throw ValidationError("standard scale '" + name + "' needs a positive sd");
    return {std::move(name), target_mean, target_sd};
}

double cronbach_alpha(const ResponseDataset& dataset) {
    const std::size_t items = dataset.item_count();
    const std::size_t students = dataset.students.size();
    if (items < 2) throw ValidationError("cronbach_alpha: need at least two items");
    if (students < 2) throw ValidationError("cronbach_alpha: need at least two students");

    std::vector<std::vector<double>> columns(items, std::vector<double>(students, 0.0));
    std::vector<double> totals(students, 0.0);
    for (std::size_t i = 0; i < items; ++i) {
        bool any = false;
        for (std::size_t s = 0; s < students; ++s) {
            const auto& g = dataset.students[s].grades[i];
            if (g) {
                any = true;
                columns[i][s] = *g;
                totals[s] += *g;
            }
        }
        if (!any) throw ValidationError("cronbach_alpha: item '" + dataset.item_ids[i] + "' has no observed grades");
    }

    double item_var_sum = 0.0;
    for (const auto& col : columns) item_var_sum += population_variance(col);
    double total_var = population_variance(totals);
    if (total_var <= 0.0) throw UndefinedStatistic("cronbach_alpha: total score variance is zero");
    double n = static_cast<double>(items);
    return n / (n - 1.0) * (1.0 - item_var_sum / total_var);
}

ReliabilityTier reliability_tier(double alpha) {
    if (alpha < 0.5) return ReliabilityTier::unusable;
    if (alpha < 0.9) return ReliabilityTier::acceptable;
    return ReliabilityTier::quality;
}

std::string to_string(ReliabilityTier tier) {
    switch (tier) {
        case ReliabilityTier::unusable: return "unusable";
        case ReliabilityTier::acceptable: return "acceptable";
        case ReliabilityTier::quality: return "quality";
    }
    return "unusable";
}

double standardize(double x, const ScoreStats& stats, const StandardScale& scale) {
    if (!(stats.variance > 0.0)) throw UndefinedStatistic("standardize: zero variance");
    return scale.target_mean + scale.target_sd * (x - stats.mean) / stats.sd();
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("inverse_normal_cdf: p must lie in (0, 1)");

    // Acklam's rational approximation (relative error below 1.2e-9).
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // One Halley step against erfc brings the error to machine precision.
    double e = normal_cdf(x) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

std::vector<double> mid_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        // 1-based ranks i+1 .. j+1 share their mean
        double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

std::vector<double> mccall_normalize(std::span<const double> raw_scores) {
    if (raw_scores.size() < 3) throw ValidationError("mccall_normalize: need at least three scores");
    const double n = static_cast<double>(raw_scores.size());
    std::vector<double> ranks = mid_ranks(raw_scores);
    std::vector<double> out(ranks.size());
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        out[i] = inverse_normal_cdf((ranks[i] - 0.5) / n);
    }
    return out;
}

Correlation pearson_correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ValidationError("pearson_correlation: length mismatch");
    if (x.size() < 3) throw ValidationError("pearson_correlation: need at least three pairs");
    const double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw UndefinedStatistic("pearson_correlation: constant input");

    Correlation c;
    c.n = x.size();
    c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    if (std::abs(c.r) >= 1.0 || x.size() == 2) {
        c.p_value = std::abs(c.r) >= 1.0 ? 0.0 : 1.0;
        return c;
    }
    double df = n - 2.0;
    double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
    boost::math::students_t dist(df);
    c.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
    return c;
}

double spearman_correlation(std::span<const double> x, std::span<const double> y) {
    auto rx = mid_ranks(x);
    auto ry = mid_ranks(y);
    return pearson_correlation(rx, ry).r;
}

std::optional<double> encode_factor(const std::string& factor, const std::string& value) {
    (void)factor;
    if (value.empty() || value == kUnknown) return std::nullopt;
    std::string v = lower(value);
    if (v == "f" || v == "female" || v == "woman" || v == "girl") return 1.0;
    if (v == "m" || v == "male" || v == "man" || v == "boy") return -1.0;
    if (v == "yes" || v == "true" || v == "y") return 1.0;
    if (v == "no" || v == "false" || v == "n") return 0.0;
    char* end = nullptr;
    double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0' || !std::isfinite(d)) return std::nullopt;
    return d;
}

ValidityReport validity_report(const ResponseDataset& dataset, const std::vector<std::string>& factors,
                               const std::vector<std::string>& subset_items, const std::string& subset_name) {
    ValidityReport report;
    std::vector<double> total = raw_scores(dataset);

    std::vector<double> subset;
    if (!subset_items.empty()) {
        std::vector<std::size_t> cols;
        for (const auto& id : subset_items) {
            auto col = dataset.column_of(id);
            if (!col) throw ValidationError("validity_report: unknown subset item '" + id + "'");
            cols.push_back(*col);
        }
        subset.assign(dataset.students.size(), 0.0);
        for (std::size_t s = 0; s < dataset.students.size(); ++s) {
            for (auto c : cols) {
                if (dataset.students[s].grades[c]) subset[s] += *dataset.students[s].grades[c];
            }
        }
    }

    auto correlate = [&](const std::string& target, const std::vector<double>& scores) {
        for (const auto& factor : factors) {
            if (std::find(dataset.info_names.begin(), dataset.info_names.end(), factor) == dataset.info_names.end()) {
                report.warnings.push_back("factor '" + factor + "' not present in dataset; skipped");
                continue;
            }
            std::vector<double> xs, ys;
            for (std::size_t s = 0; s < dataset.students.size(); ++s) {
                auto it = dataset.students[s].info.find(factor);
                if (it == dataset.students[s].info.end()) continue;
                auto v = encode_factor(factor, it->second);
                if (!v) continue;
                xs.push_back(*v);
                ys.push_back(scores[s]);
            }
            if (xs.empty()) {
                report.warnings.push_back("factor '" + factor + "' has only unknown values; skipped");
                continue;
            }
            try {
                report.rows.push_back({target, factor, pearson_correlation(xs, ys)});
            } catch (const Error& e) {
                report.warnings.push_back("factor '" + factor + "' against " + target + ": " + e.what());
            }
        }
    };

    correlate("score", total);
    if (!subset.empty()) {
        try {
            report.rows.push_back({subset_name, "score", pearson_correlation(subset, total)});
        } catch (const Error& e) {
            report.warnings.push_back(subset_name + " against score: " + e.what());
        }
        correlate(subset_name, subset);
    }
    return report;
}

ShapeReport distribution_shape(std::span<const double> scores) {
    if (scores.size() < 3) throw ValidationError("distribution_shape: need at least three scores");
    ScoreStats s = score_stats(scores);
    if (!(s.variance > 0.0)) throw UndefinedStatistic("distribution_shape: zero variance");
    double m3 = 0.0, m4 = 0.0;
    for (double x : scores) {
        double d = x - s.mean;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    const double n = static_cast<double>(scores.size());
    m3 /= n;
    m4 /= n;
    return {m3 / std::pow(s.variance, 1.5), m4 / (s.variance * s.variance) - 3.0};
}

}  // namespace adaptest::psychometrics
