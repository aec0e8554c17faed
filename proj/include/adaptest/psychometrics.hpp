#pragma once

#include <span>
#include <string>
#include <vector>

#include "adaptest/data_model.hpp"

namespace adaptest::psychometrics {

struct ScoreStats {
    double mean = 0.0;
    double variance = 0.0;  // population (1/n)
    std::size_t n = 0;

    double sd() const;
};

ScoreStats score_stats(std::span<const double> scores);

struct StandardScale {
    std::string name;
    double target_mean = 0.0;
    double target_sd = 1.0;
};

StandardScale z_scale();
StandardScale iq_scale();
StandardScale make_scale(std::string name, double target_mean, double target_sd);

// Cronbach's alpha over the numeric item scores; missing cells score 0.
double cronbach_alpha(const ResponseDataset& dataset);

enum class ReliabilityTier { unusable, acceptable, quality };

ReliabilityTier reliability_tier(double alpha);
std::string to_string(ReliabilityTier tier);

// x' = mu' + sigma' (x - mu) / sigma
double standardize(double x, const ScoreStats& stats, const StandardScale& scale);

double normal_cdf(double x);
// Inverse standard normal CDF for p in (0, 1).
double inverse_normal_cdf(double p);

// Area (McCall) normalization: mid-rank percentiles mapped through the
// inverse normal CDF; ties share their mean rank. Output keeps input order.
std::vector<double> mccall_normalize(std::span<const double> raw_scores);

struct Correlation {
    double r = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

// Sample Pearson r with two-sided p-value from Student t (n - 2 df).
Correlation pearson_correlation(std::span<const double> x, std::span<const double> y);

// Pearson correlation of the rank vectors (mid-ranks for ties).
double spearman_correlation(std::span<const double> x, std::span<const double> y);

std::vector<double> mid_ranks(std::span<const double> values);

// Maps an auxiliary factor value to a number: genders as female = 1,
// male = -1; yes/no style flags as 1/0; everything else parsed as a
// number. Returns nullopt for kUnknown and unparseable values.
std::optional<double> encode_factor(const std::string& factor, const std::string& value);

struct ValidityRow {
    std::string target;  // "score" or the subset name
    std::string factor;
    Correlation correlation;
};

struct ValidityReport {
    std::vector<ValidityRow> rows;
    std::vector<std::string> warnings;
};

// Correlates the total score (and the score over `subset_items`, when
// non-empty) with each named factor. The subset block also correlates
// the subset score with the total score as factor "score".
ValidityReport validity_report(const ResponseDataset& dataset, const std::vector<std::string>& factors,
                               const std::vector<std::string>& subset_items = {},
                               const std::string& subset_name = "subset");

struct ShapeReport {
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
};

// Moment-based normality sanity check of a score distribution.
ShapeReport distribution_shape(std::span<const double> scores);

}  // namespace adaptest::psychometrics
