#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptest/data_model.hpp"

namespace adaptest::irt {

// 3PL item: discrimination a, difficulty b, guessing c.
struct ItemParams {
    double a = 1.0;
    double b = 0.0;
    double c = 0.0;

    bool operator==(const ItemParams& other) const = default;
};

// Checks c in [0, 1) and finite a, b.
void validate(const ItemParams& params);

// p(theta) = c + (1 - c) / (1 + exp(-a (theta - b)))
double irf(const ItemParams& params, double theta);
double irf_derivative(const ItemParams& params, double theta);

struct ItemInformation {
    double value = 0.0;
    bool degenerate = false;  // p saturated at 0 or 1; value forced to 0
};

// Fisher information (p')^2 / (p q) of one item at theta.
ItemInformation item_information(const ItemParams& params, double theta);

// 1 / sqrt(info); +infinity when info <= 0.
double standard_error(double info);

class QuadratureGrid {
public:
    // Nodes strictly increasing, weights positive; weights are normalized.
    // The normal prior parameters are used by MAP refinement between nodes.
    QuadratureGrid(std::vector<double> nodes, std::vector<double> weights, double prior_mean = 0.0,
                   double prior_sd = 1.0);

    // Equispaced nodes on [lo, hi] weighted by the N(mean, sd^2) density.
    static QuadratureGrid normal(std::size_t count = 61, double lo = -4.5, double hi = 4.5, double mean = 0.0,
                                 double sd = 1.0);

    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }
    std::size_t size() const { return nodes_.size(); }
    double prior_mean() const { return prior_mean_; }
    double prior_sd() const { return prior_sd_; }

    bool operator==(const QuadratureGrid& other) const = default;

private:
    std::vector<double> nodes_;
    std::vector<double> weights_;
    double prior_mean_ = 0.0;
    double prior_sd_ = 1.0;
};

enum class EstimationMethod { eap, map, mle };

std::string to_string(EstimationMethod method);
EstimationMethod estimation_method_from_string(const std::string& s);

struct ThetaEstimate {
    double theta = 0.0;
    double se = 0.0;
    EstimationMethod method = EstimationMethod::eap;
};

// Posterior weights over the grid nodes given Bernoulli evidence.
std::vector<double> posterior_weights(std::span<const ItemParams> items, std::span<const bool> answers,
                                      const QuadratureGrid& grid);

// Ability estimate from correct/incorrect answers. Empty evidence gives
// the prior mean/sd for EAP and MAP and throws for MLE.
ThetaEstimate estimate_theta(std::span<const ItemParams> items, std::span<const bool> answers,
                             const QuadratureGrid& grid, EstimationMethod method = EstimationMethod::eap);

// argmax_i I_i(theta); ties go to the lowest index.
std::size_t select_max_information(std::span<const ItemParams> candidates, double theta);

struct CalibrationConfig {
    bool estimate_guessing = true;  // false fits the 2PL (c fixed at 0)
    double c_max = 0.35;
    double a_min = 0.2;
    double a_max = 4.0;
    double b_min = -4.0;
    double b_max = 4.0;
    double tol = 1e-4;  // absolute marginal log-likelihood gain
    int max_iters = 500;
    std::size_t min_students = 30;
};

struct CalibrationResult {
    // Aligned with the dataset columns; nullopt for excluded items.
    std::vector<std::optional<ItemParams>> params;
    std::vector<std::string> excluded;  // "<item>: <reason>"
    std::vector<double> loglik_trace;   // marginal log-likelihood before each M-step and at the end
    std::vector<std::string> warnings;
    int iterations = 0;
    bool converged = false;
};

// Marginal maximum likelihood by EM over the quadrature grid. Accepts
// boolean datasets, or numeric ones whose grades are all 0/1.
CalibrationResult calibrate_mml(const ResponseDataset& dataset, const QuadratureGrid& grid,
                                const CalibrationConfig& config = {});

// Marginal log-likelihood of the responses under fixed parameters.
double marginal_log_likelihood(const ResponseDataset& dataset, std::span<const ItemParams> params,
                               const QuadratureGrid& grid);

// A calibrated (or hand-authored) item bank bound to item ids.
struct IrtModel {
    std::vector<std::string> item_ids;
    std::vector<ItemParams> params;
    QuadratureGrid grid = QuadratureGrid::normal();
    EstimationMethod method = EstimationMethod::eap;

    bool operator==(const IrtModel& other) const = default;
};

}  // namespace adaptest::irt
