#pragma once

// Training, evaluation, and explanation drivers shared by the CLI and tests.

#include <cstdint>
#include <string>
#include <vector>

#include "looptwin/graphs.hpp"
#include "looptwin/record.hpp"
#include "looptwin/twins.hpp"

namespace looptwin {

// Deterministic 80/10/10 index split; the same n and seed always give the
// same partition.
struct DataSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  static DataSplit make(int n, std::uint64_t seed);
  const std::vector<int>& part(const std::string& name) const;
};

struct TrainOptions {
  int max_epochs = 30;
  int batch_size = 1;
  long max_steps = 0;  // 0 disables the step cap
  double lr = 1e-3;
  int patience = 5;
  double min_delta = 1e-5;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct EpochStats {
  int epoch;
  double train_loss;
  double val_loss;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double best_val_loss = 0.0;
  int best_epoch = 0;
  long steps = 0;
  bool stopped_early = false;

  std::string history_csv() const;
};

// Minibatch Adam over train_idx with per-epoch validation. Divergent (NaN)
// losses abort with the failing epoch and step in the message. On return the
// model holds the parameters of the best validation epoch.
TrainResult train_model(TwinModel<float>& model, const std::vector<SimGraph>& data,
                        const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                        const TrainOptions& opt);

struct AggregationMetrics {
  int seconds;
  double mae;
  double rmse;
};

struct MetricsReport {
  std::vector<AggregationMetrics> horizons;  // 5, 10, 15 and 20 second buckets
  double val_mse = 0.0;   // per-cell squared error at 5 s
  double val_rmse = 0.0;
  double ci95 = 0.0;      // 1.96 * val_rmse
  long cells = 0;         // target cells scored at 5 s

  double mae_at(int seconds) const;
  double rmse_at(int seconds) const;
  nlohmann::json to_json() const;
};

// Gaussian 95% interval half-width for a given residual spread.
double ci95_half_width(double rmse);

// Aggregates a per-bucket series by summing groups of `factor` buckets;
// trailing buckets that do not fill a group are dropped.
std::vector<double> aggregate_series(const std::vector<double>& v, int factor);

// Metrics over raw (unrounded, unclipped) model outputs on target lanes.
MetricsReport evaluate_model(TwinModel<float>& model, const std::vector<SimGraph>& data,
                             const std::vector<int>& idx);

// Baseline that predicts zero everywhere.
MetricsReport evaluate_zero(const std::vector<SimGraph>& data, const std::vector<int>& idx);

// Baseline that predicts the per-slot per-bucket mean of the training set.
MetricsReport evaluate_mean(const std::vector<SimGraph>& data, const std::vector<int>& train_idx,
                            const std::vector<int>& idx);

// Per-cell MSE of each baseline over target lanes, for baseline comparisons.
double baseline_zero_mse(const std::vector<SimGraph>& data, const std::vector<int>& idx);
double baseline_mean_mse(const std::vector<SimGraph>& data, const std::vector<int>& train_idx,
                         const std::vector<int>& idx);

// Encoder-output latents per non-dummy node with a 2-component principal
// projection, as CSV with header
// record,node,label,group,z0..z{L-1},pc1,pc2.
std::string export_latents_csv(TwinModel<float>& model, const std::vector<SimGraph>& data,
                               const std::vector<int>& idx);

struct LinearExplanation {
  std::vector<std::string> feature_names;
  std::vector<double> coef;
  double intercept = 0.0;
  double r2 = 0.0;
  bool ridge_fallback = false;
  std::vector<double> feature_mean;
  std::vector<std::vector<double>> shapley;  // per sample, per feature
  std::vector<double> response;              // per sample

  // Features sorted by mean absolute attribution, descending.
  std::string ranking_csv() const;
};

// Ordinary least squares surrogate with exact per-sample attributions
// coef[j] * (x[j] - mean[j]). Falls back to a small ridge penalty when the
// design matrix is rank deficient.
LinearExplanation fit_linear_attribution(const std::vector<std::vector<double>>& features,
                                         const std::vector<double>& response,
                                         const std::vector<std::string>& names);

// Scenario descriptors for the surrogate: driver mix, turning ratios, cycle
// length, barrier offset and per-phase green fractions.
std::vector<std::string> scenario_feature_names();
std::vector<double> scenario_features(const SimulationRecord& rec);

// Mean predicted magnitude over target lanes, the surrogate response.
double mean_predicted_magnitude(TwinModel<float>& model, const SimGraph& g);

// Fits the surrogate on one graph per record; records[i] must correspond to
// graphs[i].
LinearExplanation explain_linear(TwinModel<float>& model,
                                 const std::vector<SimulationRecord>& records,
                                 const std::vector<SimGraph>& graphs);

}  // namespace looptwin
