#pragma once

#include <optional>
#include <string>
#include <vector>

namespace aunet {

// Intra-class correlation ICC(3,1): two-way mixed, single measure,
// consistency, with prediction and ground truth as the two raters.
// Returns nullopt when y is constant (the metric is undefined).
std::optional<double> icc31(const std::vector<double>& y,
                            const std::vector<double>& yhat);

double mse(const std::vector<double>& y, const std::vector<double>& yhat);
double rmse(const std::vector<double>& y, const std::vector<double>& yhat);

struct PredictionTrace {
  std::vector<std::string> frame_ids;
  std::vector<std::vector<double>> predicted;     // frame x AU
  std::vector<std::vector<double>> ground_truth;  // frame x AU
};

struct AUMetrics {
  int au_id = 0;
  std::optional<double> icc;  // nullopt when ground truth is constant
  double mse = 0, rmse = 0;
};

struct MetricsReport {
  std::vector<AUMetrics> per_au;
  int excluded_from_icc_avg = 0;  // AUs with undefined ICC

  double average_icc() const;
  double average_mse() const;
  double average_rmse() const;
  std::string to_csv() const;    // header `au,icc,mse,rmse`
  std::string to_table() const;  // aligned console table, AU columns
  std::string to_json() const;
};

MetricsReport report(const PredictionTrace& trace,
                     const std::vector<int>& active_aus);

}  // namespace aunet
