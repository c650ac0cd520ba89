#include "aunet/metrics.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

namespace aunet {

std::optional<double> icc31(const std::vector<double>& y,
                            const std::vector<double>& yhat) {
  const std::size_t n = y.size();
  if (n != yhat.size() || n < 3)
    throw std::invalid_argument("icc31: need equal lengths >= 3");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(y[i]) || !std::isfinite(yhat[i]))
      throw std::invalid_argument("icc31: non-finite value");

  double min_y = y[0], max_y = y[0];
  for (double v : y) {
    min_y = std::min(min_y, v);
    max_y = std::max(max_y, v);
  }
  if (max_y - min_y == 0.0) return std::nullopt;

  // Two-way ANOVA with k = 2 raters. BMS = between-targets mean square,
  // EMS = residual mean square after removing target and rater effects.
  double grand = 0;
  for (std::size_t i = 0; i < n; ++i) grand += y[i] + yhat[i];
  grand /= 2.0 * n;
  double mean_y = 0, mean_yhat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_y += y[i];
    mean_yhat += yhat[i];
  }
  mean_y /= n;
  mean_yhat /= n;

  double ss_total = 0, ss_rows = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ss_total += (y[i] - grand) * (y[i] - grand) +
                (yhat[i] - grand) * (yhat[i] - grand);
    const double row = 0.5 * (y[i] + yhat[i]);
    ss_rows += 2.0 * (row - grand) * (row - grand);
  }
  const double ss_cols = n * ((mean_y - grand) * (mean_y - grand) +
                              (mean_yhat - grand) * (mean_yhat - grand));
  const double ss_err = ss_total - ss_rows - ss_cols;
  const double bms = ss_rows / (n - 1);
  const double ems = ss_err / (n - 1);  // (n-1)(k-1) with k = 2
  const double denom = bms + ems;
  if (denom == 0.0) return std::nullopt;
  return (bms - ems) / denom;
}

double mse(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.empty() || y.size() != yhat.size())
    throw std::invalid_argument("mse: need equal non-empty lengths");
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s / y.size();
}

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  return std::sqrt(mse(y, yhat));
}

double MetricsReport::average_icc() const {
  double s = 0;
  int n = 0;
  for (const auto& m : per_au)
    if (m.icc) {
      s += *m.icc;
      ++n;
    }
  return n ? s / n : 0.0;
}

double MetricsReport::average_mse() const {
  double s = 0;
  for (const auto& m : per_au) s += m.mse;
  return per_au.empty() ? 0.0 : s / per_au.size();
}

double MetricsReport::average_rmse() const {
  double s = 0;
  for (const auto& m : per_au) s += m.rmse;
  return per_au.empty() ? 0.0 : s / per_au.size();
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "au,icc,mse,rmse\n";
  os.precision(10);
  for (const auto& m : per_au) {
    os << m.au_id << ",";
    if (m.icc)
      os << *m.icc;
    else
      os << "NA";
    os << "," << m.mse << "," << m.rmse << "\n";
  }
  os << "avg," << average_icc() << "," << average_mse() << ","
     << average_rmse() << "\n";
  return os.str();
}

std::string MetricsReport::to_table() const {
  // AU columns with an Avg. column, ICC / MSE / RMSE row groups.
  std::ostringstream os;
  auto fmt = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto row = [&](const std::string& label, auto value, double avg) {
    os << label;
    for (const auto& m : per_au) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%8s", value(m).c_str());
      os << buf;
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "%9s", fmt(avg).c_str());
    os << buf << "\n";
  };
  os << "AU   ";
  for (const auto& m : per_au) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%8d", m.au_id);
    os << buf;
  }
  os << "     Avg.\n";
  row("ICC  ",
      [&](const AUMetrics& m) { return m.icc ? fmt(*m.icc) : std::string("NA"); },
      average_icc());
  row("MSE  ", [&](const AUMetrics& m) { return fmt(m.mse); }, average_mse());
  row("RMSE ", [&](const AUMetrics& m) { return fmt(m.rmse); }, average_rmse());
  if (excluded_from_icc_avg > 0)
    os << "note: " << excluded_from_icc_avg
       << " AU(s) with constant ground truth excluded from the ICC average\n";
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["per_au"] = nlohmann::json::array();
  for (const auto& m : per_au) {
    nlohmann::json e = {{"au", m.au_id}, {"mse", m.mse}, {"rmse", m.rmse}};
    if (m.icc)
      e["icc"] = *m.icc;
    else
      e["icc"] = nullptr;
    j["per_au"].push_back(e);
  }
  j["average"] = {{"icc", average_icc()},
                  {"mse", average_mse()},
                  {"rmse", average_rmse()}};
  j["excluded_from_icc_avg"] = excluded_from_icc_avg;
  return j.dump(2);
}

MetricsReport report(const PredictionTrace& trace,
                     const std::vector<int>& active_aus) {
  const std::size_t n = trace.predicted.size();
  if (n == 0 || trace.ground_truth.size() != n)
    throw std::invalid_argument("report: empty or misaligned trace");
  MetricsReport out;
  for (std::size_t a = 0; a < active_aus.size(); ++a) {
    std::vector<double> y(n), yhat(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (a >= trace.ground_truth[i].size() || a >= trace.predicted[i].size())
        throw std::invalid_argument("report: AU column missing from trace");
      y[i] = trace.ground_truth[i][a];
      yhat[i] = trace.predicted[i][a];
    }
    AUMetrics m;
    m.au_id = active_aus[a];
    m.icc = icc31(y, yhat);
    m.mse = mse(y, yhat);
    m.rmse = std::sqrt(m.mse);
    if (!m.icc) ++out.excluded_from_icc_avg;
    out.per_au.push_back(std::move(m));
  }
  return out;
}

}  // namespace aunet
