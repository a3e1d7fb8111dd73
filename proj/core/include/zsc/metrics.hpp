// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace zsc {

struct MetricsReport {
  double mae = 0.0, rmse = 0.0, nae = 0.0, sre = 0.0;
  // NAE/SRE need strictly positive ground-truth counts; when any y <= 0 they
  // are reported as undefined (NaN) with this flag cleared.
  bool relative_defined = true;
  int n = 0;
  std::vector<std::pair<double, double>> per_image;  // (y, y_hat)

  std::string to_json(int indent = 1) const;
  /// Fixed column order: mae,rmse,nae,sre,n
  static std::string csv_header();
  std::string csv_row() const;
};

/// MAE, RMSE, NAE, SRE over paired ground-truth and predicted counts.
MetricsReport evaluate(const std::vector<double>& gts, const std::vector<double>& preds,
                       bool keep_per_image = false);

}  // namespace zsc
