// SPDX-License-Identifier: Apache-2.0
#include "zsc/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace zsc {

MetricsReport evaluate(const std::vector<double>& gts, const std::vector<double>& preds,
                       bool keep_per_image) {
  if (gts.size() != preds.size())
    throw std::invalid_argument("evaluate: gts and preds differ in length");
  if (gts.empty()) throw std::invalid_argument("evaluate: empty inputs");

  MetricsReport rep;
  rep.n = static_cast<int>(gts.size());
  double abs_sum = 0.0, sq_sum = 0.0, rel_sum = 0.0, sq_rel_sum = 0.0;
  for (size_t i = 0; i < gts.size(); ++i) {
    const double err = gts[i] - preds[i];
    abs_sum += std::abs(err);
    sq_sum += err * err;
    if (gts[i] <= 0.0) {
      rep.relative_defined = false;
    } else {
      rel_sum += std::abs(err) / gts[i];
      sq_rel_sum += err * err / gts[i];
    }
    if (keep_per_image) rep.per_image.emplace_back(gts[i], preds[i]);
  }
  const double inv_n = 1.0 / static_cast<double>(rep.n);
  rep.mae = abs_sum * inv_n;
  rep.rmse = std::sqrt(sq_sum * inv_n);
  if (rep.relative_defined) {
    rep.nae = rel_sum * inv_n;
    rep.sre = std::sqrt(sq_rel_sum * inv_n);
  } else {
    rep.nae = std::numeric_limits<double>::quiet_NaN();
    rep.sre = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

std::string MetricsReport::to_json(int indent) const {
  nlohmann::json j{{"mae", mae},
                   {"rmse", rmse},
                   {"n", n},
                   {"relative_defined", relative_defined}};
  if (relative_defined) {
    j["nae"] = nae;
    j["sre"] = sre;
  } else {
    j["nae"] = nullptr;
    j["sre"] = nullptr;
  }
  if (!per_image.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [y, yhat] : per_image) rows.push_back({y, yhat});
    j["per_image"] = rows;
  }
  return j.dump(indent);
}

std::string MetricsReport::csv_header() { return "mae,rmse,nae,sre,n"; }

std::string MetricsReport::csv_row() const {
  char buf[160];
  if (relative_defined)
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%d", mae, rmse, nae, sre, n);
  else
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,nan,nan,%d", mae, rmse, n);
  return buf;
}

}  // namespace zsc
