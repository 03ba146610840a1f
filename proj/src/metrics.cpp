#include "ecgdk/metrics.h"

#include <algorithm>
#include <numeric>

namespace ecgdk {

namespace {

double ratio(std::size_t num, std::size_t den, bool& undefined) {
  if (den == 0) {
    undefined = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_class(int c) {
  if (c < 0 || c >= static_cast<int>(kNumClasses)) throw ContractError("class index " + std::to_string(c) + " out of range");
}

}  // namespace

MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ContractError("compute_metrics: truth and prediction lengths differ");
  MetricsReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check_class(truth[i]);
    check_class(predicted[i]);
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  r.evaluated = truth.size();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    ClassMetrics& m = r.per_class[c];
    m.support = tp + fn;
    m.precision = ratio(tp, tp + fp, m.precision_undefined);
    m.recall = ratio(tp, tp + fn, m.recall_undefined);
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1 = 0.0;
      m.f1_undefined = true;
    }
    r.f1_macro += m.f1 / static_cast<double>(kNumClasses);
    r.balanced_accuracy += m.recall / static_cast<double>(kNumClasses);
  }
  return r;
}

double macro_auc_ovr(std::span<const int> truth, std::span<const double> scores) {
  const std::size_t n = truth.size();
  if (scores.size() != n * kNumClasses) throw ContractError("macro_auc_ovr: scores must be [n, 3]");
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> order(n);
  std::vector<double> rank(n);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t pos = 0;
    for (int t : truth) pos += t == static_cast<int>(c) ? 1 : 0;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a * kNumClasses + c] < scores[b * kNumClasses + c]; });
    // Average ranks (1-based) across tied scores.
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && scores[order[j + 1] * kNumClasses + c] == scores[order[i] * kNumClasses + c]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (truth[i] == static_cast<int>(c)) pos_rank_sum += rank[i];
    const double p = static_cast<double>(pos);
    total += (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
    ++counted;
  }
  if (counted == 0) throw ContractError("macro_auc_ovr: no class has both positive and negative samples");
  return total / static_cast<double>(counted);
}

std::vector<int> argmax_rows(std::span<const double> scores, std::size_t classes) {
  if (classes == 0 || scores.size() % classes != 0) throw ContractError("argmax_rows: bad score layout");
  std::vector<int> out(scores.size() / classes);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = scores.subspan(i * classes, classes);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  nlohmann::json classes = nlohmann::json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& m = per_class[c];
    classes[std::string(ecgdk::to_string(kAllClasses[c]))] = {
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"support", m.support},
        {"precision_undefined", m.precision_undefined},
        {"recall_undefined", m.recall_undefined},
        {"f1_undefined", m.f1_undefined}};
  }
  j["per_class"] = classes;
  j["f1_macro"] = f1_macro;
  j["balanced_accuracy"] = balanced_accuracy;
  nlohmann::json cm = nlohmann::json::array();
  for (const auto& row : confusion) cm.push_back(std::vector<std::size_t>(row.begin(), row.end()));
  j["confusion"] = cm;
  j["class_order"] = {"Normal", "AF", "PVC"};
  j["evaluated"] = evaluated;
  j["unusable"] = unusable;
  j["unusable_per_class"] = unusable_per_class;
  j["auc_macro_ovr"] = auc_macro ? nlohmann::json(*auc_macro) : nlohmann::json(nullptr);
  return j;
}

}  // namespace ecgdk
