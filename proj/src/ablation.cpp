#include "msgt/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace msgt::train {

using nlohmann::json;

SweepAxis parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw std::invalid_argument("sweep must look like key=v1,v2,... (got '" + text + "')");
  SweepAxis axis;
  axis.key = text.substr(0, eq);
  std::stringstream rest(text.substr(eq + 1));
  std::string item;
  while (std::getline(rest, item, ',')) {
    if (item.empty()) throw std::invalid_argument("empty value in sweep '" + text + "'");
    json v = json::parse(item, nullptr, false);
    axis.values.push_back(v.is_discarded() || v.is_object() || v.is_array() ? json(item) : v);
  }
  return axis;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const io::Dataset& data, const pool::ConceptPool& pool,
                                      const std::vector<SweepAxis>& axes, const std::string& eval_split) {
  std::vector<AblationRow> rows;
  for (const auto& axis : axes)
    for (const auto& value : axis.values) {
      json doc = config_to_json(base);
      if (!doc.contains(axis.key)) throw std::invalid_argument("cannot sweep unknown config key '" + axis.key + "'");
      doc[axis.key] = value;
      AblationRow row;
      row.key = axis.key;
      row.value = value.is_string() ? value.get<std::string>() : value.dump();
      row.config = config_from_json(doc);
      const auto start = std::chrono::steady_clock::now();
      auto result = train(row.config, data, pool);
      row.report = evaluate(result.model, data, eval_split).report;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      row.parameters = result.model.parameters().scalar_count();
      row.final_loss = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
      rows.push_back(std::move(row));
    }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << kAblationHeader << '\n';
  auto num = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::string(buf);
  };
  auto flag = [](bool b) { return b ? "true" : "false"; };
  for (const auto& r : rows) {
    const auto& m = r.config.model;
    out << r.key << ',' << r.value << ',' << m.experts << ',' << flag(m.use_moe) << ',' << flag(m.use_qa_graph) << ','
        << flag(m.use_structural_prior) << ',' << flag(m.use_z_in_classifier) << ',' << r.parameters << ','
        << r.config.epochs << ',' << num(r.final_loss) << ',' << num(r.report.top1) << ','
        << (r.report.macro_auc ? num(*r.report.macro_auc) : "") << ',' << num(r.report.macro_f1) << ','
        << num(r.seconds) << '\n';
  }
  return out.str();
}

}  // namespace msgt::train
