#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/trainer.hpp"

namespace msgt::train {

/// One swept config key and the values it takes, e.g. "experts=2,4,8,16".
struct SweepAxis {
  std::string key;
  std::vector<nlohmann::json> values;
};

/// Values parse as JSON where possible (numbers, true/false), else as strings.
SweepAxis parse_sweep(const std::string& text);

struct AblationRow {
  std::string key;
  std::string value;
  TrainConfig config;
  std::size_t parameters = 0;
  double final_loss = 0.0;
  metrics::MetricsReport report;
  double seconds = 0.0;
};

/// Each axis is swept on its own from the base config: one train and one
/// evaluation per value.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const io::Dataset& data, const pool::ConceptPool& pool,
                                      const std::vector<SweepAxis>& axes, const std::string& eval_split);

inline constexpr const char* kAblationHeader =
    "sweep,value,experts,use_moe,use_qa_graph,use_structural_prior,use_z_in_classifier,parameters,epochs,"
    "final_loss,top1,macro_auc,macro_f1,seconds";

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace msgt::train
