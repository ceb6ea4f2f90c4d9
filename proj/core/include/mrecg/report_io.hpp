#ifndef MRECG_REPORT_IO_HPP_
#define MRECG_REPORT_IO_HPP_

#include <string>
#include <vector>

#include "mrecg/diagnostics.hpp"
#include "mrecg/partition.hpp"
#include "mrecg/reconstruction.hpp"

namespace mrecg {

// All numeric CSV/JSON output uses 17 significant digits so values round-trip
// losslessly through text.
std::string format_double(double v);

void save_report(const ReconstructionReport& r, const std::string& path);
ReconstructionReport load_report(const std::string& path);

// CSV with columns module_index,iter,loss.
void save_trajectories(const ReconstructionReport& r, const std::string& path);

// Plan file consumed by the quantize command:
// {"mask": [...], "k": int, "k_achieved": int, "metric": "modcap"|"loss",
//  "capacity": [...], "pair_scores": [...]}
void save_plan(const GranularityScheme& scheme, const std::string& metric,
               const std::vector<double>& capacity,
               const std::vector<double>& pair_scores,
               const std::string& path);
GranularityScheme load_plan(const std::string& path, std::string* metric_out =
                                                         nullptr);

void save_oscillation_csv(const OscillationSummary& s, const std::string& path);
void save_scheme_samples_csv(const std::vector<SchemeSample>& rows,
                             const std::string& path);
void save_batch_study_csv(const std::vector<BatchStudyRow>& rows,
                          const std::string& path);

}  // namespace mrecg

#endif  // MRECG_REPORT_IO_HPP_
