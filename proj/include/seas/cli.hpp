#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "seas/metrics.hpp"
#include "seas/pipeline.hpp"

namespace seas {

/// Runs one command line (without the program name). Returns the process exit code; failures
/// print a single `error: <kind>: <message>` line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct EvaluationRow {
  std::string category;
  std::string subset;  ///< "normal" or "type_<n>"
  int count = 0;
  std::optional<double> is, ic_lpips, kid, ic_lpips_a, auroc, ap, f1_max, iou;
};

/// Evaluation columns for each subset of a generated directory against a reference corpus; the detection
/// columns are filled when `models` can segment the reference images.
std::vector<EvaluationRow> evaluate_directories(const std::filesystem::path& generated, const Corpus& reference,
                                                const metrics::ToyFeatureNet& net, const GenerationModels* models,
                                                double tau, std::vector<std::string>* warnings = nullptr);

std::string evaluation_csv(const std::vector<EvaluationRow>& rows);

/// SHA-256 over a file, or over every file below a directory (relative path and content, sorted).
std::string digest_path(const std::filesystem::path& path);

}  // namespace seas
