#pragma once

#include "layerscope/probes.hpp"
#include "layerscope/protocol.hpp"
#include "layerscope/tensor_io.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace layerscope::cli {

enum ExitCode : int { kOk = 0, kValidationFailed = 2, kComputationFailed = 3, kUsageError = 4 };

struct ProbeTaskSpec {
  enum class Kind { kSegment, kUtterance };

  std::string name;
  Kind kind = Kind::kSegment;
  Granularity granularity = Granularity::kPhone;  // segment tasks
  std::optional<std::filesystem::path> labels;    // utterance tasks: TSV utterance_id, label
};

struct ProbeSettings {
  ProbeConfig optimizer;
  double train_fraction = 0.8;
  std::size_t max_instances = 0;  // 0 = use every instance
  std::vector<ProbeTaskSpec> tasks;
};

struct RunConfig {
  std::filesystem::path manifest_path;
  std::vector<AnalysisTarget> targets;
  std::filesystem::path output_dir = "layerscope_out";
  AnalysisConfig analysis;  // seed, grid, sample targets, alignments, audio dir, vocab
  ProbeSettings probe;

  // Throws InvalidConfig / MissingInput when a requested target lacks inputs.
  void validate(const Manifest& manifest) const;
};

// Paths inside the JSON are resolved against base_dir.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Command-line values that take precedence over the config file.
struct Overrides {
  std::vector<AnalysisTarget> targets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> expect_vocab;
};

void apply_overrides(RunConfig& config, const Overrides& overrides);

struct ValidateOptions {
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> json_report;
  std::map<std::string, std::size_t> expected_vocab;
};

struct CorrelateOptions {
  std::vector<std::filesystem::path> analysis;
  std::vector<std::filesystem::path> tasks;
  bool error_rate = false;
  std::optional<std::filesystem::path> out;
};

int cmd_validate(const ValidateOptions& options, std::ostream& out, std::ostream& err);
int cmd_analyze(const std::filesystem::path& config_path, const Overrides& overrides, std::ostream& out,
                std::ostream& err);
int cmd_probe(const std::filesystem::path& config_path, const Overrides& overrides, std::ostream& out,
              std::ostream& err);
int cmd_correlate(const CorrelateOptions& options, std::ostream& out, std::ostream& err);

// Full argument parsing and dispatch; argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// Pieces shared by the commands, exposed for tests and the Python module.

struct ProbeTaskResult {
  std::string task;
  std::vector<std::uint32_t> layers;
  std::vector<double> accuracy;  // per layer
  double all_layers_accuracy = 0.0;
  std::vector<double> layer_weights;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t num_classes = 0;

  std::uint32_t best_layer() const;  // first layer with the highest accuracy
  double best_accuracy() const;
};

ProbeTaskResult run_probe_task(const Manifest& manifest, const ProbeTaskSpec& task, const ProbeSettings& settings,
                               const std::map<std::string, std::filesystem::path>& alignments, std::uint64_t seed,
                               std::size_t workers);

CurveKind curve_kind_for(AnalysisTarget target);
LayerCurve curve_from_analysis(const AnalysisCurve& curve);

// Columns: layer,mean,std,eps_x,eps_y,n_train,n_test
std::string analysis_csv(const AnalysisCurve& curve);
// Columns: layer,accuracy, then a final layer=all row.
std::string probe_csv(const ProbeTaskResult& result);

// Reads either CSV flavour. The value column is "mean" or "accuracy"; the
// layer=all row is skipped. The curve kind comes from a "cca_<target>" file
// name, otherwise task_accuracy.
LayerCurve read_curve_csv(const std::filesystem::path& path);

}  // namespace layerscope::cli
