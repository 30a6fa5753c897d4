#include "layerscope/cli.hpp"

#include "layerscope/error.hpp"
#include "layerscope/log.hpp"
#include "layerscope/rng.hpp"
#include "layerscope/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace layerscope::cli {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using json = nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIoFailure, "short write to " + path.string());
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

// Tracks files written by a command so a failure can remove them again.
class OutputSet {
 public:
  void write(const fs::path& path, const std::string& text) {
    written_.push_back(path);
    write_text(path, text);
  }
  void discard() noexcept {
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
    written_.clear();
  }

 private:
  std::vector<fs::path> written_;
};

int report_failure(std::ostream& err, const char* stage, const std::exception& e) {
  err << "error: " << stage << " failed: " << e.what() << '\n';
  return kComputationFailed;
}

// The selected epsilon reported per layer is the most frequent choice over the
// nine runs; ties go to the larger value.
std::pair<double, double> modal_epsilon(const AggregateScore& s) {
  std::map<std::pair<double, double>, int> counts;
  for (const auto& r : s.runs) ++counts[{r.config.eps_x, r.config.eps_y}];
  std::pair<double, double> best{0.0, 0.0};
  int best_count = -1;
  for (const auto& [eps, c] : counts) {
    if (c >= best_count) {  // map order is ascending, so >= prefers the larger pair
      best = eps;
      best_count = c;
    }
  }
  return best;
}

json analysis_json(const AnalysisCurve& curve) {
  json j;
  j["target"] = target_name(curve.target);
  j["pool_size"] = curve.pool_size;
  j["dropped_segments"] = curve.dropped_segments;
  j["layers"] = json::array();
  for (const auto& l : curve.layers) {
    json runs = json::array();
    for (const auto& r : l.score.runs) {
      runs.push_back({{"sample_set", r.sample_set},
                      {"rotation", r.rotation},
                      {"score", r.score},
                      {"dev_score", r.dev_score},
                      {"eps_x", r.config.eps_x},
                      {"eps_y", r.config.eps_y},
                      {"n_train", r.n_train},
                      {"n_dev", r.n_dev},
                      {"n_test", r.n_test}});
    }
    j["layers"].push_back({{"layer", l.layer}, {"mean", l.score.mean}, {"std", l.score.std}, {"runs", runs}});
  }
  return j;
}

std::vector<double> doubles(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::kInvalidConfig, std::string(what) + " must be a non-empty list");
  return j.get<std::vector<double>>();
}

EpsilonGrid parse_grid(const json& j) {
  if (j.is_object()) return epsilon_grid(doubles(j.at("x"), "epsilon_grid.x"), doubles(j.at("y"), "epsilon_grid.y"));
  EpsilonGrid grid;
  for (const auto& pair : j) {
    const auto v = doubles(pair, "epsilon_grid entry");
    if (v.size() != 2) throw Error(ErrorCode::kInvalidConfig, "epsilon_grid entries are [eps_x, eps_y] pairs");
    grid.push_back({v[0], v[1]});
  }
  if (grid.empty()) throw Error(ErrorCode::kInvalidConfig, "epsilon_grid is empty");
  return grid;
}

MelConfig parse_mel(const json& j) {
  MelConfig m;
  for (const auto& [k, v] : j.items()) {
    if (k == "n_mels") m.n_mels = v.get<std::uint32_t>();
    else if (k == "win_ms") m.win_ms = v.get<double>();
    else if (k == "hop_ms") m.hop_ms = v.get<double>();
    else if (k == "fmin_hz") m.fmin_hz = v.get<double>();
    else if (k == "fmax_hz") m.fmax_hz = v.get<double>();
    else if (k == "log_floor") m.log_floor = v.get<double>();
    else throw Error(ErrorCode::kInvalidConfig, "unknown mel key '" + k + "'");
  }
  return m;
}

ProbeSettings parse_probe(const json& j, const fs::path& base) {
  ProbeSettings s;
  for (const auto& [k, v] : j.items()) {
    if (k == "step") s.optimizer.step = v.get<double>();
    else if (k == "l2") s.optimizer.l2 = v.get<double>();
    else if (k == "tol") s.optimizer.tol = v.get<double>();
    else if (k == "max_iters") s.optimizer.max_iters = v.get<std::size_t>();
    else if (k == "train_fraction") s.train_fraction = v.get<double>();
    else if (k == "max_instances") s.max_instances = v.get<std::size_t>();
    else if (k == "tasks") {
      for (const auto& t : v) {
        ProbeTaskSpec task;
        task.name = t.at("name").get<std::string>();
        const std::string kind = t.value("kind", "segment");
        if (kind == "segment") {
          task.kind = ProbeTaskSpec::Kind::kSegment;
          task.granularity = parse_granularity(t.value("granularity", "phone"));
          if (task.granularity != Granularity::kPhone && task.granularity != Granularity::kWord) {
            throw Error(ErrorCode::kInvalidConfig, "segment task '" + task.name + "' needs phone or word granularity");
          }
        } else if (kind == "utterance") {
          task.kind = ProbeTaskSpec::Kind::kUtterance;
          task.granularity = Granularity::kUtterance;
          if (!t.contains("labels")) {
            throw Error(ErrorCode::kInvalidConfig, "utterance task '" + task.name + "' needs a labels file");
          }
          task.labels = resolve(base, t.at("labels").get<std::string>());
        } else {
          throw Error(ErrorCode::kInvalidConfig, "unknown probe task kind '" + kind + "'");
        }
        s.tasks.push_back(std::move(task));
      }
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown probe key '" + k + "'");
    }
  }
  if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "probe.train_fraction must lie in (0, 1)");
  }
  if (!(s.optimizer.step > 0.0) || s.optimizer.l2 < 0.0 || s.optimizer.max_iters == 0) {
    throw Error(ErrorCode::kInvalidConfig, "probe optimizer settings out of range");
  }
  return s;
}

MatrixXd standardize(const MatrixXd& x, std::span<const std::size_t> train) {
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(x.cols());
  for (const auto r : train) mean += x.row(static_cast<Eigen::Index>(r));
  mean /= static_cast<double>(train.size());
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(x.cols());
  for (const auto r : train) var += (x.row(static_cast<Eigen::Index>(r)) - mean).array().square().matrix();
  var /= static_cast<double>(train.size());
  Eigen::RowVectorXd scale = var.array().sqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (!(scale(j) > 0.0)) scale(j) = 1.0;
  }
  return (x.rowwise() - mean).array().rowwise() / scale.array();
}

MatrixXd rows_of(const MatrixXd& x, std::span<const std::size_t> rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::vector<std::size_t> labels_of(std::span<const std::size_t> labels, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (const auto r : rows) out.push_back(labels[r]);
  return out;
}

// Instance matrices per layer plus labels for one probe task.
struct ProbeData {
  std::vector<std::uint32_t> layers;
  std::vector<MatrixXd> reps;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
};

fs::path alignment_for(const Manifest& manifest, const std::map<std::string, fs::path>& overrides,
                       const std::string& kind) {
  if (const auto it = overrides.find(kind); it != overrides.end()) return it->second;
  if (const auto it = manifest.alignments.find(kind); it != manifest.alignments.end()) return it->second;
  throw Error(ErrorCode::kMissingInput, "no " + kind + " alignments configured");
}

ProbeData probe_data(const Manifest& manifest, const ProbeTaskSpec& task,
                     const std::map<std::string, fs::path>& alignments) {
  const FrameLayout layout = frame_layout(manifest);
  ProbeData data;
  for (std::uint32_t l = 0; l <= manifest.num_layers; ++l) {
    if (manifest.find_layer(l, Granularity::kFrame) != nullptr) data.layers.push_back(l);
  }
  if (data.layers.empty()) throw Error(ErrorCode::kMissingInput, "no frame-granularity layers to probe");

  if (task.kind == ProbeTaskSpec::Kind::kSegment) {
    const std::string kind(granularity_name(task.granularity));
    const AlignmentTable table = read_alignments(alignment_for(manifest, alignments, kind));
    for (const auto l : data.layers) {
      PooledSegments pooled =
          pool_segments(load_frame_layer(manifest, layout, l), layout, table, manifest.frame_stride_ms);
      if (data.reps.empty()) {
        data.labels = std::move(pooled.labels);
        data.num_classes = pooled.vocab.size();
      }
      data.reps.push_back(pooled.matrix.to_eigen());
    }
    return data;
  }

  std::map<std::string, std::size_t> utt_index;
  for (std::size_t u = 0; u < layout.utterance_ids.size(); ++u) utt_index[layout.utterance_ids[u]] = u;
  const auto pairs = read_utterance_labels(*task.labels);
  std::set<std::string> vocab;
  for (const auto& [id, label] : pairs) vocab.insert(label);
  const std::vector<std::string> classes(vocab.begin(), vocab.end());
  std::vector<std::size_t> rows;
  for (const auto& [id, label] : pairs) {
    const auto it = utt_index.find(id);
    if (it == utt_index.end()) throw Error(ErrorCode::kUnknownUtterance, "label file names unknown utterance '" + id + "'");
    if (layout.counts[it->second] == 0) continue;
    rows.push_back(it->second);
    data.labels.push_back(static_cast<std::size_t>(
        std::lower_bound(classes.begin(), classes.end(), label) - classes.begin()));
  }
  if (rows.empty()) throw Error(ErrorCode::kEmptyInput, "no labelled utterances with frames");
  data.num_classes = classes.size();
  for (const auto l : data.layers) {
    const MatrixXd frames = load_frame_layer(manifest, layout, l).to_eigen();
    MatrixXd pooled(static_cast<Eigen::Index>(rows.size()), frames.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto u = rows[i];
      pooled.row(static_cast<Eigen::Index>(i)) = frames.middleRows(layout.offsets[u], layout.counts[u]).colwise().mean();
    }
    data.reps.push_back(std::move(pooled));
  }
  return data;
}

std::string issue_line(const ValidationIssue& issue) {
  std::string line = "error: [" + issue.error + "]";
  if (issue.layer_id) line += " layer " + std::to_string(*issue.layer_id) + ":";
  return line + " " + issue.message;
}

std::map<std::string, std::size_t> vocab_expectation(std::size_t n, const std::vector<AnalysisTarget>& targets) {
  std::map<std::string, std::size_t> out;
  for (const auto t : targets) {
    if (t == AnalysisTarget::kPhone || t == AnalysisTarget::kWord) out[std::string(target_name(t))] = n;
  }
  if (out.empty()) out["phone"] = n;
  return out;
}

std::string curve_file(AnalysisTarget t) { return "cca_" + std::string(target_name(t)) + ".csv"; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig parse_run_config(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kParseError, "config must be a JSON object");

  RunConfig c;
  c.analysis.workers = default_workers();
  try {
    for (const auto& [k, v] : doc.items()) {
      if (k == "manifest") c.manifest_path = resolve(base_dir, v.get<std::string>());
      else if (k == "targets") {
        for (const auto& t : v) c.targets.push_back(parse_target(t.get<std::string>()));
      } else if (k == "seed") c.analysis.seed = v.get<std::uint64_t>();
      else if (k == "workers") c.analysis.workers = std::max<std::size_t>(1, v.get<std::size_t>());
      else if (k == "output_dir") c.output_dir = resolve(base_dir, v.get<std::string>());
      else if (k == "alignments") {
        for (const auto& [g, p] : v.items()) {
          if (g != "phone" && g != "word") throw Error(ErrorCode::kInvalidConfig, "alignments keys are phone / word");
          c.analysis.alignments[g] = resolve(base_dir, p.get<std::string>());
        }
      } else if (k == "audio_dir") c.analysis.audio_dir = resolve(base_dir, v.get<std::string>());
      else if (k == "epsilon_grid") c.analysis.grid = parse_grid(v);
      else if (k == "sample_targets") {
        c.analysis.sample_targets.utterances = v.value("utterances", c.analysis.sample_targets.utterances);
        c.analysis.sample_targets.segments = v.value("segments", c.analysis.sample_targets.segments);
      } else if (k == "expected_vocab") {
        for (const auto& [g, n] : v.items()) c.analysis.expected_vocab[g] = n.get<std::size_t>();
      } else if (k == "weight_norm") {
        const auto s = v.get<std::string>();
        if (s == "l2") c.analysis.weight_norm = WeightNorm::kL2;
        else if (s == "l1") c.analysis.weight_norm = WeightNorm::kL1;
        else throw Error(ErrorCode::kInvalidConfig, "weight_norm must be l1 or l2");
      } else if (k == "mel") c.analysis.mel = parse_mel(v);
      else if (k == "probe") c.probe = parse_probe(v, base_dir);
      else throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config: ") + e.what());
  }
  if (c.manifest_path.empty()) throw Error(ErrorCode::kInvalidConfig, "config needs a manifest path");
  for (const auto& e : c.analysis.grid) e.validate();
  if (c.analysis.mel) c.analysis.mel->validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(slurp(path), fs::absolute(path).parent_path());
}

void RunConfig::validate(const Manifest& manifest) const {
  for (const auto t : targets) {
    switch (t) {
      case AnalysisTarget::kIntraLayer0:
        if (manifest.find_layer(0, Granularity::kFrame) == nullptr || manifest.num_layers == 0) {
          throw Error(ErrorCode::kMissingInput, "intra target needs layer 0 and at least one more layer");
        }
        break;
      case AnalysisTarget::kMel:
        if (manifest.utterances.empty()) throw Error(ErrorCode::kMissingInput, "mel target needs an utterance list");
        if (!analysis.audio_dir && !manifest.audio_dir) {
          for (const auto& u : manifest.utterances) {
            if (!u.audio) throw Error(ErrorCode::kMissingInput, "mel target: no audio for utterance '" + u.id + "'");
          }
        }
        break;
      case AnalysisTarget::kPhone:
      case AnalysisTarget::kWord: {
        const std::string kind(target_name(t));
        if (!analysis.alignments.count(kind) && !manifest.alignments.count(kind)) {
          throw Error(ErrorCode::kMissingInput, kind + " target needs " + kind + " alignments");
        }
        break;
      }
    }
  }
}

void apply_overrides(RunConfig& config, const Overrides& o) {
  if (!o.targets.empty()) config.targets = o.targets;
  if (o.seed) config.analysis.seed = *o.seed;
  if (o.workers) config.analysis.workers = std::max<std::size_t>(1, *o.workers);
  if (o.out) config.output_dir = *o.out;
  if (o.expect_vocab) {
    for (const auto& [g, n] : vocab_expectation(*o.expect_vocab, config.targets)) config.analysis.expected_vocab[g] = n;
  }
}

// ---------------------------------------------------------------------------
// Curves and CSV

CurveKind curve_kind_for(AnalysisTarget target) {
  switch (target) {
    case AnalysisTarget::kIntraLayer0: return CurveKind::kCcaIntra;
    case AnalysisTarget::kMel: return CurveKind::kCcaMel;
    case AnalysisTarget::kPhone: return CurveKind::kCcaPhone;
    case AnalysisTarget::kWord: return CurveKind::kCcaWord;
  }
  return CurveKind::kCcaPhone;
}

LayerCurve curve_from_analysis(const AnalysisCurve& curve) {
  LayerCurve out;
  out.kind = curve_kind_for(curve.target);
  out.model_name = curve.model_name;
  for (const auto& l : curve.layers) {
    out.layers.push_back(l.layer);
    out.values.push_back(l.score.mean);
  }
  return out;
}

std::string analysis_csv(const AnalysisCurve& curve) {
  std::string s = "layer,mean,std,eps_x,eps_y,n_train,n_test\n";
  for (const auto& l : curve.layers) {
    const auto [ex, ey] = modal_epsilon(l.score);
    const auto& r0 = l.score.runs.front();
    s += std::to_string(l.layer) + "," + fmt(l.score.mean) + "," + fmt(l.score.std) + "," + fmt(ex) + "," + fmt(ey) +
         "," + std::to_string(r0.n_train) + "," + std::to_string(r0.n_test) + "\n";
  }
  return s;
}

std::string probe_csv(const ProbeTaskResult& r) {
  std::string s = "layer,accuracy\n";
  for (std::size_t i = 0; i < r.layers.size(); ++i) s += std::to_string(r.layers[i]) + "," + fmt(r.accuracy[i]) + "\n";
  return s + "all," + fmt(r.all_layers_accuracy) + "\n";
}

LayerCurve read_curve_csv(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, path.string() + ": empty curve file");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) header.push_back(col);
  }
  const auto find_col = [&](std::string_view name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto layer_col = find_col("layer");
  auto value_col = find_col("mean");
  if (!value_col) value_col = find_col("accuracy");
  if (!layer_col || !value_col) {
    throw Error(ErrorCode::kParseError, path.string() + ": expected a layer column and a mean or accuracy column");
  }

  LayerCurve curve;
  const std::string stem = path.stem().string();
  curve.kind = CurveKind::kTaskAccuracy;
  if (stem.rfind("cca_", 0) == 0) {
    curve.kind = curve_kind_for(parse_target(stem.substr(4)));
  }
  std::size_t line_no = 1;
  std::vector<std::pair<std::uint32_t, double>> points;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    }
    if (cells[*layer_col] == "all") continue;
    try {
      std::size_t used = 0;
      const unsigned long layer = std::stoul(cells[*layer_col], &used);
      if (used != cells[*layer_col].size() || layer > kMaxLayerId) throw std::invalid_argument("layer");
      const double v = std::stod(cells[*value_col], &used);
      points.emplace_back(static_cast<std::uint32_t>(layer), v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
  }
  std::sort(points.begin(), points.end());
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].first == points[i - 1].first) {
      throw Error(ErrorCode::kParseError, path.string() + ": layer " + std::to_string(points[i].first) + " repeated");
    }
  }
  for (const auto& [l, v] : points) {
    curve.layers.push_back(l);
    curve.values.push_back(v);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Probing

std::uint32_t ProbeTaskResult::best_layer() const {
  if (accuracy.empty()) throw Error(ErrorCode::kEmptyInput, "no probed layers");
  return layers[static_cast<std::size_t>(std::max_element(accuracy.begin(), accuracy.end()) - accuracy.begin())];
}

double ProbeTaskResult::best_accuracy() const {
  if (accuracy.empty()) throw Error(ErrorCode::kEmptyInput, "no probed layers");
  return *std::max_element(accuracy.begin(), accuracy.end());
}

ProbeTaskResult run_probe_task(const Manifest& manifest, const ProbeTaskSpec& task, const ProbeSettings& settings,
                               const std::map<std::string, fs::path>& alignments, std::uint64_t seed,
                               std::size_t workers) {
  ProbeData data = probe_data(manifest, task, alignments);
  const std::size_t n = data.labels.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "probe:" + task.name));
  rng.shuffle(order);
  if (settings.max_instances > 0 && order.size() > settings.max_instances) order.resize(settings.max_instances);
  const auto n_train = static_cast<std::size_t>(std::llround(settings.train_fraction * static_cast<double>(order.size())));
  if (n_train < 2 || n_train >= order.size()) {
    throw Error(ErrorCode::kInsufficientData, "probe task '" + task.name + "' has too few instances to split");
  }
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  const auto y_train = labels_of(data.labels, train);
  const auto y_test = labels_of(data.labels, test);

  std::vector<MatrixXd> train_reps;
  std::vector<MatrixXd> test_reps;
  for (const auto& x : data.reps) {
    const MatrixXd z = standardize(x, train);
    train_reps.push_back(rows_of(z, train));
    test_reps.push_back(rows_of(z, test));
  }

  ProbeTaskResult result;
  result.task = task.name;
  result.layers = data.layers;
  result.n_train = train.size();
  result.n_test = test.size();
  result.num_classes = data.num_classes;
  result.accuracy.assign(data.layers.size(), 0.0);
  parallel_for(data.layers.size(), workers, [&](std::size_t i) {
    const LinearProbe probe = train_probe(train_reps[i], y_train, data.num_classes, settings.optimizer);
    result.accuracy[i] = eval_probe(probe, test_reps[i], y_test);
    log().info("probe {}: layer {} accuracy {:.4f}", task.name, data.layers[i], result.accuracy[i]);
  });

  const WeightedSumProbe all = train_weighted_sum(train_reps, y_train, data.num_classes, settings.optimizer);
  result.all_layers_accuracy = eval_weighted_sum(all, test_reps, y_test);
  result.layer_weights.assign(all.weighting.weights.data(), all.weighting.weights.data() + all.weighting.weights.size());
  return result;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_validate(const ValidateOptions& options, std::ostream& out, std::ostream& err) {
  std::vector<ValidationIssue> issues;
  try {
    const Manifest manifest = load_manifest(options.manifest);
    ValidationOptions vo;
    vo.expected_vocab = options.expected_vocab;
    issues = validate_manifest(manifest, vo);
  } catch (const Error& e) {
    issues.push_back({std::string(e.name()), e.detail(), std::nullopt});
  }

  for (const auto& issue : issues) out << issue_line(issue) << '\n';
  out << issues.size() << (issues.size() == 1 ? " error" : " errors") << '\n';

  if (options.json_report) {
    json report;
    report["manifest"] = options.manifest.string();
    report["ok"] = issues.empty();
    report["error_count"] = issues.size();
    report["errors"] = json::array();
    for (const auto& issue : issues) {
      json e{{"error", issue.error}, {"message", issue.message}};
      e["layer_id"] = issue.layer_id ? json(*issue.layer_id) : json(nullptr);
      report["errors"].push_back(std::move(e));
    }
    try {
      write_text(*options.json_report, report.dump(2) + "\n");
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kUsageError;
    }
  }
  return issues.empty() ? kOk : kValidationFailed;
}

namespace {

struct Prepared {
  RunConfig config;
  Manifest manifest;
};

// Loads config and manifest; usage-level problems map to exit code 4.
std::optional<Prepared> prepare(const fs::path& config_path, const Overrides& overrides, std::ostream& err) {
  try {
    Prepared p{load_run_config(config_path), {}};
    apply_overrides(p.config, overrides);
    p.manifest = load_manifest(p.config.manifest_path);
    p.config.validate(p.manifest);
    return p;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return std::nullopt;
  }
}

}  // namespace

int cmd_analyze(const fs::path& config_path, const Overrides& overrides, std::ostream& out, std::ostream& err) {
  auto prepared = prepare(config_path, overrides, err);
  if (!prepared) return kUsageError;
  const RunConfig& config = prepared->config;
  if (config.targets.empty()) {
    err << "error: no analysis targets requested\n";
    return kUsageError;
  }

  std::vector<AnalysisCurve> curves;
  try {
    for (const auto t : config.targets) {
      log().info("analysis target {}", target_name(t));
      curves.push_back(run_cca_analysis(prepared->manifest, t, config.analysis));
    }
  } catch (const std::exception& e) {
    return report_failure(err, "analysis", e);
  }

  OutputSet outputs;
  try {
    fs::create_directories(config.output_dir);
    json combined;
    combined["model_name"] = prepared->manifest.model_name;
    combined["seed"] = config.analysis.seed;
    combined["targets"] = json::object();
    for (const auto& c : curves) {
      const fs::path csv = config.output_dir / curve_file(c.target);
      outputs.write(csv, analysis_csv(c));
      combined["targets"][std::string(target_name(c.target))] = analysis_json(c);
      out << "wrote " << csv.string() << '\n';
    }
    outputs.write(config.output_dir / "analysis.json", combined.dump(2) + "\n");
  } catch (const std::exception& e) {
    outputs.discard();
    return report_failure(err, "writing outputs", e);
  }
  for (const auto& c : curves) {
    const auto means = c.means();
    const auto best = static_cast<std::size_t>(std::max_element(means.begin(), means.end()) - means.begin());
    out << target_name(c.target) << ": peak at layer " << c.layers[best].layer << " (" << fmt(means[best]) << ")\n";
  }
  return kOk;
}

int cmd_probe(const fs::path& config_path, const Overrides& overrides, std::ostream& out, std::ostream& err) {
  auto prepared = prepare(config_path, overrides, err);
  if (!prepared) return kUsageError;
  const RunConfig& config = prepared->config;
  if (config.probe.tasks.empty()) {
    err << "error: config has no probe tasks\n";
    return kUsageError;
  }

  std::vector<ProbeTaskResult> results;
  try {
    for (const auto& task : config.probe.tasks) {
      results.push_back(run_probe_task(prepared->manifest, task, config.probe, config.analysis.alignments,
                                       config.analysis.seed, config.analysis.workers));
    }
  } catch (const std::exception& e) {
    return report_failure(err, "probing", e);
  }

  OutputSet outputs;
  try {
    fs::create_directories(config.output_dir);
    for (const auto& r : results) {
      outputs.write(config.output_dir / ("probe_" + r.task + ".csv"), probe_csv(r));
      json w;
      w["task"] = r.task;
      w["layers"] = r.layers;
      w["weights"] = r.layer_weights;
      w["best_layer"] = r.best_layer();
      w["best_accuracy"] = r.best_accuracy();
      w["all_layers_accuracy"] = r.all_layers_accuracy;
      w["best_ge_all"] = r.best_accuracy() >= r.all_layers_accuracy;
      w["n_train"] = r.n_train;
      w["n_test"] = r.n_test;
      outputs.write(config.output_dir / ("probe_" + r.task + "_weights.json"), w.dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    outputs.discard();
    return report_failure(err, "writing outputs", e);
  }
  for (const auto& r : results) {
    out << r.task << ": best layer " << r.best_layer() << " (" << fmt(r.best_accuracy()) << "), all-layers "
        << fmt(r.all_layers_accuracy) << ", best >= all: " << (r.best_accuracy() >= r.all_layers_accuracy ? "yes" : "no")
        << '\n';
  }
  return kOk;
}

int cmd_correlate(const CorrelateOptions& options, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, LayerCurve>> analyses;
  std::vector<std::pair<std::string, LayerCurve>> tasks;
  try {
    for (const auto& p : options.analysis) analyses.emplace_back(p.stem().string(), read_curve_csv(p));
    for (const auto& p : options.tasks) tasks.emplace_back(p.stem().string(), read_curve_csv(p));
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  std::string table = "analysis,kind,task,rho\n";
  int code = kOk;
  for (const auto& [aname, a] : analyses) {
    for (const auto& [tname, t] : tasks) {
      try {
        const double rho = correlate_curves(a, t, options.error_rate);
        table += aname + "," + std::string(curve_kind_name(a.kind)) + "," + tname + "," + fmt(rho) + "\n";
      } catch (const Error& e) {
        err << "error: " << aname << " vs " << tname << ": " << e.what() << '\n';
        const int c = e.code() == ErrorCode::kNoCommonLayers ? kUsageError : kComputationFailed;
        code = std::max(code, c);
      }
    }
  }
  out << table;
  if (code != kOk) return code;
  if (options.out) {
    try {
      fs::create_directories(*options.out);
      write_text(*options.out / "correlations.csv", table);
    } catch (const std::exception& e) {
      return report_failure(err, "writing outputs", e);
    }
  }
  return kOk;
}

namespace {

int cmd_synth(const fs::path& dir, const SyntheticSpec& spec, std::ostream& out, std::ostream& err) {
  try {
    const SyntheticDump dump = write_synthetic_dump(spec, dir);
    json cfg;
    cfg["manifest"] = "manifest.json";
    cfg["seed"] = 0;
    cfg["output_dir"] = "results";
    cfg["targets"] = spec.kind == SyntheticKind::kMelCopy ? json::array({"mel"})
                                                          : json::array({"intra", "phone", "word"});
    if (spec.write_audio && spec.kind == SyntheticKind::kPlanted) cfg["targets"].push_back("mel");
    cfg["probe"] = {{"max_iters", 300},
                    {"tasks",
                     json::array({{{"name", "phone"}, {"kind", "segment"}, {"granularity", "phone"}},
                                  {{"name", "speaker"}, {"kind", "utterance"}, {"labels", "speakers.tsv"}}})}};
    write_text(fs::absolute(dir) / "config.json", cfg.dump(2) + "\n");
    out << "wrote " << dump.manifest.string() << '\n' << "wrote " << (fs::absolute(dir) / "config.json").string() << '\n';
    return kOk;
  } catch (const std::exception& e) {
    return report_failure(err, "synthesis", e);
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-wise representation analysis for speech encoders", "layerscope"};
  app.require_subcommand(1);
  const std::vector<std::string> target_names{"intra", "mel", "phone", "word"};

  ValidateOptions vopt;
  std::optional<std::size_t> v_expect;
  std::vector<std::string> v_targets;
  auto* validate = app.add_subcommand("validate", "Check a manifest and every file it references");
  validate->add_option("manifest", vopt.manifest, "Manifest JSON")->required();
  validate->add_option("--json", vopt.json_report, "Also write a JSON report here");
  validate->add_option("--expect-vocab", v_expect, "Required label vocabulary size");
  validate->add_option("--target", v_targets, "Granularities the vocab check applies to (default phone)")
      ->check(CLI::IsMember({"phone", "word"}));

  fs::path config_path;
  std::vector<std::string> targets;
  Overrides overrides;
  const auto add_run_flags = [&](CLI::App* sub, bool with_targets) {
    sub->add_option("--config", config_path, "Run config JSON")->required();
    if (with_targets) {
      sub->add_option("--target", targets, "Analysis targets")->check(CLI::IsMember(target_names));
      sub->add_option("--expect-vocab", overrides.expect_vocab, "Required label vocabulary size");
    }
    sub->add_option("--seed", overrides.seed, "Override the config seed");
    sub->add_option("--workers", overrides.workers, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
    sub->add_option("--out", overrides.out, "Output directory");
  };
  auto* analyze = app.add_subcommand("analyze", "Layer-wise PWCCA curves");
  add_run_flags(analyze, true);
  auto* probe = app.add_subcommand("probe", "Per-layer and all-layers linear probes");
  add_run_flags(probe, false);

  CorrelateOptions copt;
  auto* correlate = app.add_subcommand("correlate", "Spearman correlation between analysis and task curves");
  correlate->add_option("analysis", copt.analysis, "Analysis curve CSVs")->required()->check(CLI::ExistingFile);
  correlate->add_option("--task", copt.tasks, "Task curve CSVs")->required()->check(CLI::ExistingFile);
  correlate->add_flag("--error-rate", copt.error_rate, "Task values are error rates (uses 100 - v)");
  correlate->add_option("--out", copt.out, "Write correlations.csv here");

  SyntheticSpec spec;
  fs::path synth_dir;
  std::string kind = "planted";
  auto* synth = app.add_subcommand("synth", "Write a synthetic dump with known layer structure");
  synth->add_option("--out", synth_dir, "Output directory")->required();
  synth->add_option("--kind", kind, "planted or melcopy")->check(CLI::IsMember({"planted", "melcopy"}));
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--utterances", spec.num_utterances, "Number of utterances")->check(CLI::PositiveNumber);
  synth->add_option("--layers", spec.num_layers, "Transformer layers")->check(CLI::PositiveNumber);
  synth->add_option("--peak", spec.peak_layer, "Most phonetic layer");
  synth->add_flag("--audio", spec.write_audio, "Also synthesize audio");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  for (const auto& t : targets) overrides.targets.push_back(parse_target(t));

  if (validate->parsed()) {
    if (v_expect) {
      std::vector<AnalysisTarget> ts;
      for (const auto& t : v_targets) ts.push_back(parse_target(t));
      vopt.expected_vocab = vocab_expectation(*v_expect, ts);
    }
    return cmd_validate(vopt, out, err);
  }
  if (analyze->parsed()) return cmd_analyze(config_path, overrides, out, err);
  if (probe->parsed()) return cmd_probe(config_path, overrides, out, err);
  if (correlate->parsed()) return cmd_correlate(copt, out, err);
  spec.kind = kind == "melcopy" ? SyntheticKind::kMelCopy : SyntheticKind::kPlanted;
  return cmd_synth(synth_dir, spec, out, err);
}

}  // namespace layerscope::cli
