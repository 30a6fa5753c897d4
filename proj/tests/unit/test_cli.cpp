#include "layerscope/cli.hpp"
#include "layerscope/error.hpp"
#include "layerscope/synthetic.hpp"
#include "layerscope/tensor_io.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace layerscope;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "layerscope");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Small planted dump plus a config written by the synth command.
fs::path synth(const std::string& name, const std::vector<std::string>& extra = {}) {
  const auto dir = oracle::temp_dir(name);
  std::vector<std::string> args = {"synth", "--out", dir.string(), "--utterances", "40", "--layers", "4", "--peak", "2"};
  args.insert(args.end(), extra.begin(), extra.end());
  const Result r = run_cli(args);
  EXPECT_EQ(r.code, 0) << r.err;
  return dir;
}

// Narrows the synth config to a fast two-point grid and small samples.
void make_quick(const fs::path& dir) {
  auto cfg = nlohmann::json::parse(slurp(dir / "config.json"));
  cfg["epsilon_grid"] = nlohmann::json::array({nlohmann::json::array({1e-4, 1e-4}), nlohmann::json::array({1e-2, 1e-2})});
  cfg["sample_targets"] = {{"utterances", 30}, {"segments", 2000}};
  spit(dir / "config.json", cfg.dump(2));
}

}  // namespace

TEST(CliValidate, CleanDumpExitsZero) {
  const auto dir = synth("cli_validate_clean");
  const Result r = run_cli({"validate", (dir / "manifest.json").string(), "--json", (dir / "report.json").string()});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("0 errors"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_TRUE(report["ok"].get<bool>());
  EXPECT_EQ(report["error_count"], 0);
}

TEST(CliValidate, MissingLayerNamesTheLayer) {
  const auto dir = synth("cli_validate_missing");
  fs::remove(dir / "layer_03.lrep");
  const Result r = run_cli({"validate", (dir / "manifest.json").string(), "--json", (dir / "report.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("layer 3"), std::string::npos) << r.out;
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  bool named = false;
  for (const auto& e : report["errors"]) named = named || e["layer_id"] == 3;
  EXPECT_TRUE(named);
}

TEST(CliValidate, NanReportsByteOffset) {
  const auto dir = synth("cli_validate_nan");
  std::string bytes = slurp(dir / "layer_02.lrep");
  const std::uint32_t nan_bits = 0x7fc00000u;
  for (int i = 0; i < 4; ++i) bytes[17 + 4 * 10 + i] = static_cast<char>((nan_bits >> (8 * i)) & 0xff);
  spit(dir / "layer_02.lrep", bytes);
  const Result r = run_cli({"validate", (dir / "manifest.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("NonFiniteValue"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("offset 57"), std::string::npos) << r.out;
}

TEST(CliValidate, EveryCorruptionIsNamed) {
  struct Case {
    std::string name;
    std::function<void(const fs::path&)> corrupt;
    std::string expected;
  };
  const std::vector<Case> cases = {
      {"bad_magic", [](const fs::path& d) {
         std::string b = slurp(d / "layer_01.lrep");
         b[0] = 'M';
         spit(d / "layer_01.lrep", b);
       }, "BadMagic"},
      {"shape", [](const fs::path& d) {
         std::string b = slurp(d / "layer_01.lrep");
         spit(d / "layer_01.lrep", b.substr(0, b.size() - 4));
       }, "ShapeMismatch"},
      {"overlap", [](const fs::path& d) {
         std::string t = slurp(d / "phones.tsv");
         spit(d / "phones.tsv", t + "utt0000\t0.01\t0.05\tAA\n");
       }, "OverlapError"},
      {"bad_json", [](const fs::path& d) { spit(d / "manifest.json", "{ not json"); }, "ManifestError"},
  };
  for (const auto& c : cases) {
    const auto dir = synth("cli_validate_" + c.name);
    c.corrupt(dir);
    const Result r = run_cli({"validate", (dir / "manifest.json").string()});
    EXPECT_EQ(r.code, 2) << c.name;
    EXPECT_NE(r.out.find(c.expected), std::string::npos) << c.name << ": " << r.out;
  }
}

TEST(CliValidate, ExpectVocab) {
  const auto dir = synth("cli_validate_vocab");
  EXPECT_EQ(run_cli({"validate", (dir / "manifest.json").string(), "--expect-vocab", "39"}).code, 0);
  const Result r = run_cli({"validate", (dir / "manifest.json").string(), "--expect-vocab", "40"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("VocabSizeMismatch"), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(CliAnalyze, WritesCurvesAndIsByteIdenticalAcrossRuns) {
  const auto dir = synth("cli_analyze");
  make_quick(dir);
  const auto cfg = (dir / "config.json").string();
  const Result a = run_cli({"analyze", "--config", cfg, "--target", "phone", "--out", (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("phone: peak at layer 2"), std::string::npos) << a.out;
  const Result b = run_cli({"analyze", "--config", cfg, "--target", "phone", "--workers", "3", "--out",
                            (dir / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "a" / "cca_phone.csv"), slurp(dir / "b" / "cca_phone.csv"));
  EXPECT_EQ(slurp(dir / "a" / "analysis.json"), slurp(dir / "b" / "analysis.json"));

  const std::string csv = slurp(dir / "a" / "cca_phone.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,mean,std,eps_x,eps_y,n_train,n_test");
  const auto js = nlohmann::json::parse(slurp(dir / "a" / "analysis.json"));
  EXPECT_EQ(js["targets"]["phone"]["layers"].size(), 5u);
  EXPECT_EQ(js["targets"]["phone"]["layers"][0]["runs"].size(), 9u);
}

TEST(CliAnalyze, SeedChangesResults) {
  const auto dir = synth("cli_analyze_seed");
  make_quick(dir);
  const auto cfg = (dir / "config.json").string();
  ASSERT_EQ(run_cli({"analyze", "--config", cfg, "--target", "word", "--seed", "1", "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"analyze", "--config", cfg, "--target", "word", "--seed", "2", "--out", (dir / "b").string()}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "cca_word.csv"), slurp(dir / "b" / "cca_word.csv"));
}

TEST(CliAnalyze, MelCopyScoresNearOne) {
  const auto dir = synth("cli_analyze_melcopy", {"--kind", "melcopy"});
  make_quick(dir);
  const Result r = run_cli({"analyze", "--config", (dir / "config.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const LayerCurve c = cli::read_curve_csv(dir / "results" / "cca_mel.csv");
  ASSERT_EQ(c.layers.size(), 5u);
  EXPECT_EQ(c.kind, CurveKind::kCcaMel);
  for (double v : c.values) EXPECT_GE(v, 0.99);
}

TEST(CliAnalyze, ComputationFailureExitsThreeWithoutOutputs) {
  const auto dir = synth("cli_analyze_fail");
  make_quick(dir);
  // Header stays readable, payload becomes NaN: the manifest loads but analysis fails.
  std::string bytes = slurp(dir / "layer_04.lrep");
  for (std::size_t i = 17; i + 4 <= bytes.size(); i += 4) {
    bytes[i] = 0;
    bytes[i + 1] = 0;
    bytes[i + 2] = static_cast<char>(0xc0);
    bytes[i + 3] = 0x7f;
  }
  spit(dir / "layer_04.lrep", bytes);
  const Result r = run_cli({"analyze", "--config", (dir / "config.json").string(), "--target", "phone", "word"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("NonFiniteValue"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "results" / "cca_phone.csv"));
  EXPECT_FALSE(fs::exists(dir / "results" / "analysis.json"));
}

TEST(CliAnalyze, UsageErrorsExitFour) {
  const auto dir = synth("cli_analyze_usage");
  spit(dir / "bad.json", R"({"manifest": "manifest.json", "targets": ["phone"], "bogus": 1})");
  EXPECT_EQ(run_cli({"analyze", "--config", (dir / "bad.json").string()}).code, 4);
  EXPECT_EQ(run_cli({"analyze", "--config", (dir / "nonexistent.json").string()}).code, 4);
  EXPECT_EQ(run_cli({"analyze", "--config", (dir / "config.json").string(), "--target", "speaker"}).code, 4);
  EXPECT_EQ(run_cli({"analyze"}).code, 4);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 4);
  EXPECT_EQ(run_cli({"analyze", "--config", (dir / "config.json").string(), "--workers", "0"}).code, 4);
  // Mel needs audio the planted dump does not have.
  EXPECT_EQ(run_cli({"analyze", "--config", (dir / "config.json").string(), "--target", "mel"}).code, 4);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(CliConfig, ParsesEveryKey) {
  const std::string text = R"({
    "manifest": "m.json", "targets": ["phone", "intra"], "seed": 9, "workers": 2, "output_dir": "out",
    "alignments": {"phone": "p.tsv"}, "audio_dir": "wav",
    "epsilon_grid": {"x": [0, 0.01], "y": [0.001]},
    "sample_targets": {"utterances": 10, "segments": 20},
    "expected_vocab": {"phone": 39}, "weight_norm": "l1",
    "mel": {"n_mels": 40, "win_ms": 32, "hop_ms": 10, "fmin_hz": 50, "fmax_hz": 7000, "log_floor": 1e-6},
    "probe": {"step": 0.5, "l2": 0.001, "tol": 1e-5, "max_iters": 10, "train_fraction": 0.7, "max_instances": 100,
              "tasks": [{"name": "ph", "kind": "segment", "granularity": "phone"},
                        {"name": "spk", "kind": "utterance", "labels": "spk.tsv"}]}
  })";
  const cli::RunConfig c = cli::parse_run_config(text, "/base");
  EXPECT_EQ(c.manifest_path, fs::path("/base/m.json"));
  EXPECT_EQ(c.output_dir, fs::path("/base/out"));
  EXPECT_EQ(c.targets, (std::vector<AnalysisTarget>{AnalysisTarget::kPhone, AnalysisTarget::kIntraLayer0}));
  EXPECT_EQ(c.analysis.seed, 9u);
  EXPECT_EQ(c.analysis.workers, 2u);
  EXPECT_EQ(c.analysis.grid.size(), 2u);
  EXPECT_EQ(c.analysis.grid[1], (CcaConfig{0.01, 0.001}));
  EXPECT_EQ(c.analysis.weight_norm, WeightNorm::kL1);
  EXPECT_EQ(c.analysis.sample_targets.segments, 20u);
  EXPECT_EQ(c.analysis.expected_vocab.at("phone"), 39u);
  ASSERT_TRUE(c.analysis.mel.has_value());
  EXPECT_EQ(c.analysis.mel->n_mels, 40u);
  EXPECT_EQ(c.analysis.alignments.at("phone"), fs::path("/base/p.tsv"));
  EXPECT_EQ(c.probe.optimizer.max_iters, 10u);
  EXPECT_DOUBLE_EQ(c.probe.train_fraction, 0.7);
  ASSERT_EQ(c.probe.tasks.size(), 2u);
  EXPECT_EQ(c.probe.tasks[1].kind, cli::ProbeTaskSpec::Kind::kUtterance);

  cli::Overrides o;
  o.seed = 5;
  o.expect_vocab = 40;
  o.targets = {AnalysisTarget::kWord};
  cli::RunConfig d = c;
  cli::apply_overrides(d, o);
  EXPECT_EQ(d.analysis.seed, 5u);
  EXPECT_EQ(d.analysis.workers, 2u);
  EXPECT_EQ(d.analysis.expected_vocab.at("word"), 40u);
}

TEST(CliConfig, RejectsBadValues) {
  auto code = [](const std::string& text) {
    try {
      cli::parse_run_config(text, "/");
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kBadMagic;
  };
  EXPECT_EQ(code(R"({"targets": ["phone"]})"), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code(R"({"manifest": "m", "weight_norm": "l3"})"), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code(R"({"manifest": "m", "epsilon_grid": {"x": [-1], "y": [0]}})"), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code(R"({"manifest": "m", "targets": ["nope"]})"), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code("not json"), ErrorCode::kParseError);
}

// ---------------------------------------------------------------------------

TEST(CliProbe, PlantedPeakAndWeightsFile) {
  const auto dir = synth("cli_probe");
  const Result r = run_cli({"probe", "--config", (dir / "config.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const LayerCurve phone = cli::read_curve_csv(dir / "results" / "probe_phone.csv");
  ASSERT_EQ(phone.layers.size(), 5u);
  EXPECT_EQ(std::max_element(phone.values.begin(), phone.values.end()) - phone.values.begin(), 2);
  const auto w = nlohmann::json::parse(slurp(dir / "results" / "probe_phone_weights.json"));
  EXPECT_EQ(w["weights"].size(), 5u);
  double sum = 0.0;
  for (const auto& v : w["weights"]) sum += v.get<double>();
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_EQ(w["best_layer"], 2);
  EXPECT_TRUE(fs::exists(dir / "results" / "probe_speaker.csv"));
}

TEST(CliProbe, SingleLayerAllLayersMatchesTheLayer) {
  SyntheticSpec spec;
  spec.num_layers = 1;
  spec.peak_layer = 1;
  spec.num_utterances = 30;
  const auto dir = oracle::temp_dir("cli_probe_single");
  write_synthetic_dump(spec, dir);
  Manifest m = load_manifest(dir / "manifest.json");
  // Keep only layer 1 so the weighted sum has a single input.
  m.layers.erase(m.layers.begin());
  cli::ProbeSettings settings;
  settings.optimizer.max_iters = 200;
  cli::ProbeTaskSpec task;
  task.name = "phone";
  task.granularity = Granularity::kPhone;
  const cli::ProbeTaskResult r = cli::run_probe_task(m, task, settings, {}, 0, 1);
  ASSERT_EQ(r.layers.size(), 1u);
  EXPECT_NEAR(r.all_layers_accuracy, r.accuracy[0], 1e-9);
  EXPECT_DOUBLE_EQ(r.layer_weights[0], 1.0);
}

TEST(CliProbe, ShuffledUtteranceLabelsGiveChance) {
  SyntheticSpec spec;
  spec.num_layers = 2;
  spec.peak_layer = 1;
  spec.num_utterances = 200;
  spec.min_frames = 20;
  spec.max_frames = 30;
  const auto dir = oracle::temp_dir("cli_probe_chance");
  write_synthetic_dump(spec, dir);
  const Manifest m = load_manifest(dir / "manifest.json");
  // Labels unrelated to the representations: parity of a hash of the id.
  std::string labels;
  for (const auto& u : m.utterances) labels += u.id + "\t" + ((std::hash<std::string>{}(u.id) >> 7) % 2 ? "a" : "b") + "\n";
  spit(dir / "random.tsv", labels);
  cli::ProbeSettings settings;
  settings.optimizer.max_iters = 200;
  cli::ProbeTaskSpec task;
  task.name = "random";
  task.kind = cli::ProbeTaskSpec::Kind::kUtterance;
  task.labels = dir / "random.tsv";
  const cli::ProbeTaskResult r = cli::run_probe_task(m, task, settings, {}, 0, 1);
  for (double acc : r.accuracy) {
    EXPECT_GE(acc, 0.25);
    EXPECT_LE(acc, 0.75);
  }
}

// ---------------------------------------------------------------------------

TEST(CliCorrelate, SelfCorrelationIsOne) {
  const auto dir = oracle::temp_dir("cli_correlate_self");
  spit(dir / "cca_phone.csv", "layer,mean,std\n0,0.1,0\n1,0.5,0\n2,0.9,0\n3,0.4,0\n");
  spit(dir / "task.csv", "layer,accuracy\n0,0.1\n1,0.5\n2,0.9\n3,0.4\nall,0.95\n");
  const Result r = run_cli({"correlate", (dir / "cca_phone.csv").string(), "--task", (dir / "task.csv").string(),
                            "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cca_phone,cca_phone,task,1"), std::string::npos) << r.out;
  EXPECT_EQ(slurp(dir / "correlations.csv"), r.out);
}

TEST(CliCorrelate, ErrorRateFlipsTheSign) {
  const auto dir = oracle::temp_dir("cli_correlate_wer");
  spit(dir / "cca_word.csv", "layer,mean\n1,0.2\n2,0.6\n3,0.3\n");
  spit(dir / "wer.csv", "layer,accuracy\n1,40\n2,10\n3,30\n");
  const Result plain = run_cli({"correlate", (dir / "cca_word.csv").string(), "--task", (dir / "wer.csv").string()});
  const Result flipped = run_cli(
      {"correlate", (dir / "cca_word.csv").string(), "--task", (dir / "wer.csv").string(), "--error-rate"});
  EXPECT_NE(plain.out.find(",-1\n"), std::string::npos) << plain.out;
  EXPECT_NE(flipped.out.find(",1\n"), std::string::npos) << flipped.out;
}

TEST(CliCorrelate, Failures) {
  const auto dir = oracle::temp_dir("cli_correlate_fail");
  spit(dir / "cca_phone.csv", "layer,mean\n0,0.1\n1,0.5\n");
  spit(dir / "task.csv", "layer,accuracy\n7,0.1\n8,0.5\n");
  spit(dir / "flat.csv", "layer,accuracy\n0,0.3\n1,0.3\n");
  spit(dir / "garbage.csv", "hello\n");
  EXPECT_EQ(run_cli({"correlate", (dir / "cca_phone.csv").string(), "--task", (dir / "task.csv").string()}).code, 4);
  EXPECT_EQ(run_cli({"correlate", (dir / "cca_phone.csv").string(), "--task", (dir / "flat.csv").string()}).code, 3);
  EXPECT_EQ(run_cli({"correlate", (dir / "cca_phone.csv").string(), "--task", (dir / "garbage.csv").string()}).code, 4);
  EXPECT_EQ(run_cli({"correlate", (dir / "missing.csv").string(), "--task", (dir / "task.csv").string()}).code, 4);
}

TEST(CliCorrelate, CurveCsvRoundTrip) {
  AnalysisCurve curve;
  curve.target = AnalysisTarget::kWord;
  for (std::uint32_t l = 0; l < 3; ++l) {
    LayerScore s;
    s.layer = l;
    std::vector<RunRecord> runs(9);
    for (std::size_t i = 0; i < 9; ++i) {
      runs[i].sample_set = i / 3;
      runs[i].rotation = i % 3;
      runs[i].score = 0.1 * l + 0.01 * static_cast<double>(i);
    }
    s.score = aggregate(runs);
    curve.layers.push_back(s);
  }
  const auto dir = oracle::temp_dir("cli_curve_csv");
  spit(dir / "cca_word.csv", cli::analysis_csv(curve));
  const LayerCurve back = cli::read_curve_csv(dir / "cca_word.csv");
  EXPECT_EQ(back.kind, CurveKind::kCcaWord);
  EXPECT_EQ(back.layers, (std::vector<std::uint32_t>{0, 1, 2}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back.values[i], curve.layers[i].score.mean, 1e-9);
}
