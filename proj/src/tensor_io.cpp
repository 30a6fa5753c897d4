#include "layerscope/tensor_io.hpp"

#include "layerscope/error.hpp"
#include "layerscope/wav.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace layerscope {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view granularity_name(Granularity g) noexcept {
  switch (g) {
    case Granularity::kFrame: return "frame";
    case Granularity::kPhone: return "phone";
    case Granularity::kWord: return "word";
    case Granularity::kUtterance: return "utterance";
  }
  return "frame";
}

Granularity parse_granularity(std::string_view name) {
  if (name == "frame") return Granularity::kFrame;
  if (name == "phone") return Granularity::kPhone;
  if (name == "word") return Granularity::kWord;
  if (name == "utterance") return Granularity::kUtterance;
  throw Error(ErrorCode::kParseError, "unknown granularity '" + std::string(name) + "'");
}

void RepMatrix::validate() const {
  if (rows == 0 || cols == 0) {
    throw Error(ErrorCode::kShapeMismatch, "matrix must have at least one row and column");
  }
  if (values.size() != static_cast<std::size_t>(rows) * cols) {
    throw Error(ErrorCode::kShapeMismatch,
                "payload holds " + std::to_string(values.size()) + " values, header declares " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (layer_id > kMaxLayerId) {
    throw Error(ErrorCode::kShapeMismatch, "layer id does not fit in 24 bits");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::kNonFiniteValue,
                  "value " + std::to_string(i) + " at byte offset " +
                      std::to_string(kRepHeaderBytes + 4 * i) + " is not finite");
    }
  }
}

Eigen::MatrixXd RepMatrix::to_eigen() const {
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(values.data(), rows, cols).cast<double>();
}

RepMatrix RepMatrix::from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& m, std::uint32_t layer_id,
                                Granularity granularity) {
  RepMatrix out;
  out.rows = static_cast<std::uint32_t>(m.rows());
  out.cols = static_cast<std::uint32_t>(m.cols());
  out.layer_id = layer_id;
  out.granularity = granularity;
  out.values.resize(static_cast<std::size_t>(m.rows()) * m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out.values[r * m.cols() + c] = static_cast<float>(m(r, c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// LREP1 codec

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

RepHeader decode_header(std::string_view bytes) {
  if (bytes.size() < kRepMagic.size() || bytes.substr(0, kRepMagic.size()) != kRepMagic) {
    throw Error(ErrorCode::kBadMagic, "file does not start with \"LREP1\"");
  }
  if (bytes.size() < kRepHeaderBytes) {
    throw Error(ErrorCode::kShapeMismatch, "truncated header");
  }
  RepHeader h;
  h.rows = get_u32(bytes, 5);
  h.cols = get_u32(bytes, 9);
  const std::uint32_t packed = get_u32(bytes, 13);
  const auto g = packed & 0xffu;
  if (g > 3) throw Error(ErrorCode::kParseError, "granularity code " + std::to_string(g));
  h.granularity = static_cast<Granularity>(g);
  h.layer_id = packed >> 8;
  return h;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

}  // namespace

RepMatrix decode_rep(std::string_view bytes) {
  const RepHeader h = decode_header(bytes);
  const std::uint64_t expected = static_cast<std::uint64_t>(h.rows) * h.cols * 4;
  const std::uint64_t actual = bytes.size() - kRepHeaderBytes;
  if (actual != expected) {
    throw Error(ErrorCode::kShapeMismatch,
                "payload is " + std::to_string(actual) + " bytes, header " + std::to_string(h.rows) +
                    "x" + std::to_string(h.cols) + " needs " + std::to_string(expected));
  }
  RepMatrix m;
  m.rows = h.rows;
  m.cols = h.cols;
  m.layer_id = h.layer_id;
  m.granularity = h.granularity;
  m.values.resize(static_cast<std::size_t>(h.rows) * h.cols);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = std::bit_cast<float>(get_u32(bytes, kRepHeaderBytes + 4 * i));
  }
  m.validate();
  return m;
}

std::string encode_rep(const RepMatrix& matrix) {
  matrix.validate();
  std::string out;
  out.reserve(kRepHeaderBytes + 4 * matrix.values.size());
  out.append(kRepMagic);
  put_u32(out, matrix.rows);
  put_u32(out, matrix.cols);
  put_u32(out, (matrix.layer_id << 8) | static_cast<std::uint32_t>(matrix.granularity));
  for (const float v : matrix.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

RepMatrix read_rep(const fs::path& path) {
  try {
    return decode_rep(slurp(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIoFailure) throw;
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

RepHeader read_rep_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::string head(kRepHeaderBytes, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return decode_header(head);
}

void write_rep(const RepMatrix& matrix, const fs::path& path) {
  const std::string bytes = encode_rep(matrix);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest

const LayerFile* Manifest::find_layer(std::uint32_t layer_id, Granularity g) const {
  for (const auto& layer : layers) {
    if (layer.layer_id == layer_id && layer.granularity == g) return &layer;
  }
  return nullptr;
}

namespace {

template <typename T>
T required(const json& doc, const char* key) {
  if (!doc.contains(key)) throw Error(ErrorCode::kManifestError, std::string("missing key '") + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestError, std::string("bad value for '") + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() ? p : base / p;
}

}  // namespace

Manifest parse_manifest(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestError, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kManifestError, "top level must be an object");

  Manifest m;
  m.base_dir = base_dir;
  m.model_name = required<std::string>(doc, "model_name");
  m.num_layers = required<std::uint32_t>(doc, "num_layers");
  m.frame_stride_ms = required<double>(doc, "frame_stride_ms");
  m.sample_rate_hz = required<std::uint32_t>(doc, "sample_rate_hz");
  if (!(m.frame_stride_ms > 0.0)) throw Error(ErrorCode::kManifestError, "frame_stride_ms must be positive");
  if (m.sample_rate_hz == 0) throw Error(ErrorCode::kManifestError, "sample_rate_hz must be positive");

  const auto layers = required<json>(doc, "layers");
  if (!layers.is_array()) throw Error(ErrorCode::kManifestError, "'layers' must be an array");
  for (const auto& entry : layers) {
    LayerFile lf;
    lf.layer_id = required<std::uint32_t>(entry, "layer_id");
    const auto& g = entry.contains("granularity") ? entry.at("granularity") : json("frame");
    if (g.is_number_unsigned() && g.get<unsigned>() <= 3) {
      lf.granularity = static_cast<Granularity>(g.get<unsigned>());
    } else if (g.is_string()) {
      try {
        lf.granularity = parse_granularity(g.get<std::string>());
      } catch (const Error& e) {
        throw Error(ErrorCode::kManifestError, e.detail());
      }
    } else {
      throw Error(ErrorCode::kManifestError, "bad granularity for layer " + std::to_string(lf.layer_id));
    }
    lf.path = resolve(base_dir, required<std::string>(entry, "path"));
    m.layers.push_back(std::move(lf));
  }

  if (doc.contains("utterances")) {
    for (const auto& entry : doc.at("utterances")) {
      UtteranceEntry u;
      u.id = required<std::string>(entry, "id");
      const auto frames = required<json>(entry, "frames");
      if (frames.is_array()) {
        u.frames = frames.get<std::vector<std::uint32_t>>();
        if (u.frames.size() != 1 && u.frames.size() != m.num_layers + 1) {
          throw Error(ErrorCode::kManifestError,
                      "utterance '" + u.id + "' frames array must have 1 or num_layers+1 entries");
        }
      } else {
        u.frames = {frames.get<std::uint32_t>()};
      }
      if (entry.contains("audio")) u.audio = resolve(base_dir, entry.at("audio").get<std::string>());
      m.utterances.push_back(std::move(u));
    }
  }
  if (doc.contains("alignments")) {
    for (const auto& [key, value] : doc.at("alignments").items()) {
      m.alignments[key] = resolve(base_dir, value.get<std::string>());
    }
  }
  if (doc.contains("audio_dir")) m.audio_dir = resolve(base_dir, doc.at("audio_dir").get<std::string>());
  return m;
}

Manifest load_manifest(const fs::path& path) {
  const std::string text = slurp(path);
  return parse_manifest(text, path.parent_path());
}

void save_manifest(const Manifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
  json doc;
  doc["model_name"] = m.model_name;
  doc["num_layers"] = m.num_layers;
  doc["frame_stride_ms"] = m.frame_stride_ms;
  doc["sample_rate_hz"] = m.sample_rate_hz;
  doc["layers"] = json::array();
  for (const auto& l : m.layers) {
    doc["layers"].push_back(
        {{"layer_id", l.layer_id}, {"granularity", granularity_name(l.granularity)}, {"path", rel(l.path)}});
  }
  if (!m.utterances.empty()) {
    doc["utterances"] = json::array();
    for (const auto& u : m.utterances) {
      json e{{"id", u.id}};
      if (u.frames.size() == 1) {
        e["frames"] = u.frames.front();
      } else {
        e["frames"] = u.frames;
      }
      if (u.audio) e["audio"] = rel(*u.audio);
      doc["utterances"].push_back(std::move(e));
    }
  }
  if (!m.alignments.empty()) {
    for (const auto& [k, v] : m.alignments) doc["alignments"][k] = rel(v);
  }
  if (m.audio_dir) doc["audio_dir"] = rel(*m.audio_dir);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::vector<std::uint32_t> FrameLayout::frame_owner() const {
  std::vector<std::uint32_t> owner(total_frames);
  for (std::size_t u = 0; u < counts.size(); ++u) {
    std::fill_n(owner.begin() + offsets[u], counts[u], static_cast<std::uint32_t>(u));
  }
  return owner;
}

FrameLayout frame_layout(const Manifest& manifest) {
  std::vector<const LayerFile*> frame_files;
  for (const auto& l : manifest.layers) {
    if (l.granularity == Granularity::kFrame) frame_files.push_back(&l);
  }
  if (frame_files.empty()) throw Error(ErrorCode::kManifestError, "no frame-granularity layers");

  FrameLayout layout;
  auto check_spread = [](std::uint32_t lo, std::uint32_t hi, const std::string& what) {
    if (hi - lo > kFrameTruncationTolerance) {
      throw Error(ErrorCode::kFrameCountMismatch,
                  what + ": frame counts range " + std::to_string(lo) + ".." + std::to_string(hi) +
                      " exceeds tolerance of " + std::to_string(kFrameTruncationTolerance));
    }
  };

  if (manifest.utterances.empty()) {
    std::uint32_t lo = UINT32_MAX, hi = 0;
    for (const auto* f : frame_files) {
      const auto rows = read_rep_header(f->path).rows;
      lo = std::min(lo, rows);
      hi = std::max(hi, rows);
    }
    check_spread(lo, hi, "frame layers");
    layout.utterance_ids = {"all"};
    layout.offsets = {0};
    layout.counts = {lo};
    layout.total_frames = lo;
    return layout;
  }

  for (const auto& u : manifest.utterances) {
    std::uint32_t lo = UINT32_MAX, hi = 0;
    for (const auto* f : frame_files) {
      const auto n = u.frames_for(f->layer_id);
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    check_spread(lo, hi, "utterance '" + u.id + "'");
    layout.utterance_ids.push_back(u.id);
    layout.offsets.push_back(layout.total_frames);
    layout.counts.push_back(lo);
    layout.total_frames += lo;
  }
  return layout;
}

RepMatrix load_frame_layer(const Manifest& manifest, const FrameLayout& layout, std::uint32_t layer_id) {
  const LayerFile* file = manifest.find_layer(layer_id, Granularity::kFrame);
  if (file == nullptr) {
    throw Error(ErrorCode::kMissingInput, "no frame file for layer " + std::to_string(layer_id));
  }
  RepMatrix full = read_rep(file->path);
  if (full.layer_id != layer_id) {
    throw Error(ErrorCode::kManifestError, file->path.string() + " carries layer id " +
                                               std::to_string(full.layer_id) + ", manifest says " +
                                               std::to_string(layer_id));
  }
  if (manifest.utterances.empty()) {
    full.rows = layout.total_frames;
    full.values.resize(static_cast<std::size_t>(full.rows) * full.cols);
    return full;
  }

  RepMatrix out;
  out.cols = full.cols;
  out.layer_id = layer_id;
  out.granularity = Granularity::kFrame;
  out.rows = layout.total_frames;
  out.values.reserve(static_cast<std::size_t>(out.rows) * out.cols);
  std::size_t src_row = 0;
  for (std::size_t u = 0; u < manifest.utterances.size(); ++u) {
    const auto have = manifest.utterances[u].frames_for(layer_id);
    if (src_row + have > full.rows) {
      throw Error(ErrorCode::kShapeMismatch, "layer " + std::to_string(layer_id) +
                                                 " has fewer rows than its utterance frame counts");
    }
    const auto begin = full.values.begin() + static_cast<std::ptrdiff_t>(src_row * full.cols);
    out.values.insert(out.values.end(), begin,
                      begin + static_cast<std::ptrdiff_t>(layout.counts[u]) * full.cols);
    src_row += have;
  }
  return out;
}

std::vector<ValidationIssue> validate_manifest(const Manifest& manifest, const ValidationOptions& options) {
  std::vector<ValidationIssue> issues;
  auto add = [&](ErrorCode code, std::string message, std::optional<std::uint32_t> layer = std::nullopt) {
    issues.push_back({std::string(error_name(code)), std::move(message), layer});
  };

  if (manifest.layers.empty()) add(ErrorCode::kManifestError, "manifest lists no layers");

  std::set<std::pair<std::uint32_t, int>> seen;
  std::map<std::uint32_t, std::uint32_t> frame_rows;
  for (const auto& layer : manifest.layers) {
    const std::string tag = "layer " + std::to_string(layer.layer_id) + " (" +
                            std::string(granularity_name(layer.granularity)) + ")";
    if (!seen.insert({layer.layer_id, static_cast<int>(layer.granularity)}).second) {
      add(ErrorCode::kManifestError, tag + " listed twice", layer.layer_id);
    }
    if (layer.layer_id > manifest.num_layers) {
      add(ErrorCode::kManifestError, tag + " exceeds num_layers " + std::to_string(manifest.num_layers),
          layer.layer_id);
    }
    if (!fs::exists(layer.path)) {
      add(ErrorCode::kIoFailure, tag + ": missing file " + layer.path.string(), layer.layer_id);
      continue;
    }
    try {
      const RepMatrix m = read_rep(layer.path);
      if (m.layer_id != layer.layer_id) {
        add(ErrorCode::kManifestError,
            tag + ": file carries layer id " + std::to_string(m.layer_id), layer.layer_id);
      }
      if (m.granularity != layer.granularity) {
        add(ErrorCode::kManifestError,
            tag + ": file carries granularity " + std::string(granularity_name(m.granularity)),
            layer.layer_id);
      }
      if (layer.granularity == Granularity::kFrame) frame_rows[layer.layer_id] = m.rows;
    } catch (const Error& e) {
      add(e.code(), tag + ": " + e.detail(), layer.layer_id);
    }
  }
  for (std::uint32_t l = 0; l <= manifest.num_layers && !manifest.layers.empty(); ++l) {
    const bool present = std::any_of(manifest.layers.begin(), manifest.layers.end(),
                                     [l](const LayerFile& f) { return f.layer_id == l; });
    if (!present) add(ErrorCode::kManifestError, "no file for layer " + std::to_string(l), l);
  }

  // Frame-count agreement across layers.
  if (manifest.utterances.empty()) {
    if (!frame_rows.empty()) {
      const auto ref = frame_rows.count(0) ? frame_rows.at(0) : frame_rows.begin()->second;
      for (const auto& [l, rows] : frame_rows) {
        const auto diff = rows > ref ? rows - ref : ref - rows;
        if (diff > kFrameTruncationTolerance) {
          add(ErrorCode::kFrameCountMismatch,
              "layer " + std::to_string(l) + " has " + std::to_string(rows) + " frames, layer 0 has " +
                  std::to_string(ref),
              l);
        }
      }
    }
  } else {
    for (const auto& [l, rows] : frame_rows) {
      std::uint64_t declared = 0;
      for (const auto& u : manifest.utterances) declared += u.frames_for(l);
      if (declared != rows) {
        add(ErrorCode::kShapeMismatch,
            "layer " + std::to_string(l) + " has " + std::to_string(rows) +
                " rows but utterance frame counts sum to " + std::to_string(declared),
            l);
      }
    }
    for (const auto& u : manifest.utterances) {
      std::uint32_t lo = UINT32_MAX, hi = 0;
      for (const auto& [l, rows] : frame_rows) {
        lo = std::min(lo, u.frames_for(l));
        hi = std::max(hi, u.frames_for(l));
      }
      if (!frame_rows.empty() && hi - lo > kFrameTruncationTolerance) {
        add(ErrorCode::kFrameCountMismatch, "utterance '" + u.id + "' frame counts range " +
                                                std::to_string(lo) + ".." + std::to_string(hi));
      }
      if (u.audio && !fs::exists(*u.audio)) {
        add(ErrorCode::kIoFailure, "utterance '" + u.id + "': missing audio " + u.audio->string());
      }
    }
  }

  // Alignments.
  auto alignments = manifest.alignments;
  for (const auto& [k, v] : options.extra_alignments) alignments[k] = v;
  std::set<std::string> utt_ids;
  for (const auto& u : manifest.utterances) utt_ids.insert(u.id);
  for (const auto& [kind, path] : alignments) {
    try {
      const AlignmentTable table = read_alignments(path);
      if (!utt_ids.empty()) {
        std::set<std::string> unknown;
        for (const auto& r : table.records) {
          if (!utt_ids.count(r.utterance_id)) unknown.insert(r.utterance_id);
        }
        for (const auto& id : unknown) {
          add(ErrorCode::kUnknownUtterance, kind + " alignments reference unknown utterance '" + id + "'");
        }
      }
      if (const auto it = options.expected_vocab.find(kind); it != options.expected_vocab.end()) {
        if (table.label_vocab.size() != it->second) {
          add(ErrorCode::kVocabSizeMismatch, kind + " vocab has " +
                                                 std::to_string(table.label_vocab.size()) +
                                                 " labels, expected " + std::to_string(it->second));
        }
      }
    } catch (const Error& e) {
      add(e.code(), kind + " alignments: " + e.detail());
    }
  }
  return issues;
}

// ---------------------------------------------------------------------------
// Alignments

std::size_t AlignmentTable::label_index(std::string_view label) const {
  const auto it = std::lower_bound(label_vocab.begin(), label_vocab.end(), label);
  if (it == label_vocab.end() || *it != label) {
    throw Error(ErrorCode::kUnknownLabel, "label '" + std::string(label) + "' not in vocab");
  }
  return static_cast<std::size_t>(it - label_vocab.begin());
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    cols.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return cols;
}

double parse_seconds(std::string_view text, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kParseError,
                "line " + std::to_string(line_no) + ": '" + std::string(text) + "' is not a time");
  }
  return v;
}

}  // namespace

AlignmentTable make_alignment_table(std::vector<AlignmentRecord> records) {
  for (const auto& r : records) {
    if (!(r.end_s > r.start_s)) {
      throw Error(ErrorCode::kEmptySegment, "utterance '" + r.utterance_id + "' segment [" +
                                                std::to_string(r.start_s) + ", " +
                                                std::to_string(r.end_s) + ") is empty");
    }
  }
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.utterance_id, a.start_s) < std::tie(b.utterance_id, b.start_s);
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& prev = records[i - 1];
    const auto& cur = records[i];
    if (prev.utterance_id == cur.utterance_id && cur.start_s < prev.end_s) {
      throw Error(ErrorCode::kOverlapError, "utterance '" + cur.utterance_id + "' segments at " +
                                                std::to_string(prev.start_s) + " and " +
                                                std::to_string(cur.start_s) + " overlap");
    }
  }
  AlignmentTable table;
  std::set<std::string> vocab;
  for (const auto& r : records) vocab.insert(r.label);
  table.label_vocab.assign(vocab.begin(), vocab.end());
  table.records = std::move(records);
  return table;
}

AlignmentTable parse_alignments(std::istream& in) {
  std::vector<AlignmentRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 4) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": expected 4 columns, got " +
                                              std::to_string(cols.size()));
    }
    AlignmentRecord r;
    r.utterance_id = std::string(cols[0]);
    r.start_s = parse_seconds(cols[1], line_no);
    r.end_s = parse_seconds(cols[2], line_no);
    r.label = std::string(cols[3]);
    if (r.utterance_id.empty() || r.label.empty()) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": empty field");
    }
    if (r.start_s < 0.0) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": negative start time");
    }
    records.push_back(std::move(r));
  }
  return make_alignment_table(std::move(records));
}

AlignmentTable read_alignments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  return parse_alignments(in);
}

void write_alignments(const AlignmentTable& table, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  char buf[64];
  for (const auto& r : table.records) {
    out << r.utterance_id << '\t';
    std::snprintf(buf, sizeof buf, "%.4f\t%.4f", r.start_s, r.end_s);
    out << buf << '\t' << r.label << '\n';
  }
}

std::vector<std::pair<std::string, std::string>> read_utterance_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty()) {
      throw Error(ErrorCode::kParseError, path.string() + " line " + std::to_string(line_no) +
                                              ": expected utterance_id<TAB>label");
    }
    out.emplace_back(std::string(cols[0]), std::string(cols[1]));
  }
  return out;
}

}  // namespace layerscope
