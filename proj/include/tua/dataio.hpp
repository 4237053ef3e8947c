#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "tua/error.hpp"
#include "tua/graph.hpp"
#include "tua/matrix.hpp"
#include "tua/rng.hpp"

namespace tua {

// ---------------------------------------------------------------------------
// Binarization.
// ---------------------------------------------------------------------------

/// 1 where the raw value is > 0, else 0.
inline Matrix binarize_features(const Matrix& raw) {
  Matrix out(raw.rows(), raw.cols());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double x = raw.data()[k];
    if (!std::isfinite(x)) throw ValidationError("binarize_features: non-finite entry");
    out.data()[k] = x > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Citation text format: <id> <f_1> ... <f_d> <label> / <cited> <citing>, tab separated.
// ---------------------------------------------------------------------------

struct CitationLoadReport {
  std::size_t citation_records = 0;   // lines in the cites file
  std::size_t unknown_id_edges = 0;   // skipped: endpoint not in the content file
  std::size_t self_citations = 0;     // skipped: cited == citing
  std::size_t duplicate_edges = 0;    // reciprocal or repeated citations collapsed
  std::size_t binarized_entries = 0;  // feature values other than 0/1 mapped by the > 0 rule
  std::vector<std::string> class_names;  // index = class id
  std::vector<std::string> node_ids;     // index = node id, in file order
};

struct CitationData {
  Graph graph;
  CitationLoadReport report;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    const std::size_t next = line.find('\t', pos);
    const std::size_t end = next == std::string_view::npos ? line.size() : next;
    out.push_back(line.substr(pos, end - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, std::size_t line, const std::string& file) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError(file + ": bad numeric field '" + std::string(s) + "'", line);
  return value;
}

}  // namespace detail

/// Loads a citation network. Node ids are assigned in content-file order; class ids by
/// sorted label name. Citations become undirected edges; citations naming an unknown id
/// are dropped and counted.
inline CitationData load_citation_text(const std::string& content_path,
                                       const std::string& cites_path) {
  std::ifstream content(content_path);
  if (!content) throw IoError("cannot open content file " + content_path);
  std::ifstream cites(cites_path);
  if (!cites) throw IoError("cannot open cites file " + cites_path);

  CitationLoadReport report;
  std::unordered_map<std::string, NodeId> index;
  std::vector<std::vector<std::size_t>> rows;
  std::vector<std::string> raw_labels;
  std::size_t num_features = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(content, line)) {
    ++line_no;
    const std::string_view text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto fields = detail::split_fields(text);
    if (fields.size() < 2) throw ParseError(content_path + ": expected id, features, label", line_no);
    const std::size_t d = fields.size() - 2;
    if (rows.empty()) {
      num_features = d;
    } else if (d != num_features) {
      throw ParseError(content_path + ": " + std::to_string(d) + " features, expected " +
                           std::to_string(num_features),
                       line_no);
    }
    std::string id(fields.front());
    if (id.empty()) throw ParseError(content_path + ": empty node id", line_no);
    if (!index.emplace(id, rows.size()).second)
      throw ParseError(content_path + ": duplicate node id '" + id + "'", line_no);
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < d; ++j) {
      const std::string_view f = fields[j + 1];
      if (f == "0") continue;
      if (f == "1") {
        cols.push_back(j);
        continue;
      }
      const double x = detail::parse_double(f, line_no, content_path);
      if (!std::isfinite(x)) throw ParseError(content_path + ": non-finite feature", line_no);
      ++report.binarized_entries;
      if (x > 0.0) cols.push_back(j);
    }
    const std::string_view label = fields.back();
    if (label.empty()) throw ParseError(content_path + ": empty label", line_no);
    rows.push_back(std::move(cols));
    raw_labels.emplace_back(label);
    report.node_ids.push_back(std::move(id));
  }

  std::vector<std::string> names = raw_labels;
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::vector<ClassId> labels(raw_labels.size());
  for (std::size_t v = 0; v < raw_labels.size(); ++v)
    labels[v] = static_cast<ClassId>(
        std::lower_bound(names.begin(), names.end(), raw_labels[v]) - names.begin());
  report.class_names = names;

  std::vector<Edge> edges;
  line_no = 0;
  while (std::getline(cites, line)) {
    ++line_no;
    const std::string_view text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto fields = detail::split_fields(text);
    if (fields.size() != 2) throw ParseError(cites_path + ": expected 'cited<TAB>citing'", line_no);
    ++report.citation_records;
    const auto a = index.find(std::string(fields[0]));
    const auto b = index.find(std::string(fields[1]));
    if (a == index.end() || b == index.end()) {
      ++report.unknown_id_edges;
      continue;
    }
    if (a->second == b->second) {
      ++report.self_citations;
      continue;
    }
    edges.push_back(Edge::canonical(a->second, b->second));
  }
  const std::size_t before = edges.size();
  canonicalize_edges(edges);
  report.duplicate_edges = before - edges.size();

  Graph graph(num_features, names.size(), std::move(edges), std::move(rows), std::move(labels));
  return CitationData{std::move(graph), std::move(report)};
}

// ---------------------------------------------------------------------------
// Canonical JSON container.
// ---------------------------------------------------------------------------

inline nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["num_nodes"] = g.num_nodes();
  j["num_features"] = g.num_features();
  j["num_classes"] = g.num_classes();
  auto edges = nlohmann::json::array();
  for (const Edge& e : g.edges()) edges.push_back({e.u, e.v});
  j["edges"] = std::move(edges);
  auto features = nlohmann::json::array();
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const auto cols = g.feature_indices(v);
    features.push_back(std::vector<std::size_t>(cols.begin(), cols.end()));
  }
  j["features"] = std::move(features);
  j["labels"] = std::vector<ClassId>(g.labels().begin(), g.labels().end());
  return j;
}

inline Graph graph_from_json(const nlohmann::json& j) {
  try {
    for (const char* key : {"num_nodes", "num_features", "num_classes", "edges", "features", "labels"})
      if (!j.contains(key)) throw ParseError(std::string("canonical graph: missing field '") + key + "'");
    const auto n = j.at("num_nodes").get<std::size_t>();
    const auto d = j.at("num_features").get<std::size_t>();
    const auto c = j.at("num_classes").get<std::size_t>();
    const auto& jf = j.at("features");
    const auto& jl = j.at("labels");
    if (!jf.is_array() || jf.size() != n)
      throw ParseError("canonical graph: 'features' must have num_nodes entries");
    if (!jl.is_array() || jl.size() != n)
      throw ParseError("canonical graph: 'labels' must have num_nodes entries");
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ParseError("canonical graph: edge must be [u, v]");
      edges.push_back(Edge{e[0].get<NodeId>(), e[1].get<NodeId>()});
    }
    std::vector<std::vector<std::size_t>> rows;
    rows.reserve(n);
    for (const auto& r : jf) rows.push_back(r.get<std::vector<std::size_t>>());
    return Graph(d, c, std::move(edges), std::move(rows), jl.get<std::vector<ClassId>>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("canonical graph: ") + e.what());
  } catch (const StructuralError& e) {
    throw ParseError(std::string("canonical graph: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(std::string("canonical graph: ") + e.what());
  }
}

/// `edge_records`, when given, is stored as an extra field so descriptor checks against
/// raw citation counts still work after conversion.
inline void save_canonical(const Graph& g, const std::string& path,
                           std::optional<std::size_t> edge_records = std::nullopt) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  nlohmann::json j = graph_to_json(g);
  if (edge_records) j["edge_records"] = *edge_records;
  os << j.dump() << '\n';
  if (!os) throw IoError("failed writing " + path);
}

struct CanonicalDocument {
  Graph graph;
  std::optional<std::size_t> edge_records;
};

inline CanonicalDocument load_canonical_document(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  CanonicalDocument doc{graph_from_json(j), std::nullopt};
  if (j.contains("edge_records")) {
    if (!j["edge_records"].is_number_unsigned())
      throw ParseError(path + ": 'edge_records' must be a non-negative integer");
    doc.edge_records = j["edge_records"].get<std::size_t>();
  }
  return doc;
}

inline Graph load_canonical(const std::string& path) { return load_canonical_document(path).graph; }

// ---------------------------------------------------------------------------
// Splits.
// ---------------------------------------------------------------------------

struct SplitMasks {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
  std::uint64_t seed = 0;
};

/// per_class_train nodes of every class for training, then val_size and test_size nodes
/// drawn from the remainder. Sets are returned sorted.
inline SplitMasks make_split(const Graph& g, std::size_t per_class_train, std::size_t val_size,
                             std::size_t test_size, std::uint64_t seed) {
  Rng rng(seed);
  SplitMasks out;
  out.seed = seed;
  std::vector<std::uint8_t> used(g.num_nodes(), 0);
  for (ClassId c = 0; c < g.num_classes(); ++c) {
    const auto members = g.nodes_with_label(c);
    if (members.size() < per_class_train)
      throw ConfigError("make_split: class " + std::to_string(c) + " has " +
                        std::to_string(members.size()) + " nodes, " +
                        std::to_string(per_class_train) + " requested for training");
    for (NodeId v : rng.sample(std::span<const NodeId>(members), per_class_train)) {
      out.train.push_back(v);
      used[v] = 1;
    }
  }
  std::vector<NodeId> rest;
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    if (!used[v]) rest.push_back(v);
  if (rest.size() < val_size + test_size)
    throw ConfigError("make_split: " + std::to_string(rest.size()) + " nodes left after training, " +
                      std::to_string(val_size + test_size) + " requested for val + test");
  const auto drawn = rng.sample(std::span<const NodeId>(rest), val_size + test_size);
  out.val.assign(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(val_size));
  out.test.assign(drawn.begin() + static_cast<std::ptrdiff_t>(val_size), drawn.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Dataset descriptors.
// ---------------------------------------------------------------------------

struct DatasetDescriptor {
  std::string name;
  std::size_t expected_nodes = 0;
  std::size_t expected_edges = 0;  // compared with citation records when available
  std::size_t expected_features = 0;
  std::size_t expected_classes = 0;
};

inline std::optional<DatasetDescriptor> builtin_descriptor(std::string_view name) {
  if (name == "cora") return DatasetDescriptor{"cora", 2708, 5429, 1433, 7};
  if (name == "citeseer") return DatasetDescriptor{"citeseer", 3312, 4732, 3703, 6};
  if (name == "pubmed") return DatasetDescriptor{"pubmed", 19717, 44338, 500, 3};
  return std::nullopt;
}

/// Parses flat `key = value` lines (TOML subset: '#' comments, quoted or bare strings,
/// integers).
inline DatasetDescriptor parse_descriptor(std::istream& is, const std::string& source = "descriptor") {
  DatasetDescriptor d;
  std::string line;
  std::size_t line_no = 0;
  auto parse_count = [&](std::string_view v) {
    std::size_t x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size())
      throw ParseError(source + ": expected a non-negative integer, got '" + std::string(v) + "'",
                       line_no);
    return x;
  };
  auto strip = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view text = line;
    if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    text = strip(text);
    if (text.empty() || text.front() == '[') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ParseError(source + ": expected key = value", line_no);
    const std::string_view key = strip(text.substr(0, eq));
    std::string_view value = strip(text.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (key == "name")
      d.name = std::string(value);
    else if (key == "expected_nodes")
      d.expected_nodes = parse_count(value);
    else if (key == "expected_edges")
      d.expected_edges = parse_count(value);
    else if (key == "expected_features")
      d.expected_features = parse_count(value);
    else if (key == "expected_classes")
      d.expected_classes = parse_count(value);
    else
      throw ParseError(source + ": unknown key '" + std::string(key) + "'", line_no);
  }
  return d;
}

inline DatasetDescriptor load_descriptor(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open descriptor " + path);
  return parse_descriptor(is, path);
}

/// Human-readable mismatches between a loaded graph and its descriptor; empty when the
/// graph conforms. Counts may deviate by a relative `tolerance`.
inline std::vector<std::string> descriptor_mismatches(const DatasetDescriptor& d, const Graph& g,
                                                      std::optional<std::size_t> edge_records,
                                                      double tolerance = 0.02) {
  std::vector<std::string> out;
  auto check = [&](const char* what, std::size_t expected, std::size_t actual) {
    if (expected == 0) return;
    const double rel = std::abs(static_cast<double>(actual) - static_cast<double>(expected)) /
                       static_cast<double>(expected);
    if (rel > tolerance)
      out.push_back(std::string(what) + ": expected " + std::to_string(expected) + ", found " +
                    std::to_string(actual));
  };
  check("nodes", d.expected_nodes, g.num_nodes());
  check("edges", d.expected_edges, edge_records.value_or(g.num_edges()));
  check("features", d.expected_features, g.num_features());
  if (d.expected_classes != 0 && d.expected_classes != g.num_classes())
    out.push_back("classes: expected " + std::to_string(d.expected_classes) + ", found " +
                  std::to_string(g.num_classes()));
  return out;
}

inline void validate_descriptor(const DatasetDescriptor& d, const Graph& g,
                                std::optional<std::size_t> edge_records, double tolerance = 0.02) {
  const auto problems = descriptor_mismatches(d, g, edge_records, tolerance);
  if (problems.empty()) return;
  std::string msg = "dataset '" + d.name + "' does not match its descriptor:";
  for (const auto& p : problems) msg += " " + p + ";";
  throw ValidationError(msg);
}

// ---------------------------------------------------------------------------
// Dataset resolution: a canonical .json file, a directory holding <name>.content and
// <name>.cites, a <prefix> with those two suffixes, or a bare dataset name looked up in
// a data directory.
// ---------------------------------------------------------------------------

struct LoadedDataset {
  std::string name;
  Graph graph;
  std::optional<CitationLoadReport> report;
  std::optional<DatasetDescriptor> descriptor;
  std::optional<std::size_t> edge_records;  // raw citation lines, when known

  void validate(double tolerance = 0.02) const {
    if (descriptor) validate_descriptor(*descriptor, graph, edge_records, tolerance);
  }
};

inline LoadedDataset load_dataset(const std::string& source, const std::string& data_dir = "") {
  namespace fs = std::filesystem;
  auto finish = [](std::string name, CitationData data, const fs::path& dir) {
    const std::size_t records = data.report.citation_records;
    LoadedDataset out{name, std::move(data.graph), std::move(data.report), std::nullopt, records};
    const fs::path toml = dir / (name + ".toml");
    if (fs::exists(toml))
      out.descriptor = load_descriptor(toml.string());
    else
      out.descriptor = builtin_descriptor(name);
    return out;
  };
  auto from_prefix = [&](const fs::path& prefix) -> std::optional<LoadedDataset> {
    const fs::path content = prefix.string() + ".content";
    const fs::path cites = prefix.string() + ".cites";
    if (!fs::exists(content) || !fs::exists(cites)) return std::nullopt;
    return finish(prefix.filename().string(), load_citation_text(content.string(), cites.string()),
                  prefix.parent_path());
  };

  const fs::path p(source);
  if (p.extension() == ".json" && fs::is_regular_file(p)) {
    CanonicalDocument doc = load_canonical_document(p.string());
    LoadedDataset out{p.stem().string(), std::move(doc.graph), std::nullopt,
                      builtin_descriptor(p.stem().string()), doc.edge_records};
    const fs::path toml = p.parent_path() / (p.stem().string() + ".toml");
    if (fs::exists(toml)) out.descriptor = load_descriptor(toml.string());
    return out;
  }
  if (fs::is_directory(p)) {
    if (auto ds = from_prefix(p / p.filename())) return std::move(*ds);
    for (const auto& entry : fs::directory_iterator(p)) {
      if (entry.path().extension() == ".content") {
        fs::path prefix = entry.path();
        prefix.replace_extension();
        if (auto ds = from_prefix(prefix)) return std::move(*ds);
      }
    }
    throw IoError("no <name>.content / <name>.cites pair in " + source);
  }
  if (auto ds = from_prefix(p)) return std::move(*ds);
  if (!data_dir.empty() && source.find('/') == std::string::npos) {
    const fs::path dir = fs::path(data_dir) / source;
    if (auto ds = from_prefix(dir / source)) return std::move(*ds);
  }
  throw IoError("cannot resolve dataset '" + source + "'");
}

}  // namespace tua
