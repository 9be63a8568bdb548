#include "avscnet/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "avscnet/feature_ops.hpp"

namespace avscnet {

namespace {

const char* kAnnotationsHeader = "#avscnet annotations v1";
const char* kDetectionsHeader = "#avscnet detections v1";
const char* kFeaturesHeader = "#avscnet features v1";
const char* kStHeader = "#avscnet st v1";
const char* kWeightsHeader = "#avscnet weights v1";

[[noreturn]] void fail(const std::string& path, int line, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& path, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) fail(path, line, "bad number '" + s + "'");
    return v;
  } catch (const std::exception&) {
    fail(path, line, "bad number '" + s + "'");
  }
}

void check_label(const std::string& label, const std::string& path, int line) {
  if (label.empty()) fail(path, line, "empty label");
  for (char c : label) {
    if (c == ',' || c == ' ' || c == '\t') {
      fail(path, line, "label contains separator characters: '" + label + "'");
    }
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  return out;
}

void expect_header(std::ifstream& in, const char* header, const std::string& path) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(header, 0) != 0) {
    fail(path, 1, std::string("expected header '") + header + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

// Shared record grammar: detections carry a trailing score field.
template <typename BoxT>
void parse_box_token(const std::string& tok, bool with_score,
                     const std::string& path, int line, BoxT& out);

template <>
void parse_box_token<LabeledBox>(const std::string& tok, bool,
                                 const std::string& path, int line,
                                 LabeledBox& out) {
  const auto parts = split_on(tok, ',');
  if (parts.size() != 5) fail(path, line, "box= needs x1,y1,x2,y2,label");
  out.box = Box{parse_number(parts[0], path, line),
                parse_number(parts[1], path, line),
                parse_number(parts[2], path, line),
                parse_number(parts[3], path, line)};
  out.label = parts[4];
  check_label(out.label, path, line);
  if (!out.box.valid()) fail(path, line, "degenerate box");
}

template <>
void parse_box_token<ScoredBox>(const std::string& tok, bool,
                                const std::string& path, int line,
                                ScoredBox& out) {
  const auto parts = split_on(tok, ',');
  if (parts.size() != 6) fail(path, line, "box= needs x1,y1,x2,y2,label,score");
  out.box = Box{parse_number(parts[0], path, line),
                parse_number(parts[1], path, line),
                parse_number(parts[2], path, line),
                parse_number(parts[3], path, line)};
  out.label = parts[4];
  check_label(out.label, path, line);
  out.score = parse_number(parts[5], path, line);
  if (!out.box.valid()) fail(path, line, "degenerate box");
  if (out.score < 0.0 || out.score > 1.0) fail(path, line, "score outside [0,1]");
}

template <typename RecordT>
std::vector<RecordT> read_records(const std::string& path, const char* header) {
  auto in = open_in(path);
  expect_header(in, header, path);
  std::vector<RecordT> records;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto toks = split_ws(line);
    RecordT rec;
    rec.image_id = toks[0];
    for (std::size_t i = 1; i < toks.size(); ++i) {
      if (toks[i].rfind("dims=", 0) == 0) {
        const auto wh = split_on(toks[i].substr(5), 'x');
        if (wh.size() != 2) fail(path, lineno, "dims= needs <W>x<H>");
        rec.dims = ImageSize{parse_number(wh[0], path, lineno),
                             parse_number(wh[1], path, lineno)};
      } else if (toks[i].rfind("box=", 0) == 0) {
        typename decltype(rec.boxes)::value_type box;
        parse_box_token(toks[i].substr(4), true, path, lineno, box);
        rec.boxes.push_back(std::move(box));
      } else {
        fail(path, lineno, "unknown token '" + toks[i] + "'");
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_box_token(std::ostream& out, const LabeledBox& b) {
  out << " box=" << format_double(b.box.x1) << ',' << format_double(b.box.y1)
      << ',' << format_double(b.box.x2) << ',' << format_double(b.box.y2) << ','
      << b.label;
}

void write_box_token(std::ostream& out, const ScoredBox& b) {
  out << " box=" << format_double(b.box.x1) << ',' << format_double(b.box.y1)
      << ',' << format_double(b.box.x2) << ',' << format_double(b.box.y2) << ','
      << b.label << ',' << format_double(b.score);
}

template <typename RecordT>
void write_records(const std::string& path, const char* header,
                   const std::vector<RecordT>& records) {
  auto out = open_out(path);
  out << header << '\n';
  for (const auto& rec : records) {
    out << rec.image_id;
    if (rec.dims) {
      out << " dims=" << format_double(rec.dims->w) << 'x'
          << format_double(rec.dims->h);
    }
    for (const auto& b : rec.boxes) write_box_token(out, b);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

std::vector<AnnotationRecord> read_annotations(const std::string& path) {
  return read_records<AnnotationRecord>(path, kAnnotationsHeader);
}

void write_annotations(const std::string& path,
                       const std::vector<AnnotationRecord>& records) {
  write_records(path, kAnnotationsHeader, records);
}

std::vector<DetectionRecord> read_detections(const std::string& path) {
  return read_records<DetectionRecord>(path, kDetectionsHeader);
}

void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records) {
  write_records(path, kDetectionsHeader, records);
}

std::map<std::string, std::vector<double>> read_features(const std::string& path) {
  auto in = open_in(path);
  expect_header(in, kFeaturesHeader, path);
  std::map<std::string, std::vector<double>> out;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto toks = split_ws(line);
    if (toks.size() < 2) fail(path, lineno, "feature record needs id + values");
    std::vector<double> vec;
    for (std::size_t i = 1; i < toks.size(); ++i) {
      vec.push_back(parse_number(toks[i], path, lineno));
    }
    if (!out.emplace(toks[0], std::move(vec)).second) {
      fail(path, lineno, "duplicate object id '" + toks[0] + "'");
    }
  }
  return out;
}

void write_features(const std::string& path,
                    const std::map<std::string, std::vector<double>>& features) {
  auto out = open_out(path);
  out << kFeaturesHeader << '\n';
  for (const auto& [id, vec] : features) {
    out << id;
    for (double v : vec) out << ' ' << format_double(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

SemanticTree read_semantic_tree(const std::string& path) {
  auto in = open_in(path);
  expect_header(in, kStHeader, path);
  SemanticTree tree;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) fail(path, lineno, "expected '<label>: ...'");
    const std::string original = line.substr(0, colon);
    const auto visuals = split_ws(line.substr(colon + 1));
    if (original.empty() || visuals.empty()) {
      fail(path, lineno, "empty semantic tree entry");
    }
    for (const auto& v : visuals) {
      if (!tree.reverse.emplace(v, original).second) {
        fail(path, lineno, "duplicate visual label '" + v + "'");
      }
    }
    tree.forward[original] = visuals;
  }
  return tree;
}

void write_semantic_tree(const std::string& path, const SemanticTree& tree) {
  auto out = open_out(path);
  out << kStHeader << '\n';
  for (const auto& [original, visuals] : tree.forward) {
    out << original << ':';
    for (const auto& v : visuals) out << ' ' << v;
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_kde_csv(const std::string& path, const DensityCurve& curve) {
  auto out = open_out(path);
  out << "x,density\n";
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    out << format_double(curve.grid[i]) << ',' << format_double(curve.density[i])
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_pr_curves_csv(const std::string& path,
                         const std::map<std::string, PRCurve>& curves) {
  auto out = open_out(path);
  out << "class,threshold,recall,precision\n";
  for (const auto& [label, curve] : curves) {
    for (const auto& p : curve.points) {
      out << label << ',' << format_double(p.threshold) << ','
          << format_double(p.recall) << ',' << format_double(p.precision)
          << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  auto out = open_out(path);
  out << "class,ap,ar\n";
  for (const auto& [label, ap] : report.ap) {
    out << label << ',' << format_double(ap) << ',';
    const auto it = report.ar.find(label);
    if (it != report.ar.end() && it->second.has_value()) {
      out << format_double(*it->second);
    }
    out << '\n';
  }
  out << "mean," << format_double(report.map) << ',' << format_double(report.mar)
      << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_roi_bench_csv(const std::string& path,
                         const std::vector<QuantErrorRow>& rows) {
  auto out = open_out(path);
  out << "method,trials,mean_abs_err,max_abs_err,seed\n";
  for (const auto& r : rows) {
    out << extractor_name(r.method) << ',' << r.trials << ','
        << format_double(r.mean_abs_err) << ',' << format_double(r.max_abs_err)
        << ',' << r.seed << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
  auto out = open_out(path);
  out << "iteration,lr,cls,reg,total\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << format_double(r.lr) << ','
        << format_double(r.cls) << ',' << format_double(r.reg) << ','
        << format_double(r.total) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

const FeatureMap& WeightsFile::find(const std::string& name) const {
  for (const auto& [n, block] : blocks) {
    if (n == name) return block;
  }
  throw std::runtime_error("weights: missing block " + name);
}

void write_weights(const std::string& path, const WeightsFile& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << kWeightsHeader << ' ' << weights.blocks.size() << '\n';
  for (const auto& [name, block] : weights.blocks) {
    out << name << ' ' << block.c << ' ' << block.h << ' ' << block.w << '\n';
  }
  out << ".\n";
  for (const auto& [name, block] : weights.blocks) {
    write_feature_map(out, block);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

WeightsFile read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind(kWeightsHeader, 0) != 0) {
    fail(path, 1, "expected weights header");
  }
  const auto head = split_ws(line);
  const int n = static_cast<int>(parse_number(head.back(), path, 1));
  WeightsFile wf;
  std::vector<std::string> names;
  int lineno = 1;
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) fail(path, lineno, "truncated manifest");
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.size() != 4) fail(path, lineno, "manifest line needs name C H W");
    names.push_back(toks[0]);
  }
  if (!std::getline(in, line) || line != ".") {
    fail(path, lineno + 1, "expected '.' manifest terminator");
  }
  for (const auto& name : names) {
    wf.blocks.emplace_back(name, read_feature_map(in));
  }
  return wf;
}

}  // namespace avscnet
