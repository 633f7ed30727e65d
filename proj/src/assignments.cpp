#include "dfc/assignments.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "binary.hpp"
#include "dfc/error.hpp"
#include "dfc/tract_io.hpp"

namespace dfc {

namespace {

constexpr std::uint32_t kDistanceMatrixVersion = 1;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Splits text into lines, remembering where each starts.
struct Line {
  std::string_view text;
  std::size_t offset;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back({line, pos});
    pos = end + 1;
  }
  return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::size_t offset, const char* what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ParseError(std::string("bad ") + what + " \"" + std::string(s) + "\"", offset);
  return v;
}

bool parse_flag(std::string_view s, std::size_t offset) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw ParseError("outlier flag must be 0 or 1", offset);
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

}  // namespace

ClusterResult AssignmentTable::cluster_result() const {
  ClusterResult r{k, cluster, outlier};
  r.validate();
  return r;
}

std::string format_assignments(const AssignmentTable& t) {
  std::string out = "# dfc-assignments 1\n";
  out += "# atlas_hash=" + t.atlas_hash + "\n";
  out += "# k=" + std::to_string(t.k) + "\n";
  out += "# h=" + fmt17(t.h) + "\n";
  out += std::string("# outlier_removal=") + (t.outlier_removal ? "1" : "0") + "\n";
  out += "id\tcluster\tq_m\toutlier\n";
  for (std::size_t i = 0; i < t.size(); ++i)
    out += std::to_string(t.id[i]) + "\t" + std::to_string(t.cluster[i]) + "\t" + fmt17(t.q_max[i]) + "\t" +
           (t.outlier[i] ? "1" : "0") + "\n";
  return out;
}

AssignmentTable parse_assignments(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0].text != "# dfc-assignments 1")
    throw ParseError("not a version 1 assignment file", 0);
  AssignmentTable t;
  bool have_k = false, have_h = false, header = false;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const auto [line, offset] = lines[n];
    if (line.empty()) continue;
    if (!header && line.starts_with("# ")) {
      const std::string_view kv = line.substr(2);
      const std::size_t eq = kv.find('=');
      if (eq == std::string_view::npos) throw ParseError("malformed header line", offset);
      const std::string_view key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (key == "atlas_hash") {
        t.atlas_hash = std::string(value);
      } else if (key == "k") {
        t.k = parse_number<int>(value, offset, "k");
        have_k = true;
      } else if (key == "h") {
        t.h = parse_number<double>(value, offset, "h");
        have_h = true;
      } else if (key == "outlier_removal") {
        t.outlier_removal = parse_flag(value, offset);
      } else {
        throw ParseError("unknown header key \"" + std::string(key) + "\"", offset);
      }
      continue;
    }
    if (!header) {
      if (line != "id\tcluster\tq_m\toutlier") throw ParseError("missing column header", offset);
      header = true;
      continue;
    }
    const auto cells = split_tabs(line);
    if (cells.size() != 4) throw ParseError("expected 4 columns", offset);
    t.id.push_back(parse_number<std::int64_t>(cells[0], offset, "id"));
    t.cluster.push_back(parse_number<int>(cells[1], offset, "cluster"));
    t.q_max.push_back(parse_number<double>(cells[2], offset, "q_m"));
    t.outlier.push_back(parse_flag(cells[3], offset));
    if (t.cluster.back() < 0 || (have_k && t.cluster.back() >= t.k))
      throw ParseError("cluster id out of range", offset);
  }
  if (!have_k || !have_h || !header) throw ParseError("assignment file header incomplete", text.size());
  return t;
}

void write_assignments(const AssignmentTable& table, const std::filesystem::path& path) {
  write_text(path, format_assignments(table));
}

AssignmentTable read_assignments(const std::filesystem::path& path) { return parse_assignments(read_text(path)); }

std::string format_truth(const GroundTruth& truth) {
  std::string out = "id\tbundle\toutlier\n";
  for (std::size_t i = 0; i < truth.size(); ++i)
    out += std::to_string(i) + "\t" + std::to_string(truth.bundle[i]) + "\t" + (truth.outlier[i] ? "1" : "0") + "\n";
  return out;
}

GroundTruth parse_truth(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0].text != "id\tbundle\toutlier") throw ParseError("missing ground-truth header", 0);
  GroundTruth g;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const auto [line, offset] = lines[n];
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != 3) throw ParseError("expected 3 columns", offset);
    if (parse_number<std::int64_t>(cells[0], offset, "id") != static_cast<std::int64_t>(g.size()))
      throw ParseError("ground-truth ids must be 0, 1, 2, ...", offset);
    const int b = parse_number<int>(cells[1], offset, "bundle");
    const bool o = parse_flag(cells[2], offset);
    if ((b < 0) != o) throw ParseError("outliers must have bundle -1 and inliers a bundle >= 0", offset);
    g.bundle.push_back(b);
    g.outlier.push_back(o);
  }
  return g;
}

void write_truth(const GroundTruth& truth, const std::filesystem::path& path) { write_text(path, format_truth(truth)); }

GroundTruth read_truth(const std::filesystem::path& path) { return parse_truth(read_text(path)); }

std::vector<std::byte> write_distance_matrix_bytes(const DistanceMatrix& m) {
  detail::ByteWriter out;
  out.magic("DMAT");
  out.u32(kDistanceMatrixVersion);
  out.u64(m.size());
  for (double v : m.condensed()) out.f64(v);
  return out.take();
}

DistanceMatrix read_distance_matrix_bytes(std::span<const std::byte> bytes) {
  detail::ByteReader in(bytes);
  in.magic("DMAT");
  const std::size_t version_at = in.offset();
  if (in.u32("version") != kDistanceMatrixVersion) throw ParseError("unsupported distance matrix version", version_at);
  const std::uint64_t n = in.u64("size");
  if (n > (std::uint64_t{1} << 32)) throw ParseError("distance matrix too large", version_at + 4);
  DistanceMatrix m(static_cast<std::size_t>(n));
  in.require(m.condensed().size(), 8, "distances");
  for (double& v : m.condensed()) v = in.f64("distance");
  in.expect_end();
  return m;
}

std::string format_distance_csv(const DistanceMatrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (j) out += ',';
      out += fmt17(m(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace dfc
