#include "vpr/manifest.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vpr/container.hpp"
#include "vpr/errors.hpp"

namespace vpr {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

double parse_double(const std::string& text, const std::string& field, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw DataError(field, "manifest line " + std::to_string(line_no) + ": bad " + field + " '" + text + "'");
  return v;
}

std::int64_t parse_int(const std::string& text, std::size_t line_no) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw DataError("frame", "manifest line " + std::to_string(line_no) + ": bad frame '" + text + "'");
  return v;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest", "cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();

  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    ManifestEntry e;
    if (fields.size() == 4) {
      e.image_id = fields[0];
      e.geotag = Geotag{parse_double(fields[1], "lat", line_no), parse_double(fields[2], "lon", line_no)};
      e.path = fields[3];
    } else if (fields.size() == 3) {
      e.image_id = fields[0];
      e.frame_index = parse_int(fields[1], line_no);
      e.path = fields[2];
    } else {
      throw DataError("manifest", "manifest line " + std::to_string(line_no) + ": expected 3 or 4 tab-separated fields");
    }
    if (e.image_id.empty()) throw DataError("image_id", "manifest line " + std::to_string(line_no) + ": empty id");
    if (e.path.is_relative()) e.path = base / e.path;
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("manifest", "cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (const auto& e : entries) {
    out << e.image_id << '\t';
    if (e.geotag)
      out << e.geotag->lat << '\t' << e.geotag->lon;
    else
      out << e.frame_index.value_or(0);
    out << '\t' << e.path.generic_string() << '\n';
  }
}

std::vector<ImageRecord> load_manifest_records(const std::filesystem::path& path) {
  std::vector<ImageRecord> records;
  for (const auto& e : read_manifest(path)) {
    ImageRecord r = load_record(e.path);
    if (r.image_id != e.image_id)
      throw DataError("image_id", "record " + e.path.string() + " has id '" + r.image_id + "', manifest says '" +
                                      e.image_id + "'");
    // The manifest is authoritative for location data.
    r.geotag = e.geotag;
    r.frame_index = e.frame_index;
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace vpr
