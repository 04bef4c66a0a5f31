#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vpr/types.hpp"

namespace vpr {

/// One manifest line: `id<TAB>lat<TAB>lon<TAB>path` or `id<TAB>frame<TAB>path`.
struct ManifestEntry {
  std::string image_id;
  std::optional<Geotag> geotag;
  std::optional<std::int64_t> frame_index;
  std::filesystem::path path;  // resolved against the manifest directory on read

  bool operator==(const ManifestEntry&) const = default;
};

/// Parse a manifest. Relative record paths are resolved against the
/// manifest's directory. Blank lines and lines starting with '#' are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
/// Write entries; paths are written as given.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Load every record listed in a manifest. Ids must match the record meta;
/// the manifest's geotag or frame replaces whatever the record carries.
std::vector<ImageRecord> load_manifest_records(const std::filesystem::path& path);

}  // namespace vpr
