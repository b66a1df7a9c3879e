#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace simic {

// One dataset row. `file` is relative to the manifest's directory. `split`
// is one of train/val/eval, or "unsplit" before an assignment has been made.
struct SampleRecord {
  std::string id;
  std::string file;
  double width_um = 0.0;
  double height_um = 0.0;
  double radius_um = 0.0;
  std::string split = "unsplit";
};

struct DatasetManifest {
  std::map<std::string, std::string> metadata;  // leading #key=value lines
  std::vector<SampleRecord> records;

  std::vector<SampleRecord> by_split(const std::string& split) const;
};

// CSV with header id,file,width_um,height_um,radius_um,split and optional
// leading #key=value metadata comments. Validation errors cite row numbers.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

// Directory part of a path ("" if none), for resolving manifest-relative files.
std::string parent_dir(const std::string& path);
std::string join_path(const std::string& dir, const std::string& file);

// 80:20 eval carve-out, then 80:20 train/val on the remainder, after a
// deterministic seeded shuffle. Fractions are floored on the smaller side.
// Requires at least 5 unique ids.
std::map<std::string, std::string> split_assignment(const std::vector<std::string>& ids,
                                                    std::uint64_t seed);

// Applies split_assignment to every record (by id), returning the new counts
// via the manifest itself.
void assign_splits(DatasetManifest& manifest, std::uint64_t seed);

// Shortest-round-trip decimal formatting; used everywhere numbers are
// serialized so identical values always produce identical bytes.
std::string format_double(double v);

}  // namespace simic
