#include "simic/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "simic/rng.hpp"

namespace simic {

namespace {

const char* kHeader = "id,file,width_um,height_um,radius_um,split";

[[noreturn]] void row_error(const std::string& path, std::size_t line_no,
                            const std::string& what) {
  throw std::runtime_error(path + ": row " + std::to_string(line_no) + ": " + what);
}

bool valid_split(const std::string& s) {
  return s == "train" || s == "val" || s == "eval" || s == "unsplit";
}

double parse_label(const std::string& field, const std::string& path, std::size_t line_no,
                   const char* name) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    row_error(path, line_no, std::string("cannot parse ") + name + " '" + field + "'");
  if (!std::isfinite(v) || v <= 0.0)
    row_error(path, line_no, std::string(name) + " must be positive and finite, got '" +
                                 field + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

std::vector<SampleRecord> DatasetManifest::by_split(const std::string& split) const {
  std::vector<SampleRecord> out;
  for (const SampleRecord& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");

  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (header_seen)
        row_error(path, line_no, "metadata comments must precede the header");
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos || eq < 2)
        row_error(path, line_no, "metadata comment must be #key=value");
      m.metadata[line.substr(1, eq - 1)] = line.substr(eq + 1);
      continue;
    }
    if (!header_seen) {
      if (line != kHeader)
        throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                                 ": header must be '" + kHeader + "', got '" + line + "'");
      header_seen = true;
      continue;
    }
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 6)
      row_error(path, line_no,
                "expected 6 fields, got " + std::to_string(f.size()));
    SampleRecord r;
    r.id = f[0];
    r.file = f[1];
    if (r.id.empty()) row_error(path, line_no, "empty id");
    if (r.file.empty()) row_error(path, line_no, "empty file");
    if (!ids.insert(r.id).second) row_error(path, line_no, "duplicate id '" + r.id + "'");
    r.width_um = parse_label(f[2], path, line_no, "width_um");
    r.height_um = parse_label(f[3], path, line_no, "height_um");
    r.radius_um = parse_label(f[4], path, line_no, "radius_um");
    if (r.radius_um >= r.width_um)
      row_error(path, line_no,
                "radius_um " + f[4] + " must be smaller than width_um " + f[2]);
    r.split = f[5];
    if (!valid_split(r.split))
      row_error(path, line_no, "split must be train/val/eval/unsplit, got '" + r.split + "'");
    m.records.push_back(std::move(r));
  }
  if (!header_seen) throw std::runtime_error(path + ": missing header row");
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ostringstream out;
  for (const auto& [k, v] : manifest.metadata) out << '#' << k << '=' << v << '\n';
  out << kHeader << '\n';
  for (const SampleRecord& r : manifest.records)
    out << r.id << ',' << r.file << ',' << format_double(r.width_um) << ','
        << format_double(r.height_um) << ',' << format_double(r.radius_um) << ',' << r.split
        << '\n';
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  const std::string s = out.str();
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw std::runtime_error(path + ": write failed");
}

std::string parent_dir(const std::string& path) {
  const std::size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string() : path.substr(0, slash);
}

std::string join_path(const std::string& dir, const std::string& file) {
  if (dir.empty() || file.empty() || file[0] == '/') return file;
  return dir + "/" + file;
}

std::map<std::string, std::string> split_assignment(const std::vector<std::string>& ids,
                                                    std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (n < 5)
    throw std::invalid_argument("split: need at least 5 ids, got " + std::to_string(n));
  {
    std::set<std::string> uniq(ids.begin(), ids.end());
    if (uniq.size() != n) throw std::invalid_argument("split: ids are not unique");
  }
  std::vector<std::string> order = ids;
  Rng rng(seed);
  rng.shuffle(order);

  // eval takes what the 80% floor leaves; the remainder splits the same way.
  const std::size_t n_keep = n * 8 / 10;
  const std::size_t n_train = n_keep * 8 / 10;
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    const char* split = i < n_train ? "train" : (i < n_keep ? "val" : "eval");
    out[order[i]] = split;
  }
  return out;
}

void assign_splits(DatasetManifest& manifest, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(manifest.records.size());
  for (const SampleRecord& r : manifest.records) ids.push_back(r.id);
  const auto assignment = split_assignment(ids, seed);
  for (SampleRecord& r : manifest.records) r.split = assignment.at(r.id);
}

}  // namespace simic
