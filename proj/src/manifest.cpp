#include "mseg/manifest.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mseg/errors.hpp"

namespace mseg {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<ManifestRecord> DatasetManifest::split(Split s) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

std::size_t DatasetManifest::count(Split s) const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.split == s;
  return n;
}

std::filesystem::path DatasetManifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

bool DatasetManifest::is_segmentation() const {
  return !records.empty() && records.front().mask_path.has_value();
}

namespace {

ManifestRecord parse_record(const json& j) {
  if (!j.is_object()) throw ValidationError("record is not an object");
  ManifestRecord r;
  bool has_image = false, has_split = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "image_path") {
      if (!value.is_string() || value.get<std::string>().empty()) throw ValidationError("image_path must be a non-empty string");
      r.image_path = value.get<std::string>();
      has_image = true;
    } else if (key == "split") {
      if (!value.is_string()) throw ValidationError("split must be a string");
      r.split = parse_split(value.get<std::string>());
      has_split = true;
    } else if (key == "label") {
      if (!value.is_number_integer() || value.get<long long>() < 0) throw ValidationError("label must be a non-negative integer");
      r.label = value.get<int>();
    } else if (key == "mask_path") {
      if (!value.is_string() || value.get<std::string>().empty()) throw ValidationError("mask_path must be a non-empty string");
      r.mask_path = value.get<std::string>();
    } else {
      throw ValidationError("unknown field '" + key + "'");
    }
  }
  if (!has_image) throw ValidationError("missing image_path");
  if (!has_split) throw ValidationError("missing split");
  if (r.label.has_value() == r.mask_path.has_value()) throw ValidationError("exactly one of label and mask_path is required");
  return r;
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
      }
      m.records.push_back(parse_record(j));
    } catch (const ValidationError& e) {
      throw ValidationError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!m.records.empty()) {
    const bool seg = m.records.front().mask_path.has_value();
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      if (m.records[i].mask_path.has_value() != seg) {
        throw ValidationError("manifest mixes segmentation and classification records");
      }
    }
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    json j = json::object();
    j["image_path"] = r.image_path;
    j["split"] = split_name(r.split);
    if (r.label) j["label"] = *r.label;
    if (r.mask_path) j["mask_path"] = *r.mask_path;
    out += j.dump() + "\n";
  }
  return out;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_manifest(manifest);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SegSample> load_segmentation_split(const DatasetManifest& manifest, Split split) {
  std::vector<SegSample> out;
  for (const auto& r : manifest.split(split)) {
    if (!r.mask_path) throw ValidationError("record " + r.image_path + " has no mask_path");
    SegSample s{read_image(manifest.resolve(r.image_path)), read_image(manifest.resolve(*r.mask_path))};
    if (s.mask.channels != 1) throw ValidationError("mask " + *r.mask_path + " must be single-channel");
    if (s.mask.width != s.image.width || s.mask.height != s.image.height) {
      throw ValidationError("mask " + *r.mask_path + " does not match the size of " + r.image_path);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ClsSample> load_classification_split(const DatasetManifest& manifest, Split split) {
  std::vector<ClsSample> out;
  for (const auto& r : manifest.split(split)) {
    if (!r.label) throw ValidationError("record " + r.image_path + " has no label");
    out.push_back({read_image(manifest.resolve(r.image_path)), *r.label});
  }
  return out;
}

}  // namespace mseg
