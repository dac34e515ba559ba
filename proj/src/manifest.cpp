#include "glff/manifest.hpp"

#include <algorithm>
#include <fstream>

#include "glff/config.hpp"
#include "glff/image.hpp"

namespace glff {

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::unprocessed: return "unprocessed";
    case Protocol::common: return "common";
    case Protocol::blend: return "blend";
    case Protocol::antiforensics: return "antiforensics";
    case Protocol::multicompress: return "multicompress";
    case Protocol::mixed: return "mixed";
  }
  return "unprocessed";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "unprocessed") return Protocol::unprocessed;
  if (s == "common") return Protocol::common;
  if (s == "blend" || s == "blend(external)") return Protocol::blend;
  if (s == "antiforensics") return Protocol::antiforensics;
  if (s == "multicompress") return Protocol::multicompress;
  if (s == "mixed") return Protocol::mixed;
  throw ConfigError("unknown protocol '" + s + "'");
}

std::string to_line(const SampleRecord& r) {
  nlohmann::ordered_json ops = nlohmann::ordered_json::array();
  for (const auto& op : r.ops) {
    nlohmann::ordered_json o;
    o["name"] = op.name;
    o["params"] = op.params;
    ops.push_back(std::move(o));
  }
  nlohmann::ordered_json j;
  j["path"] = r.path;
  j["label"] = r.label;
  j["generator"] = r.generator;
  j["protocol"] = to_string(r.protocol);
  j["ops"] = std::move(ops);
  return j.dump();
}

SampleRecord parse_line(const std::string& line) {
  auto j = nlohmann::ordered_json::parse(line);
  SampleRecord r;
  r.path = j.at("path").get<std::string>();
  r.label = j.at("label").get<int>();
  if (r.label != 0 && r.label != 1) throw ConfigError("label must be 0 or 1");
  r.generator = j.at("generator").get<std::string>();
  r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  for (const auto& o : j.at("ops")) r.ops.push_back({o.at("name").get<std::string>(), o.at("params")});
  return r;
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) out << to_line(r) << '\n';
}

std::vector<SampleRecord> read_manifest(const std::filesystem::path& path, bool require_files) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<SampleRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    SampleRecord r;
    try {
      r = parse_line(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": malformed record: " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    std::filesystem::path p(r.path);
    if (p.is_relative()) p = base / p;
    r.path = p.lexically_normal().string();
    if (require_files && !std::filesystem::exists(r.path))
      throw IoError(where + ": missing image " + r.path);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<SampleRecord> build_manifest(const std::vector<ManifestRoot>& roots) {
  std::vector<SampleRecord> records;
  for (const auto& root : roots) {
    for (const auto& p : list_images(root.dir)) {
      SampleRecord r;
      r.path = p.string();
      r.label = root.label;
      r.generator = root.generator;
      r.protocol = root.protocol;
      records.push_back(std::move(r));
    }
  }
  if (records.empty()) throw ConfigError("no images found for the manifest");
  std::stable_sort(records.begin(), records.end(),
                   [](const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; });
  return records;
}

}  // namespace glff
