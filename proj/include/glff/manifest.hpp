#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace glff {

enum class Protocol { unprocessed, common, blend, antiforensics, multicompress, mixed };

std::string to_string(Protocol p);
/// Accepts `blend(external)` as an alias of `blend`.
Protocol protocol_from_string(const std::string& s);

/// One applied operation with its exact parameters.
struct OpRecord {
  std::string name;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  bool operator==(const OpRecord&) const = default;
};

/// One manifest line.
struct SampleRecord {
  std::string path;
  int label = 1;  // 0 real, 1 fake
  std::string generator;
  Protocol protocol = Protocol::unprocessed;
  std::vector<OpRecord> ops;
};

/// JSON object with keys exactly path, label, generator, protocol, ops (in
/// that order); ops is an array of {name, params}.
std::string to_line(const SampleRecord& r);
SampleRecord parse_line(const std::string& line);

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

/// Reads a manifest. Relative paths resolve against the manifest directory.
/// With `require_files`, a missing image raises IoError naming the line.
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path, bool require_files = true);

struct ManifestRoot {
  std::filesystem::path dir;
  int label = 1;
  std::string generator;
  Protocol protocol = Protocol::unprocessed;
};

/// One record per image under the roots, sorted by path. Throws when no
/// image is found.
std::vector<SampleRecord> build_manifest(const std::vector<ManifestRoot>& roots);

}  // namespace glff
