#include "lesiongen/io/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "lesiongen/error.hpp"
#include "lesiongen/hash.hpp"

namespace lesiongen {

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

std::string RunManifest::to_text(bool with_timing) const {
  std::ostringstream os;
  os << "LESIONGEN-MANIFEST 1\n";
  os << "command = " << command << '\n';
  os << "argv =";
  for (const auto& a : argv) os << ' ' << a;
  os << '\n';
  os << "seed = " << seed << '\n';
  for (const auto& [k, v] : streams) os << "stream." << k << " = " << v << '\n';
  for (const auto& [k, v] : inputs) os << "input." << k << " = " << v << '\n';
  for (const auto& [k, v] : config.values()) os << "config." << k << " = " << v << '\n';
  for (const auto& [k, v] : outputs) os << "output." << k << " = " << v << '\n';
  for (const auto& w : warnings) os << "warning = " << w << '\n';
  if (with_timing) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", wall_clock_seconds);
    os << "wall_clock_seconds = " << buf << '\n';
    os << "finished_at = " << finished_at << '\n';
  }
  return os.str();
}

void RunManifest::finalize(const std::filesystem::path& out_dir) {
  for (auto& [rel, hash] : outputs) hash = file_hash(out_dir / rel);
  finished_at = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  const auto final_path = out_dir / "manifest.txt";
  const auto tmp = out_dir / "manifest.txt.tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << to_text();
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, final_path);
}

std::string manifest_without_timing(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::string out, line;
  while (std::getline(is, line)) {
    if (line.rfind("wall_clock_seconds", 0) == 0 || line.rfind("finished_at", 0) == 0) continue;
    out += line + '\n';
  }
  return out;
}

}  // namespace lesiongen
