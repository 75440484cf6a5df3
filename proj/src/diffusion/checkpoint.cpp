#include "lesiongen/diffusion/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "lesiongen/tensor/dtf.hpp"

namespace lesiongen {

namespace {

std::string dims_token(const Shape& d) {
  if (d.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(d[i]);
  }
  return s;
}

Shape parse_dims(const std::string& tok) {
  Shape d;
  if (tok == "-") return d;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) d.push_back(std::stoi(part));
  return d;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const std::map<std::string, std::string>& meta) {
  std::ostringstream header;
  header << "LESIONGEN-CKPT 1\n";
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ValidationError("checkpoint meta keys may not contain spaces or newlines: '" + k + "'");
    }
    header << "meta " << k << ' ' << v << '\n';
  }
  header << "step " << params.step() << '\n';
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    header << "tensor " << e.name << ' ' << offset << ' ' << dims_token(e.value.dims()) << '\n';
    offset += dtf_encoded_size(e.value);
  }
  header << "end\n";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << header.str();
  for (const auto& e : params.entries()) write_dtf(os, e.value);
  if (!os) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "LESIONGEN-CKPT 1") throw IoError(path.string() + ": not a checkpoint");
  Checkpoint ck;
  struct Item {
    std::string name;
    std::size_t offset;
    Shape dims;
  };
  std::vector<Item> items;
  std::int64_t step = 0;
  while (true) {
    if (!std::getline(is, line)) throw IoError(path.string() + ": truncated header");
    if (line == "end") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ck.meta[key] = value;
    } else if (kind == "step") {
      ls >> step;
    } else if (kind == "tensor") {
      Item it;
      std::string dims;
      ls >> it.name >> it.offset >> dims;
      if (!ls) throw IoError(path.string() + ": malformed tensor line");
      it.dims = parse_dims(dims);
      items.push_back(std::move(it));
    } else {
      throw IoError(path.string() + ": unknown header line '" + line + "'");
    }
  }
  const auto blob_start = is.tellg();
  for (const auto& it : items) {
    is.seekg(blob_start + static_cast<std::streamoff>(it.offset));
    Tensor t = read_dtf(is);
    if (t.dims() != it.dims) throw IoError(path.string() + ": dims mismatch for " + it.name);
    ck.params.add(it.name, std::move(t));
  }
  ck.params.set_step(step);
  return ck;
}

}  // namespace lesiongen
