#include "dpm/dataset_io.hpp"

#include <fstream>
#include <json.hpp>

namespace dpm {

using nlohmann::json;

std::ifstream open_input(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

namespace {

std::string require_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw Error("line " + std::to_string(line) + ": missing string field '" + key + "'");
  return it->get<std::string>();
}

AnnotatedItem parse_item(const json& obj, std::size_t line, const DatasetReadOptions& opt) {
  if (!obj.is_object()) throw Error("line " + std::to_string(line) + ": expected a JSON object");
  AnnotatedItem item;
  item.id = require_string(obj, "id", line);
  item.context = tokenize(require_string(obj, "context", line));
  item.text = tokenize(require_string(obj, "text", line));

  const bool has_ann = obj.contains("annotations");
  const bool has_prior = obj.contains("prior");
  if (has_ann == has_prior)
    throw Error("line " + std::to_string(line) + ": need exactly one of 'annotations' or 'prior'");

  try {
    if (has_ann) {
      const auto& arr = obj.at("annotations");
      if (!arr.is_array()) throw Error("'annotations' must be an integer array");
      std::vector<int> ann;
      for (const auto& v : arr) {
        if (!v.is_number_integer()) throw Error("'annotations' must be an integer array");
        ann.push_back(v.get<int>());
      }
      item.prior = empirical_prior(ann, opt.class_count, opt.epsilon);
      item.raw_annotations = std::move(ann);
    } else {
      const auto& arr = obj.at("prior");
      if (!arr.is_array() || arr.size() != opt.class_count)
        throw Error("'prior' must be a float array of length " + std::to_string(opt.class_count));
      std::vector<double> p;
      for (const auto& v : arr) {
        if (!v.is_number()) throw Error("'prior' must be a float array");
        p.push_back(v.get<double>());
      }
      item.prior = PrefDist(std::move(p));
    }
  } catch (const Error& e) {
    throw Error("line " + std::to_string(line) + ": " + e.what());
  }
  return item;
}

}  // namespace

Dataset read_dataset(std::istream& in, const DatasetReadOptions& options) {
  std::vector<AnnotatedItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error("line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
    }
    items.push_back(parse_item(obj, lineno, options));
  }
  return Dataset(std::move(items), options.class_count);
}

Dataset read_dataset(const std::filesystem::path& path, const DatasetReadOptions& options) {
  auto in = open_input(path);
  try {
    return read_dataset(in, options);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  for (const auto& item : dataset.items()) {
    json obj;
    obj["id"] = item.id;
    obj["context"] = join_tokens(item.context);
    obj["text"] = join_tokens(item.text);
    if (item.raw_annotations) {
      obj["annotations"] = *item.raw_annotations;
    } else {
      obj["prior"] = std::vector<double>(item.prior.probs().begin(), item.prior.probs().end());
    }
    out << obj.dump() << '\n';
  }
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  auto out = open_output(path);
  write_dataset(out, dataset);
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dpm
