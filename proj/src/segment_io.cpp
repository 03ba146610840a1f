#include "ecgdk/segment_io.h"

#include <fstream>
#include <string>

#include <json.hpp>

#include "ecgdk/common.h"

namespace ecgdk {

namespace {

using nlohmann::json;

json segment_json(const Segment& s) {
  json j;
  j["label"] = s.label ? json(std::string(to_string(*s.label))) : json(nullptr);
  j["domain"] = s.domain_id;
  j["record"] = s.source_record;
  j["start"] = s.start_index;
  j["samples"] = s.samples;
  return j;
}

template <typename T>
T field(const json& j, const char* key, const std::string& file, std::size_t line) {
  if (!j.contains(key)) throw ParseError(file, line, key, "missing key");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(file, line, key, e.what());
  }
}

Segment parse_segment(const json& j, const std::string& file, std::size_t line) {
  Segment s;
  if (!j.contains("label")) throw ParseError(file, line, "label", "missing key");
  if (!j.at("label").is_null()) {
    try {
      s.label = parse_label(field<std::string>(j, "label", file, line));
    } catch (const ContractError& e) {
      throw ParseError(file, line, "label", e.what());
    }
  }
  s.domain_id = field<std::string>(j, "domain", file, line);
  s.source_record = field<std::string>(j, "record", file, line);
  s.start_index = field<std::size_t>(j, "start", file, line);
  s.samples = field<std::vector<double>>(j, "samples", file, line);
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw ParseError(file, line, "samples", e.what());
  }
  return s;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "", "cannot open file");
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string(), line, "", e.what());
    }
    if (!j.is_object()) throw ParseError(path.string(), line, "", "expected a JSON object");
    fn(j, line);
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw ContractError("write failed for " + path.string());
}

}  // namespace

void save_segments(const std::filesystem::path& path, std::span<const Segment> segments) {
  std::vector<json> rows;
  rows.reserve(segments.size());
  for (const auto& s : segments) rows.push_back(segment_json(s));
  write_lines(path, rows);
}

std::vector<Segment> load_segments(const std::filesystem::path& path) {
  std::vector<Segment> out;
  for_each_line(path, [&](const json& j, std::size_t line) { out.push_back(parse_segment(j, path.string(), line)); });
  return out;
}

void save_examples(const std::filesystem::path& path, std::span<const Example> examples) {
  std::vector<json> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) {
    json j = segment_json(e.segment);
    if (e.features) {
      const auto a = e.features->to_array();
      j["features"] = std::vector<double>(a.begin(), a.end());
    } else {
      j["features"] = nullptr;
    }
    j["usable"] = e.usable();
    rows.push_back(std::move(j));
  }
  write_lines(path, rows);
}

std::vector<Example> load_examples(const std::filesystem::path& path) {
  std::vector<Example> out;
  for_each_line(path, [&](const json& j, std::size_t line) {
    Example e;
    e.segment = parse_segment(j, path.string(), line);
    if (j.contains("features") && !j.at("features").is_null()) {
      const auto v = field<std::vector<double>>(j, "features", path.string(), line);
      if (v.size() != kHrvFeatureCount)
        throw ParseError(path.string(), line, "features", "expected 7 values, got " + std::to_string(v.size()));
      e.features = HrvFeatures::from_array(v);
    }
    out.push_back(std::move(e));
  });
  return out;
}

std::vector<Example> extract_features(std::span<const Segment> segments, std::size_t jobs) {
  std::vector<Example> out(segments.size());
  parallel_for(segments.size(), jobs, [&](std::size_t i) {
    out[i].segment = segments[i];
    out[i].features = features_for_segment(segments[i]);
  });
  return out;
}

}  // namespace ecgdk
