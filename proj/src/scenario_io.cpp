#include "scenlat/scenario_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

namespace scenlat {

using nlohmann::json;

std::string scenario_to_line(const Scenario& s) {
  json rec;
  rec["scenario_id"] = s.scenario_id;
  rec["duration"] = s.duration;
  json trs = json::array();
  for (const auto& tr : s.trajectories) {
    json samples = json::array();
    for (const auto& smp : tr.samples) {
      json row = {smp.t, smp.x, smp.y, smp.v_lon};
      if (smp.v_lat) row.push_back(*smp.v_lat);
      samples.push_back(std::move(row));
    }
    trs.push_back({{"participant_id", tr.participant_id}, {"samples", std::move(samples)}});
  }
  rec["trajectories"] = std::move(trs);
  if (s.label) rec["label"] = std::string(class_name(*s.label));
  return rec.dump();
}

Scenario scenario_from_line(const std::string& line, std::size_t line_no) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!rec.is_object()) throw ParseError(line_no, "record is not an object");

  auto require = [&](const json& obj, const char* key) -> const json& {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(line_no, std::string("missing \"") + key + "\"");
    return *it;
  };

  Scenario s;
  try {
    s.scenario_id = require(rec, "scenario_id").get<std::string>();
    s.duration = require(rec, "duration").get<double>();
    const json& trs = require(rec, "trajectories");
    if (!trs.is_array()) throw ParseError(line_no, "\"trajectories\" is not a list");
    for (const auto& jt : trs) {
      Trajectory tr;
      tr.participant_id = require(jt, "participant_id").get<std::string>();
      const json& samples = require(jt, "samples");
      if (!samples.is_array()) throw ParseError(line_no, "\"samples\" is not a list");
      for (const auto& row : samples) {
        if (!row.is_array() || row.size() < 4 || row.size() > 5)
          throw ParseError(line_no, "sample must be [t, x, y, v_lon] or [t, x, y, v_lon, v_lat]");
        TrajectorySample smp{row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                             row[3].get<double>(), std::nullopt};
        if (row.size() == 5) smp.v_lat = row[4].get<double>();
        tr.samples.push_back(smp);
      }
      s.trajectories.push_back(std::move(tr));
    }
    if (auto it = rec.find("label"); it != rec.end() && !it->is_null()) {
      auto name = it->get<std::string>();
      s.label = parse_class_name(name);
      if (!s.label) throw ParseError(line_no, "unknown label \"" + name + "\"");
    }
  } catch (const json::type_error& e) {
    throw ParseError(line_no, std::string("wrong field type: ") + e.what());
  }
  return s;
}

std::vector<Scenario> read_scenarios(std::istream& in) {
  std::vector<Scenario> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Scenario s = scenario_from_line(line, line_no);
    if (!ids.insert(s.scenario_id).second)
      throw ParseError(line_no, "duplicate scenario_id \"" + s.scenario_id + "\"");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Scenario> read_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path.string());
  return read_scenarios(in);
}

void write_scenarios(std::ostream& out, const std::vector<Scenario>& scenarios) {
  for (const auto& s : scenarios) out << scenario_to_line(s) << '\n';
}

void write_scenarios(const std::filesystem::path& path, const std::vector<Scenario>& scenarios) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write scenario file " + path.string());
  write_scenarios(out, scenarios);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace scenlat
