#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenlat/scenario.hpp"

namespace scenlat {

// Raised for malformed scenario files; line() is 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Newline-delimited JSON, one scenario per line:
//   {"scenario_id": str, "duration": num,
//    "trajectories": [{"participant_id": str, "samples": [[t, x, y, v_lon(, v_lat)], ...]}],
//    "label": "EgoOvertakes" | "LeadingVehicleAhead" | "EgoBeingOvertaken"}   (label optional)
std::vector<Scenario> read_scenarios(std::istream& in);
std::vector<Scenario> read_scenarios(const std::filesystem::path& path);

void write_scenarios(std::ostream& out, const std::vector<Scenario>& scenarios);
void write_scenarios(const std::filesystem::path& path, const std::vector<Scenario>& scenarios);

std::string scenario_to_line(const Scenario& s);
Scenario scenario_from_line(const std::string& line, std::size_t line_no = 1);

}  // namespace scenlat
