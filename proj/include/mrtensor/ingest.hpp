#pragma once

// Event-log ingestion: CSV parsing, coordinate standardization to the unit
// square and exposure (minutes played) bookkeeping.

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mrtensor/error.hpp"

namespace mrtensor {

enum class AttackDirection { left_to_right, right_to_left };

struct FieldGeometry {
  double length = 115.0;
  double width = 74.0;
  AttackDirection attack = AttackDirection::left_to_right;

  void validate() const {
    if (!(length > 0.0) || !(width > 0.0))
      throw ValidationError("field geometry needs positive length and width");
  }
};

// Standardized pass: all four coordinates in [0, 1).
struct PassEvent {
  std::size_t replicate = 0;  // position in EventTable::replicates
  double x_o = 0.0;
  double y_o = 0.0;
  double x_d = 0.0;
  double y_d = 0.0;
};

struct Replicate {
  std::string id;
  std::string team;
  double minutes = 0.0;
};

struct EventTable {
  std::vector<PassEvent> events;
  std::vector<Replicate> replicates;

  std::size_t replicate_count() const { return replicates.size(); }

  std::optional<std::size_t> find_replicate(std::string_view id) const {
    for (std::size_t i = 0; i < replicates.size(); ++i)
      if (replicates[i].id == id) return i;
    return std::nullopt;
  }

  // Distinct team labels in order of first appearance.
  std::vector<std::string> teams() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& r : replicates)
      if (seen.insert(r.team).second) out.push_back(r.team);
    return out;
  }
};

// Largest double strictly below one.
inline constexpr double kBelowOne = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;

inline double clamp_unit(double c) {
  if (c < 0.0) return 0.0;
  if (c >= 1.0) return kBelowOne;
  return c;
}

// Reflection of a physical x coordinate across the half-way line.
inline double mirror_x(double x, const FieldGeometry& geometry) { return geometry.length - x; }

namespace detail {

inline constexpr double kRangeSlack = 1e-6;

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

inline double parse_real(std::string_view field, std::size_t line, const char* name) {
  double v = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(v))
    throw ParseError(line, std::string("malformed ") + name + " '" + std::string(field) + "'");
  return v;
}

inline double standardize_coordinate(double value, double extent, bool mirror, std::size_t line,
                                     const char* name) {
  if (value < -kRangeSlack || value > extent + kRangeSlack)
    throw ValidationError("line " + std::to_string(line) + ": " + name + " = " +
                          std::to_string(value) + " lies outside [0, " + std::to_string(extent) +
                          "]");
  const double v = mirror ? extent - value : value;
  return clamp_unit(v / extent);
}

}  // namespace detail

// Reads `replicate_id,team,minutes,x_o,y_o,x_d,y_d` rows in physical field
// units. Rows with all four coordinates empty only register a replicate.
// Event rows may leave team and minutes empty when another row of the same
// replicate supplies them.
inline EventTable parse_events(std::istream& source, const FieldGeometry& geometry = {}) {
  geometry.validate();
  static constexpr std::string_view kHeader = "replicate_id,team,minutes,x_o,y_o,x_d,y_d";

  struct Row {
    std::size_t line;
    std::string id;
    std::array<double, 4> xy;
  };
  struct Registration {
    std::string team;
    std::optional<double> minutes;
    std::size_t line = 0;
  };

  std::vector<Row> rows;
  std::vector<std::string> order;
  std::unordered_map<std::string, Registration> registry;

  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(source, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line_no == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF)
      line.remove_prefix(3);  // UTF-8 BOM
    if (line.empty()) continue;
    if (!header_seen) {
      std::string compact;
      for (auto f : detail::split_csv(line)) {
        if (!compact.empty()) compact += ',';
        compact += f;
      }
      if (compact != kHeader) throw ParseError(line_no, "expected header '" + std::string(kHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto fields = detail::split_csv(line);
    if (fields.size() != 7)
      throw ParseError(line_no, "expected 7 fields, found " + std::to_string(fields.size()));
    if (fields[0].empty()) throw ParseError(line_no, "empty replicate_id");

    std::string id(fields[0]);
    auto [it, inserted] = registry.try_emplace(id);
    if (inserted) order.push_back(id);
    Registration& reg = it->second;
    if (!fields[1].empty()) {
      if (!reg.team.empty() && reg.team != fields[1])
        throw ValidationError("line " + std::to_string(line_no) + ": replicate '" + id +
                              "' changes team from '" + reg.team + "' to '" +
                              std::string(fields[1]) + "'");
      reg.team = std::string(fields[1]);
    }
    if (!fields[2].empty()) {
      const double minutes = detail::parse_real(fields[2], line_no, "minutes");
      if (minutes < 0.0)
        throw ValidationError("line " + std::to_string(line_no) + ": negative minutes");
      if (reg.minutes && *reg.minutes != minutes)
        throw ValidationError("line " + std::to_string(line_no) + ": replicate '" + id +
                              "' has conflicting minutes");
      reg.minutes = minutes;
    }
    if (reg.line == 0 && !fields[1].empty() && !fields[2].empty()) reg.line = line_no;

    const bool no_coords =
        fields[3].empty() && fields[4].empty() && fields[5].empty() && fields[6].empty();
    if (no_coords) continue;
    Row row{line_no, id, {}};
    static constexpr const char* kNames[4] = {"x_o", "y_o", "x_d", "y_d"};
    for (std::size_t k = 0; k < 4; ++k) {
      if (fields[3 + k].empty()) throw ParseError(line_no, std::string("missing ") + kNames[k]);
      row.xy[k] = detail::parse_real(fields[3 + k], line_no, kNames[k]);
    }
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw ParseError(line_no + 1, "missing header");

  EventTable table;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& id : order) {
    const Registration& reg = registry.at(id);
    if (reg.team.empty() || !reg.minutes) continue;
    index.emplace(id, table.replicates.size());
    table.replicates.push_back({id, reg.team, *reg.minutes});
  }

  const bool mirror = geometry.attack == AttackDirection::right_to_left;
  table.events.reserve(rows.size());
  for (const auto& row : rows) {
    const auto found = index.find(row.id);
    if (found == index.end())
      throw ValidationError("line " + std::to_string(row.line) + ": unknown replicate '" + row.id +
                            "' (no row supplies its team and minutes)");
    PassEvent e;
    e.replicate = found->second;
    e.x_o = detail::standardize_coordinate(row.xy[0], geometry.length, mirror, row.line, "x_o");
    e.y_o = detail::standardize_coordinate(row.xy[1], geometry.width, false, row.line, "y_o");
    e.x_d = detail::standardize_coordinate(row.xy[2], geometry.length, mirror, row.line, "x_d");
    e.y_d = detail::standardize_coordinate(row.xy[3], geometry.width, false, row.line, "y_d");
    table.events.push_back(e);
  }
  return table;
}

inline EventTable parse_events(const std::string& text, const FieldGeometry& geometry = {}) {
  std::istringstream in(text);
  return parse_events(in, geometry);
}

// Treats the coordinates of `table` as physical units of `geometry` and maps
// them to the unit square. With the unit geometry this is the identity on a
// standardized table.
inline EventTable standardize(EventTable table, const FieldGeometry& geometry) {
  geometry.validate();
  const bool mirror = geometry.attack == AttackDirection::right_to_left;
  for (std::size_t j = 0; j < table.events.size(); ++j) {
    auto& e = table.events[j];
    e.x_o = detail::standardize_coordinate(e.x_o, geometry.length, mirror, j + 1, "x_o");
    e.y_o = detail::standardize_coordinate(e.y_o, geometry.width, false, j + 1, "y_o");
    e.x_d = detail::standardize_coordinate(e.x_d, geometry.length, mirror, j + 1, "x_d");
    e.y_d = detail::standardize_coordinate(e.y_d, geometry.width, false, j + 1, "y_d");
  }
  return table;
}

// Mean over distinct teams of each team's total minutes.
inline double mean_team_minutes(const EventTable& table) {
  std::map<std::string, double> per_team;
  for (const auto& r : table.replicates) per_team[r.team] += r.minutes;
  if (per_team.empty()) throw ValidationError("no replicates registered");
  double sum = 0.0;
  for (const auto& [team, minutes] : per_team) sum += minutes;
  return sum / static_cast<double>(per_team.size());
}

// factor(r) = reference / minutes(r). The reference defaults to the mean of
// team minutes.
inline std::map<std::string, double> exposure_factors(
    const EventTable& table, std::optional<double> reference_minutes = std::nullopt) {
  const double reference = reference_minutes ? *reference_minutes : mean_team_minutes(table);
  if (!(reference >= 0.0)) throw ValidationError("reference minutes must be nonnegative");
  std::map<std::string, double> out;
  for (const auto& r : table.replicates) {
    if (!(r.minutes > 0.0))
      throw ValidationError("replicate '" + r.id + "' has zero minutes played");
    out[r.id] = reference / r.minutes;
  }
  return out;
}

// Same ratio with minutes aggregated per team.
inline std::map<std::string, double> team_exposure_factors(
    const EventTable& table, std::optional<double> reference_minutes = std::nullopt) {
  std::map<std::string, double> minutes;
  for (const auto& r : table.replicates) minutes[r.team] += r.minutes;
  const double reference = reference_minutes ? *reference_minutes : mean_team_minutes(table);
  std::map<std::string, double> out;
  for (const auto& [team, m] : minutes) {
    if (!(m > 0.0)) throw ValidationError("team '" + team + "' has zero minutes played");
    out[team] = reference / m;
  }
  return out;
}

}  // namespace mrtensor
