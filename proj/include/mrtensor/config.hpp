#pragma once

// Run configuration read from a plain `key = value` file. Blank lines and
// lines starting with '#' are ignored. Command-line flags override values
// read from the file.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mrtensor/analysis.hpp"
#include "mrtensor/error.hpp"
#include "mrtensor/ingest.hpp"
#include "mrtensor/solver.hpp"

namespace mrtensor {

enum class Backend { block_gs, em };

struct RunConfig {
  std::string events_path;
  std::string tensor_path;
  std::string model_path;
  std::string output_dir;
  std::size_t scales = 3;
  FieldGeometry geometry;
  std::optional<double> reference_minutes;
  SolverConfig solver;
  Backend backend = Backend::block_gs;
  std::size_t top_motifs = 10;
  std::vector<std::size_t> render_scales;  // empty: every scale of the model
  std::size_t top_edges = kDefaultTopEdges;
  SamplingPath sampling = SamplingPath::superposition;

  void validate() const {
    if (scales < 1 || scales > kMaxScales) throw ValidationError("scales must be in [1, 15]");
    geometry.validate();
    solver.validate();
    for (auto s : render_scales)
      if (s < 1) throw ValidationError("render scales are 1-based");
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& text, std::size_t line, const std::string& key) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ParseError(line, "invalid value '" + text + "' for " + key);
  return value;
}

inline std::vector<std::size_t> parse_size_list(const std::string& text, std::size_t line, const std::string& key) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = std::string(trim(tok));
    if (!tok.empty()) out.push_back(parse_number<std::size_t>(tok, line, key));
  }
  return out;
}

}  // namespace detail

inline bool parse_flag(const std::string& s, std::size_t line, const std::string& key) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ParseError(line, key + " must be true or false");
}

inline Backend parse_backend(const std::string& s) {
  if (s == "gs") return Backend::block_gs;
  if (s == "em") return Backend::em;
  throw ValidationError("unknown backend '" + s + "' (expected gs or em)");
}

inline SamplingPath parse_sampling(const std::string& s) {
  if (s == "superposition") return SamplingPath::superposition;
  if (s == "direct") return SamplingPath::direct;
  throw ValidationError("unknown sampling path '" + s + "'");
}

// Applies one setting; the keys are the config-file names.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value, std::size_t line = 0) {
  using detail::parse_number;
  auto& s = c.solver;
  if (key == "events") c.events_path = value;
  else if (key == "tensor") c.tensor_path = value;
  else if (key == "model") c.model_path = value;
  else if (key == "output_dir") c.output_dir = value;
  else if (key == "scales") c.scales = parse_number<std::size_t>(value, line, key);
  else if (key == "field_length") c.geometry.length = parse_number<double>(value, line, key);
  else if (key == "field_width") c.geometry.width = parse_number<double>(value, line, key);
  else if (key == "attack") {
    if (value == "left_to_right") c.geometry.attack = AttackDirection::left_to_right;
    else if (value == "right_to_left") c.geometry.attack = AttackDirection::right_to_left;
    else throw ParseError(line, "attack must be left_to_right or right_to_left");
  } else if (key == "reference_minutes") c.reference_minutes = parse_number<double>(value, line, key);
  else if (key == "terms") s.terms = parse_number<std::size_t>(value, line, key);
  else if (key == "rank") s.rank = parse_number<std::size_t>(value, line, key);
  else if (key == "beta_rule") {
    if (value == "scaled") s.beta_rule = BetaRule::scaled;
    else if (value == "absolute") s.beta_rule = BetaRule::absolute;
    else throw ParseError(line, "beta_rule must be scaled or absolute");
  } else if (key == "beta") s.beta = parse_number<double>(value, line, key);
  else if (key == "epsilon") s.epsilon = parse_number<double>(value, line, key);
  else if (key == "max_outer") s.max_outer = parse_number<std::size_t>(value, line, key);
  else if (key == "max_inner") s.max_inner = parse_number<std::size_t>(value, line, key);
  else if (key == "inner_tol") s.inner_tol = parse_number<double>(value, line, key);
  else if (key == "outer_tol") s.outer_tol = parse_number<double>(value, line, key);
  else if (key == "structure_moves") s.structure_moves = parse_flag(value, line, key);
  else if (key == "restarts") s.restarts = parse_number<std::size_t>(value, line, key);
  else if (key == "seed") s.seed = parse_number<std::uint64_t>(value, line, key);
  else if (key == "em_max_responsibilities") s.em_max_responsibilities = parse_number<std::uint64_t>(value, line, key);
  else if (key == "backend") c.backend = parse_backend(value);
  else if (key == "top_motifs") c.top_motifs = parse_number<std::size_t>(value, line, key);
  else if (key == "render_scales") c.render_scales = detail::parse_size_list(value, line, key);
  else if (key == "top_edges") c.top_edges = parse_number<std::size_t>(value, line, key);
  else if (key == "sampling") c.sampling = parse_sampling(value);
  else throw ParseError(line, "unknown setting '" + key + "'");
}

inline RunConfig parse_run_config(std::istream& in, RunConfig base = {}) {
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto text = detail::trim(raw);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ParseError(line, "expected 'key = value'");
    const std::string key(detail::trim(text.substr(0, eq)));
    const std::string value(detail::trim(text.substr(eq + 1)));
    if (key.empty()) throw ParseError(line, "empty key");
    apply_setting(base, key, value, line);
  }
  return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  return parse_run_config(in, std::move(base));
}

}  // namespace mrtensor
