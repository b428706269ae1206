#pragma once

// Batch commands behind the `mrtensor` executable. Each command reads and
// writes the paths named in its RunConfig and reports on `log`; failures
// surface as exceptions, which run_command turns into exit codes.

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mrtensor/analysis.hpp"
#include "mrtensor/config.hpp"
#include "mrtensor/error.hpp"
#include "mrtensor/ingest.hpp"
#include "mrtensor/model.hpp"
#include "mrtensor/mrencode.hpp"
#include "mrtensor/solver.hpp"
#include "mrtensor/sparse_tensor.hpp"

namespace mrtensor::cli {

struct Paths {
  std::string rates;   // simulate: H x N rate matrix
  std::string output;  // dissim and scores: CSV destination
  std::string report;  // fit: report CSV; defaults to <model>.report.csv
};

namespace detail {

inline void require(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("missing path: ") + what);
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

inline void close(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) throw Error("failed writing '" + path + "'");
}

inline CpBtdModel load_model(const std::string& path) {
  auto in = open_in(path);
  return read_cpbtd(in);
}

}  // namespace detail

// Plain numeric CSV, one row per line.
inline Eigen::MatrixXd read_matrix_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto text = mrtensor::detail::trim(raw);
    if (text.empty()) continue;
    std::vector<double> row;
    for (auto f : mrtensor::detail::split_csv(text)) row.push_back(mrtensor::detail::parse_real(f, line, "value"));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(line, "expected " + std::to_string(rows.front().size()) + " columns");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(line + 1, "empty matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline void cmd_encode(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  detail::require(cfg.events_path, "events");
  detail::require(cfg.tensor_path, "tensor");
  auto in = detail::open_in(cfg.events_path);
  const EventTable table = parse_events(in, cfg.geometry);
  if (table.events.empty()) throw ValidationError("no events");
  const auto tensor = build_tensor(table, cfg.scales);
  auto out = detail::open_out(cfg.tensor_path);
  write_mrtensor(out, tensor);
  detail::close(out, cfg.tensor_path);
  std::ostringstream msg;
  msg << "cells=" << tensor.cell_count() << " nnz=" << tensor.nnz() << " sparsity=" << std::fixed
      << std::setprecision(4) << tensor.sparsity_percent() << "%\n";
  log << msg.str();
}

// Writes the model and report, also when the solver aborts part way.
inline void cmd_fit(const RunConfig& cfg, const Paths& paths, std::ostream& log) {
  cfg.validate();
  detail::require(cfg.tensor_path, "tensor");
  detail::require(cfg.model_path, "model");
  const std::string report_path = paths.report.empty() ? cfg.model_path + ".report.csv" : paths.report;
  auto in = detail::open_in(cfg.tensor_path);
  const auto tensor = read_mrtensor(in);
  if (cfg.backend == Backend::em && cfg.solver.beta > 0.0)
    log << "warning: the em backend fits without shrinkage; beta is ignored\n";

  auto save = [&](const CpBtdModel& model, const FitReport& report) {
    auto mo = detail::open_out(cfg.model_path);
    write_cpbtd(mo, model);
    detail::close(mo, cfg.model_path);
    auto ro = detail::open_out(report_path);
    write_report_csv(ro, report);
    detail::close(ro, report_path);
  };
  try {
    const auto result = cfg.backend == Backend::em ? fit_em(tensor, cfg.solver) : fit_block_gs(tensor, cfg.solver);
    save(result.model, result.report);
    std::ostringstream msg;
    msg << "outer_iterations=" << result.report.outer_iterations
        << " converged=" << (result.report.converged ? "yes" : "no")
        << " objective=" << format_real(result.report.objective.back())
        << " effective_H=" << result.report.effective_terms.back() << '\n';
    log << msg.str();
  } catch (const FitAborted& e) {
    save(e.model(), e.report());
    throw;
  }
}

inline void cmd_motifs(const RunConfig& cfg, std::ostream& log) {
  detail::require(cfg.model_path, "model");
  detail::require(cfg.output_dir, "output_dir");
  const auto model = detail::load_model(cfg.model_path);
  if (cfg.top_motifs == 0) return;
  if (model.modes() % 2 != 0) throw DimensionError("model does not have origin/destination mode pairs");
  const std::size_t model_scales = model.modes() / 2;
  std::vector<std::size_t> scales = cfg.render_scales;
  if (scales.empty())
    for (std::size_t s = 1; s <= model_scales; ++s) scales.push_back(s);
  for (auto s : scales)
    if (s < 1 || s > model_scales)
      throw DimensionError("scale " + std::to_string(s) + " outside [1, " + std::to_string(model_scales) + "]");

  const auto ranked = rank_motifs(model);
  if (cfg.top_motifs > ranked.size())
    log << "warning: " << cfg.top_motifs << " motifs requested but only " << ranked.size() << " are active\n";
  const std::size_t count = std::min(cfg.top_motifs, ranked.size());
  std::filesystem::create_directories(cfg.output_dir);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t h = ranked[k].term;
    for (auto s : scales) {
      const Eigen::MatrixXd motif = motif_at_scale(model, h, s);
      const std::string stem = (std::filesystem::path(cfg.output_dir) /
                                ("motif" + std::to_string(k + 1) + "_term" + std::to_string(h + 1) + "_scale" +
                                 std::to_string(s)))
                                   .string();
      auto csv = detail::open_out(stem + ".csv");
      write_matrix_csv(csv, motif);
      detail::close(csv, stem + ".csv");
      auto svg = detail::open_out(stem + ".svg");
      write_motif_svg(svg, motif, s, cfg.top_edges);
      detail::close(svg, stem + ".svg");
    }
  }
  log << "motifs=" << count << " scales=" << scales.size() << '\n';
}

inline void cmd_dissim(const RunConfig& cfg, const Paths& paths, std::ostream& log) {
  cfg.validate();
  detail::require(cfg.events_path, "events");
  detail::require(paths.output, "output");
  auto in = detail::open_in(cfg.events_path);
  const auto table = parse_events(in, cfg.geometry);
  const auto d = dissimilarity_matrix(table, cfg.scales, cfg.reference_minutes);
  auto out = detail::open_out(paths.output);
  write_dissimilarity_csv(out, d);
  detail::close(out, paths.output);
  log << "teams=" << d.labels.size() << " scale=" << d.scale << '\n';
}

inline void cmd_simulate(const RunConfig& cfg, const Paths& paths, std::ostream& log) {
  detail::require(cfg.model_path, "model");
  detail::require(paths.rates, "rates");
  detail::require(cfg.tensor_path, "tensor");
  const auto truth = detail::load_model(cfg.model_path);
  auto rin = detail::open_in(paths.rates);
  const Eigen::MatrixXd rates = read_matrix_csv(rin);
  const auto tensor = simulate(truth, rates, cfg.solver.seed, cfg.sampling);
  auto out = detail::open_out(cfg.tensor_path);
  write_mrtensor(out, tensor);
  detail::close(out, cfg.tensor_path);
  log << "nnz=" << tensor.nnz() << " total=" << tensor.total_count() << '\n';
}

// Theta (H x N, columns summing to one) followed by an `eta` row.
inline void write_scores_csv(std::ostream& out, const ScoreSummary& s) {
  out << "term";
  for (Eigen::Index n = 0; n < s.theta.cols(); ++n) out << ",r" << (n + 1);
  out << '\n';
  for (Eigen::Index h = 0; h < s.theta.rows(); ++h) {
    out << (h + 1);
    for (Eigen::Index n = 0; n < s.theta.cols(); ++n) out << ',' << format_real(s.theta(h, n));
    out << '\n';
  }
  out << "eta";
  for (Eigen::Index n = 0; n < s.eta.size(); ++n) out << ',' << format_real(s.eta(n));
  out << '\n';
}

inline void cmd_scores(const RunConfig& cfg, const Paths& paths, std::ostream& log) {
  detail::require(cfg.model_path, "model");
  detail::require(paths.output, "output");
  const auto summary = normalize_scores(detail::load_model(cfg.model_path));
  auto out = detail::open_out(paths.output);
  write_scores_csv(out, summary);
  detail::close(out, paths.output);
  log << "terms=" << summary.theta.rows() << " replicates=" << summary.theta.cols() << '\n';
}

// Runs a command; prints `error: ...` and returns 1 on failure.
template <class Fn>
int run_command(Fn&& fn, std::ostream& err) {
  try {
    fn();
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mrtensor::cli
