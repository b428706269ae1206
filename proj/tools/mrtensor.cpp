#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "mrtensor/mrtensor.hpp"

namespace {

// Flags are collected as config-file settings and applied after the config
// file, so the command line wins regardless of flag order.
struct Settings {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  mrtensor::cli::Paths paths;

  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
  }
  void positional(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
           name, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help)
        ->required();
  }

  mrtensor::RunConfig resolve() const {
    mrtensor::RunConfig cfg;
    if (!config_path.empty()) cfg = mrtensor::load_run_config(config_path);
    for (const auto& [key, value] : overrides) mrtensor::apply_setting(cfg, key, value);
    return cfg;
  }
};

void geometry_flags(Settings& s, CLI::App* app) {
  s.flag(app, "--field-length", "field_length", "Pitch length in input units");
  s.flag(app, "--field-width", "field_width", "Pitch width in input units");
  s.flag(app, "--attack", "attack", "left_to_right or right_to_left");
}

void solver_flags(Settings& s, CLI::App* app) {
  s.flag(app, "--backend", "backend", "gs or em");
  s.flag(app, "--terms,-H", "terms", "Number of terms H");
  s.flag(app, "--rank,-R", "rank", "Rank of every term");
  s.flag(app, "--beta", "beta", "Shrinkage strength (see --beta-rule)");
  s.flag(app, "--beta-rule", "beta_rule", "scaled (beta x nnz) or absolute");
  s.flag(app, "--epsilon", "epsilon", "Log-sum penalty offset");
  s.flag(app, "--max-outer", "max_outer", "Outer iteration cap");
  s.flag(app, "--max-inner", "max_inner", "Inner iteration cap");
  s.flag(app, "--inner-tol", "inner_tol", "Inner relative tolerance");
  s.flag(app, "--outer-tol", "outer_tol", "Outer relative objective tolerance");
  s.flag(app, "--seed", "seed", "Random seed");
  s.flag(app, "--restarts", "restarts", "Random starts; the lowest objective is kept");
  s.flag(app, "--structure-moves", "structure_moves", "true: merge, split and drop terms while it lowers the objective");
  s.flag(app, "--em-max-responsibilities", "em_max_responsibilities", "EM memory cap (entries)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiresolution spatial network tensors and Poisson block-term factorization"};
  app.require_subcommand(1);
  Settings s;
  app.add_option("--config,-c", s.config_path, "key = value run configuration")->check(CLI::ExistingFile);

  auto* encode = app.add_subcommand("encode", "Encode a pass events CSV as a multiresolution tensor");
  s.positional(encode, "events", "events", "Events CSV");
  s.flag(encode, "--scales,-S", "scales", "Number of dyadic scales");
  s.flag(encode, "--out,-o", "tensor", "Tensor file to write");
  geometry_flags(s, encode);

  auto* fit = app.add_subcommand("fit", "Fit the Poisson block-term model to a tensor");
  s.positional(fit, "tensor", "tensor", "Tensor file");
  s.flag(fit, "--out,-o", "model", "Model file to write");
  fit->add_option("--report", s.paths.report, "Report CSV (default <model>.report.csv)");
  solver_flags(s, fit);

  auto* motifs = app.add_subcommand("motifs", "Export the top motifs as CSV matrices and SVG diagrams");
  s.positional(motifs, "model", "model", "Model file");
  s.flag(motifs, "--top,-k", "top_motifs", "Number of motifs");
  s.flag(motifs, "--scales", "render_scales", "Comma-separated scales to render");
  s.flag(motifs, "--edges", "top_edges", "Edges drawn per diagram");
  s.flag(motifs, "--out,-o", "output_dir", "Output directory");

  auto* dissim = app.add_subcommand("dissim", "Exposure-adjusted Bray-Curtis dissimilarity between teams");
  s.positional(dissim, "events", "events", "Events CSV");
  s.flag(dissim, "--scale,-s", "scales", "Scale of the adjacency matrices");
  s.flag(dissim, "--reference-minutes", "reference_minutes", "Exposure reference (default: mean team minutes)");
  dissim->add_option("--out,-o", s.paths.output, "Dissimilarity CSV");
  geometry_flags(s, dissim);

  auto* sim = app.add_subcommand("simulate", "Sample a count tensor from a model and a rate matrix");
  s.positional(sim, "model", "model", "Ground-truth model file");
  sim->add_option("--rates", s.paths.rates, "H x N rate matrix CSV")->required();
  s.flag(sim, "--seed", "seed", "Random seed");
  s.flag(sim, "--sampling", "sampling", "superposition or direct");
  s.flag(sim, "--out,-o", "tensor", "Tensor file to write");

  auto* scores = app.add_subcommand("scores", "Export normalized scores and replicate totals");
  s.positional(scores, "model", "model", "Model file");
  scores->add_option("--out,-o", s.paths.output, "Scores CSV");

  CLI11_PARSE(app, argc, argv);

  namespace cli = mrtensor::cli;
  return cli::run_command(
      [&] {
        const auto cfg = s.resolve();
        if (encode->parsed()) cli::cmd_encode(cfg, std::cout);
        else if (fit->parsed()) cli::cmd_fit(cfg, s.paths, std::cerr);
        else if (motifs->parsed()) cli::cmd_motifs(cfg, std::cerr);
        else if (dissim->parsed()) cli::cmd_dissim(cfg, s.paths, std::cerr);
        else if (sim->parsed()) cli::cmd_simulate(cfg, s.paths, std::cerr);
        else if (scores->parsed()) cli::cmd_scores(cfg, s.paths, std::cerr);
      },
      std::cerr);
}
