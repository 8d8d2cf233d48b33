#include "CLI11.hpp"
#include "dpgplvm/dpgplvm.hpp"
#include "dpgplvm/io.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace dpgplvm;
using io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNumeric = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  std::string out_dir = ".";
};

std::string out_path(const Globals &g, const std::string &name) {
  return (fs::path(g.out_dir) / name).string();
}

void ensure_out_dir(const Globals &g) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (ec)
    throw InputError("cannot create output directory '" + g.out_dir + "'");
}

struct TrainArgs {
  std::string data, config, mode, groups;
};

int cmd_train(const Globals &g, const TrainArgs &a) {
  const auto table = io::read_csv(a.data);
  const DataMatrix &y = table.data;
  io::ConfigFile cfg;
  if (!a.config.empty())
    cfg = io::read_config(a.config);
  ModelMode mode = cfg.mode.value_or(ModelMode::kDpGpLvm);
  if (!a.mode.empty())
    mode = mode_from_string(a.mode);
  if (g.seed)
    cfg.config.seed = *g.seed;

  std::vector<int> groups;
  if (mode == ModelMode::kMrdFixed) {
    if (a.groups.empty())
      throw InputError("--mode mrd requires --groups");
    groups = io::parse_labels(io::read_file(a.groups), a.groups);
    if (static_cast<Index>(groups.size()) != y.cols())
      throw InputError("--groups has " + std::to_string(groups.size()) +
                       " labels but the data has " + std::to_string(y.cols()) +
                       " columns");
  }

  const ModelState init = initialize(y, cfg.config, mode, groups);
  auto log = [&](const ElboReport &r, double step) {
    if (!g.verbose)
      return;
    const json line = {{"iter", r.iter},       {"total", r.total},
                       {"gp", r.gp.total},     {"dp", r.dp.total},
                       {"hyperprior", r.hyperprior}, {"step_size", step}};
    std::cerr << line.dump() << "\n";
  };
  const TrainTrace trace = optimize(init, y, log);

  ensure_out_dir(g);
  const ModelState &s = trace.final_state;
  const double final_total =
      trace.elbo_history.empty() ? 0.0 : trace.elbo_history.back().total;
  io::write_file(out_path(g, "model.json"),
                 io::dump(io::checkpoint_json(s, final_total)));

  std::string csv = "iter,total,gp,dp,hyperprior\n";
  for (const auto &r : trace.elbo_history)
    csv += std::to_string(r.iter) + "," + io::format_double(r.total) + "," +
           io::format_double(r.gp.total) + "," + io::format_double(r.dp.total) +
           "," + io::format_double(r.hyperprior) + "\n";
  io::write_file(out_path(g, "trace.csv"), csv);
  io::write_file(out_path(g, "ard.csv"),
                 io::to_csv(io::numbered("q", s.latent.q()), s.components.ard));
  io::write_file(out_path(g, "phi.csv"),
                 io::to_csv(io::numbered("t", s.t()), s.dp.phi));

  if (trace.error) {
    std::cerr << "error: training stopped: " << *trace.error << "\n";
    return kExitNumeric;
  }
  std::cout << "iterations " << trace.elbo_history.size() - 1 << ", elbo "
            << io::format_double(final_total)
            << (trace.converged ? ", converged" : ", max_iters reached") << "\n";
  return kExitOk;
}

struct SynthArgs {
  std::optional<Index> n, d, q_true;
  std::string groups;
  std::optional<double> sigma2, gamma, beta;
  std::optional<double> mask_rows, mask_dims;
};

int cmd_synth(const Globals &g, const SynthArgs &a) {
  SyntheticSpec spec = SyntheticSpec::standard(g.seed.value_or(0));
  if (a.n)
    spec.n = *a.n;
  if (a.d)
    spec.d = *a.d;
  if (a.q_true)
    spec.q_true = *a.q_true;
  if (!a.groups.empty())
    spec.groups = io::parse_groups(a.groups);
  for (auto &grp : spec.groups) {
    if (a.sigma2)
      grp.sigma2 = *a.sigma2;
    if (a.gamma)
      grp.gamma = *a.gamma;
    if (a.beta)
      grp.beta = *a.beta;
  }
  if (a.mask_rows.has_value() != a.mask_dims.has_value())
    throw InputError("--mask-rows and --mask-dims must be given together");

  // Everything is computed before the first file is written.
  const SyntheticData data = generate(spec);
  std::optional<DataMatrix> masked;
  if (a.mask_rows)
    masked = mask_random(data.y, *a.mask_rows, *a.mask_dims, spec.seed);
  const auto header = io::numbered("y", spec.d);
  const std::string data_csv = io::to_csv(header, data.y.values);
  const std::string truth = io::dump(io::synthetic_json(spec, data));
  std::string masked_csv;
  if (masked)
    masked_csv = io::to_csv(header, masked->values, &masked->mask);

  ensure_out_dir(g);
  io::write_file(out_path(g, "data.csv"), data_csv);
  io::write_file(out_path(g, "truth.json"), truth);
  if (masked)
    io::write_file(out_path(g, "masked.csv"), masked_csv);
  return kExitOk;
}

struct ImputeArgs {
  std::string model, data, truth;
};

int cmd_impute(const Globals &g, const ImputeArgs &a) {
  const ModelState s = io::read_checkpoint(a.model);
  const auto table = io::read_csv(a.data);
  std::optional<Matrix> truth;
  if (!a.truth.empty()) {
    const auto t = io::read_csv(a.truth);
    Matrix v = t.data.values;
    for (Index r = 0; r < v.rows(); ++r)
      for (Index c = 0; c < v.cols(); ++c)
        if (!t.data.mask(r, c))
          v(r, c) = std::numeric_limits<double>::quiet_NaN();
    truth = std::move(v);
  }
  const auto result = impute(s, table.data, truth);
  std::string csv = "row,col,mean,var\n";
  for (const auto &e : result.entries)
    csv += std::to_string(e.row + 1) + "," + std::to_string(e.col + 1) + "," +
           io::format_double(e.mean) + "," + io::format_double(e.var) + "\n";
  ensure_out_dir(g);
  io::write_file(out_path(g, "imputed.csv"), csv);
  if (result.mse)
    std::cout << "mse " << io::format_double(*result.mse) << "\n";
  return kExitOk;
}

struct PredictArgs {
  std::string model, data, latent, dims;
};

int cmd_predict(const Globals &g, const PredictArgs &a) {
  const ModelState s = io::read_checkpoint(a.model);
  const auto table = io::read_csv(a.data);
  const auto query = io::read_csv(a.latent);
  if (!query.data.complete())
    throw InputError(a.latent + ": latent query must not have empty cells");
  std::vector<Index> dims;
  if (!a.dims.empty())
    for (int d : io::parse_labels(a.dims, "--dims")) {
      if (d < 1 || d > table.data.cols())
        throw InputError("--dims entry " + std::to_string(d) + " out of range");
      dims.push_back(d - 1);
    }
  const auto pred = predict(s, table.data, query.data.values, dims);
  if (dims.empty())
    for (Index d = 0; d < table.data.cols(); ++d)
      dims.push_back(d);
  std::vector<std::string> header;
  for (Index d : dims)
    header.push_back("y" + std::to_string(d + 1));
  ensure_out_dir(g);
  io::write_file(out_path(g, "mean.csv"), io::to_csv(header, pred.mean));
  io::write_file(out_path(g, "var.csv"), io::to_csv(header, pred.var));
  return kExitOk;
}

struct ScoreArgs {
  std::string phi, model, truth;
  double threshold = 0.05;
};

int cmd_score(const Globals &, const ScoreArgs &a) {
  Matrix phi;
  if (!a.model.empty())
    phi = io::read_checkpoint(a.model).dp.phi;
  else if (!a.phi.empty())
    phi = io::read_csv(a.phi).data.values;
  else
    throw InputError("score needs --phi or --model");
  const auto truth = io::read_truth_labels(a.truth);
  if (static_cast<Index>(truth.size()) != phi.rows())
    throw InputError("truth has " + std::to_string(truth.size()) +
                     " labels but phi has " + std::to_string(phi.rows()) +
                     " rows");
  const auto sc = grouping_score(phi, truth, a.threshold);
  const json out = {{"accuracy", sc.accuracy}, {"n_effective", sc.n_effective}};
  std::cout << out.dump() << "\n";
  return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Dirichlet-process Gaussian process latent variable models"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals globals;
  app.add_option("--seed", globals.seed, "Random seed (overrides config)");
  app.add_flag("--verbose", globals.verbose, "Per-iteration JSON lines on stderr");
  app.add_option("--out-dir", globals.out_dir, "Directory for output files");

  TrainArgs train_args;
  auto *train = app.add_subcommand("train", "Fit a model");
  train->add_option("--data", train_args.data, "Data CSV")->required();
  train->add_option("--config", train_args.config, "Config JSON");
  train->add_option("--mode", train_args.mode, "dpgplvm | bgplvm | mrd");
  train->add_option("--groups", train_args.groups, "Group labels (mrd)");

  SynthArgs synth_args;
  auto *synth = app.add_subcommand("synth", "Generate synthetic data");
  synth->add_option("--n", synth_args.n, "Samples");
  synth->add_option("--d", synth_args.d, "Observed dimensions");
  synth->add_option("--q-true", synth_args.q_true, "Latent dimensions");
  synth->add_option("--groups", synth_args.groups,
                    "e.g. \"1-10:1,2;11-20:1,3\" (1-based)");
  synth->add_option("--sigma2", synth_args.sigma2, "Signal variance");
  synth->add_option("--gamma", synth_args.gamma, "ARD weight on active latents");
  synth->add_option("--beta", synth_args.beta, "Noise precision");
  synth->add_option("--mask-rows", synth_args.mask_rows,
                    "Fraction of rows to mask (writes masked.csv)");
  synth->add_option("--mask-dims", synth_args.mask_dims,
                    "Fraction of columns to mask");

  ImputeArgs impute_args;
  auto *imp = app.add_subcommand("impute", "Predict unobserved entries");
  imp->add_option("--model", impute_args.model, "Checkpoint")->required();
  imp->add_option("--data", impute_args.data, "Masked data CSV")->required();
  imp->add_option("--truth", impute_args.truth, "Complete data CSV");

  PredictArgs predict_args;
  auto *pred = app.add_subcommand("predict", "Predict at latent points");
  pred->add_option("--model", predict_args.model, "Checkpoint")->required();
  pred->add_option("--data", predict_args.data, "Training data CSV")->required();
  pred->add_option("--latent", predict_args.latent, "Query points CSV (P x Q)")
      ->required();
  pred->add_option("--dims", predict_args.dims, "1-based dimensions, e.g. 1,3");

  ScoreArgs score_args;
  auto *score = app.add_subcommand("score", "Grouping accuracy of phi");
  score->add_option("--phi", score_args.phi, "phi CSV");
  score->add_option("--model", score_args.model, "Checkpoint");
  score->add_option("--truth", score_args.truth, "truth.json or label file")
      ->required();
  score->add_option("--threshold", score_args.threshold, "Mass threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*train)
      return cmd_train(globals, train_args);
    if (*synth)
      return cmd_synth(globals, synth_args);
    if (*imp)
      return cmd_impute(globals, impute_args);
    if (*pred)
      return cmd_predict(globals, predict_args);
    return cmd_score(globals, score_args);
  } catch (const NumericError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
