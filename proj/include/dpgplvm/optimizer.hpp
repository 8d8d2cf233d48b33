#ifndef DPGPLVM_OPTIMIZER_HPP_
#define DPGPLVM_OPTIMIZER_HPP_

#include "dpgplvm/initialize.hpp"
#include "dpgplvm/objective.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dpgplvm {

inline constexpr std::size_t kConvergenceWindow = 25;
inline constexpr int kMaxHalvings = 30;
/// Iterations at the start of training during which phi stays at its
/// initial value, so components pick up structure before dimensions commit.
inline constexpr std::size_t kPhiWarmup = 300;
/// Gradient steps spent refining each merge proposal.
inline constexpr std::size_t kMergeRefineIters = 50;
/// Components holding less responsibility mass than this are not merged.
inline constexpr double kMergeMinMass = 0.5;
inline constexpr double kRmsDecay = 0.999;
inline constexpr double kRmsEps = 1e-8;

struct TrainTrace {
  std::vector<ElboReport> elbo_history;
  ModelState final_state;
  bool converged = false;
  std::size_t merges = 0;
  /// Set when a numeric failure stopped training early.
  std::optional<std::string> error;
};

/// Called once per accepted iteration with the report and the step size used.
using IterationCallback = std::function<void(const ElboReport &, double)>;

namespace detail {

struct Ascent {
  ModelState state;
  Evaluation eval;
  std::size_t iters = 0;
  bool converged = false;
  std::optional<std::string> error;
};

/// Momentum ascent on the RMS-normalized gradient with backtracking.
/// Every accepted iterate is passed to `record`.
inline Ascent ascend(const ModelState &start, Evaluation start_eval,
                     const DataMatrix &y, std::size_t max_iters,
                     std::size_t phi_warmup, const std::vector<char> &frozen,
                     const IterationCallback &record) {
  const auto &opt = start.config.optimizer;
  const auto layout = ParameterLayout::of(start);
  Ascent out;
  out.state = start;
  out.eval = std::move(start_eval);

  auto masked_gradient = [&](const ModelState &s, const Evaluation &ev,
                             std::size_t iter) {
    Vector g = to_unconstrained_gradient(s, *ev.gradient);
    if (!frozen.empty())
      for (Index i = 0; i < g.size(); ++i)
        if (frozen[static_cast<std::size_t>(i)])
          g[i] = 0.0;
    if (layout.has_phi && iter <= phi_warmup)
      g.segment(layout.phi_logits, layout.d * layout.t).setZero();
    return g;
  };

  Vector x = to_unconstrained(start);
  Vector velocity = Vector::Zero(x.size());
  Vector mean_sq = Vector::Zero(x.size());
  std::vector<double> history{out.eval.report.total};
  Vector grad;
  try {
    grad = masked_gradient(start, out.eval, 1);
  } catch (const Error &e) {
    out.error = e.what();
    return out;
  }

  for (std::size_t iter = 1; iter <= max_iters; ++iter) {
    mean_sq = kRmsDecay * mean_sq + (1.0 - kRmsDecay) * grad.cwiseAbs2();
    const double correction =
        1.0 - std::pow(kRmsDecay, static_cast<double>(iter));
    const Vector scaled =
        grad.array() / ((mean_sq.array() / correction).sqrt() + kRmsEps);

    double step = opt.learning_rate;
    bool accepted = false;
    ModelState candidate;
    Vector new_velocity;
    for (int halving = 0; halving <= kMaxHalvings; ++halving) {
      new_velocity = opt.momentum * velocity + step * scaled;
      try {
        candidate = from_unconstrained(x + new_velocity, start);
        if (elbo(candidate, y).total >= out.eval.report.total) {
          x += new_velocity;
          accepted = true;
          break;
        }
      } catch (const Error &) {
        // treated like a decrease
      }
      step *= 0.5;
      velocity.setZero();
    }
    if (!accepted) {
      // No ascent direction at any step size: stationary to working precision.
      out.converged = true;
      return out;
    }
    velocity = new_velocity;
    try {
      out.eval = evaluate(candidate, y, true);
      grad = masked_gradient(candidate, out.eval, iter + 1);
    } catch (const Error &e) {
      out.error = e.what();
      out.state = std::move(candidate);
      return out;
    }
    out.state = std::move(candidate);
    out.iters = iter;
    history.push_back(out.eval.report.total);
    if (record)
      record(out.eval.report, step);

    if (iter >= phi_warmup + kConvergenceWindow) {
      const double then = history[iter - kConvergenceWindow];
      const double now = history[iter];
      if (now - then < opt.elbo_tol * std::abs(now)) {
        out.converged = true;
        return out;
      }
    }
  }
  return out;
}

/// Moves all responsibility of component `from` onto `into`.
inline ModelState merge_components(const ModelState &s, Index into, Index from) {
  ModelState out = s;
  auto &phi = out.dp.phi;
  phi.col(into) += phi.col(from);
  phi.col(from).setZero();
  // Keep every entry strictly positive so the logits stay finite.
  phi.array() += 1e-8;
  for (Index d = 0; d < phi.rows(); ++d)
    phi.row(d) /= phi.row(d).sum();
  return out;
}

/// Tries every ordered pair of occupied components, refines each merged
/// state briefly, and returns the best refined state if it beats `current`.
inline std::optional<Ascent> best_merge(const ModelState &current,
                                        double current_total,
                                        const DataMatrix &y) {
  const Vector mass = current.dp.phi.colwise().sum().transpose();
  std::optional<Ascent> best;
  double best_total = current_total;
  for (Index into = 0; into < current.t(); ++into)
    for (Index from = 0; from < current.t(); ++from) {
      if (into == from || mass[into] < kMergeMinMass ||
          mass[from] < kMergeMinMass)
        continue;
      try {
        const ModelState proposal = merge_components(current, into, from);
        auto refined = ascend(proposal, evaluate(proposal, y, true), y,
                              kMergeRefineIters, 0, {}, {});
        if (refined.error)
          continue;
        if (refined.eval.report.total > best_total) {
          best_total = refined.eval.report.total;
          best = std::move(refined);
        }
      } catch (const Error &) {
        // an infeasible proposal is simply rejected
      }
    }
  return best;
}

} // namespace detail

/// Gradient ascent with momentum on the unconstrained parameters of
/// `initial`. Each step is scaled per coordinate by a running RMS of the
/// gradient. A proposal that lowers the ELBO (or fails numerically) is
/// rejected; the step is halved and the velocity cleared, up to kMaxHalvings
/// times. After an accepted step the step size returns to the configured rate.
///
/// With free responsibilities, phi is held for the first kPhiWarmup
/// iterations, and after convergence pairs of components are proposed for
/// merging; a merge is kept only if it raises the ELBO. Recorded ELBO values
/// never decrease.
///
/// `frozen` optionally marks unconstrained coordinates that must not move.
inline TrainTrace optimize(const ModelState &initial, const DataMatrix &y,
                           const IterationCallback &on_iter = {},
                           const std::vector<char> &frozen = {}) {
  const auto &opt = initial.config.optimizer;
  TrainTrace trace;
  trace.final_state = initial;

  Evaluation start;
  try {
    start = evaluate(initial, y, true);
  } catch (const Error &e) {
    trace.error = e.what();
    return trace;
  }
  start.report.iter = 0;
  trace.elbo_history.push_back(start.report);
  if (on_iter)
    on_iter(start.report, 0.0);
  if (opt.learning_rate == 0.0) {
    trace.converged = true;
    return trace;
  }

  const auto layout = ParameterLayout::of(initial);
  bool phi_free = layout.has_phi;
  if (phi_free && !frozen.empty())
    for (Index i = 0; i < layout.d * layout.t; ++i)
      if (frozen[static_cast<std::size_t>(layout.phi_logits + i)])
        phi_free = false;

  auto record = [&](const ElboReport &r, double step) {
    ElboReport rep = r;
    rep.iter = trace.elbo_history.size();
    trace.elbo_history.push_back(rep);
    if (on_iter)
      on_iter(rep, step);
  };
  auto used = [&] { return trace.elbo_history.size() - 1; };

  auto run = detail::ascend(initial, std::move(start), y, opt.max_iters,
                            phi_free ? kPhiWarmup : 0, frozen, record);
  trace.final_state = run.state;
  trace.converged = run.converged;
  if (run.error) {
    trace.error = run.error;
    return trace;
  }

  while (phi_free && run.converged && used() < opt.max_iters) {
    auto merged = detail::best_merge(run.state, run.eval.report.total, y);
    if (!merged)
      break;
    ++trace.merges;
    record(merged->eval.report, 0.0);
    run = detail::ascend(merged->state, std::move(merged->eval), y,
                         opt.max_iters - used(), 0, frozen, record);
    trace.final_state = run.state;
    trace.converged = run.converged;
    if (run.error) {
      trace.error = run.error;
      return trace;
    }
  }
  return trace;
}

/// Initializes from the data and optimizes the full objective.
inline TrainTrace train(const DataMatrix &y, const ModelConfig &config,
                        ModelMode mode = ModelMode::kDpGpLvm,
                        const std::vector<int> &groups = {},
                        const IterationCallback &on_iter = {}) {
  const ModelState init = initialize(y, config, mode, groups);
  return optimize(init, y, on_iter);
}

} // namespace dpgplvm

#endif // DPGPLVM_OPTIMIZER_HPP_
