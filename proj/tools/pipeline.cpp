#include "pipeline.hpp"

#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "bowsim/eval.hpp"
#include "bowsim/fdm.hpp"
#include "bowsim/nets.hpp"
#include "bowsim/spectra.hpp"
#include "bowsim/train.hpp"
#include "json.hpp"
#include "plots.hpp"
#include "wav.hpp"

namespace bowsim::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Context {
  const RunConfig& config;
  const CommandOptions& options;
  Manifest manifest;

  template <typename Fn>
  void emit(const std::string& name, Fn&& write) {
    std::ofstream out(manifest.path(name), std::ios::binary);
    if (!out) throw ExportError(fmt::format("cannot write '{}'", manifest.path(name).string()));
    write(out);
    out.close();
    if (!out) throw ExportError(fmt::format("write to '{}' failed", manifest.path(name).string()));
    manifest.add(name);
  }
  void emit_text(const std::string& name, const std::string& text) {
    emit(name, [&](std::ostream& o) { o << text; });
  }
};

void log(const std::string& msg) { std::cerr << msg << '\n'; }

// Training context a checkpoint needs for later loss evaluations.
struct Sidecar {
  std::string kind;
  int window = 0;
  InitialCondition ic;
  LossWeights weights;
  bool observations = false;
};

std::string render_sidecar(const Sidecar& s) {
  Json j;
  j["kind"] = s.kind;
  j["window"] = s.window;
  j["ic"] = {{"p0", s.ic.p0}, {"q0", s.ic.q0}};
  Json w;
  for (LossTerm t : kAllLossTerms) w[loss_term_name(t)] = s.weights[t];
  j["weights"] = std::move(w);
  j["observations"] = s.observations;
  return j.dump(2) + "\n";
}

Sidecar read_sidecar(const fs::path& checkpoint, const RunConfig& config, const std::string& kind) {
  Sidecar s{kind, 0, config.ic, config.plan.weights, false};
  const fs::path path = checkpoint.string() + ".json";
  std::ifstream in(path, std::ios::binary);
  if (!in) return s;
  try {
    const Json j = Json::parse(in);
    s.window = j.at("window").get<int>();
    s.ic = {j.at("ic").at("p0").get<double>(), j.at("ic").at("q0").get<double>()};
    for (LossTerm t : kAllLossTerms) s.weights[t] = j.at("weights").at(loss_term_name(t)).get<double>();
    s.observations = j.at("observations").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return s;
}

std::string loss_history_csv(const LossHistory& h) {
  std::ostringstream out;
  write_loss_history_csv(out, h);
  return out.str();
}

Trajectory as_trajectory(const StateBatch& s, double rate, double t0 = 0.0) {
  Trajectory t;
  t.sample_rate = rate;
  t.t0 = t0;
  t.p = s.p;
  t.q = s.q;
  return t;
}

std::string report_json(const MetricReport& r) {
  std::ostringstream out;
  write_metric_report_json(out, r);
  return out.str();
}

// Single-trajectory metrics against the FDM reference on [t0, t_end].
MetricReport compare_to_reference(const RunConfig& c, const InitialCondition& ic, double t0, double t_end,
                                  const std::function<StateBatch(const Eigen::VectorXd&)>& predict,
                                  Trajectory* prediction) {
  const Trajectory ref = simulate(c.scenario, ic, c.eval.reference_rate, t_end);
  ReferenceSamples s = decimate(ref, c.eval.output_rate, t_end);
  Eigen::Index first = 0;
  while (first < s.t.size() && s.t[first] < t0 - 1e-12) ++first;
  const Eigen::Index n = s.t.size() - first;
  const Eigen::VectorXd t = s.t.tail(n);
  const StateBatch pred = predict(t);
  MetricReport r;
  r.convention = c.eval.convention;
  r.reference_rate = c.eval.reference_rate;
  r.output_rate = c.eval.output_rate;
  CaseMetrics m = compare_states(pred, s.p.tail(n), s.q.tail(n), c.eval.convention);
  m.test = {ic, t_end};
  r.cases.push_back(m);
  r.nmse_p = m.nmse_p;
  r.nmse_q = m.nmse_q;
  r.ncc_p = m.ncc_p;
  r.ncc_q = m.ncc_q;
  if (prediction) *prediction = as_trajectory(pred, c.eval.output_rate, t[0]);
  return r;
}

Trajectory reference_on_grid(const RunConfig& c, const InitialCondition& ic, double t_end) {
  const ReferenceSamples s = decimate(simulate(c.scenario, ic, c.eval.reference_rate, t_end), c.eval.output_rate, t_end);
  return as_trajectory({s.p, s.q, {}, {}}, c.eval.output_rate);
}

void emit_comparison(Context& ctx, const Trajectory& reference, const Trajectory& prediction) {
  ctx.emit("prediction.csv", [&](std::ostream& o) { write_trajectory_csv(o, prediction, ctx.config.scenario); });
  ctx.emit_text("prediction.svg", line_plot_svg(trajectory_plot({{"FDM", reference}, {"network", prediction}})));
}

void emit_history(Context& ctx, const LossHistory& h) {
  ctx.emit_text("loss_history.csv", loss_history_csv(h));
  ctx.emit_text("loss_history.svg", line_plot_svg(loss_history_plot(ctx.manifest.path("loss_history.csv"))));
}

template <typename Model>
void emit_checkpoint(Context& ctx, const std::string& name, const Model& model, const Sidecar& sidecar) {
  ctx.emit(name, [&](std::ostream& o) { save_checkpoint(o, model); });
  ctx.emit_text(name + ".json", render_sidecar(sidecar));
}

// ---- commands ----

void run_fdm(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Trajectory traj = simulate(c.scenario, c.ic, c.fdm.sample_rate, c.fdm.duration);
  ctx.emit("trajectory.csv", [&](std::ostream& o) { write_trajectory_csv(o, traj, c.scenario); });
  ctx.emit("segments.csv", [&](std::ostream& o) {
    o << "t_start,t_end,label\n";
    for (const PhaseSegment& s : stick_slip_segments(traj, c.scenario)) {
      o << fmt::format("{:.17g},{:.17g},{}\n", s.t_start, s.t_end, to_string(s.label));
    }
  });
  ctx.emit_text("trajectory.svg", line_plot_svg(stick_slip_plot(traj, c.scenario)));
}

void run_train_pinn(Context& ctx) {
  const RunConfig& c = ctx.config;
  PinnSolution sol;
  try {
    sol = train_pinn(c.plan, c.scenario, c.ic, c.model.arch, c.model.scale_t, c.model.scale_pq);
  } catch (const TrainingError& e) {
    PinnModel m = PinnModel::create(c.model.arch, c.model.scale_t, c.model.scale_pq,
                                    c.plan.seed + 16 * static_cast<std::uint64_t>(e.window()),
                                    e.window() * c.model.scale_t);
    m.params = e.last_finite();
    emit_checkpoint(ctx, "failure.ckpt", m, {"pinn", e.window(), c.ic, c.plan.weights, false});
    throw TrainingFailure(e.what(), ctx.manifest.path("failure.ckpt"));
  }
  LossHistory history;
  for (std::size_t w = 0; w < sol.windows.size(); ++w) {
    const PinnWindowResult& r = sol.windows[w];
    emit_checkpoint(ctx, fmt::format("window_{}.ckpt", w), r.model, {"pinn", static_cast<int>(w), r.ic, r.weights, false});
    history.insert(history.end(), r.history.begin(), r.history.end());
  }
  emit_history(ctx, history);
  Trajectory prediction;
  const MetricReport r = compare_to_reference(
      c, c.ic, 0.0, sol.t_end(), [&](const Eigen::VectorXd& t) { return sol.eval(t); }, &prediction);
  ctx.emit_text("report.json", report_json(r));
  emit_comparison(ctx, reference_on_grid(c, c.ic, sol.t_end()), prediction);
  log(fmt::format("NMSE p {:.3e} q {:.3e}, NCC p {:.3f}% q {:.3f}%", r.nmse_p, r.nmse_q, r.ncc_p, r.ncc_q));
}

ObservationSet hybrid_observations(const RunConfig& c) {
  const double duration = c.hybrid.duration > 0.0 ? c.hybrid.duration : c.model.scale_t;
  return make_observations(simulate(c.scenario, c.ic, c.hybrid.observation_rate, duration), c.model.scale_t,
                           c.plan.n_ob);
}

TestSet eval_testset(const RunConfig& c, double scale_pq) {
  TestSetOptions o;
  o.count = c.eval.cases;
  o.t_max = c.eval.t_max;
  o.scale_pq = scale_pq;
  o.seed = c.eval.seed;
  return make_testset(c.scenario, o);
}

EvalOptions eval_options(const RunConfig& c, int threads) {
  EvalOptions e;
  e.reference_rate = c.eval.reference_rate;
  e.output_rate = c.eval.output_rate;
  e.convention = c.eval.convention;
  e.threads = threads;
  return e;
}

void report_deeponet(Context& ctx, const DeepOnetModel& model) {
  const RunConfig& c = ctx.config;
  const MetricReport set = evaluate_testset(model, c.scenario, eval_testset(c, model.scale_pq),
                                            eval_options(c, ctx.options.threads));
  ctx.emit_text("report.json", report_json(set));
  Trajectory prediction;
  const MetricReport ic = compare_to_reference(
      c, c.ic, 0.0, c.eval.t_max,
      [&](const Eigen::VectorXd& t) { return deeponet_rollout(model, t, c.ic.p0, c.ic.q0); }, &prediction);
  ctx.emit_text("ic_report.json", report_json(ic));
  emit_comparison(ctx, reference_on_grid(c, c.ic, c.eval.t_max), prediction);
  log(fmt::format("test set: NMSE p {:.3e} q {:.3e}, NCC p {:.3f}% q {:.3f}% ({} failed)", set.nmse_p, set.nmse_q,
                  set.ncc_p, set.ncc_q, set.failed));
  log(fmt::format("configured IC: NMSE p {:.3e}, NCC p {:.3f}%", ic.nmse_p, ic.ncc_p));
}

void run_train_deeponet(Context& ctx, bool hybrid) {
  const RunConfig& c = ctx.config;
  const DeepOnetDataset data = build_deeponet_dataset(c.plan.dataset_groups, c.plan.dataset_per_group,
                                                      c.model.scale_t, c.model.scale_pq, c.plan.seed);
  ObservationSet obs;
  if (hybrid) obs = hybrid_observations(c);
  DeepOnetResult r;
  try {
    r = train_deeponet(c.plan, c.scenario, data, c.model.arch, c.model.scale_t, c.model.scale_pq,
                       hybrid ? &obs : nullptr);
  } catch (const TrainingError& e) {
    DeepOnetModel m = DeepOnetModel::create(c.model.arch, c.model.scale_t, c.model.scale_pq, c.plan.seed);
    m.params = e.last_finite();
    emit_checkpoint(ctx, "failure.ckpt", m, {"deeponet", 0, c.ic, c.plan.weights, hybrid});
    throw TrainingFailure(e.what(), ctx.manifest.path("failure.ckpt"));
  }
  emit_checkpoint(ctx, "model.ckpt", r.model, {"deeponet", 0, c.ic, r.weights, hybrid});
  emit_history(ctx, r.history);
  report_deeponet(ctx, r.model);
}

std::string checkpoint_kind_of(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open checkpoint '{}'", path.string()));
  return checkpoint_kind(in);
}

PinnModel load_pinn(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return load_pinn_checkpoint(in);
}

DeepOnetModel load_deeponet(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return load_deeponet_checkpoint(in);
}

const fs::path& require_checkpoint(const CommandOptions& o) {
  if (o.checkpoint.empty()) throw ConfigError(fmt::format("{} needs --checkpoint <file>", o.command));
  return o.checkpoint;
}

void run_eval(Context& ctx) {
  const RunConfig& c = ctx.config;
  const fs::path& path = require_checkpoint(ctx.options);
  if (checkpoint_kind_of(path) == "deeponet") {
    report_deeponet(ctx, load_deeponet(path));
    return;
  }
  const PinnModel model = load_pinn(path);
  // A window checkpoint is compared on its own window of the run that starts from the configured IC.
  const double t_end = model.t_start + model.scale_t;
  Trajectory prediction;
  const MetricReport r = compare_to_reference(
      c, c.ic, model.t_start, t_end, [&](const Eigen::VectorXd& t) { return pinn_eval(model, t); }, &prediction);
  ctx.emit_text("report.json", report_json(r));
  Trajectory ref = reference_on_grid(c, c.ic, t_end);
  emit_comparison(ctx, ref, prediction);
  log(fmt::format("NMSE p {:.3e} q {:.3e}, NCC p {:.3f}% q {:.3f}%", r.nmse_p, r.nmse_q, r.ncc_p, r.ncc_q));
}

// Loss of a checkpoint as used by hessian and landscape.
struct CheckpointLoss {
  ParamVector params;
  std::function<HessianOperator()> hessian;
  LossEvaluator evaluate;
  // Keeps models and data alive for the closures.
  std::shared_ptr<void> storage;
};

CheckpointLoss checkpoint_loss(const RunConfig& c, const fs::path& path) {
  const std::string kind = checkpoint_kind_of(path);
  const Sidecar side = read_sidecar(path, c, kind);
  if (kind == "pinn") {
    auto model = std::make_shared<PinnModel>(load_pinn(path));
    const int points = std::max(2, c.plan.n_ode / c.plan.time_windows);
    PinnLoss loss{model.get(), c.scenario, collocation_grid(model->t_start, model->scale_t, points), side.ic,
                  side.weights};
    return {model->params, [loss, p = model->params] { return hessian_operator(loss, p); }, loss_evaluator(loss),
            model};
  }
  struct Data {
    DeepOnetModel model;
    DeepOnetDataset rows;
    ObservationSet obs;
  };
  auto d = std::make_shared<Data>();
  d->model = load_deeponet(path);
  d->rows = build_deeponet_dataset(c.spectra.loss_rows, 1, d->model.scale_t, d->model.scale_pq, c.spectra.slq.seed);
  if (side.observations) d->obs = hybrid_observations(c);
  DeepOnetLoss loss{&d->model, c.scenario, d->rows.t, d->rows.p0, d->rows.q0,
                    side.observations ? &d->obs : nullptr, side.weights};
  return {d->model.params, [loss, p = d->model.params] { return hessian_operator(loss, p); }, loss_evaluator(loss),
          d};
}

void run_hessian(Context& ctx) {
  const RunConfig& c = ctx.config;
  const CheckpointLoss loss = checkpoint_loss(c, require_checkpoint(ctx.options));
  const HessianOperator H = loss.hessian();
  const std::vector<EigenPair> top = top_eigenpairs(H, c.spectra.top_k, c.spectra.lanczos);
  const SpectralDensity density = spectrum_density(H, c.spectra.slq);
  ctx.emit("top_eigenpairs.csv", [&](std::ostream& o) {
    o << "rank,eigenvalue,residual\n";
    for (std::size_t i = 0; i < top.size(); ++i) o << fmt::format("{},{:.17g},{:.17g}\n", i + 1, top[i].value, top[i].residual);
  });
  ctx.emit("density.csv", [&](std::ostream& o) { write_density_csv(o, density); });
  ctx.emit_text("density.svg", line_plot_svg(density_plot(density.grid, density.density)));
  Json j;
  j["parameters"] = H.dim;
  j["lambda_min"] = density.range.min;
  j["lambda_max"] = density.range.max;
  j["bandwidth"] = density.bandwidth;
  j["probes"] = density.probes;
  j["depth"] = density.depth;
  j["truncated_probes"] = density.truncated_probes;
  ctx.emit_text("spectrum.json", j.dump(2) + "\n");
  log(fmt::format("lambda_max {:.6e}, lambda_min {:.6e}", top.front().value, density.range.min));
}

void run_landscape(Context& ctx) {
  const RunConfig& c = ctx.config;
  const CheckpointLoss loss = checkpoint_loss(c, require_checkpoint(ctx.options));
  ParamVector e1, e2;
  if (c.spectra.random_directions) {
    e1 = random_direction(loss.params, c.spectra.slq.seed);
    e2 = random_direction(loss.params, c.spectra.slq.seed + 1);
  } else {
    const std::vector<EigenPair> top = top_eigenpairs(loss.hessian(), 2, c.spectra.lanczos);
    e1 = loss.params.with_values(top[0].vector);
    e2 = loss.params.with_values(top[1].vector);
  }
  const LandscapeGrid g = landscape(loss.evaluate, loss.params, e1, e2, c.spectra.landscape_grid, ctx.options.threads);
  ctx.emit("landscape.csv", [&](std::ostream& o) { write_landscape_csv(o, g); });
  ctx.emit_text("landscape.svg", heatmap_svg(g.beta, g.alpha, g.loss, "Loss landscape", "beta", "alpha"));
}

void run_synth(Context& ctx) {
  const RunConfig& c = ctx.config;
  const CommandOptions& o = ctx.options;
  Trajectory traj;
  if (!o.input.empty()) {
    traj = read_trajectory_file(o.input);
  } else if (!o.checkpoint.empty()) {
    const double rate = c.synth.rate;
    const auto n = static_cast<Eigen::Index>(std::floor(c.fdm.duration * rate * (1.0 + 1e-12))) + 1;
    const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1) / rate);
    if (checkpoint_kind_of(o.checkpoint) == "deeponet") {
      traj = as_trajectory(deeponet_rollout(load_deeponet(o.checkpoint), t, c.ic.p0, c.ic.q0), rate);
    } else {
      traj = as_trajectory(pinn_eval(load_pinn(o.checkpoint), t), rate);
    }
  } else {
    traj = simulate(c.scenario, c.ic, c.fdm.sample_rate, c.fdm.duration);
  }
  const std::vector<double> audio = render_audio(traj, c.synth.rate, c.synth.peak_dbfs);
  write_wav(ctx.manifest.path("audio.wav"), audio, static_cast<int>(std::lround(c.synth.rate)));
  ctx.manifest.add("audio.wav");
}

void run_plot(Context& ctx) {
  const RunConfig& c = ctx.config;
  const CommandOptions& o = ctx.options;
  const std::string& kind = o.plot_kind;
  auto need = [&](std::size_t n) {
    if (o.plot_inputs.size() < n) throw ConfigError(fmt::format("plot {} needs {} input file(s)", kind, n));
  };
  std::string svg;
  if (kind == "friction") {
    svg = line_plot_svg(friction_plot(c.scenario.friction));
  } else if (kind == "trajectory") {
    need(1);
    std::vector<NamedTrajectory> entries;
    for (const fs::path& p : o.plot_inputs) entries.push_back({p.stem().string(), read_trajectory_file(p)});
    svg = line_plot_svg(trajectory_plot(entries));
  } else if (kind == "residuals") {
    need(1);
    std::vector<ResidualEntry> entries;
    for (const fs::path& p : o.plot_inputs) {
      const OdeResiduals r = residuals(read_trajectory_file(p), c.scenario);
      entries.push_back({p.stem().string(), r.r1, r.r2});
    }
    svg = line_plot_svg(residual_plot(entries));
  } else if (kind == "density") {
    need(1);
    const DensityTable t = read_density_csv(o.plot_inputs[0]);
    svg = line_plot_svg(density_plot(t.eigenvalue, t.density));
  } else if (kind == "landscape") {
    need(1);
    const LandscapeTable t = read_landscape_csv(o.plot_inputs[0]);
    svg = heatmap_svg(t.beta, t.alpha, t.loss, "Loss landscape", "beta", "alpha");
  } else if (kind == "stick-slip") {
    need(1);
    svg = line_plot_svg(stick_slip_plot(read_trajectory_file(o.plot_inputs[0]), c.scenario));
  } else if (kind == "loss") {
    need(1);
    svg = line_plot_svg(loss_history_plot(o.plot_inputs[0]));
  } else {
    throw ConfigError(fmt::format(
        "unknown plot kind '{}' (friction, trajectory, residuals, density, landscape, stick-slip, loss)", kind));
  }
  ctx.emit_text(kind + ".svg", svg);
}

}  // namespace

Manifest run_command(const RunConfig& config, const CommandOptions& options) {
  if (options.threads < 1) throw ConfigError("--threads must be >= 1");
  const fs::path dir = config.output.dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ExportError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
  Context ctx{config, options, Manifest(dir)};
  const std::string resolved = render_config(config, false);
  ctx.emit_text("resolved_config.toml", resolved);

  auto finish = [&] { ctx.manifest.write(options.command, config.seed, resolved); };
  try {
    const std::string& cmd = options.command;
    if (cmd == "fdm") {
      run_fdm(ctx);
    } else if (cmd == "train-pinn") {
      run_train_pinn(ctx);
    } else if (cmd == "train-deeponet") {
      run_train_deeponet(ctx, false);
    } else if (cmd == "train-hybrid") {
      run_train_deeponet(ctx, true);
    } else if (cmd == "eval") {
      run_eval(ctx);
    } else if (cmd == "hessian") {
      run_hessian(ctx);
    } else if (cmd == "landscape") {
      run_landscape(ctx);
    } else if (cmd == "synth") {
      run_synth(ctx);
    } else if (cmd == "plot") {
      run_plot(ctx);
    } else {
      throw ConfigError(fmt::format("unknown command '{}'", cmd));
    }
  } catch (const TrainingFailure&) {
    finish();
    throw;
  }
  finish();
  return ctx.manifest;
}

}  // namespace bowsim::cli
