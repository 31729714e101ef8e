#include "config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "bowsim/errors.hpp"
#include "toml.hpp"

namespace bowsim::cli {

namespace {

using Check = std::function<std::string(double)>;

Check positive() {
  return [](double v) { return v > 0.0 ? std::string() : std::string("must be positive"); };
}
Check nonnegative() {
  return [](double v) { return v >= 0.0 ? std::string() : std::string("must be >= 0"); };
}
Check at_least(double lo) {
  return [lo](double v) { return v >= lo ? std::string() : fmt::format("must be >= {}", lo); };
}

// One TOML table; remembers which keys were read so leftovers can be reported.
class Section {
 public:
  Section(const toml::table* table, std::string name, const std::string& source)
      : table_(table), name_(std::move(name)), source_(source) {}

  [[noreturn]] void fail(const toml::source_region& where, const std::string& message) const {
    throw ConfigError(fmt::format("{}:{}: {}", source_, where.begin.line, message));
  }

  void number(std::string_view key, double& out, const Check& check = {}) {
    const toml::node* node = find(key);
    if (!node) return;
    double v = 0.0;
    if (auto f = node->value_exact<double>()) {
      v = *f;
    } else if (auto i = node->value_exact<std::int64_t>()) {
      v = static_cast<double>(*i);
    } else {
      fail(node->source(), fmt::format("{}.{} must be a number", name_, key));
    }
    if (!std::isfinite(v)) fail(node->source(), fmt::format("{}.{} must be finite", name_, key));
    if (check) {
      const std::string err = check(v);
      if (!err.empty()) fail(node->source(), fmt::format("{}.{} {}", name_, key, err));
    }
    out = v;
  }

  template <typename Int>
  void integer(std::string_view key, Int& out, const Check& check = {}) {
    const toml::node* node = find(key);
    if (!node) return;
    const auto i = node->value_exact<std::int64_t>();
    if (!i) fail(node->source(), fmt::format("{}.{} must be an integer", name_, key));
    if (check) {
      const std::string err = check(static_cast<double>(*i));
      if (!err.empty()) fail(node->source(), fmt::format("{}.{} {}", name_, key, err));
    }
    if (*i < static_cast<std::int64_t>(std::numeric_limits<Int>::min()) ||
        static_cast<std::uint64_t>(*i) > static_cast<std::uint64_t>(std::numeric_limits<Int>::max())) {
      fail(node->source(), fmt::format("{}.{} is out of range", name_, key));
    }
    out = static_cast<Int>(*i);
  }

  void boolean(std::string_view key, bool& out) {
    const toml::node* node = find(key);
    if (!node) return;
    const auto b = node->value_exact<bool>();
    if (!b) fail(node->source(), fmt::format("{}.{} must be true or false", name_, key));
    out = *b;
  }

  /// String restricted to `choices`; returns the index of the match.
  void choice(std::string_view key, std::initializer_list<std::string_view> choices, int& out) {
    const toml::node* node = find(key);
    if (!node) return;
    const auto s = node->value_exact<std::string>();
    int k = 0;
    for (std::string_view c : choices) {
      if (s && *s == c) {
        out = k;
        return;
      }
      ++k;
    }
    std::string list;
    for (std::string_view c : choices) list += fmt::format("{}\"{}\"", list.empty() ? "" : ", ", c);
    fail(node->source(), fmt::format("{}.{} must be one of {}", name_, key, list));
  }

  void string(std::string_view key, std::string& out) {
    const toml::node* node = find(key);
    if (!node) return;
    const auto s = node->value_exact<std::string>();
    if (!s) fail(node->source(), fmt::format("{}.{} must be a string", name_, key));
    out = *s;
  }

  void finish() const {
    if (!table_) return;
    for (auto&& [k, v] : *table_) {
      if (!used_.count(std::string(k.str()))) {
        fail(k.source(), fmt::format("unknown key '{}' in [{}]", k.str(), name_));
      }
    }
  }

 private:
  const toml::node* find(std::string_view key) {
    used_.insert(std::string(key));
    return table_ ? table_->get(key) : nullptr;
  }

  const toml::table* table_;
  std::string name_;
  const std::string& source_;
  std::set<std::string> used_;
};

void read_scenario(Section s, RunConfig& c) {
  s.number("f", c.scenario.f, positive());
  s.number("force", c.scenario.force, nonnegative());
  s.number("v_bow", c.scenario.v_bow);
  s.number("a", c.scenario.friction.a, positive());
  s.number("p0", c.ic.p0);
  s.number("q0", c.ic.q0);
  s.finish();
}

void read_fdm(Section s, RunConfig& c) {
  s.number("sample_rate", c.fdm.sample_rate, positive());
  s.number("duration", c.fdm.duration, positive());
  s.finish();
}

void read_model(Section s, RunConfig& c) {
  s.integer("width", c.model.arch.width, at_least(1));
  s.integer("depth", c.model.arch.depth, at_least(1));
  s.integer("rff_size", c.model.arch.rff_size, at_least(1));
  s.number("rff_sigma", c.model.arch.rff_sigma, positive());
  s.integer("output_dim", c.model.arch.output_dim, at_least(1));
  s.number("scale_t", c.model.scale_t, positive());
  s.number("scale_pq", c.model.scale_pq, positive());
  s.finish();
}

void read_train(Section s, RunConfig& c) {
  TrainPlan& p = c.plan;
  int opt = p.optimizer == OptimizerKind::Soap ? 1 : 0;
  s.choice("optimizer", {"adam", "soap"}, opt);
  p.optimizer = opt == 1 ? OptimizerKind::Soap : OptimizerKind::Adam;
  s.number("adam_beta1", p.adam.beta1, nonnegative());
  s.number("adam_beta2", p.adam.beta2, nonnegative());
  s.number("adam_eps", p.adam.eps, positive());
  s.integer("soap_refresh", p.soap.refresh_period, at_least(1));
  s.number("soap_damping", p.soap.damping, nonnegative());
  s.number("lr0", p.lr0, positive());
  s.number("decay_rate", p.decay_rate, positive());
  s.integer("decay_steps", p.decay_steps, at_least(1));
  s.boolean("annealing", p.annealing);
  s.number("anneal_alpha", p.anneal_alpha, positive());
  s.integer("anneal_period", p.anneal_period, at_least(1));
  s.number("lambda_ode1", p.weights[LossTerm::Ode1], nonnegative());
  s.number("lambda_ode2", p.weights[LossTerm::Ode2], nonnegative());
  s.number("lambda_ic1", p.weights[LossTerm::Ic1], nonnegative());
  s.number("lambda_ic2", p.weights[LossTerm::Ic2], nonnegative());
  s.number("lambda_ob1", p.weights[LossTerm::Ob1], nonnegative());
  s.number("lambda_ob2", p.weights[LossTerm::Ob2], nonnegative());
  s.integer("time_windows", p.time_windows, at_least(1));
  s.boolean("causal", p.causal);
  s.integer("causal_chunks", p.causal_chunks, at_least(1));
  s.number("causal_threshold", p.causal_threshold, positive());
  s.number("causal_bias_factor", p.causal_bias_factor, positive());
  s.integer("n_ode", p.n_ode, at_least(2));
  s.integer("n_ob", p.n_ob, at_least(1));
  s.integer("batch_size", p.batch_size, at_least(1));
  s.integer("dataset_groups", p.dataset_groups, at_least(1));
  s.integer("dataset_per_group", p.dataset_per_group, at_least(1));
  s.integer("max_iterations", p.max_iterations, at_least(1));
  s.number("stop_tolerance", p.stop_tolerance, nonnegative());
  s.integer("stop_horizon", p.stop_horizon, at_least(1));
  s.integer("log_interval", p.log_interval, at_least(1));
  s.finish();
}

void read_hybrid(Section s, RunConfig& c) {
  s.number("observation_rate", c.hybrid.observation_rate, positive());
  s.number("duration", c.hybrid.duration, nonnegative());
  s.finish();
}

void read_eval(Section s, RunConfig& c) {
  s.integer("cases", c.eval.cases, at_least(1));
  s.number("t_max", c.eval.t_max, positive());
  s.number("reference_rate", c.eval.reference_rate, positive());
  s.number("output_rate", c.eval.output_rate, positive());
  int nmse = c.eval.convention.nmse_by_variance ? 1 : 0;
  s.choice("nmse", {"energy", "variance"}, nmse);
  c.eval.convention.nmse_by_variance = nmse == 1;
  int ncc = c.eval.convention.ncc_centered ? 1 : 0;
  s.choice("ncc", {"uncentered", "centered"}, ncc);
  c.eval.convention.ncc_centered = ncc == 1;
  s.integer("seed", c.eval.seed, at_least(0));
  s.finish();
}

void read_spectra(Section s, RunConfig& c) {
  SpectraSettings& sp = c.spectra;
  s.integer("top_k", sp.top_k, at_least(1));
  s.integer("max_iterations", sp.lanczos.max_iterations, at_least(1));
  s.number("tolerance", sp.lanczos.tolerance, positive());
  s.integer("probes", sp.slq.probes, at_least(1));
  s.integer("depth", sp.slq.depth, at_least(10));
  s.number("bandwidth", sp.slq.bandwidth, nonnegative());
  s.integer("grid_points", sp.slq.grid_points, at_least(2));
  s.integer("landscape_grid", sp.landscape_grid, [](double v) {
    return v >= 3 && static_cast<long>(v) % 2 == 1 ? std::string() : std::string("must be odd and >= 3");
  });
  int dirs = sp.random_directions ? 1 : 0;
  s.choice("directions", {"hessian", "random"}, dirs);
  sp.random_directions = dirs == 1;
  s.integer("loss_rows", sp.loss_rows, at_least(1));
  std::uint64_t seed = sp.slq.seed;
  s.integer("seed", seed, at_least(0));
  sp.slq.seed = seed;
  sp.lanczos.seed = seed;
  sp.slq.range = sp.lanczos;
  s.finish();
}

void read_synth(Section s, RunConfig& c) {
  s.number("rate", c.synth.rate, positive());
  s.number("peak_dbfs", c.synth.peak_dbfs);
  s.finish();
}

void read_output(Section s, RunConfig& c) {
  s.string("dir", c.output.dir);
  s.finish();
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::string& source_name) {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source_name, e.source().begin.line, e.description()));
  }
  RunConfig c;
  c.source = source_name;
  using Reader = void (*)(Section, RunConfig&);
  const std::pair<std::string_view, Reader> sections[] = {
      {"scenario", read_scenario}, {"fdm", read_fdm},         {"model", read_model}, {"train", read_train},
      {"hybrid", read_hybrid},     {"eval", read_eval},       {"spectra", read_spectra},
      {"synth", read_synth},       {"output", read_output}};
  for (auto&& [k, v] : root) {
    const std::string key(k.str());
    if (key == "seed") {
      const auto i = v.value_exact<std::int64_t>();
      if (!i || *i < 0) {
        throw ConfigError(fmt::format("{}:{}: seed must be a nonnegative integer", source_name, k.source().begin.line));
      }
      c.seed = static_cast<std::uint64_t>(*i);
      continue;
    }
    bool known = false;
    for (const auto& [name, reader] : sections) known = known || name == key;
    if (!known) throw ConfigError(fmt::format("{}:{}: unknown section '{}'", source_name, k.source().begin.line, key));
    if (!v.is_table()) {
      throw ConfigError(fmt::format("{}:{}: '{}' must be a table", source_name, k.source().begin.line, key));
    }
  }
  for (const auto& [name, reader] : sections) reader(Section(root.get_as<toml::table>(name), std::string(name), source_name), c);
  c.plan.seed = c.seed;
  try {
    c.scenario.validate();
    c.plan.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", source_name, e.what()));
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

namespace {

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

std::string render_config(const RunConfig& c, bool with_output) {
  const TrainPlan& p = c.plan;
  std::string s;
  s += fmt::format("seed = {}\n\n", c.seed);
  s += fmt::format("[scenario]\nf = {}\nforce = {}\nv_bow = {}\na = {}\np0 = {}\nq0 = {}\n\n", num(c.scenario.f),
                   num(c.scenario.force), num(c.scenario.v_bow), num(c.scenario.friction.a), num(c.ic.p0),
                   num(c.ic.q0));
  s += fmt::format("[fdm]\nsample_rate = {}\nduration = {}\n\n", num(c.fdm.sample_rate), num(c.fdm.duration));
  s += fmt::format("[model]\nwidth = {}\ndepth = {}\nrff_size = {}\nrff_sigma = {}\noutput_dim = {}\nscale_t = {}\n"
                   "scale_pq = {}\n\n",
                   c.model.arch.width, c.model.arch.depth, c.model.arch.rff_size, num(c.model.arch.rff_sigma),
                   c.model.arch.output_dim, num(c.model.scale_t), num(c.model.scale_pq));
  s += "[train]\n";
  s += fmt::format("optimizer = \"{}\"\n", p.optimizer == OptimizerKind::Soap ? "soap" : "adam");
  s += fmt::format("adam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\nsoap_refresh = {}\nsoap_damping = {}\n",
                   num(p.adam.beta1), num(p.adam.beta2), num(p.adam.eps), p.soap.refresh_period,
                   num(p.soap.damping));
  s += fmt::format("lr0 = {}\ndecay_rate = {}\ndecay_steps = {}\n", num(p.lr0), num(p.decay_rate), p.decay_steps);
  s += fmt::format("annealing = {}\nanneal_alpha = {}\nanneal_period = {}\n", p.annealing, num(p.anneal_alpha),
                   p.anneal_period);
  s += fmt::format("lambda_ode1 = {}\nlambda_ode2 = {}\nlambda_ic1 = {}\nlambda_ic2 = {}\nlambda_ob1 = {}\n"
                   "lambda_ob2 = {}\n",
                   num(p.weights[LossTerm::Ode1]), num(p.weights[LossTerm::Ode2]), num(p.weights[LossTerm::Ic1]),
                   num(p.weights[LossTerm::Ic2]), num(p.weights[LossTerm::Ob1]), num(p.weights[LossTerm::Ob2]));
  s += fmt::format("time_windows = {}\ncausal = {}\ncausal_chunks = {}\ncausal_threshold = {}\n"
                   "causal_bias_factor = {}\n",
                   p.time_windows, p.causal, p.causal_chunks, num(p.causal_threshold), num(p.causal_bias_factor));
  s += fmt::format("n_ode = {}\nn_ob = {}\nbatch_size = {}\ndataset_groups = {}\ndataset_per_group = {}\n", p.n_ode,
                   p.n_ob, p.batch_size, p.dataset_groups, p.dataset_per_group);
  s += fmt::format("max_iterations = {}\nstop_tolerance = {}\nstop_horizon = {}\nlog_interval = {}\n\n",
                   p.max_iterations, num(p.stop_tolerance), p.stop_horizon, p.log_interval);
  s += fmt::format("[hybrid]\nobservation_rate = {}\nduration = {}\n\n", num(c.hybrid.observation_rate),
                   num(c.hybrid.duration));
  s += fmt::format("[eval]\ncases = {}\nt_max = {}\nreference_rate = {}\noutput_rate = {}\nnmse = \"{}\"\n"
                   "ncc = \"{}\"\nseed = {}\n\n",
                   c.eval.cases, num(c.eval.t_max), num(c.eval.reference_rate), num(c.eval.output_rate),
                   c.eval.convention.nmse_by_variance ? "variance" : "energy",
                   c.eval.convention.ncc_centered ? "centered" : "uncentered", c.eval.seed);
  s += fmt::format("[spectra]\ntop_k = {}\nmax_iterations = {}\ntolerance = {}\nprobes = {}\ndepth = {}\n"
                   "bandwidth = {}\ngrid_points = {}\nlandscape_grid = {}\ndirections = \"{}\"\nloss_rows = {}\nseed = {}\n\n",
                   c.spectra.top_k, c.spectra.lanczos.max_iterations, num(c.spectra.lanczos.tolerance),
                   c.spectra.slq.probes, c.spectra.slq.depth, num(c.spectra.slq.bandwidth), c.spectra.slq.grid_points,
                   c.spectra.landscape_grid, c.spectra.random_directions ? "random" : "hessian", c.spectra.loss_rows,
                   c.spectra.slq.seed);
  s += fmt::format("[synth]\nrate = {}\npeak_dbfs = {}\n\n", num(c.synth.rate), num(c.synth.peak_dbfs));
  if (with_output) s += fmt::format("[output]\ndir = \"{}\"\n", c.output.dir);
  return s;
}

}  // namespace bowsim::cli
