#include "psl/pipeline.hpp"

#include "psl/analysis.hpp"
#include "psl/attacks.hpp"
#include "psl/parallel.hpp"
#include "psl/quant.hpp"
#include "psl/random.hpp"
#include "psl/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace psl {

namespace fs = std::filesystem;

namespace {

const std::array<std::pair<Subcommand, const char*>, 7> kSubcommands = {{
    {Subcommand::train_spectrum, "train-spectrum"},
    {Subcommand::eval_grid, "eval-grid"},
    {Subcommand::quant_sweep, "quant-sweep"},
    {Subcommand::filter_norms, "filter-norms"},
    {Subcommand::preact_stats, "preact-stats"},
    {Subcommand::corrupt_eval, "corrupt-eval"},
    {Subcommand::report, "report"},
}};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fixed(double v, int digits = 2) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

std::string signed_fixed(double v) {
  if (std::isnan(v)) return "n/a";
  return (v > 0 ? "+" : "") + fixed(v);
}

/// Shortest decimal text that round-trips, for CSV cells traced back to records.
std::string exact(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

void write_text(const fs::path& path, const std::string& text, RunOutcome& outcome) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  outcome.files.push_back(path);
}

std::string make_run_id(Subcommand cmd, const std::string& fingerprint) {
  std::string stamp = utc_timestamp();
  std::erase_if(stamp, [](char c) { return c == '-' || c == ':'; });
  return to_string(cmd) + "-" + stamp + "-" + fingerprint.substr(0, 8);
}

DatasetHandle first_rows(const DatasetHandle& data, int limit) {
  if (limit <= 0 || limit >= data.size()) return data;
  std::vector<std::size_t> idx(static_cast<std::size_t>(limit));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(data, idx);
}

std::vector<Checkpoint> load_spectrum(const ExperimentConfig& cfg, const RunLayout& layout) {
  const auto expected = build(cfg.model, 0).topology();
  std::vector<Checkpoint> out;
  for (int eps : cfg.spectrum.epsilons) {
    const fs::path path = layout.checkpoint(eps);
    if (!fs::exists(path)) {
      throw std::runtime_error("missing checkpoint " + path.string() + " (run train-spectrum first)");
    }
    out.push_back(load_checkpoint(path, expected));
  }
  return out;
}

/// A record waiting to be appended; collected per job and flushed in job order.
struct Pending {
  RecordKind kind;
  RecordKeys keys;
  double value;
  std::uint64_t seed;
};

class Session {
 public:
  Session(const ExperimentConfig& cfg, Subcommand cmd, const RunOptions& options)
      : cfg_(cfg), options_(options), layout_{options.out_dir} {
    fs::create_directories(layout_.root);
    outcome_.fingerprint = cfg.fingerprint();
    outcome_.run_id = make_run_id(cmd, outcome_.fingerprint);
    std::ofstream(layout_.resolved_config(), std::ios::trunc) << cfg.to_json().dump(2) << "\n";
    sink_.emplace(layout_.records(), outcome_.run_id, outcome_.fingerprint);
  }

  void emit(const std::vector<Pending>& pending) {
    for (const auto& p : pending) sink_->append(p.kind, p.keys, p.value, p.seed);
  }

  RunOutcome finish(std::string summary) {
    outcome_.records = sink_->written();
    outcome_.summary = std::move(summary);
    return std::move(outcome_);
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const RunOptions& options() const { return options_; }
  const RunLayout& layout() const { return layout_; }
  RunOutcome& outcome() { return outcome_; }

 private:
  const ExperimentConfig& cfg_;
  const RunOptions& options_;
  RunLayout layout_;
  RunOutcome outcome_;
  std::optional<RecordSink> sink_;
};

RecordKeys model_keys(int eps) {
  RecordKeys k;
  k.model_eps = eps;
  return k;
}

// ---------------------------------------------------------------------------
// Subcommands

std::string cmd_train_spectrum(Session& s) {
  const auto& cfg = s.cfg();
  const Datasets data = load_datasets(cfg);
  TrainConfig base = cfg.spectrum.train;
  base.seed = derive_seed(cfg.seed, "train_spectrum");
  auto checkpoints = train_spectrum(data.train, cfg.model, cfg.spectrum.epsilons, base, cfg.spectrum.seed_policy,
                                    s.options().jobs);

  fs::create_directories(s.layout().checkpoint(0).parent_path());
  std::vector<double> accuracy(checkpoints.size());
  parallel_for(checkpoints.size(), s.options().jobs, [&](std::size_t i) {
    accuracy[i] = evaluate_accuracy(checkpoints[i].network, {}, data.test.images, data.test.labels, AttackKind::none,
                                    AttackConfig{.epsilon_int = 0}, cfg.eval.batch_size);
  });

  std::ostringstream summary;
  summary << "trained " << checkpoints.size() << " models on " << data.train.size() << " examples\n";
  summary << "  eps  best_epoch  clean_acc\n";
  std::vector<Pending> pending;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    auto& c = checkpoints[i];
    c.metadata.extra["config_fingerprint"] = s.outcome().fingerprint;
    const fs::path path = s.layout().checkpoint(c.metadata.epsilon_int);
    save_checkpoint(c, path);
    s.outcome().files.push_back(path);
    pending.push_back({RecordKind::clean_acc, model_keys(c.metadata.epsilon_int), accuracy[i], c.metadata.seed});
    summary << "  " << std::setw(3) << c.metadata.epsilon_int << "  " << std::setw(10) << c.metadata.epoch << "  "
            << fixed(accuracy[i]) << "\n";
  }
  s.emit(pending);
  return summary.str();
}

std::string cmd_eval_grid(Session& s) {
  const auto& cfg = s.cfg();
  const auto checkpoints = load_spectrum(cfg, s.layout());
  const Datasets data = load_datasets(cfg);
  const GridConfig grid_cfg{.attack_steps = cfg.eval.steps,
                            .random_start = cfg.eval.random_start,
                            .clamp_to_pixel_range = cfg.eval.clamp_to_pixel_range,
                            .seed = derive_seed(cfg.seed, "eval_grid"),
                            .batch_size = cfg.eval.batch_size};
  const RobustnessGrid grid = eval_grid(checkpoints, cfg.eval.deltas, data.test, grid_cfg, s.options().jobs);

  std::vector<Pending> pending;
  const bool has_zero = std::ranges::find(cfg.eval.deltas, 0) != cfg.eval.deltas.end();
  for (Eigen::Index i = 0; i < grid.errors.rows(); ++i) {
    const int eps = grid.model_epsilons[static_cast<std::size_t>(i)];
    auto keys = model_keys(eps);
    keys.attack = to_string(AttackKind::pgd);
    if (!has_zero) {
      keys.delta = 0;
      pending.push_back({RecordKind::robust_err, keys, grid.clean_errors[i], derive_seed(grid_cfg.seed, "delta=0")});
    }
    for (Eigen::Index j = 0; j < grid.errors.cols(); ++j) {
      const int delta = grid.attack_deltas[static_cast<std::size_t>(j)];
      keys.delta = delta;
      pending.push_back({RecordKind::robust_err, keys, grid.errors(i, j),
                         derive_seed(grid_cfg.seed, "delta=" + std::to_string(delta))});
    }
  }
  s.emit(pending);

  std::ostringstream summary;
  summary << "robust error (%) under PGD-" << cfg.eval.steps << ", rows: model eps, columns: delta\n  eps  clean";
  for (int d : grid.attack_deltas) summary << std::setw(8) << d;
  summary << "\n";
  for (Eigen::Index i = 0; i < grid.errors.rows(); ++i) {
    summary << "  " << std::setw(3) << grid.model_epsilons[static_cast<std::size_t>(i)] << std::setw(7)
            << fixed(grid.clean_errors[i]);
    for (Eigen::Index j = 0; j < grid.errors.cols(); ++j) summary << std::setw(8) << fixed(grid.errors(i, j));
    summary << "\n";
  }
  return summary.str();
}

std::string cmd_quant_sweep(Session& s) {
  const auto& cfg = s.cfg();
  const auto checkpoints = load_spectrum(cfg, s.layout());
  const Datasets data = load_datasets(cfg);
  const std::uint64_t base_seed = derive_seed(cfg.seed, "quant_sweep");
  const Index batch = cfg.eval.batch_size;

  std::vector<std::vector<Pending>> per_model(checkpoints.size());
  parallel_for(checkpoints.size(), s.options().jobs, [&](std::size_t m) {
    const Network& net = checkpoints[m].network;
    const int eps = checkpoints[m].metadata.epsilon_int;
    const std::vector<std::string> taps = cfg.quant.taps.empty() ? net.tap_points() : cfg.quant.taps;
    auto& out = per_model[m];
    for (int delta : cfg.quant.deltas) {
      const AttackConfig attack{.epsilon_int = delta,
                                .steps = cfg.quant.steps,
                                .random_start = cfg.eval.random_start,
                                .seed = derive_seed(base_seed, "delta=" + std::to_string(delta)),
                                .clamp_to_pixel_range = cfg.eval.clamp_to_pixel_range};
      std::vector<AttackKind> kinds = cfg.quant.attack_kinds;
      if (delta == 0) kinds = {AttackKind::none};
      for (AttackKind kind : kinds) {
        std::vector<Tensor> transferred;
        if (kind == AttackKind::transfer || kind == AttackKind::none) {
          transferred = craft_adversarial_batches(net, {}, data.test.images, data.test.labels, attack, batch);
        }
        auto score = [&](const TapMap& tap_map) {
          if (kind == AttackKind::bpda || kind == AttackKind::pgd) {
            return evaluate_accuracy(net, tap_map, data.test.images, data.test.labels, kind, attack, batch);
          }
          return accuracy_on_batches(net, tap_map, transferred, data.test.labels);
        };
        RecordKeys keys = model_keys(eps);
        keys.attack = to_string(kind);
        keys.delta = delta;
        keys.tap = "none";
        out.push_back({RecordKind::quant_acc, keys, score({}), attack.seed});
        for (const auto& tap : taps) {
          for (double beta : cfg.quant.betas) {
            keys.tap = tap;
            keys.beta = beta;
            out.push_back({RecordKind::quant_acc, keys, score(as_tap(beta, tap)), attack.seed});
          }
        }
      }
    }
  });
  std::size_t count = 0;
  for (const auto& p : per_model) {
    s.emit(p);
    count += p.size();
  }

  std::ostringstream summary;
  summary << "quant sweep: " << count << " accuracy cells over " << checkpoints.size() << " models\n";
  summary << "  eps  attack     delta  tap                beta    acc   vs none\n";
  for (const auto& p : per_model) {
    double none = kNaN;
    for (const auto& r : p) {
      if (*r.keys.tap == "none") none = r.value;
      summary << "  " << std::setw(3) << *r.keys.model_eps << "  " << std::left << std::setw(9) << *r.keys.attack
              << std::right << std::setw(7) << *r.keys.delta << "  " << std::left << std::setw(16) << *r.keys.tap
              << std::right << std::setw(6) << (r.keys.beta ? fixed(*r.keys.beta, 1) : "-") << std::setw(7)
              << fixed(r.value) << std::setw(10) << (r.keys.beta ? signed_fixed(r.value - none) : "") << "\n";
    }
  }
  return summary.str();
}

std::string cmd_filter_norms(Session& s) {
  const auto checkpoints = load_spectrum(s.cfg(), s.layout());
  std::ostringstream summary;
  summary << "filter L-inf norms\n  eps  layer                count  mean_linf  max_linf\n";
  std::vector<Pending> pending;
  for (const auto& c : checkpoints) {
    const int eps = c.metadata.epsilon_int;
    for (const auto& layer : filter_norms(c.network).layers) {
      RecordKeys keys = model_keys(eps);
      keys.layer = layer.layer;
      keys.stat = "count";
      pending.push_back({RecordKind::filter_norms, keys, static_cast<double>(layer.filter_count), c.metadata.seed});
      keys.stat = "mean_linf";
      pending.push_back({RecordKind::filter_norms, keys, layer.mean_linf, c.metadata.seed});
      keys.stat = "max_linf";
      pending.push_back({RecordKind::filter_norms, keys, layer.max_linf, c.metadata.seed});
      summary << "  " << std::setw(3) << eps << "  " << std::left << std::setw(20) << layer.layer << std::right
              << std::setw(6) << layer.filter_count << std::setw(11) << fixed(layer.mean_linf, 4) << std::setw(10)
              << fixed(layer.max_linf, 4) << "\n";
    }
  }
  s.emit(pending);
  return summary.str();
}

std::vector<CorruptionSpec> corruption_specs(const ExperimentConfig& cfg) {
  std::vector<CorruptionSpec> specs;
  for (auto kind : cfg.analysis.corruptions) {
    for (int severity : cfg.analysis.severities) {
      CorruptionSpec spec{kind, severity, 0};
      spec.seed = derive_seed(cfg.seed, "corrupt/" + spec.label());
      specs.push_back(spec);
    }
  }
  return specs;
}

std::string cmd_preact_stats(Session& s) {
  const auto& cfg = s.cfg();
  const auto checkpoints = load_spectrum(cfg, s.layout());
  const Datasets data = load_datasets(cfg);
  const auto specs = corruption_specs(cfg);
  std::vector<Tensor> inputs{data.test.images};
  for (const auto& spec : specs) inputs.push_back(corrupt(data.test.images, spec));

  std::vector<std::vector<Pending>> per_model(checkpoints.size());
  parallel_for(checkpoints.size(), s.options().jobs, [&](std::size_t m) {
    const Network& net = checkpoints[m].network;
    const std::string tap = cfg.analysis.preact_tap.empty() ? net.pre_final_activation_tap() : cfg.analysis.preact_tap;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      RecordKeys keys = model_keys(checkpoints[m].metadata.epsilon_int);
      keys.tap = tap;
      std::uint64_t seed = checkpoints[m].metadata.seed;
      if (k == 0) {
        keys.corruption = "none";
      } else {
        keys.corruption = to_string(specs[k - 1].kind);
        keys.severity = specs[k - 1].severity;
        seed = specs[k - 1].seed;
      }
      const auto stats = preact_mean(net, inputs[k], tap, cfg.eval.batch_size);
      per_model[m].push_back({RecordKind::preact_mean, keys, stats.mean, seed});
    }
  });

  std::ostringstream summary;
  summary << "mean pre-activation at the final block\n  eps  input              mean\n";
  for (const auto& p : per_model) {
    s.emit(p);
    for (const auto& r : p) {
      const std::string input =
          *r.keys.corruption + (r.keys.severity ? "-" + std::to_string(*r.keys.severity) : std::string());
      summary << "  " << std::setw(3) << *r.keys.model_eps << "  " << std::left << std::setw(16) << input
              << std::right << std::setw(9) << fixed(r.value, 5) << "\n";
    }
  }
  return summary.str();
}

std::string cmd_corrupt_eval(Session& s) {
  const auto& cfg = s.cfg();
  const auto checkpoints = load_spectrum(cfg, s.layout());
  const Datasets data = load_datasets(cfg);
  const auto specs = corruption_specs(cfg);
  if (specs.empty()) throw std::invalid_argument("corrupt-eval: no corruptions configured");
  const CorruptionTable table = corruption_eval(checkpoints, specs, data.test, cfg.eval.batch_size, s.options().jobs);

  std::vector<Pending> pending;
  std::ostringstream summary;
  summary << "accuracy (%) under corruption\n  eps  average";
  for (const auto& spec : specs) summary << "  " << spec.label();
  summary << "\n";
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const int eps = table.model_epsilons[i];
    summary << "  " << std::setw(3) << eps << std::setw(9) << fixed(table.average[row]);
    for (std::size_t j = 0; j < specs.size(); ++j) {
      RecordKeys keys = model_keys(eps);
      keys.corruption = to_string(specs[j].kind);
      keys.severity = specs[j].severity;
      const double acc = table.accuracy(row, static_cast<Eigen::Index>(j));
      pending.push_back({RecordKind::corruption_acc, keys, acc, specs[j].seed});
      summary << "  " << std::setw(static_cast<int>(specs[j].label().size())) << fixed(acc);
    }
    RecordKeys avg = model_keys(eps);
    avg.corruption = "average";
    pending.push_back({RecordKind::corruption_acc, avg, table.average[row], derive_seed(cfg.seed, "corrupt")});
    summary << "\n";
  }
  s.emit(pending);
  return summary.str();
}

// ---------------------------------------------------------------------------
// Report

struct RecordIndex {
  std::vector<ResultRecord> latest;  // in first-seen order, each the last value for its key

  RecordIndex(const std::vector<ResultRecord>& records, const std::string& fingerprint) {
    std::map<std::string, std::size_t> slot;
    for (const auto& r : records) {
      if (r.fingerprint != fingerprint) continue;
      const std::string id = to_string(r.kind) + r.keys.identity();
      auto [it, inserted] = slot.emplace(id, latest.size());
      if (inserted) {
        latest.push_back(r);
      } else {
        latest[it->second] = r;
      }
    }
  }

  std::vector<const ResultRecord*> of(RecordKind kind) const {
    std::vector<const ResultRecord*> out;
    for (const auto& r : latest) {
      if (r.kind == kind) out.push_back(&r);
    }
    return out;
  }
};

std::string report_grid(const RecordIndex& index, const fs::path& dir, RunOutcome& outcome) {
  std::map<std::pair<int, int>, double> cells;
  std::set<int> models;
  std::set<int> deltas;
  for (const auto* r : index.of(RecordKind::robust_err)) {
    if (r->keys.attack != "pgd" || !r->keys.model_eps || !r->keys.delta) continue;
    cells[{*r->keys.model_eps, *r->keys.delta}] = r->value;
    models.insert(*r->keys.model_eps);
    deltas.insert(*r->keys.delta);
  }
  if (cells.empty()) return "";

  std::ostringstream grid_csv;
  grid_csv << "model_eps,delta,robust_err\n";
  for (const auto& [key, value] : cells) grid_csv << key.first << "," << key.second << "," << exact(value) << "\n";
  write_text(dir / "grid.csv", grid_csv.str(), outcome);

  // Per-delta curves of error against model epsilon.
  std::ostringstream curves;
  curves << "delta,model_eps,robust_err,is_argmin\n";
  for (int d : deltas) {
    double best = std::numeric_limits<double>::infinity();
    int best_eps = 0;
    for (int m : models) {
      auto it = cells.find({m, d});
      if (it != cells.end() && it->second < best) {
        best = it->second;
        best_eps = m;
      }
    }
    for (int m : models) {
      auto it = cells.find({m, d});
      if (it == cells.end()) continue;
      curves << d << "," << m << "," << exact(it->second) << "," << (m == best_eps ? 1 : 0) << "\n";
    }
  }
  write_text(dir / "fig1_curves.csv", curves.str(), outcome);

  std::ostringstream text;
  text << "Robust error (%), rows: model eps, columns: attack delta (* marks the column minimum)\n";
  text << "  eps";
  for (int d : deltas) text << std::setw(10) << d;
  text << "\n";
  for (int m : models) {
    text << "  " << std::setw(3) << m;
    for (int d : deltas) {
      auto it = cells.find({m, d});
      std::string cell = it == cells.end() ? "n/a" : fixed(it->second);
      bool is_min = it != cells.end();
      for (int other : models) {
        auto o = cells.find({other, d});
        if (o != cells.end() && it != cells.end() && o->second < it->second) is_min = false;
      }
      text << std::setw(9) << cell << (is_min ? "*" : " ");
    }
    text << "\n";
  }

  // Overdesign selection over complete delta > 0 columns.
  std::vector<int> model_list(models.begin(), models.end());
  std::ostringstream over;
  over << "delta,mode,epsilon_star,epsilon_star_minus_delta\n";
  text << "\nOverdesign selection\n  delta  grid_argmin  early_stop\n";
  for (int d : deltas) {
    if (d == 0) continue;
    RobustnessGrid grid;
    grid.model_epsilons = model_list;
    grid.attack_deltas = {d};
    grid.errors.resize(static_cast<Eigen::Index>(model_list.size()), 1);
    grid.clean_errors = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(model_list.size()), 0.0);
    bool complete = true;
    for (std::size_t i = 0; i < model_list.size(); ++i) {
      auto it = cells.find({model_list[i], d});
      if (it == cells.end()) {
        complete = false;
        break;
      }
      grid.errors(static_cast<Eigen::Index>(i), 0) = it->second;
    }
    if (!complete) continue;
    text << "  " << std::setw(5) << d;
    for (auto mode : {SelectionMode::grid_argmin, SelectionMode::early_stop}) {
      std::string star = "n/a";
      std::string gap = "";
      try {
        const auto choice = select_overdesign(grid, d, mode);
        star = std::to_string(choice.epsilon_star);
        gap = std::to_string(choice.epsilon_star - d);
      } catch (const std::invalid_argument&) {
      }
      over << d << "," << to_string(mode) << "," << star << "," << gap << "\n";
      text << std::setw(mode == SelectionMode::grid_argmin ? 13 : 12) << star;
    }
    text << "\n";
  }
  write_text(dir / "overdesign.csv", over.str(), outcome);
  return text.str();
}

std::string report_clean(const RecordIndex& index, const fs::path& dir, RunOutcome& outcome) {
  const auto rows = index.of(RecordKind::clean_acc);
  if (rows.empty()) return "";
  std::ostringstream csv;
  std::ostringstream text;
  csv << "model_eps,clean_acc\n";
  text << "Clean accuracy (%)\n";
  for (const auto* r : rows) {
    csv << r->keys.model_eps.value_or(-1) << "," << exact(r->value) << "\n";
    text << "  eps " << std::setw(3) << r->keys.model_eps.value_or(-1) << "  " << fixed(r->value) << "\n";
  }
  write_text(dir / "clean.csv", csv.str(), outcome);
  return text.str();
}

std::string report_quant(const RecordIndex& index, const fs::path& dir, RunOutcome& outcome) {
  const auto rows = index.of(RecordKind::quant_acc);
  if (rows.empty()) return "";
  std::map<std::tuple<int, std::string, int>, double> none;
  for (const auto* r : rows) {
    if (r->keys.tap == "none") none[{*r->keys.model_eps, *r->keys.attack, *r->keys.delta}] = r->value;
  }
  std::ostringstream csv;
  std::ostringstream text;
  csv << "model_eps,attack,delta,tap,beta,accuracy,delta_vs_none\n";
  text << "Accuracy (%) with feature quantization; the last column is the signed change against the "
          "unquantized (tap none) row\n";
  text << "  eps  attack     delta  tap                beta     acc  vs none\n";
  for (const auto* r : rows) {
    const auto key = std::make_tuple(*r->keys.model_eps, *r->keys.attack, *r->keys.delta);
    const double base = none.contains(key) ? none.at(key) : kNaN;
    const double change = r->value - base;
    csv << *r->keys.model_eps << "," << *r->keys.attack << "," << *r->keys.delta << "," << *r->keys.tap << ","
        << (r->keys.beta ? exact(*r->keys.beta) : "") << "," << exact(r->value) << "," << exact(change) << "\n";
    const std::string note = !r->keys.beta ? "" : change > 0 ? " (increase)" : change < 0 ? " (decrease)" : "";
    text << "  " << std::setw(3) << *r->keys.model_eps << "  " << std::left << std::setw(9) << *r->keys.attack
         << std::right << std::setw(7) << *r->keys.delta << "  " << std::left << std::setw(16) << *r->keys.tap
         << std::right << std::setw(6) << (r->keys.beta ? fixed(*r->keys.beta, 1) : "-") << std::setw(8)
         << fixed(r->value) << std::setw(9) << (r->keys.beta ? signed_fixed(change) : "") << note << "\n";
  }
  write_text(dir / "quant_table.csv", csv.str(), outcome);
  return text.str();
}

std::string report_filter_norms(const RecordIndex& index, const fs::path& dir, RunOutcome& outcome) {
  std::map<std::pair<int, std::string>, std::array<double, 3>> table;
  std::vector<std::pair<int, std::string>> order;
  for (const auto* r : index.of(RecordKind::filter_norms)) {
    const auto key = std::make_pair(*r->keys.model_eps, *r->keys.layer);
    if (!table.contains(key)) {
      table[key] = {kNaN, kNaN, kNaN};
      order.push_back(key);
    }
    const std::string& stat = *r->keys.stat;
    const std::size_t slot = stat == "count" ? 0 : stat == "mean_linf" ? 1 : 2;
    table[key][slot] = r->value;
  }
  if (order.empty()) return "";
  std::ostringstream csv;
  std::ostringstream text;
  csv << "model_eps,layer,count,mean_linf,max_linf\n";
  text << "Filter L-inf norms\n  eps  layer                count  mean_linf  max_linf\n";
  for (const auto& key : order) {
    const auto& v = table[key];
    csv << key.first << "," << key.second << "," << exact(v[0]) << "," << exact(v[1]) << "," << exact(v[2]) << "\n";
    text << "  " << std::setw(3) << key.first << "  " << std::left << std::setw(20) << key.second << std::right
         << std::setw(6) << fixed(v[0], 0) << std::setw(11) << fixed(v[1], 4) << std::setw(10) << fixed(v[2], 4)
         << "\n";
  }
  write_text(dir / "filter_norms.csv", csv.str(), outcome);
  return text.str();
}

std::string report_corruption(const RecordIndex& index, const fs::path& dir, RunOutcome& outcome) {
  const auto rows = index.of(RecordKind::corruption_acc);
  if (rows.empty()) return "";
  std::ostringstream csv;
  std::ostringstream text;
  csv << "model_eps,corruption,severity,accuracy\n";
  text << "Average accuracy (%) under corruption\n";
  for (const auto* r : rows) {
    csv << *r->keys.model_eps << "," << *r->keys.corruption << ","
        << (r->keys.severity ? std::to_string(*r->keys.severity) : "") << "," << exact(r->value) << "\n";
    if (r->keys.corruption == "average") {
      text << "  eps " << std::setw(3) << *r->keys.model_eps << "  " << fixed(r->value) << "\n";
    }
  }
  write_text(dir / "corruption.csv", csv.str(), outcome);
  return text.str();
}

std::string report_preact(const RecordIndex& index, const fs::path& dir, RunOutcome& outcome) {
  const auto rows = index.of(RecordKind::preact_mean);
  if (rows.empty()) return "";
  std::ostringstream csv;
  std::ostringstream text;
  csv << "model_eps,tap,corruption,severity,mean\n";
  text << "Mean pre-activation on clean inputs\n";
  for (const auto* r : rows) {
    csv << *r->keys.model_eps << "," << *r->keys.tap << "," << r->keys.corruption.value_or("") << ","
        << (r->keys.severity ? std::to_string(*r->keys.severity) : "") << "," << exact(r->value) << "\n";
    if (r->keys.corruption == "none") {
      text << "  eps " << std::setw(3) << *r->keys.model_eps << "  " << fixed(r->value, 5) << "\n";
    }
  }
  write_text(dir / "preact.csv", csv.str(), outcome);
  return text.str();
}

}  // namespace

std::string to_string(Subcommand cmd) {
  for (const auto& [c, name] : kSubcommands) {
    if (c == cmd) return name;
  }
  throw std::invalid_argument("unknown subcommand");
}

Subcommand parse_subcommand(const std::string& name) {
  for (const auto& [c, n] : kSubcommands) {
    if (name == n) return c;
  }
  throw std::invalid_argument("unknown subcommand '" + name + "'");
}

const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : kSubcommands) out.emplace_back(entry.second);
    return out;
  }();
  return names;
}

fs::path RunLayout::checkpoint(int epsilon_int) const {
  return root / "checkpoints" / ("eps_" + std::to_string(epsilon_int) + ".psl");
}

Datasets load_datasets(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Datasets out;
  if (d.source == "cifar10") {
    out.train = load_cifar10(d.cifar_dir, Split::train);
    out.test = load_cifar10(d.cifar_dir, Split::test);
  } else {
    out.train = make_synthetic(d.num_classes, d.train_per_class, d.resolution, derive_seed(cfg.seed, "data/train"),
                               d.style);
    out.test = make_synthetic(d.num_classes, d.test_per_class, d.resolution, derive_seed(cfg.seed, "data/test"),
                              d.style);
    out.test.split = Split::test;
  }
  out.test = first_rows(out.test, d.test_limit);
  return out;
}

RunOutcome write_report(const std::vector<ResultRecord>& records, const std::string& fingerprint,
                        const fs::path& report_dir) {
  fs::create_directories(report_dir);
  RunOutcome outcome;
  outcome.fingerprint = fingerprint;
  const RecordIndex index(records, fingerprint);
  if (index.latest.empty()) throw std::runtime_error("no records match config fingerprint " + fingerprint);
  std::string text;
  for (const auto& part : {report_clean(index, report_dir, outcome), report_grid(index, report_dir, outcome),
                           report_quant(index, report_dir, outcome), report_filter_norms(index, report_dir, outcome),
                           report_corruption(index, report_dir, outcome), report_preact(index, report_dir, outcome)}) {
    if (part.empty()) continue;
    if (!text.empty()) text += "\n";
    text += part;
  }
  write_text(report_dir / "summary.txt", text, outcome);
  outcome.summary = text;
  return outcome;
}

RunOutcome run(ExperimentConfig cfg, Subcommand cmd, const RunOptions& options) {
  if (options.seed) cfg.seed = *options.seed;
  if (cmd == Subcommand::report) {
    const RunLayout layout{options.out_dir};
    if (!fs::exists(layout.records())) throw std::runtime_error("no record store at " + layout.records().string());
    RunOutcome outcome = write_report(read_records(layout.records()), cfg.fingerprint(), layout.report_dir());
    outcome.run_id = make_run_id(cmd, outcome.fingerprint);
    if (options.log != nullptr) *options.log << outcome.summary;
    return outcome;
  }

  Session session(cfg, cmd, options);
  std::string summary;
  switch (cmd) {
    case Subcommand::train_spectrum: summary = cmd_train_spectrum(session); break;
    case Subcommand::eval_grid: summary = cmd_eval_grid(session); break;
    case Subcommand::quant_sweep: summary = cmd_quant_sweep(session); break;
    case Subcommand::filter_norms: summary = cmd_filter_norms(session); break;
    case Subcommand::preact_stats: summary = cmd_preact_stats(session); break;
    case Subcommand::corrupt_eval: summary = cmd_corrupt_eval(session); break;
    case Subcommand::report: break;
  }
  RunOutcome outcome = session.finish(summary);
  if (options.log != nullptr) {
    *options.log << outcome.summary << "run " << outcome.run_id << ": " << outcome.records.size()
                 << " records, fingerprint " << outcome.fingerprint << "\n";
  }
  return outcome;
}

int run(const fs::path& config_path, const std::string& subcommand, const RunOptions& options) {
  try {
    run(load_config(config_path), parse_subcommand(subcommand), options);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "psl " << subcommand << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace psl
