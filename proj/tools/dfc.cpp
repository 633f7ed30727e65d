// dfc: command-line front end for synthetic data, training, clustering,
// evaluation and distance-matrix export.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dfc/assignments.hpp"
#include "dfc/atlas.hpp"
#include "dfc/error.hpp"
#include "dfc/metrics.hpp"
#include "dfc/parallel.hpp"
#include "dfc/synthetic.hpp"
#include "dfc/tract_io.hpp"
#include "dfc/train.hpp"

namespace fs = std::filesystem;
using namespace dfc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct TrainFlags {
  TrainConfig config;
  bool no_anatomy = false;
  bool no_outlier_removal = false;
  bool no_rescale_h = false;
  bool no_flip_augment = false;

  TrainConfig resolved() const {
    TrainConfig c = config;
    c.anatomy = !no_anatomy;
    c.outlier_removal = !no_outlier_removal;
    c.rescale_h = !no_rescale_h;
    c.flip_augment = !no_flip_augment;
    return c;
  }
};

std::vector<CLI::Option*> required_options;

CLI::Option* mark_required(CLI::Option* opt) {
  required_options.push_back(opt);
  return opt;
}

bool owned_by(CLI::App* sub, const CLI::Option* opt) {
  for (const CLI::Option* o : sub->get_options())
    if (o == opt) return true;
  return false;
}

/// Required options may come from the config file, so they are checked
/// after it has been applied.
void check_required(CLI::App* sub) {
  for (CLI::Option* opt : required_options)
    if (owned_by(sub, opt) && opt->count() == 0) throw CLI::RequiredError(opt->get_name());
}

void add_train_options(CLI::App* sub, TrainFlags& f) {
  TrainConfig& c = f.config;
  mark_required(sub->add_option("--seed", c.seed, "Random seed"));
  sub->add_option("--k", c.k, "Number of clusters")->capture_default_str();
  sub->add_option("--lambda", c.lambda, "Weight of the clustering loss")->capture_default_str();
  sub->add_option("--outlier-threshold", c.h, "Outlier threshold on the maximum assignment probability")->capture_default_str();
  sub->add_flag("--no-rescale-h", f.no_rescale_h, "Apply the outlier threshold as given instead of scaling it by 800/k");
  sub->add_option("--points", c.n_points, "Points per resampled fiber")->capture_default_str();
  sub->add_option("--pretrain-iters", c.pretrain.iterations)->capture_default_str();
  sub->add_option("--pretrain-lr", c.pretrain.lr)->capture_default_str();
  sub->add_option("--pretrain-decay-iters", c.pretrain.decay_iterations)->capture_default_str();
  sub->add_option("--pretrain-decay-lr", c.pretrain.decay_lr)->capture_default_str();
  sub->add_option("--cluster-iters", c.cluster.iterations)->capture_default_str();
  sub->add_option("--cluster-lr", c.cluster.lr)->capture_default_str();
  sub->add_option("--cluster-decay-iters", c.cluster.decay_iterations)->capture_default_str();
  sub->add_option("--cluster-decay-lr", c.cluster.decay_lr)->capture_default_str();
  sub->add_option("--batch-fibers", c.batch_fibers, "Fibers per minibatch")->capture_default_str();
  sub->add_option("--pretrain-pairs", c.pretrain_pairs, "Sampled pairs per pretraining batch")->capture_default_str();
  sub->add_option("--cluster-pairs", c.cluster_pairs, "Sampled pairs per clustering batch")->capture_default_str();
  sub->add_option("--centroid-lr-scale", c.centroid_lr_scale, "Centroid learning rate relative to the encoder's")
      ->capture_default_str();
  sub->add_option("--refresh-period", c.refresh_period, "Iterations between target/profile refreshes")
      ->capture_default_str();
  sub->add_option("--tap-fraction", c.tap_fraction, "Member fraction for a region to enter a profile")
      ->capture_default_str();
  sub->add_option("--kmeans-restarts", c.kmeans_restarts)->capture_default_str();
  sub->add_option("--min-length", c.min_length, "Drop fibers not longer than this (mm)")->capture_default_str();
  sub->add_flag("--no-flip-augment", f.no_flip_augment, "Do not reverse training inputs at random");
  sub->add_flag("--no-anatomy", f.no_anatomy, "Plain Student-t assignment without anatomical weighting");
  sub->add_flag("--no-outlier-removal", f.no_outlier_removal, "Keep every fiber in its cluster");
}

/// Fills options of `sub` from a key=value file. Keys are long option names
/// without dashes; options already given on the command line are kept.
void apply_config_file(CLI::App* sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#' || line[first] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ConversionError(path + ":" + std::to_string(number) + ": expected key=value");
    std::string key = CLI::detail::trim_copy(line.substr(first, eq - first));
    std::string value = CLI::detail::trim_copy(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key == "config") continue;
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw CLI::ExtrasError(path + ":" + std::to_string(number) + ": unknown key \"" + key + "\"", CLI::ExitCodes::ExtrasError);
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

void log_config(CLI::App* sub) {
  std::cerr << "# " << sub->get_name() << " configuration\n" << sub->config_to_str(true, false);
}

class ProgressLog {
 public:
  explicit ProgressLog(const std::string& path) {
    if (!path.empty()) {
      out_.open(path, std::ios::trunc);
      if (!out_) throw Error("cannot open " + path + " for writing");
    }
  }

  void operator()(const LossRecord& r) {
    if (out_.is_open()) {
      nlohmann::json j{{"stage", r.stage}, {"iteration", r.iteration}, {"lp", r.lp}, {"lc", r.lc}, {"loss", r.total}};
      out_ << j.dump() << '\n';
    }
    if (r.iteration % 500 == 0) {
      std::fprintf(stderr, "%s %6d  L_p %.4f  L_c %.5f  L %.4f\n", r.stage.c_str(), r.iteration, r.lp, r.lc, r.total);
    }
  }

 private:
  std::ofstream out_;
};

FiberSet load_training_fibers(const std::string& path, double min_length) {
  const FiberSet all = read_fiberset(path);
  FiberSet kept = filter_by_length(all, min_length);
  std::fprintf(stderr, "loaded %zu fibers, %zu longer than %g mm\n", all.size(), kept.size(), min_length);
  return kept;
}

// ---- commands --------------------------------------------------------------

struct SynthArgs {
  SynthConfig config;
  std::string out;
  bool json = false;
};

int cmd_synth(const SynthArgs& a, CLI::App* sub) {
  log_config(sub);
  const SynthData data = generate(a.config);
  fs::create_directories(a.out);
  write_fiberset(data.fibers, fs::path(a.out) / (a.json ? "fibers.json" : "fibers.fibs"));
  write_truth(data.truth, fs::path(a.out) / "truth.tsv");
  write_labelvolume(data.volume, fs::path(a.out) / "labels.lvol");
  std::ofstream(fs::path(a.out) / "config.txt") << sub->config_to_str(true, false);
  std::fprintf(stderr, "wrote %zu fibers (%d outliers) to %s\n", data.fibers.size(), a.config.outliers,
               a.out.c_str());
  return kOk;
}

struct TrainArgs {
  TrainFlags flags;
  std::string fibers, atlas, labels, out, log;
};

int cmd_pretrain(const TrainArgs& a, CLI::App* sub) {
  log_config(sub);
  const TrainConfig c = a.flags.resolved();
  const FiberSet fibers = load_training_fibers(a.fibers, c.min_length);
  ProgressLog log(a.log);
  const PretrainResult r = pretrain(fibers, c, std::ref(log));
  write_atlas(r.atlas, a.out);
  std::fprintf(stderr, "pretrained atlas written to %s (final L_p %.4f)\n", a.out.c_str(),
               r.history.empty() ? 0.0 : r.history.back().lp);
  return kOk;
}

int cmd_train(const TrainArgs& a, CLI::App* sub) {
  log_config(sub);
  const TrainConfig c = a.flags.resolved();
  const FiberSet fibers = load_training_fibers(a.fibers, c.min_length);
  const Atlas pretrained = read_atlas(a.atlas);
  std::optional<LabelVolume> volume;
  if (!a.labels.empty()) volume = read_labelvolume(a.labels);
  ProgressLog log(a.log);
  const ClusterTrainResult r = cluster_train(fibers, pretrained, c, volume ? &*volume : nullptr, std::ref(log));
  write_atlas(r.atlas, a.out);
  for (const RefreshRecord& rec : r.refreshes)
    std::fprintf(stderr, "refresh %6d  KL %.5f  mean q_m %.4f\n", rec.iteration, rec.kl, rec.mean_q_max);
  if (!r.empty_clusters.empty()) {
    std::fprintf(stderr, "empty clusters:");
    for (std::size_t j : r.empty_clusters) std::fprintf(stderr, " %zu", j);
    std::fprintf(stderr, "\n");
  }
  std::fprintf(stderr, "atlas written to %s (hash %s)\n", a.out.c_str(), atlas_hash(r.atlas).c_str());
  return kOk;
}

struct ClusterArgs {
  std::string fibers, atlas, labels, out;
  unsigned workers = 1;
};

int cmd_cluster(const ClusterArgs& a, CLI::App* sub) {
  log_config(sub);
  const FiberSet fibers = read_fiberset(a.fibers);
  const Atlas atlas = read_atlas(a.atlas);
  std::optional<LabelVolume> volume;
  if (!a.labels.empty()) volume = read_labelvolume(a.labels);
  const Inference inf = infer(fibers, atlas, volume ? &*volume : nullptr, a.workers);

  AssignmentTable t;
  t.atlas_hash = atlas_hash(atlas);
  t.k = atlas.hyper.k;
  t.h = atlas.hyper.h_effective;
  t.outlier_removal = atlas.hyper.outlier_removal;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < fibers.size(); ++i) {
    t.id.push_back(fibers[i].id.value_or(static_cast<std::int64_t>(i)));
    t.cluster.push_back(inf.assignment.argmax[i]);
    t.q_max.push_back(inf.assignment.q_max[i]);
    t.outlier.push_back(inf.outlier[i]);
    flagged += inf.outlier[i];
  }
  write_assignments(t, a.out);
  std::fprintf(stderr, "assigned %zu fibers, %zu flagged as outliers\n", fibers.size(), flagged);
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> assignments, fibers, truth;
  std::string labels, atlas, out;
  unsigned workers = 1;
};

int cmd_eval(const EvalArgs& a, CLI::App* sub) {
  log_config(sub);
  if (a.assignments.size() != a.fibers.size())
    throw ValidationError("give one --fibers file per --assignments file");
  if (!a.truth.empty() && a.truth.size() != a.assignments.size())
    throw ValidationError("give one --truth file per --assignments file");
  const Atlas atlas = read_atlas(a.atlas);
  const std::string hash = atlas_hash(atlas);
  std::optional<LabelVolume> volume;
  if (!a.labels.empty()) volume = read_labelvolume(a.labels);

  std::vector<ClusterResult> subjects;
  double db_sum = 0.0, tapc_sum = 0.0;
  std::size_t db_count = 0, tapc_count = 0, n_fibers = 0, n_flagged = 0;
  double acc = 0.0, ari = 0.0, prec = 0.0, rec = 0.0, rej = 0.0;
  for (std::size_t s = 0; s < a.assignments.size(); ++s) {
    const AssignmentTable t = read_assignments(a.assignments[s]);
    if (t.atlas_hash != hash) throw ValidationError(a.assignments[s] + " was produced with a different atlas");
    const FiberSet fibers = read_fiberset(a.fibers[s]);
    if (fibers.size() != t.size()) throw ValidationError(a.assignments[s] + " does not match its fiber file");
    const ClusterResult cr = t.cluster_result();
    n_fibers += cr.size();
    for (bool o : cr.outlier) n_flagged += o;

    const ResampledSet resampled = ResampledSet::from_fibers(fibers, static_cast<std::size_t>(atlas.hyper.n_points));
    const DBReport db = db_index(cr, resampled, a.workers);
    if (std::isfinite(db.db)) {
      db_sum += db.db;
      ++db_count;
    }
    if (volume) {
      std::vector<RegionSet> regions;
      for (const Fiber& f : fibers) regions.push_back(fiber_regions(f.points, *volume));
      const TAPCReport tr = tapc(cr, regions, atlas.tap);
      if (std::isfinite(tr.score)) {
        tapc_sum += tr.score;
        ++tapc_count;
      }
    }
    if (!a.truth.empty()) {
      const MatchReport m = match_clusters(cr, read_truth(a.truth[s]));
      acc += m.accuracy;
      ari += m.ari;
      prec += m.outlier_precision;
      rec += m.outlier_recall;
      rej += m.inlier_rejection;
    }
    subjects.push_back(cr);
  }

  const auto n = static_cast<double>(subjects.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  MetricsReport report;
  report.add("atlas_hash", hash);
  report.add("subjects", static_cast<long long>(subjects.size()));
  report.add("k", static_cast<long long>(atlas.hyper.k));
  report.add("fibers", static_cast<long long>(n_fibers));
  report.add("outliers", static_cast<long long>(n_flagged));
  report.add("db", db_count ? db_sum / static_cast<double>(db_count) : nan);
  report.add("wmpg", wmpg(subjects, atlas.hyper.k));
  if (volume) report.add("tapc", tapc_count ? tapc_sum / static_cast<double>(tapc_count) : nan);
  if (!a.truth.empty()) {
    report.add("accuracy", acc / n);
    report.add("ari", ari / n);
    report.add("outlier_precision", prec / n);
    report.add("outlier_recall", rec / n);
    report.add("inlier_rejection", rej / n);
  }
  if (a.out.empty()) {
    std::cout << report.str();
  } else {
    std::ofstream(a.out) << report.str();
  }
  return kOk;
}

struct DistmatArgs {
  std::string fibers, out;
  int points = 14;
  unsigned workers = 1;
};

int cmd_distmat(const DistmatArgs& a, CLI::App* sub) {
  log_config(sub);
  if (a.points < 2) throw ValidationError("--points must be at least 2");
  const FiberSet fibers = read_fiberset(a.fibers);
  const DistanceMatrix m = pairwise_mdf(ResampledSet::from_fibers(fibers, static_cast<std::size_t>(a.points)), a.workers);
  if (fs::path(a.out).extension() == ".csv") {
    const std::string text = format_distance_csv(m);
    write_file_bytes(a.out, std::as_bytes(std::span(text.data(), text.size())));
  } else {
    write_file_bytes(a.out, write_distance_matrix_bytes(m));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep fiber clustering of tractography streamlines"};
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  const unsigned default_workers_count = default_workers();
  std::map<CLI::App*, std::string> config_files;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic fiber set with ground truth and a label volume");
  s->add_option("--config", config_files[s], "key=value configuration file; command-line flags win");
  mark_required(s->add_option("--out", synth.out, "Output directory"));
  mark_required(s->add_option("--seed", synth.config.seed));
  s->add_option("--bundles", synth.config.bundles)->capture_default_str();
  s->add_option("--fibers-per-bundle", synth.config.fibers_per_bundle)->capture_default_str();
  s->add_option("--control-points", synth.config.control_points)->capture_default_str();
  s->add_option("--points-per-fiber", synth.config.points_per_fiber)->capture_default_str();
  s->add_option("--sigma", synth.config.sigma, "Perpendicular noise (mm)")->capture_default_str();
  s->add_option("--flip-probability", synth.config.flip_probability)->capture_default_str();
  s->add_option("--outliers", synth.config.outliers)->capture_default_str();
  s->add_option("--box", synth.config.box, "Bounding cube edge (mm)")->capture_default_str();
  s->add_option("--voxel", synth.config.voxel, "Label grid spacing (mm)")->capture_default_str();
  s->add_option("--min-separation", synth.config.min_separation, "Minimum template MDF (mm)")->capture_default_str();
  s->add_option("--min-template-length", synth.config.min_template_length)->capture_default_str();
  s->add_flag("--json", synth.json, "Write fibers as JSON instead of binary");

  TrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Train the encoder on pairwise fiber distances");
  p->add_option("--config", config_files[p], "key=value configuration file; command-line flags win");
  mark_required(p->add_option("--fibers", pre.fibers))->check(CLI::ExistingFile);
  mark_required(p->add_option("--out", pre.out, "Output atlas directory"));
  p->add_option("--log", pre.log, "Line-delimited JSON loss log");
  p->add_option("--workers", pre.flags.config.workers)->default_val(default_workers_count);
  add_train_options(p, pre.flags);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "k-means initialization and joint clustering training");
  t->add_option("--config", config_files[t], "key=value configuration file; command-line flags win");
  mark_required(t->add_option("--fibers", tr.fibers))->check(CLI::ExistingFile);
  mark_required(t->add_option("--atlas", tr.atlas, "Pretrained atlas directory"))->check(CLI::ExistingDirectory);
  t->add_option("--labels", tr.labels, "Label volume (required unless --no-anatomy)")->check(CLI::ExistingFile);
  mark_required(t->add_option("--out", tr.out, "Output atlas directory"));
  t->add_option("--log", tr.log, "Line-delimited JSON loss log");
  t->add_option("--workers", tr.flags.config.workers)->default_val(default_workers_count);
  add_train_options(t, tr.flags);

  ClusterArgs cl;
  auto* c = app.add_subcommand("cluster", "Assign fibers to atlas clusters and flag outliers");
  c->add_option("--config", config_files[c], "key=value configuration file; command-line flags win");
  mark_required(c->add_option("--fibers", cl.fibers))->check(CLI::ExistingFile);
  mark_required(c->add_option("--atlas", cl.atlas))->check(CLI::ExistingDirectory);
  c->add_option("--labels", cl.labels, "Label volume (required for atlases with anatomy)")->check(CLI::ExistingFile);
  mark_required(c->add_option("--out", cl.out, "Assignment file"));
  c->add_option("--workers", cl.workers)->default_val(default_workers_count);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "DB index, WMPG and TAPC of assignment files");
  e->add_option("--config", config_files[e], "key=value configuration file; command-line flags win");
  mark_required(e->add_option("--assignments", ev.assignments, "One file per subject"))->check(CLI::ExistingFile);
  mark_required(e->add_option("--fibers", ev.fibers, "Fiber file per subject, same order"))->check(CLI::ExistingFile);
  e->add_option("--truth", ev.truth, "Ground-truth file per subject")->check(CLI::ExistingFile);
  mark_required(e->add_option("--atlas", ev.atlas))->check(CLI::ExistingDirectory);
  e->add_option("--labels", ev.labels, "Label volume for TAPC")->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Report file (default stdout)");
  e->add_option("--workers", ev.workers)->default_val(default_workers_count);

  DistmatArgs dm;
  auto* d = app.add_subcommand("distmat", "Pairwise MDF matrix (binary, or CSV for a .csv path)");
  d->add_option("--config", config_files[d], "key=value configuration file; command-line flags win");
  mark_required(d->add_option("--fibers", dm.fibers))->check(CLI::ExistingFile);
  mark_required(d->add_option("--out", dm.out));
  d->add_option("--points", dm.points)->capture_default_str();
  d->add_option("--workers", dm.workers)->default_val(default_workers_count);

  try {
    app.parse(argc, argv);
    for (CLI::App* sub : app.get_subcommands()) {
      if (!config_files[sub].empty()) apply_config_file(sub, config_files[sub]);
      check_required(sub);
    }
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, s);
    if (p->parsed()) return cmd_pretrain(pre, p);
    if (t->parsed()) return cmd_train(tr, t);
    if (c->parsed()) return cmd_cluster(cl, c);
    if (e->parsed()) return cmd_eval(ev, e);
    if (d->parsed()) return cmd_distmat(dm, d);
  } catch (const NumericError& err) {
    std::fprintf(stderr, "dfc: numeric failure: %s\n", err.what());
    return kNumeric;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "dfc: %s\n", err.what());
    return kData;
  }
  return kUsage;
}
