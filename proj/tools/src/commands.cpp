#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "run_config.hpp"
#include "stablekd/experiments.hpp"
#include "stablekd/gradcheck.hpp"
#include "stablekd/random.hpp"
#include "stablekd/trainer.hpp"

#ifndef SKD_GIT_DESCRIBE
#define SKD_GIT_DESCRIBE "unknown"
#endif

namespace skd::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr double kGradTolerance = 1e-5;

// Seed streams shared with the experiment drivers.
constexpr std::uint64_t kTeacherInitStream = 10;
constexpr std::uint64_t kStudentInitStream = 11;
constexpr std::uint64_t kHeadInitStream = 7;
constexpr std::uint64_t kSubsetStream = 99;

struct Context {
  RunConfig config;
  std::size_t workers = 1;
  std::string command;
};

Architecture require_arch(const std::optional<fs::path>& path, const std::string& key) {
  if (!path) throw ConfigError("config key '" + key + "': required by this command");
  if (!fs::exists(*path)) throw DataError(key + " not found: " + path->string());
  return load_architecture(*path);
}

Network<float> build(const Architecture& arch) {
  return Network<float>::build(arch.layers, arch.input_shape, arch.classes);
}

Network<float> load_network(const Architecture& arch, const std::optional<fs::path>& checkpoint,
                            const std::string& key) {
  if (!checkpoint) throw ConfigError("config key '" + key + "': required by this command");
  if (!fs::exists(*checkpoint)) throw DataError(key + " not found: " + checkpoint->string());
  Network<float> net = build(arch);
  load_checkpoint(net, *checkpoint);
  return net;
}

Network<float> load_teacher(const RunConfig& c) {
  Network<float> teacher = load_network(require_arch(c.teacher_arch_file, "teacher_arch_file"),
                                        c.teacher_checkpoint, "teacher_checkpoint");
  teacher.freeze();
  return teacher;
}

Architecture arch_of(const Network<float>& net) {
  return Architecture{net.specs(), net.input_shape(), net.classes()};
}

void check_compatible(const Architecture& arch, const Dataset& data, const std::string& key) {
  if (arch.input_shape != data.sample_shape) {
    throw IncompatibilityError(key + " expects input " + arch.input_shape.str() +
                               " but the dataset provides " + data.sample_shape.str());
  }
  if (arch.classes != data.classes) {
    throw IncompatibilityError(key + " has " + std::to_string(arch.classes) +
                               " classes but the dataset has " + std::to_string(data.classes));
  }
}

ojson partition_json(const Partition& p) { return ojson(p.ends()); }

ojson dataset_json(const Dataset& train, const Dataset& val) {
  ojson j;
  j["train_size"] = train.size();
  j["val_size"] = val.size();
  j["classes"] = train.classes;
  j["sample_shape"] = train.sample_shape.dims();
  j["train_class_counts"] = train.class_counts();
  return j;
}

ojson provenance_base(const Context& ctx) {
  ojson j;
  j["command"] = ctx.command;
  j["version"] = build_version();
  j["workers"] = ctx.workers;
  j["config"] = ctx.config.resolved();
  return j;
}

void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

// Appends each epoch record to a JSONL file as it is produced.
class MetricsStream {
 public:
  explicit MetricsStream(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot write " + path.string());
  }
  void operator()(const MetricRecord& r) {
    out_ << metrics_json_line(r) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

RunOptions run_options(const Context& ctx, const OptimConfig& optim, MetricsStream* metrics) {
  RunOptions o;
  o.optim = optim;
  o.seed = ctx.config.seed;
  o.workers = ctx.workers;
  o.record_wall_time = ctx.config.record_wall_time;
  if (metrics) o.on_epoch = [metrics](const MetricRecord& r) { (*metrics)(r); };
  return o;
}

Dataset training_subset(const RunConfig& c, const Dataset& train) {
  if (c.subset_fraction >= 1.0) return train;
  return stratified_subset(train, c.subset_fraction, derive_seed(c.seed, kSubsetStream));
}

double lr_or(const std::optional<double>& lr, double fallback) { return lr ? *lr : fallback; }

// Stage-by-stage plan of a blockwise run.
ojson schedule_json(const Decomposition& initial, const StageSchedule& schedule, double max_lr) {
  ojson stages = ojson::array();
  Decomposition d = initial;
  for (std::size_t c = 0; c < schedule.stages(); ++c) {
    ojson s;
    s["stage"] = c;
    s["epochs"] = schedule.epochs[c];
    s["k"] = d.k();
    s["peak_lr"] = stage_peak_lr(c, max_lr);
    s["teacher_ends"] = partition_json(d.teacher);
    s["student_ends"] = partition_json(d.student);
    stages.push_back(s);
    if (c + 1 < schedule.stages()) d = recompose(d);
  }
  return stages;
}

void print_acc(std::ostream& out, const char* label, double acc) {
  out << label << ' ' << format_number(acc) << '\n';
}

int cmd_train_teacher(const Context& ctx, OutputDir& dir, std::ostream& out) {
  const RunConfig& c = ctx.config;
  const Architecture arch = require_arch(c.arch_file, "arch_file");
  LoadedData data = load_dataset(c);
  check_compatible(arch, data.train, "arch_file");
  const Dataset train = training_subset(c, data.train);
  const OptimConfig optim = c.optim(lr_or(c.max_lr, OptimConfig::baseline_defaults().max_lr));

  ojson prov = provenance_base(ctx);
  prov["dataset"] = dataset_json(train, data.val);
  prov["init_seed"] = derive_seed(c.seed, kTeacherInitStream);
  write_json(dir.file("provenance.json"), prov);

  Network<float> net = build(arch);
  net.init_params(derive_seed(c.seed, kTeacherInitStream));
  MetricsStream metrics(dir.file("metrics.jsonl"));
  const RunResult run = run_supervised(net, c.epochs, {&train, &data.val},
                                       run_options(ctx, optim, &metrics));
  save_checkpoint(net, dir.file("checkpoint.skdw"));
  write_text(dir.file("arch.json"), architecture_json(arch));
  write_text(dir.file("trace.csv"), run.trace.csv());
  print_acc(out, "final val_acc", run.metrics.back().val_acc);
  out << "checkpoint_hash " << checkpoint_hash(net) << '\n';
  return kExitOk;
}

int cmd_distill(const Context& ctx, OutputDir& dir, std::ostream& out) {
  const RunConfig& c = ctx.config;
  const Network<float> teacher = load_teacher(c);
  const Architecture student_arch = require_arch(c.arch_file, "arch_file");
  LoadedData data = load_dataset(c);
  check_compatible(arch_of(teacher), data.train, "teacher_arch_file");
  check_compatible(student_arch, data.train, "arch_file");
  const Dataset train = training_subset(c, data.train);
  const double max_lr = lr_or(c.max_lr, OptimConfig::stablekd_defaults().max_lr);
  const OptimConfig optim = c.optim(max_lr);

  DistillSetup setup = make_distill_setup(teacher, student_arch, c.k,
                                          derive_seed(c.seed, kStudentInitStream), c.boundaries);
  const StageSchedule schedule = StageSchedule::split(c.epochs, c.n);

  ojson prov = provenance_base(ctx);
  prov["dataset"] = dataset_json(train, data.val);
  prov["teacher_checkpoint_hash"] = checkpoint_hash(teacher);
  prov["partition"] = {{"k", setup.decomposition.k()},
                       {"teacher_ends", partition_json(setup.decomposition.teacher)},
                       {"student_ends", partition_json(setup.decomposition.student)},
                       {"projectors_inserted", setup.projectors_inserted}};
  prov["schedule"] = {{"stage_epochs", schedule.epochs},
                      {"stage_ks", ojson::array()},
                      {"stages", schedule_json(setup.decomposition, schedule, max_lr)}};
  for (const auto& s : prov["schedule"]["stages"]) prov["schedule"]["stage_ks"].push_back(s["k"]);
  prov["init_seed"] = derive_seed(c.seed, kStudentInitStream);
  write_json(dir.file("provenance.json"), prov);

  MetricsStream metrics(dir.file("metrics.jsonl"));
  const StableKDConfig run_config{setup.decomposition, schedule, c.lambda, c.temperature};
  const RunResult run = run_stablekd(teacher, setup.student, run_config, {&train, &data.val},
                                     run_options(ctx, optim, &metrics));
  save_checkpoint(setup.student, dir.file("student.skdw"));
  write_text(dir.file("student_arch.json"), architecture_json(arch_of(setup.student)));
  write_text(dir.file("trace.csv"), run.trace.csv());
  print_acc(out, "final val_acc", run.metrics.back().val_acc);
  out << "checkpoint_hash " << checkpoint_hash(setup.student) << '\n';
  return kExitOk;
}

int cmd_distill_vanilla(const Context& ctx, OutputDir& dir, std::ostream& out) {
  const RunConfig& c = ctx.config;
  const Network<float> teacher = load_teacher(c);
  const Architecture student_arch = require_arch(c.arch_file, "arch_file");
  LoadedData data = load_dataset(c);
  check_compatible(arch_of(teacher), data.train, "teacher_arch_file");
  check_compatible(student_arch, data.train, "arch_file");
  const Dataset train = training_subset(c, data.train);
  const OptimConfig optim = c.optim(lr_or(c.max_lr, OptimConfig::baseline_defaults().max_lr));

  ojson prov = provenance_base(ctx);
  prov["dataset"] = dataset_json(train, data.val);
  prov["teacher_checkpoint_hash"] = checkpoint_hash(teacher);
  prov["init_seed"] = derive_seed(c.seed, kStudentInitStream);
  write_json(dir.file("provenance.json"), prov);

  Network<float> student = build(student_arch);
  student.init_params(derive_seed(c.seed, kStudentInitStream));
  MetricsStream metrics(dir.file("metrics.jsonl"));
  const RunResult run = run_vanilla_kd(teacher, student, c.alpha, c.epochs, {&train, &data.val},
                                       run_options(ctx, optim, &metrics), c.temperature);
  save_checkpoint(student, dir.file("student.skdw"));
  write_text(dir.file("student_arch.json"), architecture_json(student_arch));
  write_text(dir.file("trace.csv"), run.trace.csv());
  print_acc(out, "final val_acc", run.metrics.back().val_acc);
  out << "checkpoint_hash " << checkpoint_hash(student) << '\n';
  return kExitOk;
}

int cmd_eval(const Context& ctx, OutputDir& dir, std::ostream& out) {
  const RunConfig& c = ctx.config;
  const Architecture arch = require_arch(c.arch_file, "arch_file");
  const Network<float> net = load_network(arch, c.checkpoint, "checkpoint");
  LoadedData data = load_dataset(c);
  check_compatible(arch, data.val, "arch_file");

  ojson prov = provenance_base(ctx);
  prov["dataset"] = dataset_json(data.train, data.val);
  write_json(dir.file("provenance.json"), prov);

  ojson result;
  result["checkpoint_hash"] = checkpoint_hash(net);
  result["train_acc"] = accuracy(net, data.train);
  result["val_acc"] = accuracy(net, data.val);
  write_json(dir.file("eval.json"), result);
  print_acc(out, "val_acc", result["val_acc"].get<double>());
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx, OutputDir& dir, std::ostream& out) {
  ojson prov = provenance_base(ctx);
  prov["tolerance"] = kGradTolerance;
  write_json(dir.file("provenance.json"), prov);

  const auto entries = run_gradcheck_suite(ctx.config.gradcheck_seeds);
  std::ostringstream csv;
  csv << "check,seeds,coordinates,max_error,worst_param,status\n";
  bool ok = true;
  for (const auto& e : entries) {
    std::string status = "pass";
    if (!e.error.empty()) {
      status = "oracle-error";
    } else if (e.report.max_error > kGradTolerance) {
      status = "fail";
    }
    ok = ok && status == "pass";
    csv << e.name << ',' << e.seeds << ',' << e.report.coordinates << ','
        << format_number(e.report.max_error) << ',' << e.report.worst_param << ',' << status << '\n';
    out << (status == "pass" ? "PASS " : "FAIL ") << e.name
        << " max_error=" << format_number(e.report.max_error);
    if (!e.error.empty()) out << " (" << e.error << ")";
    out << '\n';
  }
  write_text(dir.file("gradcheck.csv"), csv.str());
  return ok ? kExitOk : kExitNumerical;
}

bool wants(const StabilityConfig& s, const std::string& part) {
  for (const auto& p : s.parts) {
    if (p == part) return true;
  }
  return false;
}

// Cumulative head distance at the end of every epoch.
void add_epoch_cumulative(PlotData& plot, const std::string& series, const DistanceTrace& trace,
                          std::size_t steps_per_epoch) {
  for (std::size_t step = steps_per_epoch, epoch = 1; step <= trace.size();
       step += steps_per_epoch, ++epoch) {
    plot.add(epoch, series, trace.cumulative_at(step));
  }
}

int cmd_stability(const Context& ctx, OutputDir& dir, std::ostream& out) {
  const RunConfig& c = ctx.config;
  const StabilityConfig& s = c.stability;
  const Network<float> teacher = load_teacher(c);
  const Architecture student_arch = require_arch(c.arch_file, "arch_file");
  LoadedData data = load_dataset(c);
  check_compatible(arch_of(teacher), data.train, "teacher_arch_file");
  check_compatible(student_arch, data.train, "arch_file");
  const ToyTask task{training_subset(c, data.train), std::move(data.val)};

  std::optional<Network<float>> backbone;
  if (wants(s, "head_distance")) {
    backbone = load_network(student_arch, c.backbone_checkpoint, "backbone_checkpoint");
  }

  ojson prov = provenance_base(ctx);
  prov["dataset"] = dataset_json(task.train, task.val);
  prov["teacher_checkpoint_hash"] = checkpoint_hash(teacher);
  if (backbone) prov["backbone_checkpoint_hash"] = checkpoint_hash(*backbone);
  write_json(dir.file("provenance.json"), prov);

  std::ostringstream scores;
  scores << "part,series,score\n";

  if (wants(s, "fluctuation")) {
    FluctuationConfig fc;
    fc.max_lrs = s.fluctuation_lrs;
    fc.epochs = s.fluctuation_epochs;
    fc.alpha = c.alpha;
    fc.optim = c.optim(c.baseline_max_lr);
    fc.seed = c.seed;
    const auto curves = experiment_fluctuation(&teacher, student_arch, task, fc);
    write_text(dir.file("fluctuation.csv"), curves_plot(curves).csv());
    for (const auto& curve : curves) {
      scores << "fluctuation," << curve.label << ',' << format_number(curve.fluctuation) << '\n';
      out << "fluctuation " << curve.label << ' ' << format_number(curve.fluctuation) << '\n';
    }
  }

  if (wants(s, "head_distance")) {
    HeadDistanceConfig hc;
    hc.epochs = s.head_epochs;
    hc.alpha = c.alpha;
    hc.optim = c.optim(s.head_max_lr);
    hc.seed = c.seed;
    hc.head_seed = derive_seed(c.seed, kHeadInitStream);
    const HeadDistanceResult r = experiment_head_distance(&*backbone, &teacher, teacher, task, hc);
    const std::size_t steps_per_epoch = r.random_small.size() / hc.epochs;
    const std::size_t early = r.random_small.size() / 5;
    PlotData plot;
    const std::pair<const char*, const DistanceTrace*> traces[] = {
        {"random_small", &r.random_small},
        {"pretrained_small", &r.pretrained_small},
        {"pretrained_large", &r.pretrained_large}};
    for (const auto& [name, trace] : traces) {
      write_text(dir.file(std::string("head_trace_") + name + ".csv"), trace->csv());
      add_epoch_cumulative(plot, name, *trace, steps_per_epoch);
      const double early_distance = trace->cumulative_at(early);
      scores << "head_distance_first_20pct," << name << ',' << format_number(early_distance) << '\n';
      out << "head_distance " << name << ' ' << format_number(early_distance) << '\n';
    }
    write_text(dir.file("head_distance.csv"), plot.csv());
  }

  if (wants(s, "block_counts")) {
    BlockCountConfig bc;
    bc.ks = s.block_counts;
    bc.epochs = s.block_epochs;
    bc.lambda = c.lambda;
    bc.optim = c.optim(s.block_max_lr);
    bc.seed = c.seed;
    const auto curves = experiment_block_counts(teacher, student_arch, task, bc);
    write_text(dir.file("block_counts.csv"), curves_plot(curves).csv());
    for (const auto& curve : curves) {
      scores << "block_counts," << curve.label << ',' << format_number(curve.fluctuation) << '\n';
      out << "fluctuation " << curve.label << ' ' << format_number(curve.fluctuation) << '\n';
    }
  }

  write_text(dir.file("scores.csv"), scores.str());
  return kExitOk;
}

// One key per sample so subset membership can be compared across fractions.
std::multiset<std::string> sample_keys(const Dataset& d) {
  std::multiset<std::string> keys;
  const std::size_t width = d.sample_size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::string key(reinterpret_cast<const char*>(&d.labels[i]), sizeof(std::uint32_t));
    key.append(reinterpret_cast<const char*>(d.features.data() + i * width), width * sizeof(float));
    keys.insert(std::move(key));
  }
  return keys;
}

int cmd_subset_sweep(const Context& ctx, OutputDir& dir, std::ostream& out) {
  const RunConfig& c = ctx.config;
  const Network<float> teacher = load_teacher(c);
  const Architecture student_arch = require_arch(c.arch_file, "arch_file");
  LoadedData data = load_dataset(c);
  check_compatible(arch_of(teacher), data.train, "teacher_arch_file");
  check_compatible(student_arch, data.train, "arch_file");
  const double stablekd_lr = lr_or(c.max_lr, OptimConfig::stablekd_defaults().max_lr);
  const StageSchedule schedule = StageSchedule::split(c.epochs, c.n);

  std::vector<Dataset> subsets;
  for (double f : c.fractions) {
    subsets.push_back(stratified_subset(data.train, f, derive_seed(c.seed, kSubsetStream)));
  }
  ojson prov = provenance_base(ctx);
  prov["dataset"] = dataset_json(data.train, data.val);
  prov["teacher_checkpoint_hash"] = checkpoint_hash(teacher);
  prov["subset_seed"] = derive_seed(c.seed, kSubsetStream);
  ojson subset_info = ojson::array();
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    ojson s;
    s["fraction"] = c.fractions[i];
    s["size"] = subsets[i].size();
    s["class_counts"] = subsets[i].class_counts();
    if (i + 1 < subsets.size()) {
      const auto inner = sample_keys(subsets[i]);
      const auto outer = sample_keys(subsets[i + 1]);
      s["contained_in_next"] = std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
    }
    subset_info.push_back(s);
  }
  prov["subsets"] = subset_info;
  prov["schedule"] = {{"stage_epochs", schedule.epochs}};
  write_json(dir.file("provenance.json"), prov);

  std::ostringstream summary;
  summary << "fraction,scheme,val_acc\n";
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    const std::string frac = format_number(c.fractions[i]);
    for (const auto& scheme : c.schemes) {
      MetricsStream metrics(dir.file("metrics_" + scheme + "_" + frac + ".jsonl"));
      RunResult run;
      if (scheme == "stablekd") {
        DistillSetup setup = make_distill_setup(teacher, student_arch, c.k,
                                                derive_seed(c.seed, kStudentInitStream), c.boundaries);
        const StableKDConfig rc{setup.decomposition, schedule, c.lambda, c.temperature};
        run = run_stablekd(teacher, setup.student, rc, {&subsets[i], &data.val},
                           run_options(ctx, c.optim(stablekd_lr), &metrics));
      } else {
        Network<float> student = build(student_arch);
        student.init_params(derive_seed(c.seed, kStudentInitStream));
        run = run_vanilla_kd(teacher, student, c.alpha, c.epochs, {&subsets[i], &data.val},
                             run_options(ctx, c.optim(c.baseline_max_lr), &metrics), c.temperature);
      }
      const double acc = run.metrics.back().val_acc;
      summary << frac << ',' << scheme << ',' << format_number(acc) << '\n';
      out << "fraction " << frac << ' ' << scheme << " val_acc " << format_number(acc) << '\n';
    }
  }
  write_text(dir.file("summary.csv"), summary.str());
  return kExitOk;
}

using Handler = int (*)(const Context&, OutputDir&, std::ostream&);

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> table{
      {"train-teacher", cmd_train_teacher}, {"distill", cmd_distill},
      {"distill-vanilla", cmd_distill_vanilla}, {"eval", cmd_eval},
      {"gradcheck", cmd_gradcheck}, {"stability", cmd_stability},
      {"subset-sweep", cmd_subset_sweep}};
  return table;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train-teacher", "distill", "distill-vanilla", "eval",
                                              "gradcheck", "stability", "subset-sweep"};
  return names;
}

int exit_code_for(const Error& error) noexcept {
  switch (error.kind()) {
    case ErrorKind::Contract:
    case ErrorKind::Oracle:
      return kExitNumerical;
    default:
      return kExitConfig;
  }
}

std::size_t effective_workers(std::size_t requested, const char* cap_env) {
  if (requested == 0) throw ConfigError("worker count must be at least 1");
  if (!cap_env || !*cap_env) return requested;
  std::size_t cap = 0;
  std::istringstream in(cap_env);
  if (!(in >> cap) || !in.eof() || cap == 0) {
    throw ConfigError(std::string("SKD_THREADS must be a positive integer, got '") + cap_env + "'");
  }
  return std::min(requested, cap);
}

const char* build_version() noexcept { return SKD_GIT_DESCRIBE; }

OutputDir::OutputDir(fs::path target, bool overwrite) : target_(std::move(target)) {
  if (target_.filename().empty()) target_ = target_.parent_path();
  if (fs::exists(target_)) {
    if (!fs::is_directory(target_)) {
      throw ConfigError("output path exists and is not a directory: " + target_.string());
    }
    if (!fs::is_empty(target_) && !overwrite) {
      throw ConfigError("output directory is not empty: " + target_.string() +
                        " (pass --overwrite to replace it)");
    }
  }
  const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
  fs::create_directories(parent);
  staging_ = parent / ("." + target_.filename().string() + ".partial");
  fs::remove_all(staging_);
  fs::create_directory(staging_);
}

OutputDir::~OutputDir() {
  if (committed_) return;
  std::error_code ec;
  fs::remove_all(staging_, ec);
}

void OutputDir::commit() {
  if (fs::exists(target_)) fs::remove_all(target_);
  fs::rename(staging_, target_);
  committed_ = true;
}

int run_command(const Invocation& inv, std::ostream& out) {
  const auto it = handlers().find(inv.command);
  if (it == handlers().end()) throw ConfigError("unknown command '" + inv.command + "'");

  Context ctx;
  ctx.command = inv.command;
  if (inv.config_path) {
    ctx.config = load_run_config(*inv.config_path);
  } else if (inv.command != "gradcheck") {
    throw ConfigError("--config is required for " + inv.command);
  }
  if (inv.seed) ctx.config.seed = *inv.seed;
  if (inv.workers) ctx.config.workers = *inv.workers;
  ctx.workers = effective_workers(ctx.config.workers, std::getenv("SKD_THREADS"));

  OutputDir dir(inv.out_dir, inv.overwrite);
  const int code = it->second(ctx, dir, out);
  dir.commit();
  return code;
}

}  // namespace skd::cli
