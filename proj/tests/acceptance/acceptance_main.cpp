// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 when
// the set of failing criteria equals the --expect-fail set.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stablekd/datasets.hpp"
#include "stablekd/errors.hpp"
#include "stablekd/experiments.hpp"
#include "stablekd/gradcheck.hpp"
#include "stablekd/losses.hpp"
#include "stablekd/partition.hpp"
#include "stablekd/random.hpp"
#include "stablekd/schedule.hpp"
#include "stablekd/trainer.hpp"

namespace {

using namespace skd;

constexpr std::uint64_t kSeeds = 5;
constexpr std::size_t kRequiredWins = 4;
constexpr std::size_t kToyBatch = 32;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

std::string fmt_sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

Network<float> build(const Architecture& a) { return Network<float>::build(a.layers, a.input_shape, a.classes); }

RunOptions toy_options(double max_lr, std::uint64_t seed) {
  RunOptions o;
  o.optim = {max_lr, 0.9, 5e-4, kToyBatch};
  o.seed = seed;
  o.record_wall_time = false;
  o.track_distance = false;
  return o;
}

// Shared toy task, teacher and small pretrained backbone, trained on demand.
class ToyWorld {
 public:
  ToyWorld() : task_(make_toy_task({})), teacher_arch_(toy_teacher_arch(8, 8)), student_arch_(toy_student_arch(8, 8)) {}

  const ToyTask& task() const { return task_; }
  const Architecture& student_arch() const { return student_arch_; }

  const Network<float>& teacher() {
    if (!teacher_) {
      const auto t0 = std::chrono::steady_clock::now();
      Network<float> net = build(teacher_arch_);
      net.init_params(3);
      run_supervised(net, 40, {&task_.train, &task_.val}, toy_options(0.025, 0));
      net.freeze();
      teacher_ = std::move(net);
      std::cout << "  teacher val_acc " << fmt(accuracy(*teacher_, task_.val)) << " trained in "
                << fmt(seconds_since(t0), 1) << " s\n";
    }
    return *teacher_;
  }

  const Network<float>& small_backbone() {
    if (!small_) {
      Network<float> net = build(student_arch_);
      net.init_params(5);
      run_supervised(net, 40, {&task_.train, &task_.val}, toy_options(0.025, 0));
      small_ = std::move(net);
      std::cout << "  small backbone val_acc " << fmt(accuracy(*small_, task_.val)) << '\n';
    }
    return *small_;
  }

 private:
  ToyTask task_;
  Architecture teacher_arch_, student_arch_;
  std::optional<Network<float>> teacher_, small_;
};

// 1. Finite-difference oracle over every op and loss.
Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradcheck_suite(10);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name, failures;
  for (const auto& e : entries) {
    if (!e.error.empty() || e.report.max_error > 1e-5 || e.seeds < 10) failures += " " + e.name;
    if (e.report.max_error >= worst) {
      worst = e.report.max_error;
      worst_name = e.name;
    }
  }
  return {failures.empty() && elapsed < 60.0,
          std::to_string(entries.size()) + " checks x 10 seeds, worst " + fmt_sci(worst) + " (" + worst_name +
              "), " + fmt(elapsed, 2) + " s" + (failures.empty() ? "" : ", failing:" + failures)};
}

struct DoublePair {
  Network<double> teacher, student;
};

DoublePair double_pair(std::uint64_t seed) {
  const Architecture ta = toy_teacher_arch(4, 8), sa = toy_student_arch(4, 8);
  DoublePair p{Network<double>::build(ta.layers, ta.input_shape, ta.classes),
               Network<double>::build(sa.layers, sa.input_shape, sa.classes)};
  p.teacher.init_params(derive_seed(seed, 1));
  p.teacher.freeze();
  p.student.init_params(derive_seed(seed, 2));
  return p;
}

Tensor<double> random_images(std::size_t n, Rng& rng) {
  Tensor<double> x(Shape{n, 1, 8, 8}, 0.0);
  for (double& v : x.values()) v = rng.uniform();
  return x;
}

std::vector<std::uint32_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::uint32_t> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<std::uint32_t>(rng.below(classes)));
  return labels;
}

// 2. Each block's parameters see only their own term, bitwise.
Outcome block_isolation() {
  std::size_t compared = 0;
  for (std::size_t k : {2u, 3u, 5u}) {
    DoublePair p = double_pair(k);
    Rng rng(derive_seed(k, 3));
    const auto x = random_images(6, rng);
    const auto labels = random_labels(6, 4, rng);
    const Decomposition d{make_partition(p.teacher, k), make_partition(p.student, k)};
    Tape<double> full;
    const auto total = stablekd_loss(full, x, labels, p.teacher, p.student, d, {});
    const GradientMap<double> g_total = full.backward(total.total);
    for (std::size_t j = 0; j < k; ++j) {
      Tape<double> own;
      const auto single = stablekd_loss(own, x, labels, p.teacher, p.student, d, {});
      const GradientMap<double> g_own = own.backward(single.terms[j]);
      std::set<std::string> in_block;
      for (std::size_t slot : p.student.parameter_indices(d.student.block_begin(j), d.student.block_end(j))) {
        in_block.insert(p.student.parameters()[slot].id);
      }
      for (const auto& id : in_block) {
        if (!(g_total.at(id) == g_own.at(id))) {
          return {false, "k=" + std::to_string(k) + " block " + std::to_string(j) + " gradient differs on " + id};
        }
        ++compared;
      }
      for (const auto& [id, g] : g_own) {
        if (in_block.count(id)) continue;
        for (double v : g.values()) {
          if (v != 0.0) return {false, "k=" + std::to_string(k) + " term " + std::to_string(j) + " leaks into " + id};
        }
      }
    }
  }
  return {true, "k in {2,3,5}, " + std::to_string(compared) + " parameter tensors bitwise equal, cross terms zero"};
}

// 3. Recompose halves block counts and leaves the student untouched.
Outcome recomposition(ToyWorld& world) {
  for (std::size_t k = 1; k <= 16; ++k) {
    std::vector<std::size_t> ends;
    for (std::size_t i = 1; i <= k; ++i) ends.push_back(2 * i);
    const Partition r = recompose(Partition(ends));
    if (r.k() != (k + 1) / 2 || r.ends().back() != ends.back()) {
      return {false, "recompose(" + std::to_string(k) + ") has " + std::to_string(r.k()) + " blocks"};
    }
  }
  const ToyTask& task = world.task();
  DistillSetup setup = make_distill_setup(world.teacher(), world.student_arch(), 5, 11);
  const Network<float>& student = setup.student;
  std::vector<std::size_t> probe_idx(16);
  for (std::size_t i = 0; i < probe_idx.size(); ++i) probe_idx[i] = i;
  const Tensor<float> probe = task.val.gather<float>(probe_idx);
  std::size_t boundaries = 0;
  bool same = true;
  Decomposition current = setup.decomposition;
  const StageSchedule schedule{{1, 1, 1}};
  RunOptions o = toy_options(0.125, 0);
  o.on_epoch = [&](const MetricRecord& m) {
    if (m.stage + 1 >= schedule.stages()) return;
    const auto bytes = encode_checkpoint(student);
    const Tensor<float> before = forward_prefix(student, probe, current.k(), current.student).tensor;
    const Decomposition next = recompose(current);
    validate(next, world.teacher(), student);
    const Tensor<float> after = forward_prefix(student, probe, next.k(), next.student).tensor;
    same = same && bytes == encode_checkpoint(student) && before == after && before == student.evaluate(probe);
    current = next;
    ++boundaries;
  };
  const RunResult run = run_stablekd(world.teacher(), setup.student, {setup.decomposition, schedule, 1.0, 1.0},
                                     {&task.train, &task.val}, o);
  const bool final_matches = run.final_decomposition.teacher == current.teacher;
  return {same && boundaries == 2 && final_matches,
          "k=1..16 give ceil(k/2); " + std::to_string(boundaries) +
              " stage boundaries with identical outputs and checkpoint bytes"};
}

// 4. k=1 with matched lambda reduces to vanilla KD.
Outcome degenerate_equivalence() {
  double worst = 0.0;
  Rng rng(2024);
  DoublePair p = double_pair(0);
  for (std::size_t batch = 0; batch < 100; ++batch) {
    if (batch % 10 == 0) p = double_pair(batch);
    const double alpha = 0.05 + 0.9 * rng.uniform();
    const std::size_t n = 2 + rng.below(7);
    const auto x = random_images(n, rng);
    const auto labels = random_labels(n, 4, rng);
    const Decomposition d{make_partition(p.teacher, 1), make_partition(p.student, 1)};
    Tape<double> t;
    const double total = stablekd_loss(t, x, labels, p.teacher, p.student, d, {alpha / (1.0 - alpha), 1.0})
                             .breakdown.total;
    Tape<double> ref;
    const double vanilla =
        vanilla_kd_loss(ref.constant(p.student.evaluate(x)), ref.constant(p.teacher.evaluate(x)), labels, alpha)
            .value()
            .item();
    worst = std::max(worst, std::abs((1.0 - alpha) * total - vanilla) / std::abs(vanilla));
  }
  return {worst <= 1e-12, "100 batches, worst relative gap " + fmt_sci(worst)};
}

// 5. Learning-rate schedule at the checkpoints of each stage.
Outcome scheduler() {
  const StageSchedule s = StageSchedule::split(20, 2);
  if (s.epochs != std::vector<std::size_t>{6, 6, 8}) return {false, "split(20, 2) is not 6/6/8"};
  const double max_lr = 0.5, base = max_lr / 25.0;
  const std::size_t spe = 10;
  std::size_t begin = 0, checked = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t steps = s.epochs[c] * spe;
    const double h = static_cast<double>(steps) / 2.0;
    const double peak = max_lr / std::pow(2.0, static_cast<double>(c));
    auto closed = [&](std::size_t t) {
      const double td = static_cast<double>(t);
      return td < h ? base + (peak - base) * (td / h) : peak - (peak - base) * ((td - h) / h);
    };
    for (std::size_t t : {std::size_t{0}, steps / 2, steps - 1}) {
      if (lr_at(begin + t, s, spe, max_lr) != closed(t)) {
        return {false, "stage " + std::to_string(c) + " step " + std::to_string(t) + " differs"};
      }
      ++checked;
    }
    if (lr_at(begin, s, spe, max_lr) != base || lr_at(begin + steps / 2, s, spe, max_lr) != peak) {
      return {false, "stage " + std::to_string(c) + " start or peak off"};
    }
    begin += steps;
  }
  return {true, "stages 6/6/8, peaks 0.5/0.25/0.125, " + std::to_string(checked) + " checkpoints exact"};
}

// 6. Reruns and worker counts give identical bytes.
Outcome determinism(ToyWorld& world) {
  const ToyTask& task = world.task();
  auto stable = [&](std::size_t workers) {
    DistillSetup setup = make_distill_setup(world.teacher(), world.student_arch(), 5, 11);
    RunOptions o = toy_options(0.125, 1);
    o.workers = workers;
    o.track_distance = true;
    const RunResult r = run_stablekd(world.teacher(), setup.student,
                                     {setup.decomposition, StageSchedule{{1}}, 1.0, 1.0}, {&task.train, &task.val}, o);
    return std::make_pair(metrics_jsonl(r.metrics), encode_checkpoint(setup.student));
  };
  auto vanilla = [&] {
    Network<float> student = build(world.student_arch());
    student.init_params(11);
    const RunResult r =
        run_vanilla_kd(world.teacher(), student, 0.5, 1, {&task.train, &task.val}, toy_options(0.025, 1));
    return std::make_pair(metrics_jsonl(r.metrics), encode_checkpoint(student));
  };
  const auto a = stable(1), b = stable(1), c = stable(5);
  const bool rerun = a == b && vanilla() == vanilla();
  const bool workers = a.second == c.second && a.first == c.first;
  return {rerun && workers, std::string("rerun ") + (rerun ? "identical" : "differs") + ", workers 1 vs 5 " +
                                (workers ? "identical" : "differ") + " after one epoch"};
}

// 7. Head movement on random versus pretrained backbones.
Outcome head_distance(ToyWorld& world) {
  const Network<float>& small = world.small_backbone();
  const Network<float>& teacher = world.teacher();
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t wins = 0;
  std::string per_seed;
  double worst_ratio = 1.0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    HeadDistanceConfig hc;
    hc.seed = seed;
    hc.head_seed = derive_seed(seed, 7);
    hc.optim = {0.025, 0.9, 5e-4, kToyBatch};
    const HeadDistanceResult r = experiment_head_distance(&small, &teacher, teacher, world.task(), hc);
    const std::size_t early = r.random_small.size() / 5;
    const double rnd = r.random_small.cumulative_at(early);
    const double ps = r.pretrained_small.cumulative_at(early);
    const double pl = r.pretrained_large.cumulative_at(early);
    wins += (rnd > ps && rnd > pl) ? 1 : 0;
    worst_ratio = std::max(worst_ratio, std::max(ps, pl) / std::min(ps, pl));
    per_seed += " " + fmt(rnd, 2) + "/" + fmt(ps, 2) + "/" + fmt(pl, 2);
  }
  const double elapsed = seconds_since(t0);
  return {wins >= kRequiredWins && elapsed < 300.0,
          std::to_string(wins) + "/5 seeds random > both pretrained; first-20% distance random/small/large:" +
              per_seed + "; pretrained ratio " + fmt(worst_ratio, 2) + "; " + fmt(elapsed, 0) + " s"};
}

// 8. Blockwise runs fluctuate no more than the single-block run.
Outcome fluctuation(ToyWorld& world) {
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    BlockCountConfig bc;
    bc.ks = {1, 3, 5};
    bc.epochs = 40;
    bc.seed = seed;
    bc.optim = {0.0625, 0.9, 5e-4, kToyBatch};
    const auto curves = experiment_block_counts(world.teacher(), world.student_arch(), world.task(), bc);
    const double k1 = curves[0].fluctuation, k3 = curves[1].fluctuation, k5 = curves[2].fluctuation;
    wins += (k3 <= k1 && k5 <= k1) ? 1 : 0;
    per_seed += " " + fmt(k1, 2) + "/" + fmt(k3, 2) + "/" + fmt(k5, 2);
  }
  return {wins >= kRequiredWins,
          std::to_string(wins) + "/5 seeds with k=3 and k=5 <= k=1; scores k1/k3/k5:" + per_seed};
}

std::pair<double, double> stablekd_vs_vanilla(ToyWorld& world, const Dataset& train, std::uint64_t seed) {
  const Dataset& val = world.task().val;
  Network<float> student = build(world.student_arch());
  student.init_params(derive_seed(seed, 11));
  const RunResult vanilla =
      run_vanilla_kd(world.teacher(), student, 0.5, 15, {&train, &val}, toy_options(0.025, seed));
  DistillSetup setup = make_distill_setup(world.teacher(), world.student_arch(), 3, derive_seed(seed, 11));
  const RunResult stable = run_stablekd(world.teacher(), setup.student,
                                        {setup.decomposition, StageSchedule::split(15, 1), 1.0, 1.0},
                                        {&train, &val}, toy_options(0.125, seed));
  return {stable.metrics.back().val_acc, vanilla.metrics.back().val_acc};
}

// 9. StableKD-3/1 against vanilla KD at a 15-epoch budget.
Outcome convergence(ToyWorld& world) {
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const auto [s, v] = stablekd_vs_vanilla(world, world.task().train, seed);
    wins += s >= v ? 1 : 0;
    per_seed += " " + fmt(s) + "/" + fmt(v);
  }
  return {wins >= kRequiredWins, std::to_string(wins) + "/5 seeds StableKD >= vanilla; val_acc stablekd/vanilla:" + per_seed};
}

// 10. The same comparison on a nested 40% stratified subset.
Outcome data_efficiency(ToyWorld& world) {
  std::size_t wins = 0;
  bool nested = true;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const std::uint64_t subset_seed = derive_seed(seed, 99);
    const Dataset sub = stratified_subset(world.task().train, 0.4, subset_seed);
    const Dataset smaller = stratified_subset(world.task().train, 0.2, subset_seed);
    auto keys = [](const Dataset& d) {
      std::multiset<std::vector<float>> k;
      for (std::size_t i = 0; i < d.size(); ++i) {
        k.insert(std::vector<float>(d.features.begin() + static_cast<long>(i * d.sample_size()),
                                    d.features.begin() + static_cast<long>((i + 1) * d.sample_size())));
      }
      return k;
    };
    const auto outer = keys(sub), inner = keys(smaller);
    nested = nested && std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
    const auto [s, v] = stablekd_vs_vanilla(world, sub, seed);
    wins += s >= v ? 1 : 0;
    per_seed += " " + fmt(s) + "/" + fmt(v);
  }
  return {wins >= kRequiredWins && nested, std::to_string(wins) + "/5 seeds StableKD >= vanilla at 0.4 (subsets " +
                                               (nested ? "nested" : "NOT nested") + "); val_acc:" + per_seed};
}

// 11. SKD1 round trip and rejection of damaged files.
Outcome skd1_format() {
  const Dataset images = gen_tiles(4, 6, 8, 0.3, 1);
  const auto bytes = encode_skd(images);
  const auto path = std::filesystem::temp_directory_path() / "skd_acceptance.skd";
  save_skd(images, path);
  const Dataset loaded = load_skd(path);
  std::filesystem::remove(path);
  if (!(loaded == images) || encode_skd(loaded) != bytes) return {false, "round trip changed the bytes"};
  std::size_t rejected = 0;
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    try {
      decode_skd({bytes.begin(), bytes.begin() + static_cast<long>(len)});
      return {false, "truncation to " + std::to_string(len) + " bytes accepted"};
    } catch (const FormatError& e) {
      if (e.offset() > len) return {false, "truncation error positioned past the end"};
      ++rejected;
    }
  }
  Rng rng(11);
  std::size_t fuzzed = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    auto damaged = bytes;
    damaged[rng.below(damaged.size())] = static_cast<std::uint8_t>(rng.below(256));
    damaged.resize(rng.below(damaged.size() + 1));
    try {
      const Dataset d = decode_skd(damaged);
      for (auto l : d.labels) {
        if (l >= d.classes) return {false, "fuzzed file produced an out-of-range label"};
      }
    } catch (const FormatError&) {
      ++fuzzed;
    }
  }
  return {true, "byte-stable round trip; " + std::to_string(rejected) + " truncations and " +
                    std::to_string(fuzzed) + " fuzzed files rejected with positioned errors"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, expect_fail;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail");
  CLI11_PARSE(app, argc, argv);

  ToyWorld world;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"block gradient isolation", block_isolation},
      {"recomposition", [&] { return recomposition(world); }},
      {"degenerate equivalence", degenerate_equivalence},
      {"scheduler", scheduler},
      {"determinism and parallel equivalence", [&] { return determinism(world); }},
      {"head distance", [&] { return head_distance(world); }},
      {"fluctuation", [&] { return fluctuation(world); }},
      {"convergence", [&] { return convergence(world); }},
      {"data efficiency", [&] { return data_efficiency(world); }},
      {"SKD1 format", skd1_format},
  };

  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    if (!outcome.pass) failed.insert(id);
    std::cout << (outcome.pass ? "PASS " : "FAIL ") << id << ' ' << criteria[i].first << ": " << outcome.detail
              << std::endl;
  }

  std::set<int> expected;
  for (int id : expect_fail) {
    if (only.empty() || std::find(only.begin(), only.end(), id) != only.end()) expected.insert(id);
  }
  if (failed != expected) {
    std::cout << "failing criteria differ from the expected set\n";
    return 1;
  }
  return 0;
}
