#include "run_config.hpp"

#include <algorithm>
#include <concepts>
#include <fstream>
#include <set>
#include <sstream>

#include "stablekd/errors.hpp"
#include "stablekd/experiments.hpp"
#include "stablekd/random.hpp"

namespace skd::cli {

namespace {

using json = nlohmann::json;

// Typed access to one JSON object; remembers which keys were consumed so
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string prefix) : object_(object), prefix_(std::move(prefix)) {
    if (!object_.is_object()) fail_path(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  template <std::unsigned_integral U>
  void read(const std::string& key, U& out) {
    if (const json* v = find(key)) out = static_cast<U>(as_count(*v, path(key)));
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_number(*v, path(key));
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail_path(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) out = as_string(*v, path(key));
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) fail_path(path(it.key()), "unknown config key");
    }
  }

  [[noreturn]] static void fail_path(const std::string& key_path, const std::string& what) {
    throw ConfigError("config key '" + key_path + "': " + what);
  }

  static std::uint64_t as_count(const json& v, const std::string& key_path) {
    if (!v.is_number_unsigned()) fail_path(key_path, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  static double as_number(const json& v, const std::string& key_path) {
    if (!v.is_number()) fail_path(key_path, "expected a number");
    return v.get<double>();
  }
  static std::string as_string(const json& v, const std::string& key_path) {
    if (!v.is_string()) fail_path(key_path, "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& object_;
  std::string prefix_;
  std::set<std::string> seen_;
};

template <typename T, typename Convert>
std::vector<T> read_list(const json& v, const std::string& key_path, Convert convert) {
  if (!v.is_array()) ObjectReader::fail_path(key_path, "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(convert(v[i], key_path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  const std::filesystem::path p(value);
  return p.is_absolute() ? p : base / p;
}

void read_path(ObjectReader& r, const std::string& key, const std::filesystem::path& base,
               std::optional<std::filesystem::path>& out) {
  if (const json* v = r.find(key)) out = resolve(base, ObjectReader::as_string(*v, r.path(key)));
}

void require(bool ok, const std::string& key_path, const std::string& what) {
  if (!ok) ObjectReader::fail_path(key_path, what);
}

DatasetSource parse_dataset(const json& v, const std::filesystem::path& base) {
  DatasetSource src;
  if (v.is_string()) {
    src.path = resolve(base, v.get<std::string>());
    return src;
  }
  ObjectReader r(v, "dataset");
  std::string path;
  r.read("path", path);
  r.read("generator", src.generator);
  r.read("classes", src.classes);
  r.read("per_class", src.per_class);
  r.read("side", src.side);
  r.read("noise", src.noise);
  r.read("seed", src.seed);
  r.read("split_seed", src.split_seed);
  r.finish();
  if (!path.empty()) {
    require(src.generator.empty(), "dataset.generator", "cannot be combined with dataset.path");
    src.path = resolve(base, path);
  } else {
    require(src.generator == "tiles" || src.generator == "spirals", "dataset.generator",
            "expected \"tiles\" or \"spirals\" (or give dataset.path)");
  }
  require(src.noise >= 0.0, "dataset.noise", "must be non-negative");
  return src;
}

StabilityConfig parse_stability(const json& v) {
  StabilityConfig s;
  ObjectReader r(v, "stability");
  if (const json* p = r.find("parts")) {
    s.parts = read_list<std::string>(*p, "stability.parts", ObjectReader::as_string);
    for (std::size_t i = 0; i < s.parts.size(); ++i) {
      const auto& part = s.parts[i];
      require(part == "fluctuation" || part == "head_distance" || part == "block_counts",
              "stability.parts[" + std::to_string(i) + "]",
              "expected fluctuation, head_distance or block_counts");
    }
  }
  if (const json* p = r.find("fluctuation_lrs")) {
    s.fluctuation_lrs = read_list<double>(*p, "stability.fluctuation_lrs", ObjectReader::as_number);
  }
  r.read("fluctuation_epochs", s.fluctuation_epochs);
  r.read("head_epochs", s.head_epochs);
  r.read("head_max_lr", s.head_max_lr);
  if (const json* p = r.find("block_counts")) {
    s.block_counts = read_list<std::size_t>(*p, "stability.block_counts", ObjectReader::as_count);
  }
  r.read("block_epochs", s.block_epochs);
  r.read("block_max_lr", s.block_max_lr);
  r.finish();
  return s;
}

}  // namespace

OptimConfig RunConfig::optim(double lr) const {
  OptimConfig o{lr, momentum, weight_decay, batch_size};
  o.validate();
  return o;
}

nlohmann::ordered_json RunConfig::resolved() const {
  nlohmann::ordered_json j;
  auto path_or_null = [](const std::optional<std::filesystem::path>& p) {
    return p ? nlohmann::ordered_json(p->string()) : nlohmann::ordered_json(nullptr);
  };
  j["arch_file"] = path_or_null(arch_file);
  j["teacher_arch_file"] = path_or_null(teacher_arch_file);
  j["teacher_checkpoint"] = path_or_null(teacher_checkpoint);
  j["checkpoint"] = path_or_null(checkpoint);
  j["backbone_checkpoint"] = path_or_null(backbone_checkpoint);
  j["k"] = k;
  j["n"] = n;
  j["epochs"] = epochs;
  j["max_lr"] = max_lr ? nlohmann::ordered_json(*max_lr) : nlohmann::ordered_json(nullptr);
  j["baseline_max_lr"] = baseline_max_lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["lambda"] = lambda;
  j["alpha"] = alpha;
  j["temperature"] = temperature;
  j["seed"] = seed;
  j["workers"] = workers;
  j["record_wall_time"] = record_wall_time;
  if (has_dataset) {
    nlohmann::ordered_json d;
    if (dataset.path) {
      d["path"] = dataset.path->string();
      d["split_seed"] = dataset.split_seed;
    } else {
      d["generator"] = dataset.generator;
      d["classes"] = dataset.classes;
      d["per_class"] = dataset.per_class;
      if (dataset.generator == "tiles") d["side"] = dataset.side;
      d["noise"] = dataset.noise;
      d["seed"] = dataset.seed;
    }
    j["dataset"] = d;
  } else {
    j["dataset"] = nullptr;
  }
  j["val_fraction"] = val_fraction;
  j["subset_fraction"] = subset_fraction;
  j["boundaries"] = boundaries ? nlohmann::ordered_json(*boundaries) : nlohmann::ordered_json(nullptr);
  j["fractions"] = fractions;
  j["schemes"] = schemes;
  j["gradcheck_seeds"] = gradcheck_seeds;
  nlohmann::ordered_json s;
  s["parts"] = stability.parts;
  s["fluctuation_lrs"] = stability.fluctuation_lrs;
  s["fluctuation_epochs"] = stability.fluctuation_epochs;
  s["head_epochs"] = stability.head_epochs;
  s["head_max_lr"] = stability.head_max_lr;
  s["block_counts"] = stability.block_counts;
  s["block_epochs"] = stability.block_epochs;
  s["block_max_lr"] = stability.block_max_lr;
  j["stability"] = s;
  return j;
}

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader r(root, "");
  read_path(r, "arch_file", base_dir, c.arch_file);
  read_path(r, "teacher_arch_file", base_dir, c.teacher_arch_file);
  read_path(r, "teacher_checkpoint", base_dir, c.teacher_checkpoint);
  read_path(r, "checkpoint", base_dir, c.checkpoint);
  read_path(r, "backbone_checkpoint", base_dir, c.backbone_checkpoint);
  r.read("k", c.k);
  r.read("n", c.n);
  r.read("epochs", c.epochs);
  if (const json* v = r.find("max_lr")) c.max_lr = ObjectReader::as_number(*v, "max_lr");
  r.read("baseline_max_lr", c.baseline_max_lr);
  r.read("momentum", c.momentum);
  r.read("weight_decay", c.weight_decay);
  r.read("batch_size", c.batch_size);
  r.read("lambda", c.lambda);
  r.read("alpha", c.alpha);
  r.read("temperature", c.temperature);
  r.read("seed", c.seed);
  r.read("workers", c.workers);
  r.read("record_wall_time", c.record_wall_time);
  if (const json* v = r.find("dataset")) {
    c.dataset = parse_dataset(*v, base_dir);
    c.has_dataset = true;
  }
  r.read("val_fraction", c.val_fraction);
  r.read("subset_fraction", c.subset_fraction);
  if (const json* v = r.find("boundaries")) {
    c.boundaries = read_list<std::size_t>(*v, "boundaries", ObjectReader::as_count);
  }
  if (const json* v = r.find("fractions")) {
    c.fractions = read_list<double>(*v, "fractions", ObjectReader::as_number);
  }
  if (const json* v = r.find("schemes")) {
    c.schemes = read_list<std::string>(*v, "schemes", ObjectReader::as_string);
  }
  r.read("gradcheck_seeds", c.gradcheck_seeds);
  if (const json* v = r.find("stability")) c.stability = parse_stability(*v);
  r.finish();

  require(c.k >= 1, "k", "must be at least 1");
  require(c.epochs >= 1, "epochs", "must be at least 1");
  require(c.epochs >= c.n + 1, "epochs", "must give every one of the n + 1 stages an epoch");
  require(!c.max_lr || *c.max_lr > 0.0, "max_lr", "must be positive");
  require(c.baseline_max_lr > 0.0, "baseline_max_lr", "must be positive");
  require(c.momentum >= 0.0 && c.momentum < 1.0, "momentum", "must lie in [0, 1)");
  require(c.weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(c.batch_size >= 1, "batch_size", "must be at least 1");
  require(c.lambda >= 0.0, "lambda", "must be non-negative");
  require(c.alpha > 0.0 && c.alpha < 1.0, "alpha", "must lie in (0, 1)");
  require(c.temperature > 0.0, "temperature", "must be positive");
  require(c.workers >= 1, "workers", "must be at least 1");
  require(c.val_fraction > 0.0 && c.val_fraction < 1.0, "val_fraction", "must lie in (0, 1)");
  require(c.subset_fraction > 0.0 && c.subset_fraction <= 1.0, "subset_fraction",
          "must lie in (0, 1]");
  require(!c.fractions.empty(), "fractions", "must not be empty");
  for (std::size_t i = 0; i < c.fractions.size(); ++i) {
    require(c.fractions[i] > 0.0 && c.fractions[i] <= 1.0, "fractions[" + std::to_string(i) + "]",
            "must lie in (0, 1]");
  }
  require(std::is_sorted(c.fractions.begin(), c.fractions.end()), "fractions",
          "must be in increasing order");
  require(!c.schemes.empty(), "schemes", "must not be empty");
  for (std::size_t i = 0; i < c.schemes.size(); ++i) {
    require(c.schemes[i] == "stablekd" || c.schemes[i] == "vanilla",
            "schemes[" + std::to_string(i) + "]", "expected \"stablekd\" or \"vanilla\"");
  }
  require(c.gradcheck_seeds >= 1, "gradcheck_seeds", "must be at least 1");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.parent_path());
}

LoadedData load_dataset(const RunConfig& config) {
  if (!config.has_dataset) throw ConfigError("config key 'dataset': required by this command");
  const DatasetSource& src = config.dataset;
  if (src.path) {
    if (!std::filesystem::exists(*src.path)) {
      throw DataError("dataset file not found: " + src.path->string());
    }
    auto [train, val] = train_val_split(load_skd(*src.path), config.val_fraction, src.split_seed);
    return {std::move(train), std::move(val)};
  }
  if (src.generator == "tiles") {
    ToyTaskConfig tc;
    tc.classes = src.classes;
    tc.per_class = src.per_class;
    tc.side = src.side;
    tc.noise = src.noise;
    tc.val_fraction = config.val_fraction;
    tc.seed = src.seed;
    ToyTask task = make_toy_task(tc);
    return {std::move(task.train), std::move(task.val)};
  }
  const Dataset all = gen_spirals(src.classes, src.per_class, src.noise, derive_seed(src.seed, 1));
  auto [train, val] = train_val_split(all, config.val_fraction, derive_seed(src.seed, 2));
  return {std::move(train), std::move(val)};
}

}  // namespace skd::cli
