#include "adan/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace adan {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("config field '" + name("") + "' must be an object");
  }

  template <class T>
  std::optional<T> get(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + name(key) + "' has the wrong type: " + j_.at(key).dump());
    }
  }

  std::optional<Section> child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    return Section(j_.at(key), name(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      (void)v;
      if (!seen_.count(k)) throw ConfigError("unknown config field '" + name(k) + "'");
    }
  }

  std::string name(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

DataSpec parse_data(Section s, const std::filesystem::path& base) {
  DataSpec d;
  d.format = s.get<std::string>("format").value_or("idx");
  if (d.format != "idx" && d.format != "usps") {
    throw ConfigError("config field '" + s.name("format") + "' must be \"idx\" or \"usps\", got \"" + d.format + "\"");
  }
  const auto images = s.get<std::string>("images");
  const auto path = s.get<std::string>("path");
  if (images && path) throw ConfigError("config field '" + s.name("") + "' sets both 'images' and 'path'");
  if (!images && !path) throw ConfigError("config field '" + s.name("path") + "' is required");
  d.path = resolve(base, images ? *images : *path);
  if (auto labels = s.get<std::string>("labels")) d.labels = resolve(base, *labels);
  if (auto limit = s.get<long long>("limit")) {
    if (*limit <= 0) throw ConfigError("config field '" + s.name("limit") + "' must be positive");
    d.limit = static_cast<std::size_t>(*limit);
  }
  s.finish();
  return d;
}

void parse_train(Section s, TrainConfig& t) {
  if (auto v = s.get<int>("epochs")) t.epochs = *v;
  if (auto v = s.get<long long>("batch_size")) {
    if (*v <= 0) throw ConfigError("config field '" + s.name("batch_size") + "' must be positive");
    t.batch_size = static_cast<std::size_t>(*v);
  }
  if (auto v = s.get<double>("learning_rate")) t.learning_rate = *v;
  if (auto v = s.get<double>("momentum")) t.momentum = *v;
  if (auto v = s.get<double>("weight_decay")) t.weight_decay = *v;
  if (auto v = s.get<double>("lambda")) t.loss.lambda = *v;
  if (auto v = s.get<std::vector<double>>("exit_weights")) t.loss.exit_weights = *v;
  if (auto v = s.get<int>("eval_every")) t.eval_every = *v;
  if (auto v = s.get<std::vector<double>>("bandwidth_multipliers")) t.loss.bandwidth_multipliers = *v;
  if (auto v = s.get<long long>("max_steps_per_epoch")) {
    if (*v <= 0) throw ConfigError("config field '" + s.name("max_steps_per_epoch") + "' must be positive");
    t.max_steps_per_epoch = static_cast<std::size_t>(*v);
  }
  s.finish();
}

json data_json(const DataSpec& d) {
  json j{{"format", d.format}, {"path", d.path.string()}};
  if (d.labels) j["labels"] = d.labels->string();
  if (d.limit) j["limit"] = *d.limit;
  return j;
}

void require_file(const std::filesystem::path& p, const std::string& field) {
  if (!std::filesystem::is_regular_file(p)) {
    throw ConfigError("config field '" + field + "': file not found: " + p.string());
  }
}

void require_data(const std::optional<DataSpec>& d, const std::string& field, bool need_labels) {
  if (!d) throw ConfigError("config field '" + field + "' is required for this command");
  require_file(d->path, field + (d->format == "idx" ? ".images" : ".path"));
  if (d->format == "idx") {
    if (d->labels) require_file(*d->labels, field + ".labels");
    else if (need_labels) throw ConfigError("config field '" + field + ".labels' is required");
  } else if (d->labels) {
    throw ConfigError("config field '" + field + ".labels' is not used by the usps format (labels are inline)");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(j, "");
  if (auto s = root.child("source")) cfg.source = parse_data(*s, base_dir);
  if (auto s = root.child("target")) cfg.target = parse_data(*s, base_dir);
  if (auto s = root.child("eval")) cfg.eval = parse_data(*s, base_dir);
  if (auto s = root.child("train")) parse_train(*s, cfg.train);
  if (auto v = root.get<std::vector<std::uint64_t>>("seeds")) cfg.seeds = *v;
  if (auto v = root.get<std::vector<double>>("thresholds")) cfg.thresholds = *v;
  if (auto v = root.get<int>("repeats")) cfg.repeats = *v;
  if (auto v = root.get<std::string>("output_dir")) cfg.output_dir = resolve(base_dir, *v);
  if (auto v = root.get<bool>("deterministic")) cfg.deterministic = *v;
  root.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  if (cfg.source) j["source"] = data_json(*cfg.source);
  if (cfg.target) j["target"] = data_json(*cfg.target);
  if (cfg.eval) j["eval"] = data_json(*cfg.eval);
  const TrainConfig& t = cfg.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"lambda", t.loss.lambda},
                {"exit_weights", t.loss.exit_weights},
                {"eval_every", t.eval_every},
                {"bandwidth_multipliers", t.loss.bandwidth_multipliers},
                {"max_steps_per_epoch", t.max_steps_per_epoch ? json(*t.max_steps_per_epoch) : json(nullptr)}};
  j["seeds"] = cfg.seeds;
  j["thresholds"] = cfg.thresholds;
  j["repeats"] = cfg.repeats;
  j["output_dir"] = cfg.output_dir.string();
  j["deterministic"] = cfg.deterministic;
  return j.dump(2);
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.deterministic) cfg.deterministic = true;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.lambda) cfg.train.loss.lambda = *o.lambda;
  if (!o.thresholds.empty()) cfg.thresholds = o.thresholds;
  if (o.epochs) cfg.train.epochs = *o.epochs;
}

void validate_run_config(const RunConfig& cfg, Command command) {
  if (cfg.seeds.empty()) throw ConfigError("config field 'seeds' must not be empty");
  if (cfg.repeats < 3) throw ConfigError("config field 'repeats' must be at least 3");
  try {
    cfg.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config section 'train': ") + e.what());
  }
  switch (command) {
    case Command::Train:
      require_data(cfg.source, "source", true);
      require_data(cfg.target, "target", false);
      if (cfg.eval) require_data(cfg.eval, "eval", true);
      break;
    case Command::Eval:
      require_data(cfg.eval, "eval", true);
      break;
    case Command::Sweep:
      require_data(cfg.eval, "eval", true);
      if (cfg.thresholds.empty()) throw ConfigError("config field 'thresholds' must not be empty for a sweep");
      break;
  }
}

Dataset load_prepared(const DataSpec& spec, Domain domain, bool keep_labels) {
  Dataset d = spec.format == "usps" ? load_usps(spec.path, domain) : load_idx(spec.path, spec.labels, domain);
  if (spec.limit) d = take_first(d, *spec.limit);
  if (!keep_labels) d.labels.reset();
  return prepare_for_lenet(d);
}

}  // namespace adan
