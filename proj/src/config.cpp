#include "psl/config.hpp"

#include "psl/random.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace psl {

namespace {

std::string to_string(SeedPolicy policy) { return policy == SeedPolicy::derived ? "derived" : "shared"; }

SeedPolicy parse_seed_policy(const std::string& name) {
  if (name == "derived") return SeedPolicy::derived;
  if (name == "shared") return SeedPolicy::shared;
  throw std::invalid_argument("unknown seed policy '" + name + "'");
}

/// Reads keys from one JSON object and remembers which were consumed.
class Section {
 public:
  Section(const nlohmann::json& doc, std::string path) : path_(std::move(path)) {
    if (doc.is_null()) return;
    if (!doc.is_object()) throw std::invalid_argument("config " + display() + " must be an object");
    doc_ = &doc;
  }

  template <class T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (doc_ == nullptr || !doc_->contains(key)) return;
    try {
      target = doc_->at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config " + path_ + "/" + key + ": " + e.what());
    }
  }

  template <class T, class Parse>
  void read_as(const char* key, T& target, Parse parse) {
    seen_.insert(key);
    if (doc_ == nullptr || !doc_->contains(key)) return;
    try {
      target = parse(doc_->at(key));
    } catch (const std::exception& e) {
      throw std::invalid_argument("config " + path_ + "/" + key + ": " + e.what());
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const nlohmann::json kNull;
    return Section(doc_ != nullptr && doc_->contains(key) ? doc_->at(key) : kNull, path_ + "/" + key);
  }

  void reject_unknown() const {
    if (doc_ == nullptr) return;
    for (const auto& [key, value] : doc_->items()) {
      if (!seen_.contains(key)) throw std::invalid_argument("unknown config key " + path_ + "/" + key);
    }
  }

 private:
  std::string display() const { return path_.empty() ? "/" : path_; }

  std::string path_;
  const nlohmann::json* doc_ = nullptr;
  std::set<std::string> seen_;
};

template <class T, class Parse>
std::vector<T> parse_list(const nlohmann::json& j, Parse parse) {
  std::vector<T> out;
  for (const auto& item : j) out.push_back(parse(item.get<std::string>()));
  return out;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  using nlohmann::ordered_json;
  const TrainConfig& t = spectrum.train;
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : quant.attack_kinds) kinds.push_back(psl::to_string(k));
  nlohmann::json corruptions = nlohmann::json::array();
  for (auto k : analysis.corruptions) corruptions.push_back(psl::to_string(k));
  return {
      {"version", kConfigVersion},
      {"seed", seed},
      {"data",
       {{"source", data.source},
        {"cifar_dir", data.cifar_dir},
        {"num_classes", data.num_classes},
        {"train_per_class", data.train_per_class},
        {"test_per_class", data.test_per_class},
        {"resolution", data.resolution},
        {"test_limit", data.test_limit},
        {"synthetic_style",
         {{"channels", data.style.channels},
          {"colour", data.style.colour},
          {"jitter", data.style.jitter},
          {"texture", data.style.texture},
          {"noise", data.style.noise}}}}},
      {"model_zoo",
       {{"arch", psl::to_string(model.arch)},
        {"activation", psl::to_string(model.activation)},
        {"width", model.options.width},
        {"input_mean", model.options.input_mean},
        {"input_std", model.options.input_std}}},
      {"train_spectrum",
       {{"epsilons", spectrum.epsilons},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"learning_rate", t.lr.initial},
        {"decay_epochs", t.lr.decay_epochs},
        {"decay_factor", t.lr.decay_factor},
        {"inner_steps", t.pgd.steps},
        {"inner_alpha", t.pgd.alpha ? nlohmann::json(*t.pgd.alpha) : nlohmann::json(nullptr)},
        {"inner_random_start", t.pgd.random_start},
        {"inner_clamp_to_pixel_range", t.pgd.clamp_to_pixel_range},
        {"validation_fraction", t.validation_fraction},
        {"seed_policy", to_string(spectrum.seed_policy)}}},
      {"attacks",
       {{"deltas", eval.deltas},
        {"steps", eval.steps},
        {"random_start", eval.random_start},
        {"clamp_to_pixel_range", eval.clamp_to_pixel_range},
        {"batch_size", eval.batch_size}}},
      {"quant_defense",
       {{"taps", quant.taps},
        {"betas", quant.betas},
        {"deltas", quant.deltas},
        {"attack_kinds", kinds},
        {"steps", quant.steps}}},
      {"analysis",
       {{"preact_tap", analysis.preact_tap},
        {"corruptions", corruptions},
        {"severities", analysis.severities}}},
  };
}

std::string ExperimentConfig::fingerprint() const { return sha256_hex(to_json().dump()); }

ExperimentConfig parse_config(const nlohmann::json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");
  int version = kConfigVersion;
  root.read("version", version);
  if (version != kConfigVersion) throw std::invalid_argument("config /version " + std::to_string(version) + " is not supported");
  root.read("seed", cfg.seed);

  {
    Section s = root.child("data");
    DataConfig& d = cfg.data;
    s.read("source", d.source);
    s.read("cifar_dir", d.cifar_dir);
    s.read("num_classes", d.num_classes);
    s.read("train_per_class", d.train_per_class);
    s.read("test_per_class", d.test_per_class);
    s.read("resolution", d.resolution);
    s.read("test_limit", d.test_limit);
    Section st = s.child("synthetic_style");
    st.read("channels", d.style.channels);
    st.read("colour", d.style.colour);
    st.read("jitter", d.style.jitter);
    st.read("texture", d.style.texture);
    st.read("noise", d.style.noise);
    st.reject_unknown();
    s.reject_unknown();
    if (d.source != "synthetic" && d.source != "cifar10") {
      throw std::invalid_argument("config /data/source must be 'synthetic' or 'cifar10'");
    }
    if (d.source == "cifar10") d.num_classes = 10;
  }
  {
    Section s = root.child("model_zoo");
    s.read_as("arch", cfg.model.arch, [](const nlohmann::json& j) { return parse_arch(j.get<std::string>()); });
    s.read_as("activation", cfg.model.activation,
              [](const nlohmann::json& j) { return parse_activation(j.get<std::string>()); });
    s.read("width", cfg.model.options.width);
    s.read("input_mean", cfg.model.options.input_mean);
    s.read("input_std", cfg.model.options.input_std);
    s.reject_unknown();
    cfg.model.num_classes = cfg.data.num_classes;
    cfg.model.options.input_channels = cfg.data.source == "cifar10" ? 3 : cfg.data.style.channels;
  }
  {
    Section s = root.child("train_spectrum");
    TrainConfig& t = cfg.spectrum.train;
    s.read("epsilons", cfg.spectrum.epsilons);
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("momentum", t.momentum);
    s.read("weight_decay", t.weight_decay);
    s.read("learning_rate", t.lr.initial);
    s.read("decay_epochs", t.lr.decay_epochs);
    s.read("decay_factor", t.lr.decay_factor);
    s.read("inner_steps", t.pgd.steps);
    s.read_as("inner_alpha", t.pgd.alpha, [](const nlohmann::json& j) {
      return j.is_null() ? std::optional<double>() : std::optional<double>(j.get<double>());
    });
    s.read("inner_random_start", t.pgd.random_start);
    s.read("inner_clamp_to_pixel_range", t.pgd.clamp_to_pixel_range);
    s.read("validation_fraction", t.validation_fraction);
    s.read_as("seed_policy", cfg.spectrum.seed_policy,
              [](const nlohmann::json& j) { return parse_seed_policy(j.get<std::string>()); });
    s.reject_unknown();
    t.validate();
  }
  {
    Section s = root.child("attacks");
    s.read("deltas", cfg.eval.deltas);
    s.read("steps", cfg.eval.steps);
    s.read("random_start", cfg.eval.random_start);
    s.read("clamp_to_pixel_range", cfg.eval.clamp_to_pixel_range);
    s.read("batch_size", cfg.eval.batch_size);
    s.reject_unknown();
  }
  {
    Section s = root.child("quant_defense");
    s.read("taps", cfg.quant.taps);
    s.read("betas", cfg.quant.betas);
    s.read("deltas", cfg.quant.deltas);
    s.read_as("attack_kinds", cfg.quant.attack_kinds,
              [](const nlohmann::json& j) { return parse_list<AttackKind>(j, parse_attack_kind); });
    s.read("steps", cfg.quant.steps);
    s.reject_unknown();
  }
  {
    Section s = root.child("analysis");
    s.read("preact_tap", cfg.analysis.preact_tap);
    s.read_as("corruptions", cfg.analysis.corruptions,
              [](const nlohmann::json& j) { return parse_list<CorruptionKind>(j, parse_corruption_kind); });
    s.read("severities", cfg.analysis.severities);
    s.reject_unknown();
  }
  root.reject_unknown();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

}  // namespace psl
