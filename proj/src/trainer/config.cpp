#include "hsa/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hsa {

using nlohmann::json;

namespace {

// Walks a JSON object, recording type errors and unknown keys under a path.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors) : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where("") + "expected an object");
  }
  ~Reader() {
    if (!j_.is_object()) return;
    for (const auto& [key, v] : j_.items())
      if (!seen_.count(key)) errors_.push_back(where(key) + "unknown key");
  }

  template <class V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!type_ok<V>(v)) {
      errors_.push_back(where(key) + "wrong type (" + v.type_name() + ")");
      return;
    }
    try {
      out = v.get<V>();
    } catch (const std::exception& e) {
      errors_.push_back(where(key) + e.what());
    }
  }

  template <class F>
  void object(const std::string& key, F&& f) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    Reader sub(j_.at(key), path_of(key), errors_);
    f(sub);
  }

 private:
  template <class V>
  static bool type_ok(const json& v) {
    if constexpr (std::is_same_v<V, bool>) return v.is_boolean();
    else if constexpr (std::is_same_v<V, std::string>) return v.is_string();
    else if constexpr (std::is_floating_point_v<V>) return v.is_number();
    else if constexpr (std::is_unsigned_v<V>) return v.is_number_unsigned();
    else if constexpr (std::is_integral_v<V>) return v.is_number_integer();
    else {
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!type_ok<typename V::value_type>(e)) return false;
      return true;
    }
  }

  std::string path_of(const std::string& key) const {
    if (key.empty()) return path_;
    return path_.empty() ? key : path_ + "." + key;
  }
  std::string where(const std::string& key) const {
    const std::string p = path_of(key);
    return (p.empty() ? std::string("<root>") : p) + ": ";
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

// std::vector<bool> has no json get<> for proxy refs; read through a copy.
void get_bools(Reader& r, const std::string& key, std::vector<bool>& out) {
  std::vector<bool> tmp = out;
  r.get(key, tmp);
  out = tmp;
}

json to_json(const TrainConfig& c) {
  const auto& s = c.data.synthetic;
  const auto& e = c.encoder;
  const auto& a = c.augment;
  json j;
  j["data"] = {{"source", c.data.source},
               {"cifar_dir", c.data.cifar_dir},
               {"seed", c.data.seed},
               {"val_samples_per_class", c.data.val_samples_per_class},
               {"synthetic",
                {{"num_classes", s.num_classes},
                 {"samples_per_class", s.samples_per_class},
                 {"height", s.height},
                 {"width", s.width},
                 {"noise", s.noise},
                 {"color_variation", s.color_variation},
                 {"clutter", s.clutter},
                 {"min_scale", s.min_scale},
                 {"max_scale", s.max_scale}}}};
  j["encoder"] = {{"in_channels", e.in_channels},
                  {"image_size", e.image_size},
                  {"stem_channels", e.stem_channels},
                  {"stem_stride", e.stem_stride},
                  {"stage_channels", e.stage_channels},
                  {"stage_downsample", e.stage_downsample},
                  {"blocks_per_stage", e.blocks_per_stage},
                  {"embed_dim", e.embed_dim},
                  {"companion_stages", e.companion_stages},
                  {"companion_dim", e.companion_dim}};
  j["augment"] = {{"min_scale", a.min_scale},     {"max_scale", a.max_scale},   {"min_aspect", a.min_aspect},
                  {"max_aspect", a.max_aspect},   {"flip_prob", a.flip_prob},   {"jitter_prob", a.jitter_prob},
                  {"brightness", a.brightness},   {"contrast", a.contrast},     {"saturation", a.saturation},
                  {"grayscale_prob", a.grayscale_prob}};
  j["contrast"] = {{"tau", c.contrast.tau},
                   {"momentum", c.contrast.momentum},
                   {"queue_capacity", c.contrast.queue_capacity},
                   {"queue_prefill", c.contrast.queue_prefill},
                   {"queue_strict", c.contrast.queue_strict}};
  j["miner"] = {{"k", c.miner.k}, {"refresh_period", c.miner.refresh_period}};
  j["loss"] = {{"weights", std::vector<double>{c.weights.anchor, c.weights.positive, c.weights.mixed}}};
  j["mix"] = {{"kind", c.mix.kind == MixKind::cutmix ? "cutmix" : "mixup"}, {"alpha", c.mix.alpha}};
  j["variant"] = {{"baseline_moco", c.variant.baseline_moco},
                  {"add_qp", c.variant.add_qp},
                  {"add_mix", c.variant.add_mix},
                  {"stages_on", c.variant.stages_on}};
  j["optim"] = {{"batch_size", c.optim.batch_size},
                {"epochs", c.optim.epochs},
                {"base_lr", c.optim.base_lr},
                {"momentum", c.optim.momentum},
                {"weight_decay", c.optim.weight_decay}};
  const auto& v = c.eval;
  j["eval"] = {{"knn_neighbors", v.knn_neighbors},
               {"knn_tau", v.knn_tau},
               {"probe_stage", v.probe_stage},
               {"probe_epochs", v.probe_epochs},
               {"probe_lr", v.probe_lr},
               {"probe_batch", v.probe_batch},
               {"label_fraction", v.label_fraction},
               {"finetune_epochs", v.finetune_epochs},
               {"backbone_lr", v.backbone_lr},
               {"head_lr", v.head_lr},
               {"entropy_threshold", v.entropy_threshold},
               {"entropy_base", v.entropy_base},
               {"retrain_epochs", v.retrain_epochs},
               {"retrain_decay_every", v.retrain_decay_every}};
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

TrainConfig from_json(const json& j, std::vector<std::string>& errors) {
  TrainConfig c;
  Reader root(j, "", errors);
  root.object("data", [&](Reader& r) {
    r.get("source", c.data.source);
    r.get("cifar_dir", c.data.cifar_dir);
    r.get("seed", c.data.seed);
    r.get("val_samples_per_class", c.data.val_samples_per_class);
    r.object("synthetic", [&](Reader& s) {
      auto& sp = c.data.synthetic;
      s.get("num_classes", sp.num_classes);
      s.get("samples_per_class", sp.samples_per_class);
      s.get("height", sp.height);
      s.get("width", sp.width);
      s.get("noise", sp.noise);
      s.get("color_variation", sp.color_variation);
      s.get("clutter", sp.clutter);
      s.get("min_scale", sp.min_scale);
      s.get("max_scale", sp.max_scale);
    });
  });
  root.object("encoder", [&](Reader& r) {
    auto& e = c.encoder;
    r.get("in_channels", e.in_channels);
    r.get("image_size", e.image_size);
    r.get("stem_channels", e.stem_channels);
    r.get("stem_stride", e.stem_stride);
    r.get("stage_channels", e.stage_channels);
    get_bools(r, "stage_downsample", e.stage_downsample);
    r.get("blocks_per_stage", e.blocks_per_stage);
    r.get("embed_dim", e.embed_dim);
    r.get("companion_stages", e.companion_stages);
    r.get("companion_dim", e.companion_dim);
  });
  root.object("augment", [&](Reader& r) {
    auto& a = c.augment;
    r.get("min_scale", a.min_scale);
    r.get("max_scale", a.max_scale);
    r.get("min_aspect", a.min_aspect);
    r.get("max_aspect", a.max_aspect);
    r.get("flip_prob", a.flip_prob);
    r.get("jitter_prob", a.jitter_prob);
    r.get("brightness", a.brightness);
    r.get("contrast", a.contrast);
    r.get("saturation", a.saturation);
    r.get("grayscale_prob", a.grayscale_prob);
  });
  root.object("contrast", [&](Reader& r) {
    r.get("tau", c.contrast.tau);
    r.get("momentum", c.contrast.momentum);
    r.get("queue_capacity", c.contrast.queue_capacity);
    r.get("queue_prefill", c.contrast.queue_prefill);
    r.get("queue_strict", c.contrast.queue_strict);
  });
  root.object("miner", [&](Reader& r) {
    r.get("k", c.miner.k);
    r.get("refresh_period", c.miner.refresh_period);
  });
  root.object("loss", [&](Reader& r) {
    std::vector<double> w{c.weights.anchor, c.weights.positive, c.weights.mixed};
    r.get("weights", w);
    if (w.size() == 3) c.weights = LossWeights::from(w);
    else errors.push_back("loss.weights: expected 3 values, got " + std::to_string(w.size()));
  });
  root.object("mix", [&](Reader& r) {
    std::string kind = c.mix.kind == MixKind::cutmix ? "cutmix" : "mixup";
    r.get("kind", kind);
    if (kind == "cutmix") c.mix.kind = MixKind::cutmix;
    else if (kind == "mixup") c.mix.kind = MixKind::mixup;
    else errors.push_back("mix.kind: must be \"cutmix\" or \"mixup\", got \"" + kind + "\"");
    r.get("alpha", c.mix.alpha);
  });
  root.object("variant", [&](Reader& r) {
    r.get("baseline_moco", c.variant.baseline_moco);
    r.get("add_qp", c.variant.add_qp);
    r.get("add_mix", c.variant.add_mix);
    r.get("stages_on", c.variant.stages_on);
  });
  root.object("optim", [&](Reader& r) {
    r.get("batch_size", c.optim.batch_size);
    r.get("epochs", c.optim.epochs);
    r.get("base_lr", c.optim.base_lr);
    r.get("momentum", c.optim.momentum);
    r.get("weight_decay", c.optim.weight_decay);
  });
  root.object("eval", [&](Reader& r) {
    auto& v = c.eval;
    r.get("knn_neighbors", v.knn_neighbors);
    r.get("knn_tau", v.knn_tau);
    r.get("probe_stage", v.probe_stage);
    r.get("probe_epochs", v.probe_epochs);
    r.get("probe_lr", v.probe_lr);
    r.get("probe_batch", v.probe_batch);
    r.get("label_fraction", v.label_fraction);
    r.get("finetune_epochs", v.finetune_epochs);
    r.get("backbone_lr", v.backbone_lr);
    r.get("head_lr", v.head_lr);
    r.get("entropy_threshold", v.entropy_threshold);
    r.get("entropy_base", v.entropy_base);
    r.get("retrain_epochs", v.retrain_epochs);
    r.get("retrain_decay_every", v.retrain_decay_every);
  });
  root.get("seed", c.seed);
  root.get("checkpoint_every", c.checkpoint_every);
  return c;
}

// "a.b.c=value": value parsed as JSON, falling back to a plain string.
void apply_override(json& j, const std::string& spec, std::vector<std::string>& errors) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    errors.push_back("override '" + spec + "': expected key.path=value");
    return;
  }
  const std::string path = spec.substr(0, eq), text = spec.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) *node = json::object();
    node = &(*node)[parts[i]];
  }
  if (!node->is_object()) *node = json::object();
  (*node)[parts.back()] = value;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument([&] {
        std::string m = "invalid configuration:";
        for (const auto& p : problems) m += "\n  " + p;
        return m;
      }()),
      problems_(std::move(problems)) {}

VariantFlags TrainConfig::effective_variant() const {
  VariantFlags v = variant;
  if (v.baseline_moco) v.add_qp = v.add_mix = v.stages_on = false;
  return v;
}

LossTerms TrainConfig::loss_terms() const {
  const auto v = effective_variant();
  return {v.add_qp, v.add_mix};
}

bool TrainConfig::mines_positives() const {
  const auto v = effective_variant();
  return (v.add_qp || v.add_mix) && miner.k > 0;
}

void validate(const TrainConfig& c) {
  std::vector<std::string> p;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) p.push_back(msg);
  };
  need(c.data.source == "synthetic" || c.data.source == "cifar10", "data.source: must be \"synthetic\" or \"cifar10\"");
  need(c.data.val_samples_per_class >= 1, "data.val_samples_per_class: must be >= 1");
  const auto& s = c.data.synthetic;
  need(s.num_classes >= 2, "data.synthetic.num_classes: must be >= 2");
  need(s.samples_per_class >= 1, "data.synthetic.samples_per_class: must be >= 1");
  need(s.noise >= 0, "data.synthetic.noise: must be >= 0");
  need(s.clutter >= 0, "data.synthetic.clutter: must be >= 0");
  need(s.color_variation >= 0 && s.color_variation <= 1, "data.synthetic.color_variation: must lie in [0, 1]");
  need(s.min_scale > 0 && s.min_scale <= s.max_scale && s.max_scale <= 1, "data.synthetic.min_scale/max_scale: need 0 < min <= max <= 1");
  if (c.data.source == "synthetic")
    need(s.height == s.width && std::size_t(s.height) == c.encoder.image_size,
         "encoder.image_size: must equal the synthetic image side (" + std::to_string(s.height) + ")");
  else
    need(c.encoder.image_size == data::kCifarSide && c.encoder.in_channels == 3, "encoder.image_size: CIFAR-10 images are 3x32x32");
  try {
    c.encoder.validate();
  } catch (const std::exception& e) {
    p.push_back(std::string("encoder: ") + e.what());
  }
  try {
    c.augment.validate();
  } catch (const std::exception& e) {
    p.push_back(std::string("augment: ") + e.what());
  }
  need(c.contrast.tau > 0, "contrast.tau: must be > 0");
  need(c.contrast.momentum >= 0 && c.contrast.momentum <= 1, "contrast.momentum: must lie in [0, 1]");
  need(c.miner.refresh_period >= 1, "miner.refresh_period: must be >= 1");
  const auto n = std::size_t(s.num_classes) * std::size_t(s.samples_per_class);
  if (c.data.source == "synthetic") need(c.miner.k < n, "miner.k: must be below the dataset size");
  need(c.weights.anchor >= 0 && c.weights.positive >= 0 && c.weights.mixed >= 0 &&
           c.weights.anchor + c.weights.positive + c.weights.mixed > 0,
       "loss.weights: must be >= 0 with a positive sum");
  need(c.mix.alpha > 0, "mix.alpha: must be > 0");
  need(c.optim.batch_size >= 1, "optim.batch_size: must be >= 1");
  need(c.optim.base_lr >= 0, "optim.base_lr: must be >= 0");
  need(c.optim.momentum >= 0 && c.optim.momentum < 1, "optim.momentum: must lie in [0, 1)");
  need(c.optim.weight_decay >= 0, "optim.weight_decay: must be >= 0");
  const auto& v = c.eval;
  need(!v.knn_neighbors.empty(), "eval.knn_neighbors: at least one value");
  for (auto k : v.knn_neighbors) need(k >= 1, "eval.knn_neighbors: values must be >= 1");
  need(v.knn_tau > 0, "eval.knn_tau: must be > 0");
  need(v.probe_stage >= 0 && v.probe_stage <= int(c.encoder.num_stages()), "eval.probe_stage: must lie in 0..num_stages");
  need(v.probe_lr >= 0 && v.probe_batch >= 1, "eval.probe_lr/probe_batch: lr >= 0 and batch >= 1");
  need(v.label_fraction > 0 && v.label_fraction <= 1, "eval.label_fraction: must lie in (0, 1]");
  need(v.backbone_lr >= 0 && v.head_lr >= 0, "eval.backbone_lr/head_lr: must be >= 0");
  need(v.entropy_threshold >= 0, "eval.entropy_threshold: must be >= 0");
  need(v.entropy_base == "e" || v.entropy_base == "2", "eval.entropy_base: must be \"e\" or \"2\"");
  need(v.retrain_decay_every >= 1, "eval.retrain_decay_every: must be >= 1");
  if (!p.empty()) throw ConfigError(std::move(p));
}

std::string to_json_string(const TrainConfig& config, int indent) { return to_json(config).dump(indent); }

TrainConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  std::vector<std::string> errors;
  json j = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError({"<root>: not valid JSON"});
  for (const auto& o : overrides) apply_override(j, o, errors);
  TrainConfig c = from_json(j, errors);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  validate(c);
  return c;
}

TrainConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::uint64_t config_hash(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(config).dump()) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

TrainConfig acceptance_config() {
  TrainConfig c;
  c.data.synthetic = data::SyntheticSpec{};
  c.data.synthetic.color_variation = 0.3;
  c.data.synthetic.clutter = 0.05;
  c.data.val_samples_per_class = 500;
  c.encoder.stem_channels = 8;
  c.encoder.stem_stride = 2;
  c.encoder.stage_channels = {8, 16, 32, 64};
  c.encoder.stage_downsample = {false, true, true, true};
  c.encoder.blocks_per_stage = 1;
  c.encoder.embed_dim = 32;
  c.contrast.momentum = 0.99;
  c.contrast.queue_capacity = 1024;
  c.miner.k = 1;
  c.optim.epochs = 60;
  c.optim.batch_size = 128;
  c.eval.knn_neighbors = {20};
  return c;
}

}  // namespace hsa
