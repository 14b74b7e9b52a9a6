#include "edunet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace edunet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("config: invalid value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: invalid boolean '" + v + "' for " + key);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  std::string name;
  std::function<std::string(RunSettings&)> get;
  std::function<void(RunSettings&, const std::string&)> set;
};

template <class Get>
Key double_key(std::string name, Get ref) {
  return {name, [ref](RunSettings& s) { return format_double(ref(s)); },
          [ref, name](RunSettings& s, const std::string& v) { ref(s) = parse_number<double>(name, v); }};
}
template <class Get>
Key int_key(std::string name, Get ref) {
  return {name, [ref](RunSettings& s) { return std::to_string(ref(s)); },
          [ref, name](RunSettings& s, const std::string& v) {
            ref(s) = parse_number<std::remove_reference_t<decltype(ref(s))>>(name, v);
          }};
}
template <class Get>
Key bool_key(std::string name, Get ref) {
  return {name,
          [ref](RunSettings& s) {
            return std::string(ref(s) ? "true" : "false");
          },
          [ref, name](RunSettings& s, const std::string& v) { ref(s) = parse_bool(name, v); }};
}
template <class Get>
Key list_key(std::string name, Get ref) {
  return {name, [ref](RunSettings& s) { return join_ints(ref(s)); },
          [ref, name](RunSettings& s, const std::string& v) { ref(s) = parse_int_list(name, v); }};
}

#define FIELD(expr) [](RunSettings & s) -> auto& { return expr; }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"model.profile", [](RunSettings& s) { return std::string(profile_name(s.model.profile)); },
       [](RunSettings& s, const std::string& v) {
         const Profile p = parse_profile(v);
         const int classes = s.model.num_classes;
         s.model = p == Profile::B0 ? EDUNetConfig::b0(classes) : EDUNetConfig::tiny(classes);
       }},
      int_key("model.num_classes", FIELD(s.model.num_classes)),
      int_key("model.input_h", FIELD(s.model.input_h)),
      int_key("model.input_w", FIELD(s.model.input_w)),
      list_key("model.global_channels", FIELD(s.model.global_channels)),
      list_key("model.lkec_blocks", FIELD(s.model.lkec_blocks)),
      int_key("model.stem_kernel", FIELD(s.model.stem_kernel)),
      int_key("model.stem_stride", FIELD(s.model.stem_stride)),
      {"model.fg_attention",
       [](RunSettings& s) { return std::string(fg_attention_name(s.model.fg_attention)); },
       [](RunSettings& s, const std::string& v) { s.model.fg_attention = parse_fg_attention(v); }},
      bool_key("model.use_global", FIELD(s.model.use_global)),
      bool_key("model.use_local", FIELD(s.model.use_local)),
      bool_key("model.use_mcega", FIELD(s.model.use_mcega)),
      double_key("model.drop_path_max", FIELD(s.model.drop_path_max)),
      double_key("model.layer_scale_init", FIELD(s.model.layer_scale_init)),
      double_key("model.blur_sigma", FIELD(s.model.blur_sigma)),
      int_key("model.blur_kernel_size", FIELD(s.model.blur_kernel_size)),
      double_key("train.alpha", FIELD(s.train.alpha)),
      double_key("train.beta", FIELD(s.train.beta)),
      double_key("train.lr", FIELD(s.train.lr)),
      int_key("train.batch_size", FIELD(s.train.batch_size)),
      int_key("train.max_epochs", FIELD(s.train.max_epochs)),
      double_key("train.adam_beta1", FIELD(s.train.adam_beta1)),
      double_key("train.adam_beta2", FIELD(s.train.adam_beta2)),
      double_key("train.adam_eps", FIELD(s.train.adam_eps)),
      double_key("train.plateau_factor", FIELD(s.train.plateau_factor)),
      int_key("train.plateau_patience", FIELD(s.train.plateau_patience)),
      double_key("train.plateau_min_lr", FIELD(s.train.plateau_min_lr)),
      double_key("train.plateau_threshold", FIELD(s.train.plateau_threshold)),
      int_key("train.seed", FIELD(s.train.seed)),
      double_key("train.dice_smooth", FIELD(s.train.dice_smooth)),
      bool_key("train.include_background", FIELD(s.train.include_background_in_loss)),
      double_key("augment.hflip_prob", FIELD(s.augment.hflip_prob)),
      double_key("augment.rotate_prob", FIELD(s.augment.rotate_prob)),
      double_key("augment.rotate_max_deg", FIELD(s.augment.rotate_max_deg)),
      double_key("augment.brightness_prob", FIELD(s.augment.brightness_prob)),
      double_key("augment.brightness_delta", FIELD(s.augment.brightness_delta)),
      double_key("augment.contrast_prob", FIELD(s.augment.contrast_prob)),
      double_key("augment.contrast_delta", FIELD(s.augment.contrast_delta)),
      int_key("eval.folds", FIELD(s.folds)),
      int_key("eval.fold_seed", FIELD(s.fold_seed)),
      bool_key("eval.pooled", FIELD(s.pooled_metrics)),
  };
  return k;
}

#undef FIELD

const Key* find_key(const std::string& name) {
  for (const Key& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::pair<std::string, std::string>> RunSettings::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  RunSettings copy = *this;
  for (const Key& k : keys()) out.emplace_back(k.name, k.get(copy));
  return out;
}

void RunSettings::set(const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("config: unknown key '" + key + "'");
  try {
    k->set(*this, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + key + ": " + e.what());
  }
}

void RunSettings::validate() const {
  try {
    model.validate();
    train.validate(model);
    augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (folds < 1) throw ConfigError("config: eval.folds must be at least 1");
}

RunSettings RunSettings::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RunSettings s;
  for (const char* first : {"model.num_classes", "model.profile"})
    for (const auto& [k, v] : pairs)
      if (k == first) s.set(k, v);
  for (const auto& [k, v] : pairs)
    if (k != "model.profile") s.set(k, v);
  return s;
}

std::string RunSettings::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace edunet
