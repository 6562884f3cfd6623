// SPDX-License-Identifier: Apache-2.0
#include "fg3d/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fg3d/error.hpp"
#include "fg3d/shape_synth.hpp"

namespace fg3d {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (!s.empty() && s.back() == ',') out.emplace_back();
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t to_u64(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("integer out of range: '" + v + "'");
  }
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(d)) throw ConfigError("expected a number, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

template <typename T, typename F>
std::vector<T> list_of(const std::string& v, F&& conv) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) out.push_back(conv(item));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + fmt(xs[i]);
  return out;
}

struct Field {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> kFields = [] {
    std::vector<std::pair<std::string, Field>> f;
    auto str = [&](const char* k, std::string Config::*m) {
      f.push_back({k, {[m](Config& c, const std::string& v) { c.*m = v; }, [m](const Config& c) { return c.*m; }}});
    };
    auto size = [&](const char* k, std::size_t Config::*m) {
      f.push_back({k,
                   {[m](Config& c, const std::string& v) { c.*m = static_cast<std::size_t>(to_u64(v)); },
                    [m](const Config& c) { return std::to_string(c.*m); }}});
    };
    auto real = [&](const char* k, double Config::*m) {
      f.push_back({k, {[m](Config& c, const std::string& v) { c.*m = to_double(v); },
                       [m](const Config& c) { return fmt_double(c.*m); }}});
    };
    auto flag = [&](const char* k, bool Config::*m) {
      f.push_back({k, {[m](Config& c, const std::string& v) { c.*m = to_bool(v); },
                       [m](const Config& c) { return std::string(c.*m ? "true" : "false"); }}});
    };
    str("family", &Config::family);
    size("shapes_per_subcategory", &Config::shapes_per_subcategory);
    size("test_per_subcategory", &Config::test_per_subcategory);
    f.push_back({"seed", {[](Config& c, const std::string& v) { c.seed = to_u64(v); },
                          [](const Config& c) { return std::to_string(c.seed); }}});
    str("dataset_root", &Config::dataset_root);
    str("out_dir", &Config::out_dir);
    size("views", &Config::views);
    size("image_size", &Config::image_size);
    f.push_back({"backbone_channels",
                 {[](Config& c, const std::string& v) {
                    c.backbone_channels = v.empty() ? std::vector<std::size_t>{}
                                                    : list_of<std::size_t>(v, [](const std::string& s) {
                                                        return static_cast<std::size_t>(to_u64(s));
                                                      });
                  },
                  [](const Config& c) {
                    return join(c.backbone_channels, [](std::size_t x) { return std::to_string(x); });
                  }}});
    size("feature_channels", &Config::feature_channels);
    str("backbone_padding", &Config::backbone_padding);
    f.push_back({"anchor_scales", {[](Config& c, const std::string& v) { c.anchor_scales = list_of<double>(v, to_double); },
                                   [](const Config& c) { return join(c.anchor_scales, fmt_double); }}});
    f.push_back({"anchor_ratios",
                 {[](Config& c, const std::string& v) { c.anchor_ratios = split_list(v); },
                  [](const Config& c) { return join(c.anchor_ratios, [](const std::string& s) { return s; }); }}});
    real("s_d", &Config::s_d);
    real("lambda", &Config::lambda);
    size("head_hidden", &Config::head_hidden);
    size("anchor_batch", &Config::anchor_batch);
    flag("smooth_l1", &Config::smooth_l1);
    flag("nms", &Config::nms);
    size("k_parts", &Config::k_parts);
    size("hidden_dim", &Config::hidden_dim);
    str("attention_mode", &Config::attention_mode);
    real("psi", &Config::psi);
    real("lr", &Config::lr);
    size("batch", &Config::batch);
    size("rounds", &Config::rounds);
    size("epochs_per_phase", &Config::epochs_per_phase);
    size("recall_top_n", &Config::recall_top_n);
    real("val_fraction", &Config::val_fraction);
    size("threads", &Config::threads);
    return f;
  }();
  return kFields;
}

}  // namespace

void Config::validate() const {
  family_spec(family);
  if (shapes_per_subcategory == 0 || test_per_subcategory >= shapes_per_subcategory) {
    throw ConfigError("need 0 <= test_per_subcategory < shapes_per_subcategory");
  }
  if (views == 0) throw ConfigError("views must be at least 1");
  if (image_size == 0) throw ConfigError("image_size must be positive");
  if (feature_channels == 0) throw ConfigError("feature_channels must be positive");
  for (auto c : backbone_channels) {
    if (c == 0) throw ConfigError("backbone_channels entries must be positive");
  }
  if (k_parts == 0) throw ConfigError("k_parts must be at least 1");
  if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
  if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  if (!(psi >= 0)) throw ConfigError("psi must be non-negative");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (batch != 1) throw ConfigError("only batch = 1 is supported");
  if (rounds == 0 || epochs_per_phase == 0) throw ConfigError("rounds and epochs_per_phase must be at least 1");
  if (recall_top_n == 0) throw ConfigError("recall_top_n must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (threads == 0) throw ConfigError("threads must be at least 1");
  for (const auto* s : {&family, &dataset_root, &out_dir, &backbone_padding, &attention_mode}) {
    if (s->empty() || s->find_first_of("#\n\r") != std::string::npos || trim(*s) != *s) {
      throw ConfigError("text value '" + *s + "' must be nonempty, unpadded and free of '#' and newlines");
    }
  }
  parse_attention_mode(attention_mode);
  Detector probe(detector());  // validates geometry, anchors and s_d
  (void)probe;
}

CameraRig Config::rig() const {
  CameraRig r;
  r.views = views;
  r.image_size = image_size;
  return r;
}

DetectorConfig Config::detector() const {
  DetectorConfig d;
  d.image_size = image_size;
  d.backbone_channels = backbone_channels;
  d.backbone_channels.push_back(feature_channels);
  d.backbone_padding = backbone_padding;
  d.anchor_scales = anchor_scales;
  d.anchor_ratios.clear();
  for (const auto& r : anchor_ratios) d.anchor_ratios.push_back(parse_ratio(r));
  d.s_d = s_d;
  d.lambda = lambda;
  d.head_hidden = head_hidden;
  d.anchor_batch = anchor_batch;
  d.smooth_l1 = smooth_l1;
  d.nms = nms;
  return d;
}

AttentionDims Config::attention_dims(std::size_t classes) const { return {feature_channels, hidden_dim, classes}; }

Config parse_config(const std::string& text, const std::string& source) {
  Config c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto& fs = fields();
    const auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.first == key; });
    if (it == fs.end()) throw ConfigError(source + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    seen[key] = line_no;
    try {
      it->second.set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + key + ": " + e.what());
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string serialize_config(const Config& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace fg3d
