#include "gfcn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gfcn {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0") return out = false, true;
  return false;
}

struct Key {
  std::function<std::string(const RunConfig&)> get;
  std::function<bool(RunConfig&, const std::string&)> set;  // false: malformed value
  const char* expects;
  bool verbatim = false;  // keep surrounding spaces (text values)
};

template <typename Field>
Key numeric(Field field) {
  using T = std::remove_reference_t<decltype(field(std::declval<RunConfig&>()))>;
  return {[field](const RunConfig& c) { return format_number(field(const_cast<RunConfig&>(c))); },
          [field](RunConfig& c, const std::string& s) { return parse_number(s, field(c)); },
          std::is_floating_point_v<T> ? "a number" : "an integer"};
}

template <typename Field>
Key boolean(Field field) {
  return {[field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [field](RunConfig& c, const std::string& s) { return parse_bool(s, field(c)); }, "true or false"};
}

template <typename Field>
Key text(Field field) {
  return {[field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); },
          [field](RunConfig& c, const std::string& s) { return field(c) = s, true; }, "text", true};
}

#define GFCN_FIELD(path) [](RunConfig& c) -> auto& { return c.path; }

const std::map<std::string, Key>& registry() {
  static const std::map<std::string, Key> keys = [] {
    std::map<std::string, Key> k;
    k["data.alphabet"] = text(GFCN_FIELD(alphabet));

    k["model.num_blocks"] = numeric(GFCN_FIELD(model.num_blocks));
    k["model.c1"] = numeric(GFCN_FIELD(model.c1));
    k["model.c2"] = numeric(GFCN_FIELD(model.c2));
    k["model.input_height"] = numeric(GFCN_FIELD(model.input_height));
    k["model.gate_variant"] = {[](const RunConfig& c) { return to_string(c.model.gate_variant); },
                               [](RunConfig& c, const std::string& s) {
                                 const auto v = parse_gate_variant(s);
                                 if (v) c.model.gate_variant = *v;
                                 return v.has_value();
                               },
                               "a gate variant (baseline, mul_gate_plus_one, single_h, add_one_h1_minus_h2, "
                               "h1_gate_minus_h2, residual_only, gates_no_residual, plain)"};
    k["model.layer_norm_everywhere"] = boolean(GFCN_FIELD(model.normalization.layer_norm_everywhere));
    k["model.layer_norm_at_ends"] = boolean(GFCN_FIELD(model.normalization.layer_norm_at_ends));
    k["model.batch_norm"] = boolean(GFCN_FIELD(model.normalization.batch_norm));
    k["model.stem_nonlinearity"] = {[](const RunConfig& c) { return to_string(c.model.normalization.stem_nonlinearity); },
                                    [](RunConfig& c, const std::string& s) {
                                      for (std::size_t i = 0; i < kStemNonlinearityNames.size(); ++i) {
                                        if (s == kStemNonlinearityNames[i]) {
                                          c.model.normalization.stem_nonlinearity = static_cast<StemNonlinearity>(i);
                                          return true;
                                        }
                                      }
                                      return false;
                                    },
                                    "softmax, tanh or none"};
    k["model.dropout_rate"] = numeric(GFCN_FIELD(model.dropout_rate));
    k["model.gate_kernel"] = numeric(GFCN_FIELD(model.gate_kernel));
    k["model.stem_kernel"] = numeric(GFCN_FIELD(model.stem_kernel));
    k["model.stem_channels"] = numeric(GFCN_FIELD(model.stem_channels));
    k["model.output_norm_gain"] = numeric(GFCN_FIELD(model.output_norm_gain));
    k["model.bn_momentum"] = numeric(GFCN_FIELD(model.bn_momentum));
    k["model.bn_epsilon"] = numeric(GFCN_FIELD(model.bn_epsilon));
    k["model.renorm_rmax_start"] = numeric(GFCN_FIELD(model.renorm.rmax_start));
    k["model.renorm_rmax_end"] = numeric(GFCN_FIELD(model.renorm.rmax_end));
    k["model.renorm_dmax_start"] = numeric(GFCN_FIELD(model.renorm.dmax_start));
    k["model.renorm_dmax_end"] = numeric(GFCN_FIELD(model.renorm.dmax_end));
    k["model.renorm_ramp_begin"] = numeric(GFCN_FIELD(model.renorm.ramp_begin));
    k["model.renorm_ramp_end"] = numeric(GFCN_FIELD(model.renorm.ramp_end));

    k["train.batch_size"] = numeric(GFCN_FIELD(train.batch_size));
    k["train.epochs"] = numeric(GFCN_FIELD(train.epochs));
    k["train.base_lr"] = numeric(GFCN_FIELD(train.lr.base_lr));
    k["train.decay_factor"] = numeric(GFCN_FIELD(train.lr.decay_factor));
    k["train.decay_horizon"] = numeric(GFCN_FIELD(train.lr.decay_horizon));
    k["train.adam_beta1"] = numeric(GFCN_FIELD(train.adam_beta1));
    k["train.adam_beta2"] = numeric(GFCN_FIELD(train.adam_beta2));
    k["train.adam_epsilon"] = numeric(GFCN_FIELD(train.adam_epsilon));
    k["train.polyak_decay"] = numeric(GFCN_FIELD(train.polyak_decay));
    k["train.polyak_warmup"] = boolean(GFCN_FIELD(train.polyak_warmup));
    k["train.augment"] = boolean(GFCN_FIELD(train.augment));
    k["train.seed"] = numeric(GFCN_FIELD(train.seed));
    k["train.eval_beam_width"] = numeric(GFCN_FIELD(train.eval_beam_width));
    k["train.eval_top_n"] = numeric(GFCN_FIELD(train.eval_top_n));
    k["train.target_cer"] = numeric(GFCN_FIELD(train.target_cer));

    k["augment.p_projective"] = numeric(GFCN_FIELD(augment.p_projective));
    k["augment.p_elastic"] = numeric(GFCN_FIELD(augment.p_elastic));
    k["augment.p_signflip"] = numeric(GFCN_FIELD(augment.p_signflip));
    k["augment.projective_max_shift"] = numeric(GFCN_FIELD(augment.projective_max_shift));
    k["augment.grid_spacing"] = numeric(GFCN_FIELD(augment.grid_spacing));
    k["augment.elastic_max_disp"] = numeric(GFCN_FIELD(augment.elastic_max_disp));
    k["augment.rng_seed"] = numeric(GFCN_FIELD(augment.rng_seed));

    k["synth.alphabet"] = text(GFCN_FIELD(synth.alphabet));
    k["synth.min_length"] = numeric(GFCN_FIELD(synth.min_length));
    k["synth.max_length"] = numeric(GFCN_FIELD(synth.max_length));
    k["synth.count"] = numeric(GFCN_FIELD(synth.count));
    k["synth.height"] = numeric(GFCN_FIELD(synth.height));
    k["synth.glyph_scale"] = numeric(GFCN_FIELD(synth.glyph_scale));
    k["synth.spacing"] = numeric(GFCN_FIELD(synth.spacing));
    k["synth.max_jitter"] = numeric(GFCN_FIELD(synth.max_jitter));
    k["synth.noise"] = numeric(GFCN_FIELD(synth.noise));
    k["synth.seed"] = numeric(GFCN_FIELD(synth.seed));
    k["synth.id_prefix"] = text(GFCN_FIELD(synth.id_prefix));
    return k;
  }();
  return keys;
}

#undef GFCN_FIELD

}  // namespace

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> v;
  auto add = [&](const std::string& prefix, const std::vector<std::string>& items) {
    for (const auto& s : items) v.push_back(s.rfind(prefix, 0) == 0 ? s : prefix + s);
  };
  try {
    const AlphabetCodec codec(alphabet);
    if (!codec.unknown_symbols(synth.alphabet).empty()) {
      v.push_back("synth.alphabet has symbols outside data.alphabet: '" + utf8_encode(codec.unknown_symbols(synth.alphabet)) + "'");
    }
  } catch (const std::exception& e) {
    v.push_back(std::string("data.alphabet: ") + e.what());
  }
  add("model.", resolved_model().violations());
  add("", train.violations());
  add("augment.", augment.violations());
  add("synth.", synth.violations());
  if (synth.height != model.input_height) {
    v.push_back("synth.height (" + std::to_string(synth.height) + ") must equal model.input_height (" +
                std::to_string(model.input_height) + ")");
  }
  return v;
}

void RunConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid config (" << v.size() << (v.size() == 1 ? " problem" : " problems") << "):";
  for (const auto& s : v) msg << "\n  - " << s;
  throw ConfigError(msg.str());
}

ModelConfig RunConfig::resolved_model() const {
  ModelConfig m = model;
  try {
    m.alphabet_size = static_cast<int>(utf8_decode(alphabet).size());
  } catch (const ContractViolation&) {
    m.alphabet_size = 0;
  }
  return m;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(number) + ": ";
    if (eq == std::string::npos) {
      problems.push_back(where + "expected key = value, got '" + body + "'");
      continue;
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const auto it = registry().find(key);
    if (it == registry().end()) {
      problems.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    std::string value = line.substr(eq + 1);
    if (!it->second.verbatim) {
      value = trim(value);
    } else if (!value.empty() && value[0] == ' ') {
      value.erase(0, 1);
    }
    if (!it->second.set(c, value)) {
      problems.push_back(where + key + " expects " + it->second.expects + ", got '" + value + "'");
    }
  }
  for (auto& v : c.violations()) problems.push_back(std::move(v));
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << "invalid config (" << problems.size() << (problems.size() == 1 ? " problem" : " problems") << "):";
    for (const auto& s : problems) msg << "\n  - " << s;
    throw ConfigError(msg.str());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return parse_config(s.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, key] : registry()) out += name + " = " + key.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, key] : registry()) out.push_back(name);
  return out;
}

}  // namespace gfcn
