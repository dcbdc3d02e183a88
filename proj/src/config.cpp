#include "lip2us/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#define TOML_ENABLE_FORMATTERS 1
#include <toml.hpp>

#include "lip2us/error.hpp"

namespace lip2us {

namespace {

// Reads typed keys from one table and remembers which were consumed so the
// rest can be reported as unknown.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <class T>
  void read(const char* key, T& dst) {
    const toml::node* node = find(key);
    if (!node) return;
    const std::string where = name_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!node->is_boolean() || !v) throw ConfigError(where + " must be a boolean");
      dst = *v;
    } else if constexpr (std::is_integral_v<T>) {
      if (!node->is_integer()) throw ConfigError(where + " must be an integer");
      const std::int64_t v = *node->value<std::int64_t>();
      if (std::is_unsigned_v<T> && v < 0) throw ConfigError(where + " must be >= 0");
      dst = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!node->is_number()) throw ConfigError(where + " must be a number");
      dst = *node->value<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!node->is_string()) throw ConfigError(where + " must be a string");
      dst = *node->value<std::string>();
    } else {
      static_assert(std::is_same_v<T, std::filesystem::path>);
      if (!node->is_string()) throw ConfigError(where + " must be a string");
      dst = *node->value<std::string>();
    }
  }

  const toml::node* find(const char* key) {
    used_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_)
      if (!used_.count(std::string(k.str())))
        throw ConfigError("unknown key '" + name_ + "." + std::string(k.str()) + "'");
  }

  const std::string& name() const { return name_; }

 private:
  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

void read_tower(Section& s, std::vector<TowerLayer>& tower) {
  const toml::node* node = s.find("tower");
  if (!node) return;
  const toml::array* arr = node->as_array();
  if (!arr) throw ConfigError("model.tower must be an array of {filters, kernel, stride, pool} tables");
  tower.clear();
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const toml::table* t = (*arr)[i].as_table();
    const std::string name = "model.tower[" + std::to_string(i) + "]";
    if (!t) throw ConfigError(name + " must be a table {filters, kernel, stride, pool}");
    Section ls(t, name);
    TowerLayer l;
    ls.read("filters", l.filters);
    ls.read("kernel", l.kernel);
    ls.read("stride", l.stride);
    ls.read("pool", l.pool);
    ls.finish();
    tower.push_back(l);
  }
}

void apply_override(toml::table& root, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not key=value");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  const std::string key = trim(text.substr(0, eq));
  const std::string raw = trim(text.substr(eq + 1));
  std::vector<std::string> path;
  std::stringstream ks(key);
  for (std::string part; std::getline(ks, part, '.');) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    path.push_back(part);
  }
  toml::table value_holder;
  try {
    value_holder = toml::parse("v = " + raw);
  } catch (const toml::parse_error&) {
    value_holder = toml::table{{"v", raw}};
  }
  toml::table* t = &root;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    toml::node* n = t->get(path[i]);
    if (!n) {
      t->insert(path[i], toml::table{});
      n = t->get(path[i]);
    }
    t = n->as_table();
    if (!t) throw ConfigError("override '" + key + "': '" + path[i] + "' is not a section");
  }
  t->insert_or_assign(path.back(), *value_holder.get("v"));
}

const toml::table* section_table(const toml::table& root, const char* name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) throw ConfigError(std::string("'") + name + "' must be a section");
  return n->as_table();
}

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  model.validate();
  for (double f : {split.train, split.val, split.test})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
  if (std::fabs(split.train + split.val + split.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (train.patience == 0) throw ConfigError("train.patience must be >= 1");
  if (train.max_epochs == 0) throw ConfigError("train.max_epochs must be >= 1");
  if (train.lr < 0) throw ConfigError("train.lr must be >= 0");
  if (!(train.beta1 >= 0 && train.beta1 < 1 && train.beta2 >= 0 && train.beta2 < 1))
    throw ConfigError("train.beta1 and train.beta2 must lie in [0,1)");
  if (train.epsilon <= 0) throw ConfigError("train.epsilon must be positive");
  if (flow.alpha <= 0) throw ConfigError("flow.alpha must be positive");
  if (flow.iterations < 1) throw ConfigError("flow.iterations must be >= 1");
  if (contour.row_end != 0 && contour.row_end <= contour.row_begin)
    throw ConfigError("metrics.contour_row_end must exceed contour_row_begin");
}

DatasetOptions RunConfig::dataset_options() const {
  DatasetOptions o;
  o.in_w = model.in_w;
  o.in_h = model.in_h;
  o.clip_len = model.clip_len;
  o.seq_len = model.seq_len;
  o.out_w = model.out_w;
  o.out_h = model.out_h;
  o.with_flow = model.variant.flow_tower() && model.variant.use_flow;
  o.flow = flow;
  return o;
}

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(os.str());
  }
  for (const auto& o : overrides) apply_override(root, o);

  const std::set<std::string> sections = {"data", "synth", "split", "train", "flow", "model", "ablation", "metrics",
                                          "output"};
  for (const auto& [k, v] : root)
    if (!sections.count(std::string(k.str()))) throw ConfigError("unknown section '" + std::string(k.str()) + "'");

  RunConfig c;
  Section data(section_table(root, "data"), "data");
  data.read("dir", c.data_dir);
  data.read("manifest", c.manifest);
  data.finish();

  Section sy(section_table(root, "synth"), "synth");
  auto& s = c.synth;
  sy.read("n_sequences", s.n_sequences);
  sy.read("frames_per_sequence", s.frames_per_sequence);
  sy.read("seed", s.seed);
  sy.read("lip_size", s.lip_size);
  sy.read("us_size", s.us_size);
  sy.read("sinusoids", s.sinusoids);
  sy.read("freq_min", s.freq_min);
  sy.read("freq_max", s.freq_max);
  sy.read("amplitude", s.amplitude);
  sy.read("latent_noise_sd", s.latent_noise_sd);
  sy.read("aperture_min", s.aperture_min);
  sy.read("aperture_max", s.aperture_max);
  sy.read("texture_sd", s.texture_sd);
  sy.read("apex_min", s.apex_min);
  sy.read("apex_max", s.apex_max);
  sy.read("ridge_sd", s.ridge_sd);
  sy.read("speckle_sd", s.speckle_sd);
  sy.finish();

  Section sp(section_table(root, "split"), "split");
  sp.read("train", c.split.train);
  sp.read("val", c.split.val);
  sp.read("test", c.split.test);
  sp.finish();

  Section tr(section_table(root, "train"), "train");
  tr.read("batch_size", c.train.batch_size);
  tr.read("lr", c.train.lr);
  tr.read("beta1", c.train.beta1);
  tr.read("beta2", c.train.beta2);
  tr.read("epsilon", c.train.epsilon);
  tr.read("max_epochs", c.train.max_epochs);
  tr.read("patience", c.train.patience);
  tr.read("seed", c.train.seed);
  tr.read("deterministic", c.train.deterministic);
  tr.finish();

  Section fl(section_table(root, "flow"), "flow");
  fl.read("alpha", c.flow.alpha);
  fl.read("iterations", c.flow.iterations);
  fl.finish();

  Section md(section_table(root, "model"), "model");
  auto& m = c.model;
  md.read("in_h", m.in_h);
  md.read("in_w", m.in_w);
  md.read("clip_len", m.clip_len);
  md.read("seq_len", m.seq_len);
  read_tower(md, m.tower);
  md.read("embed_dim", m.embed_dim);
  md.read("lstm_hidden", m.lstm_hidden);
  md.read("decoder_hidden", m.decoder_hidden);
  md.read("out_h", m.out_h);
  md.read("out_w", m.out_w);
  md.read("leaky_slope", m.leaky_slope);
  md.read("conv_dropout", m.conv_dropout);
  md.read("dense_dropout", m.dense_dropout);
  md.read("bn_momentum", m.bn_momentum);
  md.read("bn_epsilon", m.bn_epsilon);
  md.finish();

  Section ab(section_table(root, "ablation"), "ablation");
  ab.read("use_flow", m.variant.use_flow);
  ab.read("use_attention", m.variant.use_attention);
  ab.read("raw_only", m.variant.raw_only);
  ab.finish();

  Section me(section_table(root, "metrics"), "metrics");
  me.read("contour_row_begin", c.contour.row_begin);
  me.read("contour_row_end", c.contour.row_end);
  me.read("contour_smooth", c.contour.smooth);
  me.finish();

  Section out(section_table(root, "output"), "output");
  out.read("dir", c.out_dir);
  out.finish();

  c.validate();
  return c;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty() || path == "default") return parse_config("", overrides, "default");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, path);
}

std::string to_toml(const RunConfig& c) {
  auto i64 = [](std::size_t v) { return static_cast<std::int64_t>(v); };
  toml::table root;
  root.insert("data", toml::table{{"dir", c.data_dir.string()}, {"manifest", c.manifest}});
  const auto& s = c.synth;
  root.insert("synth", toml::table{{"n_sequences", i64(s.n_sequences)},
                                   {"frames_per_sequence", i64(s.frames_per_sequence)},
                                   {"seed", static_cast<std::int64_t>(s.seed)},
                                   {"lip_size", i64(s.lip_size)},
                                   {"us_size", i64(s.us_size)},
                                   {"sinusoids", i64(s.sinusoids)},
                                   {"freq_min", s.freq_min},
                                   {"freq_max", s.freq_max},
                                   {"amplitude", s.amplitude},
                                   {"latent_noise_sd", s.latent_noise_sd},
                                   {"aperture_min", s.aperture_min},
                                   {"aperture_max", s.aperture_max},
                                   {"texture_sd", s.texture_sd},
                                   {"apex_min", s.apex_min},
                                   {"apex_max", s.apex_max},
                                   {"ridge_sd", s.ridge_sd},
                                   {"speckle_sd", s.speckle_sd}});
  root.insert("split", toml::table{{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}});
  const auto& t = c.train;
  root.insert("train", toml::table{{"batch_size", i64(t.batch_size)},
                                   {"lr", t.lr},
                                   {"beta1", t.beta1},
                                   {"beta2", t.beta2},
                                   {"epsilon", t.epsilon},
                                   {"max_epochs", i64(t.max_epochs)},
                                   {"patience", i64(t.patience)},
                                   {"seed", static_cast<std::int64_t>(t.seed)},
                                   {"deterministic", t.deterministic}});
  root.insert("flow", toml::table{{"alpha", c.flow.alpha}, {"iterations", c.flow.iterations}});
  const auto& m = c.model;
  toml::array tower;
  for (const auto& l : m.tower)
    tower.push_back(toml::table{
        {"filters", i64(l.filters)}, {"kernel", i64(l.kernel)}, {"stride", i64(l.stride)}, {"pool", i64(l.pool)}});
  root.insert("model", toml::table{{"in_h", i64(m.in_h)},
                                   {"in_w", i64(m.in_w)},
                                   {"clip_len", i64(m.clip_len)},
                                   {"seq_len", i64(m.seq_len)},
                                   {"tower", tower},
                                   {"embed_dim", i64(m.embed_dim)},
                                   {"lstm_hidden", i64(m.lstm_hidden)},
                                   {"decoder_hidden", i64(m.decoder_hidden)},
                                   {"out_h", i64(m.out_h)},
                                   {"out_w", i64(m.out_w)},
                                   {"leaky_slope", m.leaky_slope},
                                   {"conv_dropout", m.conv_dropout},
                                   {"dense_dropout", m.dense_dropout},
                                   {"bn_momentum", m.bn_momentum},
                                   {"bn_epsilon", m.bn_epsilon}});
  root.insert("ablation", toml::table{{"use_flow", m.variant.use_flow},
                                      {"use_attention", m.variant.use_attention},
                                      {"raw_only", m.variant.raw_only}});
  root.insert("metrics", toml::table{{"contour_row_begin", i64(c.contour.row_begin)},
                                     {"contour_row_end", i64(c.contour.row_end)},
                                     {"contour_smooth", i64(c.contour.smooth)}});
  root.insert("output", toml::table{{"dir", c.out_dir.string()}});
  std::ostringstream os;
  os << root << '\n';
  return os.str();
}

}  // namespace lip2us
