#include "msinfluence/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "msinfluence/common.hpp"
#include "msinfluence/idx_io.hpp"

namespace msi {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw ConfigError("config: invalid integer list for " + key);
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& s, const std::string& key) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (...) {
      throw ConfigError("config: invalid integer list for " + key);
    }
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_u64s(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Typed setter table per section so unknown keys fail loudly.
using Setter = std::function<void(RunConfig&, const std::string&)>;

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw ConfigError("config: invalid number for " + key + ": '" + v + "'");
  }
}

long to_long(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw ConfigError("config: invalid integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw ConfigError("config: invalid integer for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: invalid boolean for " + key + ": '" + v + "'");
}

std::map<std::string, Setter> make_setters() {
  std::map<std::string, Setter> t;
  auto D = [](RunConfig& c) -> DatasetConfig& { return c.dataset; };

  t["dataset.kind"] = [D](RunConfig& c, const std::string& v) {
    if (v != "synthetic" && v != "idx") throw ConfigError("config: dataset.kind must be synthetic or idx");
    D(c).kind = v;
  };
  t["dataset.num_classes"] = [D](RunConfig& c, const std::string& v) { D(c).num_classes = static_cast<int>(to_long(v, "dataset.num_classes")); };
  t["dataset.dim"] = [D](RunConfig& c, const std::string& v) { D(c).dim = static_cast<int>(to_long(v, "dataset.dim")); };
  t["dataset.seed"] = [D](RunConfig& c, const std::string& v) { D(c).seed = to_u64(v, "dataset.seed"); };
  t["dataset.noise_sigma"] = [D](RunConfig& c, const std::string& v) { D(c).noise_sigma = to_double(v, "dataset.noise_sigma"); };
  t["dataset.label_noise"] = [D](RunConfig& c, const std::string& v) { D(c).label_noise = to_double(v, "dataset.label_noise"); };
  t["dataset.pretrain_classes"] = [D](RunConfig& c, const std::string& v) { D(c).pretrain_classes = parse_int_list(v, "dataset.pretrain_classes"); };
  t["dataset.finetune_classes"] = [D](RunConfig& c, const std::string& v) { D(c).finetune_classes = parse_int_list(v, "dataset.finetune_classes"); };
  t["dataset.pretrain_per_class"] = [D](RunConfig& c, const std::string& v) { D(c).pretrain_per_class = static_cast<int>(to_long(v, "dataset.pretrain_per_class")); };
  t["dataset.finetune_train_per_class"] = [D](RunConfig& c, const std::string& v) { D(c).finetune_train_per_class = static_cast<int>(to_long(v, "dataset.finetune_train_per_class")); };
  t["dataset.finetune_test_per_class"] = [D](RunConfig& c, const std::string& v) { D(c).finetune_test_per_class = static_cast<int>(to_long(v, "dataset.finetune_test_per_class")); };
  t["dataset.pool_per_class"] = [D](RunConfig& c, const std::string& v) { D(c).pool_per_class = static_cast<int>(to_long(v, "dataset.pool_per_class")); };
  t["dataset.idx_train_images"] = [D](RunConfig& c, const std::string& v) { D(c).idx_train_images = v; };
  t["dataset.idx_train_labels"] = [D](RunConfig& c, const std::string& v) { D(c).idx_train_labels = v; };
  t["dataset.idx_test_images"] = [D](RunConfig& c, const std::string& v) { D(c).idx_test_images = v; };
  t["dataset.idx_test_labels"] = [D](RunConfig& c, const std::string& v) { D(c).idx_test_labels = v; };
  t["dataset.idx_pretrain_limit"] = [D](RunConfig& c, const std::string& v) { D(c).idx_pretrain_limit = static_cast<int>(to_long(v, "dataset.idx_pretrain_limit")); };
  t["dataset.idx_finetune_limit"] = [D](RunConfig& c, const std::string& v) { D(c).idx_finetune_limit = static_cast<int>(to_long(v, "dataset.idx_finetune_limit")); };
  t["dataset.idx_test_limit"] = [D](RunConfig& c, const std::string& v) { D(c).idx_test_limit = static_cast<int>(to_long(v, "dataset.idx_test_limit")); };

  t["model.embed_dims"] = [](RunConfig& c, const std::string& v) { c.model.embed_dims = parse_int_list(v, "model.embed_dims"); };
  t["model.activation"] = [](RunConfig& c, const std::string& v) {
    if (v != "tanh" && v != "identity") throw ConfigError("config: model.activation must be tanh or identity");
    c.model.activation = v;
  };
  t["model.embed_output_activation"] = [](RunConfig& c, const std::string& v) { c.model.embed_output_activation = to_bool(v, "model.embed_output_activation"); };
  t["model.identity_pretrain_head"] = [](RunConfig& c, const std::string& v) { c.model.identity_pretrain_head = to_bool(v, "model.identity_pretrain_head"); };
  t["model.l2_pretrain"] = [](RunConfig& c, const std::string& v) { c.model.l2_pretrain = to_double(v, "model.l2_pretrain"); };
  t["model.l2_finetune"] = [](RunConfig& c, const std::string& v) { c.model.l2_finetune = to_double(v, "model.l2_finetune"); };
  t["model.init_seed"] = [](RunConfig& c, const std::string& v) { c.model.init_seed = to_u64(v, "model.init_seed"); };

  auto add_train = [&t](const std::string& sec, TrainSection RunConfig::*member, bool finetune) {
    t[sec + ".optimizer"] = [member](RunConfig& c, const std::string& v) {
      if (v != "adam" && v != "sgd" && v != "newton") throw ConfigError("config: optimizer must be adam, sgd or newton");
      (c.*member).optimizer = v;
    };
    t[sec + ".lr"] = [member, sec](RunConfig& c, const std::string& v) { (c.*member).lr = to_double(v, sec + ".lr"); };
    t[sec + ".batch_size"] = [member, sec](RunConfig& c, const std::string& v) { (c.*member).batch_size = static_cast<int>(to_long(v, sec + ".batch_size")); };
    t[sec + ".max_steps"] = [member, sec](RunConfig& c, const std::string& v) { (c.*member).max_steps = to_long(v, sec + ".max_steps"); };
    t[sec + ".grad_tol"] = [member, sec](RunConfig& c, const std::string& v) { (c.*member).grad_tol = to_double(v, sec + ".grad_tol"); };
    t[sec + ".check_every"] = [member, sec](RunConfig& c, const std::string& v) { (c.*member).check_every = static_cast<int>(to_long(v, sec + ".check_every")); };
    t[sec + ".seed"] = [member, sec](RunConfig& c, const std::string& v) { (c.*member).seed = to_u64(v, sec + ".seed"); };
    if (finetune) {
      t[sec + ".mode"] = [member](RunConfig& c, const std::string& v) {
        if (v != "fixed_W" && v != "update_W") throw ConfigError("config: finetune.mode must be fixed_W or update_W");
        (c.*member).mode = v;
      };
      t[sec + ".proximal_alpha"] = [member, sec](RunConfig& c, const std::string& v) { (c.*member).proximal_alpha = to_double(v, sec + ".proximal_alpha"); };
    }
  };
  add_train("pretrain", &RunConfig::pretrain, false);
  add_train("finetune", &RunConfig::finetune, true);

  t["solver.pretrain_damping"] = [](RunConfig& c, const std::string& v) { c.solver.pretrain_damping = to_double(v, "solver.pretrain_damping"); };
  t["solver.finetune_damping"] = [](RunConfig& c, const std::string& v) { c.solver.finetune_damping = to_double(v, "solver.finetune_damping"); };
  t["solver.cg_tol"] = [](RunConfig& c, const std::string& v) { c.solver.cg_tol = to_double(v, "solver.cg_tol"); };
  t["solver.cg_max_iters"] = [](RunConfig& c, const std::string& v) { c.solver.cg_max_iters = static_cast<int>(to_long(v, "solver.cg_max_iters")); };
  t["solver.hessian_subsample"] = [](RunConfig& c, const std::string& v) { c.solver.hessian_subsample = to_long(v, "solver.hessian_subsample"); };
  t["solver.subsample_seed"] = [](RunConfig& c, const std::string& v) { c.solver.subsample_seed = to_u64(v, "solver.subsample_seed"); };

  t["influence.alpha"] = [](RunConfig& c, const std::string& v) { c.influence.alpha = to_double(v, "influence.alpha"); };
  t["influence.identity_hessian"] = [](RunConfig& c, const std::string& v) { c.influence.identity_hessian = to_bool(v, "influence.identity_hessian"); };
  t["influence.aggregation"] = [](RunConfig& c, const std::string& v) {
    if (v != "sum" && v != "mean_abs") throw ConfigError("config: influence.aggregation must be sum or mean_abs");
    c.influence.aggregation = v;
  };

  t["scenario.name"] = [](RunConfig& c, const std::string& v) { c.scenario.name = v; };
  t["scenario.sweep_count"] = [](RunConfig& c, const std::string& v) { c.scenario.sweep_count = static_cast<int>(to_long(v, "scenario.sweep_count")); };
  t["scenario.seeds"] = [](RunConfig& c, const std::string& v) { c.scenario.seeds = parse_u64_list(v, "scenario.seeds"); };
  t["scenario.top_fraction"] = [](RunConfig& c, const std::string& v) { c.scenario.top_fraction = to_double(v, "scenario.top_fraction"); };
  t["scenario.eps"] = [](RunConfig& c, const std::string& v) { c.scenario.eps = to_double(v, "scenario.eps"); };
  t["scenario.loo_max_steps"] = [](RunConfig& c, const std::string& v) { c.scenario.loo_max_steps = to_long(v, "scenario.loo_max_steps"); };
  t["scenario.loo_grad_tol"] = [](RunConfig& c, const std::string& v) { c.scenario.loo_grad_tol = to_double(v, "scenario.loo_grad_tol"); };
  t["scenario.loo_optimizer"] = [](RunConfig& c, const std::string& v) {
    if (v != "adam" && v != "sgd" && v != "newton" && !v.empty()) throw ConfigError("config: loo_optimizer must be adam, sgd or newton");
    c.scenario.loo_optimizer = v;
  };
  t["scenario.datasize_factor"] = [](RunConfig& c, const std::string& v) { c.scenario.datasize_factor = static_cast<int>(to_long(v, "scenario.datasize_factor")); };
  t["scenario.per_pair"] = [](RunConfig& c, const std::string& v) { c.scenario.per_pair = to_bool(v, "scenario.per_pair"); };
  return t;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  static const std::map<std::string, Setter> setters = make_setters();
  static const std::vector<std::string> sections = {
      "dataset", "model", "pretrain", "finetune", "solver", "influence", "scenario"};

  RunConfig cfg;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      if (std::find(sections.begin(), sections.end(), section) == sections.end()) {
        throw ConfigError("config: unknown section [" + section + "] at line " +
                          std::to_string(lineno));
      }
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key=value at line " + std::to_string(lineno));
    }
    if (section.empty()) {
      throw ConfigError("config: key outside any [section] at line " + std::to_string(lineno));
    }
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("config: unknown key '" + key + "' at line " + std::to_string(lineno));
    }
    it->second(cfg, value);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream o;
  o << "[dataset]\n";
  o << "kind=" << c.dataset.kind << "\n";
  o << "num_classes=" << c.dataset.num_classes << "\n";
  o << "dim=" << c.dataset.dim << "\n";
  o << "seed=" << c.dataset.seed << "\n";
  o << "noise_sigma=" << fmt_double(c.dataset.noise_sigma) << "\n";
  o << "label_noise=" << fmt_double(c.dataset.label_noise) << "\n";
  o << "pretrain_classes=" << join_ints(c.dataset.pretrain_classes) << "\n";
  o << "finetune_classes=" << join_ints(c.dataset.finetune_classes) << "\n";
  o << "pretrain_per_class=" << c.dataset.pretrain_per_class << "\n";
  o << "finetune_train_per_class=" << c.dataset.finetune_train_per_class << "\n";
  o << "finetune_test_per_class=" << c.dataset.finetune_test_per_class << "\n";
  o << "pool_per_class=" << c.dataset.pool_per_class << "\n";
  o << "idx_train_images=" << c.dataset.idx_train_images << "\n";
  o << "idx_train_labels=" << c.dataset.idx_train_labels << "\n";
  o << "idx_test_images=" << c.dataset.idx_test_images << "\n";
  o << "idx_test_labels=" << c.dataset.idx_test_labels << "\n";
  o << "idx_pretrain_limit=" << c.dataset.idx_pretrain_limit << "\n";
  o << "idx_finetune_limit=" << c.dataset.idx_finetune_limit << "\n";
  o << "idx_test_limit=" << c.dataset.idx_test_limit << "\n";
  o << "[model]\n";
  o << "embed_dims=" << join_ints(c.model.embed_dims) << "\n";
  o << "activation=" << c.model.activation << "\n";
  o << "embed_output_activation=" << (c.model.embed_output_activation ? "true" : "false") << "\n";
  o << "identity_pretrain_head=" << (c.model.identity_pretrain_head ? "true" : "false") << "\n";
  o << "l2_pretrain=" << fmt_double(c.model.l2_pretrain) << "\n";
  o << "l2_finetune=" << fmt_double(c.model.l2_finetune) << "\n";
  o << "init_seed=" << c.model.init_seed << "\n";
  auto train = [&o](const char* name, const TrainSection& s, bool finetune) {
    o << "[" << name << "]\n";
    o << "optimizer=" << s.optimizer << "\n";
    o << "lr=" << fmt_double(s.lr) << "\n";
    o << "batch_size=" << s.batch_size << "\n";
    o << "max_steps=" << s.max_steps << "\n";
    o << "grad_tol=" << fmt_double(s.grad_tol) << "\n";
    o << "check_every=" << s.check_every << "\n";
    o << "seed=" << s.seed << "\n";
    if (finetune) {
      o << "mode=" << s.mode << "\n";
      o << "proximal_alpha=" << fmt_double(s.proximal_alpha) << "\n";
    }
  };
  train("pretrain", c.pretrain, false);
  train("finetune", c.finetune, true);
  o << "[solver]\n";
  o << "pretrain_damping=" << fmt_double(c.solver.pretrain_damping) << "\n";
  o << "finetune_damping=" << fmt_double(c.solver.finetune_damping) << "\n";
  o << "cg_tol=" << fmt_double(c.solver.cg_tol) << "\n";
  o << "cg_max_iters=" << c.solver.cg_max_iters << "\n";
  o << "hessian_subsample=" << c.solver.hessian_subsample << "\n";
  o << "subsample_seed=" << c.solver.subsample_seed << "\n";
  o << "[influence]\n";
  o << "alpha=" << fmt_double(c.influence.alpha) << "\n";
  o << "identity_hessian=" << (c.influence.identity_hessian ? "true" : "false") << "\n";
  o << "aggregation=" << c.influence.aggregation << "\n";
  o << "[scenario]\n";
  o << "name=" << c.scenario.name << "\n";
  o << "sweep_count=" << c.scenario.sweep_count << "\n";
  o << "seeds=" << join_u64s(c.scenario.seeds) << "\n";
  o << "top_fraction=" << fmt_double(c.scenario.top_fraction) << "\n";
  o << "eps=" << fmt_double(c.scenario.eps) << "\n";
  o << "loo_max_steps=" << c.scenario.loo_max_steps << "\n";
  o << "loo_grad_tol=" << fmt_double(c.scenario.loo_grad_tol) << "\n";
  o << "loo_optimizer=" << c.scenario.loo_optimizer << "\n";
  o << "datasize_factor=" << c.scenario.datasize_factor << "\n";
  o << "per_pair=" << (c.scenario.per_pair ? "true" : "false") << "\n";
  return o.str();
}

std::string config_hash(const RunConfig& cfg) {
  return to_hex(fnv1a64(serialize_config(cfg)));
}

TrainConfig train_config_of(const TrainSection& s) {
  TrainConfig t;
  t.optimizer = s.optimizer == "adam"  ? OptimizerKind::Adam
                : s.optimizer == "sgd" ? OptimizerKind::Sgd
                                       : OptimizerKind::Newton;
  t.lr = s.lr;
  t.batch_size = s.batch_size;
  t.max_steps = s.max_steps;
  t.grad_tol = s.grad_tol;
  t.check_every = s.check_every;
  t.seed = s.seed;
  t.proximal_alpha = s.proximal_alpha;
  return t;
}

FinetuneMode finetune_mode_of(const TrainSection& s) {
  return s.mode == "fixed_W" ? FinetuneMode::FixedW : FinetuneMode::UpdateW;
}

InfluenceConfig influence_config_of(const RunConfig& cfg) {
  InfluenceConfig ic;
  ic.pretrain_solver.damping_lambda = cfg.solver.pretrain_damping;
  ic.pretrain_solver.cg_tol = cfg.solver.cg_tol;
  ic.pretrain_solver.cg_max_iters = cfg.solver.cg_max_iters;
  ic.pretrain_solver.hessian_subsample = cfg.solver.hessian_subsample;
  ic.pretrain_solver.subsample_seed = cfg.solver.subsample_seed;
  ic.finetune_solver = ic.pretrain_solver;
  ic.finetune_solver.damping_lambda = cfg.solver.finetune_damping;
  ic.alpha = cfg.influence.alpha;
  ic.identity_hessian = cfg.influence.identity_hessian;
  return ic;
}

TruthConfig truth_config_of(const RunConfig& cfg) {
  TruthConfig t;
  t.pretrain = train_config_of(cfg.pretrain);
  t.finetune = train_config_of(cfg.finetune);
  t.pretrain.max_steps = cfg.scenario.loo_max_steps;
  t.finetune.max_steps = cfg.scenario.loo_max_steps;
  if (cfg.scenario.loo_grad_tol > 0.0) {
    t.pretrain.grad_tol = cfg.scenario.loo_grad_tol;
    t.finetune.grad_tol = cfg.scenario.loo_grad_tol;
  }
  if (!cfg.scenario.loo_optimizer.empty()) {
    const OptimizerKind kind = cfg.scenario.loo_optimizer == "adam"  ? OptimizerKind::Adam
                               : cfg.scenario.loo_optimizer == "sgd" ? OptimizerKind::Sgd
                                                                     : OptimizerKind::Newton;
    t.pretrain.optimizer = kind;
    t.finetune.optimizer = kind;
  }
  t.eps = cfg.scenario.eps;
  return t;
}

Pipeline build_pipeline(const RunConfig& cfg) {
  Pipeline p;
  const DatasetConfig& d = cfg.dataset;

  if (d.kind == "synthetic") {
    // One pool, with disjoint draws within each class in a fixed order:
    // pretraining rows first, then finetune test, then finetune train. The
    // test block precedes the train block so that enlarging the finetune
    // training set leaves the test set untouched. The uniform pool size
    // keeps the pool byte-identical across configs that differ only in
    // which classes each stage uses.
    const int need_pre = d.pretrain_per_class;
    const int need_ft = d.finetune_train_per_class + d.finetune_test_per_class;
    int per_class = d.pool_per_class > 0 ? d.pool_per_class : need_pre + need_ft;
    SyntheticSpec spec;
    spec.num_classes = d.num_classes;
    spec.dim = d.dim;
    spec.per_class = std::max(per_class, 1);
    spec.class_means_seed = d.seed;
    spec.noise_sigma = d.noise_sigma;
    spec.label_noise = d.label_noise;
    Dataset pool = make_synthetic(spec);

    Dataset pre_pool = filter_classes(pool, d.pretrain_classes, Role::Pretrain);
    p.Z = split_per_class(pre_pool, d.pretrain_per_class, Role::Pretrain, Role::Pretrain).first;

    Dataset ft_pool = filter_classes(pool, d.finetune_classes, Role::FinetuneTrain);
    // Skip rows already consumed by pretraining for overlapping classes.
    std::vector<int> pre_quota(d.num_classes, 0);
    for (int c : d.pretrain_classes) {
      if (c >= 0 && c < d.num_classes) pre_quota[c] = d.pretrain_per_class;
    }
    std::vector<int> keep;
    std::vector<int> seen(d.num_classes, 0);
    for (int i = 0; i < ft_pool.size(); ++i) {
      const int label = ft_pool.labels[i];
      if (seen[label]++ < pre_quota[label]) continue;
      keep.push_back(i);
    }
    Dataset ft_avail;
    ft_avail.role = Role::FinetuneTrain;
    ft_avail.class_set = ft_pool.class_set;
    ft_avail.features = Tensor::zeros({keep.size(), ft_pool.features.cols()});
    ft_avail.labels.resize(keep.size());
    ft_avail.targets.resize(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      for (std::size_t j = 0; j < ft_pool.features.cols(); ++j) {
        ft_avail.features.at(r, j) = ft_pool.features.at(keep[r], j);
      }
      ft_avail.labels[r] = ft_pool.labels[keep[r]];
      ft_avail.targets[r] = ft_pool.targets[keep[r]];
    }
    auto split = split_per_class(ft_avail, d.finetune_test_per_class, Role::FinetuneTest,
                                 Role::FinetuneTrain);
    p.test = std::move(split.first);
    p.X = split_per_class(split.second, d.finetune_train_per_class, Role::FinetuneTrain,
                          Role::FinetuneTrain)
              .first;
  } else if (d.kind == "idx") {
    std::set<int> pre_filter(d.pretrain_classes.begin(), d.pretrain_classes.end());
    std::set<int> ft_filter(d.finetune_classes.begin(), d.finetune_classes.end());
    p.Z = load_idx(d.idx_train_images, d.idx_train_labels, pre_filter, d.idx_pretrain_limit);
    p.Z.role = Role::Pretrain;
    p.X = load_idx(d.idx_train_images, d.idx_train_labels, ft_filter, d.idx_finetune_limit);
    p.X.role = Role::FinetuneTrain;
    p.test = load_idx(d.idx_test_images, d.idx_test_labels, ft_filter, d.idx_test_limit);
    p.test.role = Role::FinetuneTest;
  } else {
    throw ConfigError("config: unknown dataset kind '" + d.kind + "'");
  }

  ModelArch arch;
  arch.input_dim = p.Z.dim();
  arch.embed_dims = cfg.model.embed_dims;
  arch.num_pretrain_classes = static_cast<int>(p.Z.class_set.size());
  arch.num_finetune_classes = static_cast<int>(p.X.class_set.size());
  arch.activation = cfg.model.activation == "tanh" ? Activation::Tanh : Activation::Identity;
  arch.embed_output_activation = cfg.model.embed_output_activation;
  arch.identity_pretrain_head = cfg.model.identity_pretrain_head;
  arch.l2_pretrain = cfg.model.l2_pretrain;
  arch.l2_finetune = cfg.model.l2_finetune;
  arch.init_seed = cfg.model.init_seed;
  p.model = std::make_unique<TwoStageModel>(arch);
  return p;
}

}  // namespace msi
