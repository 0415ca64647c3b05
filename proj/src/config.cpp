#include "fedirm/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fedirm {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::FedIrm: return "fedirm";
    case Mode::FedConsistency: return "fed_consistency";
    case Mode::FedAvgLabeledOnly: return "fedavg_labeled_only";
    case Mode::FedAvgAllLabeled: return "fedavg_all_labeled";
  }
  return "fedirm";
}

Mode mode_from_string(const std::string& name) {
  if (name == "fedirm") return Mode::FedIrm;
  if (name == "fed_consistency") return Mode::FedConsistency;
  if (name == "fedavg_labeled_only") return Mode::FedAvgLabeledOnly;
  if (name == "fedavg_all_labeled") return Mode::FedAvgAllLabeled;
  throw ConfigError("unknown mode: " + name);
}

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("bad integer value for " + key + ": '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean value for " + key + ": '" + value + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"experiment.mode",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.mode = mode_from_string(v);
       }},
      {"experiment.seed",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.seed = parse_u64(k, v);
       }},
      {"experiment.rounds",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.rounds = parse_u64(k, v);
       }},
      {"experiment.clients",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.clients = parse_u64(k, v);
       }},
      {"experiment.labeled_clients",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.labeled_clients = parse_u64(k, v);
       }},
      {"experiment.active_unlabeled",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.active_unlabeled = parse_u64(k, v);
       }},
      {"experiment.out_dir",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"data.source",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         if (v == "blobs") c.source = DataSource::Blobs;
         else if (v == "idx") c.source = DataSource::Idx;
         else throw ConfigError("unknown data source: " + v);
       }},
      {"data.classes",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.classes = parse_u64(k, v);
       }},
      {"data.per_class",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.per_class = parse_u64(k, v);
       }},
      {"data.dimension",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.dimension = parse_u64(k, v);
       }},
      {"data.spread",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.spread = parse_double(k, v);
       }},
      {"data.images",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.images_path = v;
       }},
      {"data.labels",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.labels_path = v;
       }},
      {"data.standardize",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.standardize = parse_bool(k, v);
       }},
      {"model.hidden",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.hidden = parse_u64(k, v);
       }},
      {"model.dropout",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.dropout = parse_double(k, v);
       }},
      {"model.activation",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         try {
           c.activation = activation_from_string(v);
         } catch (const InvalidInput& e) {
           throw ConfigError(e.what());
         }
       }},
      {"optimizer.learning_rate",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.adam.learning_rate = parse_double(k, v);
       }},
      {"optimizer.beta1",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.adam.beta1 = parse_double(k, v);
       }},
      {"optimizer.beta2",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.adam.beta2 = parse_double(k, v);
       }},
      {"optimizer.epsilon",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.adam.epsilon = parse_double(k, v);
       }},
      {"local.batch_size",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.batch_size = parse_u64(k, v);
         c.batch_size_explicit = true;
       }},
      {"local.epochs",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.epochs = parse_u64(k, v);
       }},
      {"local.noise_sigma",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.perturb.sigma = parse_double(k, v);
       }},
      {"local.temperature",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.temperature = parse_double(k, v);
       }},
      {"local.mc_passes",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.mc_passes = static_cast<int>(parse_u64(k, v));
       }},
      {"local.entropy_threshold",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.entropy_threshold = parse_double(k, v);
       }},
      {"local.warmup_rounds",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.warmup_rounds = parse_u64(k, v);
       }},
      {"local.warmup_squared",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.warmup_squared = parse_bool(k, v);
       }},
      {"local.irm_weight",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.irm_weight = parse_double(k, v);
       }},
      {"local.unlabeled_uses_logits",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.local.unlabeled_uses_logits = parse_bool(k, v);
       }},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");

    const std::string qualified = section + "." + key;
    const auto it = key_table().find(qualified);
    if (it == key_table().end())
      throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    it->second(cfg, qualified, value);
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config file not found: " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return parse_config_text(buffer.str());
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[experiment]\n";
  os << "mode = " << to_string(cfg.mode) << '\n';
  os << "seed = " << cfg.seed << '\n';
  os << "rounds = " << cfg.rounds << '\n';
  os << "clients = " << cfg.clients << '\n';
  os << "labeled_clients = " << cfg.labeled_clients << '\n';
  os << "active_unlabeled = " << cfg.active_unlabeled << '\n';
  if (!cfg.out_dir.empty()) os << "out_dir = " << cfg.out_dir << '\n';
  os << "\n[data]\n";
  os << "source = " << (cfg.source == DataSource::Blobs ? "blobs" : "idx") << '\n';
  os << "classes = " << cfg.classes << '\n';
  os << "per_class = " << cfg.per_class << '\n';
  os << "dimension = " << cfg.dimension << '\n';
  os << "spread = " << fmt(cfg.spread) << '\n';
  if (!cfg.images_path.empty()) os << "images = " << cfg.images_path << '\n';
  if (!cfg.labels_path.empty()) os << "labels = " << cfg.labels_path << '\n';
  os << "standardize = " << (cfg.standardize ? "true" : "false") << '\n';
  os << "\n[model]\n";
  os << "hidden = " << cfg.hidden << '\n';
  os << "dropout = " << fmt(cfg.dropout) << '\n';
  os << "activation = " << to_string(cfg.activation) << '\n';
  os << "\n[optimizer]\n";
  os << "learning_rate = " << fmt(cfg.local.adam.learning_rate) << '\n';
  os << "beta1 = " << fmt(cfg.local.adam.beta1) << '\n';
  os << "beta2 = " << fmt(cfg.local.adam.beta2) << '\n';
  os << "epsilon = " << fmt(cfg.local.adam.epsilon) << '\n';
  os << "\n[local]\n";
  os << "batch_size = " << cfg.local.batch_size << '\n';
  os << "epochs = " << cfg.local.epochs << '\n';
  os << "noise_sigma = " << fmt(cfg.local.perturb.sigma) << '\n';
  os << "temperature = " << fmt(cfg.local.temperature) << '\n';
  os << "mc_passes = " << cfg.local.mc_passes << '\n';
  os << "entropy_threshold = " << fmt(cfg.local.entropy_threshold) << '\n';
  os << "warmup_rounds = " << cfg.local.warmup_rounds << '\n';
  os << "warmup_squared = " << (cfg.local.warmup_squared ? "true" : "false") << '\n';
  os << "irm_weight = " << fmt(cfg.local.irm_weight) << '\n';
  os << "unlabeled_uses_logits = " << (cfg.local.unlabeled_uses_logits ? "true" : "false")
     << '\n';
  return os.str();
}

void resolve(ExperimentConfig& cfg) {
  if (cfg.mode == Mode::FedAvgAllLabeled) cfg.labeled_clients = cfg.clients;
  if (!cfg.batch_size_explicit)
    cfg.local.batch_size =
        cfg.source == DataSource::Blobs ? kSyntheticBatchSize : kDefaultBatchSize;
  cfg.batch_size_explicit = true;  // the echoed config pins the resolved value

  if (cfg.clients < 1) throw ConfigError("clients must be at least 1");
  if (cfg.labeled_clients < 1 || cfg.labeled_clients > cfg.clients)
    throw ConfigError("labeled_clients must satisfy 1 <= m <= clients");
  if (cfg.active_unlabeled > cfg.clients - cfg.labeled_clients)
    throw ConfigError("active_unlabeled exceeds available unlabeled clients");
  if (cfg.rounds < 1) throw ConfigError("rounds must be at least 1");
  if (cfg.classes < 2) throw ConfigError("classes must be at least 2");
  if (cfg.per_class < 1) throw ConfigError("per_class must be at least 1");
  if (cfg.dimension < 2) throw ConfigError("dimension must be at least 2");
  if (cfg.spread <= 0.0) throw ConfigError("spread must be positive");
  if (cfg.source == DataSource::Idx && (cfg.images_path.empty() || cfg.labels_path.empty()))
    throw ConfigError("idx source requires images and labels paths");
  if (cfg.hidden < 1) throw ConfigError("hidden width must be at least 1");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw ConfigError("dropout must be in [0, 1)");
  if (cfg.local.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (cfg.local.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (cfg.local.adam.learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (cfg.local.temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (cfg.local.mc_passes < 2) throw ConfigError("mc_passes must be at least 2");
  if (cfg.local.entropy_threshold < 0.0)
    throw ConfigError("entropy_threshold must be >= 0");
  if (cfg.local.warmup_rounds < 1) throw ConfigError("warmup_rounds must be at least 1");
  if (cfg.local.irm_weight < 0.0) throw ConfigError("irm_weight must be >= 0");
  if (cfg.local.perturb.sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
}

}  // namespace fedirm
