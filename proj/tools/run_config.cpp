#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "relens/error.hpp"
#include "relens/relspace.hpp"
#include "relens/toy.hpp"
#include "relens/wire.hpp"

namespace relens::cli {

namespace {

using nlohmann::json;

// Collects problems instead of stopping at the first one.
class Checker {
 public:
  explicit Checker(std::filesystem::path base) : base_(std::move(base)) {}

  void fail(const std::string& field, const std::string& why) { problems_.push_back(field + ": " + why); }

  template <class T>
  std::optional<T> get(const json& obj, const std::string& key, const std::string& field, bool required) {
    if (!obj.is_object() || !obj.contains(key)) {
      if (required) fail(field, "missing");
      return std::nullopt;
    }
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception&) {
      fail(field, "wrong type");
      return std::nullopt;
    }
  }

  std::filesystem::path path(const json& obj, const std::string& key, const std::string& field) {
    auto text = get<std::string>(obj, key, field, true);
    if (!text) return {};
    std::filesystem::path p(*text);
    if (p.is_relative()) p = base_ / p;
    if (!std::filesystem::exists(p)) fail(field, "no such file '" + p.string() + "'");
    return p;
  }

  void finish() const {
    if (problems_.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& p : problems_) msg += "\n  " + p;
    throw ConfigError(msg);
  }

 private:
  std::filesystem::path base_;
  std::vector<std::string> problems_;
};

BackendSpec parse_backend(const json& j, const std::string& field, Checker& check) {
  BackendSpec b;
  if (!j.is_object()) {
    check.fail(field, "must be an object");
    return b;
  }
  b.kind = check.get<std::string>(j, "kind", field + ".kind", true).value_or("");
  if (b.kind == "ngram") {
    b.corpus = check.path(j, "corpus", field + ".corpus");
    b.order = check.get<int>(j, "order", field + ".order", false).value_or(b.order);
    b.delta = check.get<double>(j, "delta", field + ".delta", false).value_or(b.delta);
    if (b.order < 1) check.fail(field + ".order", "must be >= 1");
    if (!(b.delta > 0.0)) check.fail(field + ".delta", "must be > 0");
  } else if (b.kind == "table") {
    b.table = check.path(j, "path", field + ".path");
  } else if (b.kind == "remote") {
    b.transport = check.get<std::string>(j, "transport", field + ".transport", false).value_or(b.transport);
    b.timeout_s = check.get<double>(j, "timeout_s", field + ".timeout_s", false).value_or(b.timeout_s);
    if (!(b.timeout_s > 0.0)) check.fail(field + ".timeout_s", "must be > 0");
    if (b.transport == "stdio") {
      b.command = check.get<std::vector<std::string>>(j, "command", field + ".command", true).value_or(b.command);
      if (j.contains("command") && b.command.empty()) check.fail(field + ".command", "must not be empty");
    } else if (b.transport == "socket") {
      b.endpoint = check.get<std::string>(j, "endpoint", field + ".endpoint", true).value_or("");
      if (!b.endpoint.empty() && b.endpoint.find(':') == std::string::npos) {
        check.fail(field + ".endpoint", "expected host:port");
      }
    } else {
      check.fail(field + ".transport", "expected stdio or socket");
    }
  } else if (!b.kind.empty()) {
    check.fail(field + ".kind", "unknown backend kind '" + b.kind + "'");
  }
  return b;
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path, const Overrides& ov) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": top level must be an object");

  RunConfig cfg;
  cfg.base_dir = std::filesystem::absolute(path).parent_path();
  Checker check(cfg.base_dir);

  const json models = j.value("models", json::array());
  if (!models.is_array() || models.empty()) check.fail("models", "need at least one model entry");
  for (std::size_t i = 0; models.is_array() && i < models.size(); ++i) {
    const std::string field = "models[" + std::to_string(i) + "]";
    const json& m = models[i];
    ModelSpec spec;
    spec.name = check.get<std::string>(m, "name", field + ".name", true).value_or("");
    spec.vocab = check.path(m, "vocab", field + ".vocab");
    if (auto conv = check.get<std::string>(m, "convention", field + ".convention", false)) {
      try {
        spec.convention = parse_convention(*conv);
      } catch (const ConfigError& e) {
        check.fail(field + ".convention", e.what());
      }
    }
    spec.embeddings = check.path(m, "embeddings", field + ".embeddings");
    if (m.is_object() && m.contains("backend")) {
      spec.backend = parse_backend(m.at("backend"), field + ".backend", check);
    } else {
      check.fail(field + ".backend", "missing");
    }
    for (const auto& other : cfg.models) {
      if (!spec.name.empty() && other.name == spec.name) check.fail(field + ".name", "duplicate '" + spec.name + "'");
    }
    cfg.models.push_back(std::move(spec));
  }

  cfg.anchors = ov.anchors.value_or(check.get<std::string>(j, "anchors", "anchors", false).value_or(cfg.anchors));

  const json fusion = j.value("fusion", json::object());
  cfg.fusion.eta = ov.eta.value_or(check.get<double>(fusion, "eta", "fusion.eta", false).value_or(cfg.fusion.eta));
  cfg.fusion.steps = ov.steps.value_or(check.get<int>(fusion, "steps", "fusion.steps", false).value_or(cfg.fusion.steps));
  cfg.fusion.weights =
      check.get<std::vector<double>>(fusion, "weights", "fusion.weights", false).value_or(cfg.fusion.weights);
  cfg.fusion.prob_floor =
      check.get<double>(fusion, "prob_floor", "fusion.prob_floor", false).value_or(cfg.fusion.prob_floor);
  cfg.fusion.early_stop_loss =
      check.get<double>(fusion, "early_stop_loss", "fusion.early_stop_loss", false).value_or(cfg.fusion.early_stop_loss);
  try {
    cfg.fusion.validate(cfg.models.empty() ? 1 : cfg.models.size());
  } catch (const ConfigError& e) {
    std::istringstream lines(e.what());
    std::string line;
    std::getline(lines, line);  // heading
    bool any = false;
    while (std::getline(lines, line)) {
      const auto start = line.find_first_not_of(" -");
      if (start != std::string::npos) {
        check.fail("fusion." + line.substr(start, line.find(' ', start) - start), line.substr(start));
        any = true;
      }
    }
    if (!any) check.fail("fusion", e.what());
  }

  if (ov.main) {
    cfg.main = *ov.main;
  } else if (j.contains("main")) {
    if (j["main"].is_number_unsigned()) {
      cfg.main = std::to_string(j["main"].get<std::size_t>());
    } else if (j["main"].is_string()) {
      cfg.main = j["main"].get<std::string>();
    } else {
      check.fail("main", "expected \"auto\" or a model index");
    }
  }
  if (cfg.main != "auto") {
    try {
      std::size_t used = 0;
      const auto idx = std::stoul(cfg.main, &used);
      if (used != cfg.main.size() || idx >= std::max<std::size_t>(cfg.models.size(), 1)) throw std::out_of_range("");
    } catch (const std::exception&) {
      check.fail("main", "expected \"auto\" or an index below the model count");
    }
  }
  try {
    AnchorStrategy::parse(cfg.anchors, 0);
  } catch (const ConfigError& e) {
    check.fail("anchors", e.what());
  }

  const json stop = j.value("stop", json::object());
  cfg.stop.max_tokens =
      ov.max_tokens.value_or(check.get<std::size_t>(stop, "max_tokens", "stop.max_tokens", false).value_or(cfg.stop.max_tokens));
  cfg.stop.stop_surfaces =
      check.get<std::vector<std::string>>(stop, "stop_surfaces", "stop.stop_surfaces", false).value_or(cfg.stop.stop_surfaces);

  const json datasets = j.value("datasets", json::object());
  if (ov.dataset) {
    std::filesystem::path p(*ov.dataset);
    if (!std::filesystem::exists(p)) check.fail("dataset", "no such file '" + p.string() + "'");
    cfg.dev = p;
  } else if (datasets.contains("dev")) {
    cfg.dev = check.path(datasets, "dev", "datasets.dev");
  }
  if (datasets.contains("test")) cfg.test = check.path(datasets, "test", "datasets.test");

  if (ov.seed) {
    cfg.seed = ov.seed;
  } else {
    cfg.seed = check.get<std::uint64_t>(j, "seed", "seed", true);
  }

  if (ov.out) {
    cfg.output_dir = *ov.out;
  } else if (auto out = check.get<std::string>(j, "output_dir", "output_dir", false)) {
    cfg.output_dir = *out;
    if (cfg.output_dir.is_relative()) cfg.output_dir = cfg.base_dir / cfg.output_dir;
  }

  check.finish();
  cfg.fusion.main = cfg.main == "auto" ? MainPolicy::auto_dev() : MainPolicy::fixed(std::stoul(cfg.main));
  return cfg;
}

std::string describe_plan(const RunConfig& cfg, const std::string& command) {
  std::ostringstream s;
  s << "command: " << command << '\n';
  s << "models:\n";
  for (const auto& m : cfg.models) {
    s << "  " << m.name << ": vocab " << m.vocab.string() << ", embeddings " << m.embeddings.string()
      << ", backend " << m.backend.kind;
    if (m.backend.kind == "ngram") s << " (order " << m.backend.order << ", corpus " << m.backend.corpus.string() << ")";
    if (m.backend.kind == "table") s << " (" << m.backend.table.string() << ")";
    if (m.backend.kind == "remote") {
      s << " (" << m.backend.transport << ' ';
      if (m.backend.transport == "socket") {
        s << m.backend.endpoint;
      } else {
        for (const auto& a : m.backend.command) s << a << ' ';
      }
      s << ')';
    }
    s << '\n';
  }
  s << "anchors: " << cfg.anchors << '\n';
  s << "eta: " << cfg.fusion.eta << ", steps: " << cfg.fusion.steps << ", main: " << cfg.main << '\n';
  s << "stop: max_tokens " << cfg.stop.max_tokens << ", " << cfg.stop.stop_surfaces.size() << " stop surfaces\n";
  if (cfg.dev) s << "dev: " << cfg.dev->string() << '\n';
  if (cfg.test) s << "test: " << cfg.test->string() << '\n';
  s << "seed: " << *cfg.seed << '\n';
  s << "output: " << cfg.output_dir.string() << '\n';
  return s.str();
}

namespace {

Vocabulary load_vocab(const ModelSpec& spec) {
  if (!spec.convention) return read_vocabulary(spec.vocab);
  // Raw token list: a JSON array ordered by id, or a {"token": id} object.
  std::ifstream in(spec.vocab);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(spec.vocab.string() + ": " + e.what());
  }
  std::vector<std::string> raw;
  if (j.is_array()) {
    raw = j.get<std::vector<std::string>>();
  } else if (j.is_object()) {
    raw.resize(j.size());
    std::vector<bool> seen(j.size(), false);
    for (const auto& [token, id] : j.items()) {
      const auto i = id.get<std::size_t>();
      if (i >= raw.size() || seen[i]) throw ConfigError(spec.vocab.string() + ": ids are not contiguous");
      raw[i] = token;
      seen[i] = true;
    }
  } else {
    throw ConfigError(spec.vocab.string() + ": expected a token array or object");
  }
  return Vocabulary::from_raw(raw, *spec.convention);
}

std::vector<std::vector<TokenId>> read_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return tokenize_corpus(Tokenizer(vocab), text.str());
}

}  // namespace

Model load_model(const ModelSpec& spec) {
  auto vocab = std::make_shared<const Vocabulary>(load_vocab(spec));
  auto embeddings = std::make_shared<const EmbeddingTable>(read_embeddings(spec.embeddings));
  if (embeddings->rows() != vocab->size()) {
    throw ConfigError("model '" + spec.name + "': embedding rows " + std::to_string(embeddings->rows()) +
                      " != vocabulary size " + std::to_string(vocab->size()));
  }
  std::shared_ptr<ModelBackend> backend;
  const BackendSpec& b = spec.backend;
  if (b.kind == "ngram") {
    backend = std::make_shared<NGramModel>(
        train_ngram(spec.name, read_corpus(b.corpus, *vocab), vocab->size(), NGramOptions{b.order, b.delta}));
  } else if (b.kind == "table") {
    auto table = std::make_shared<TableModel>(TableModel::read(b.table));
    if (table->vocab_size() != vocab->size()) {
      throw ConfigError("model '" + spec.name + "': table vocab_size differs from the vocabulary");
    }
    backend = std::move(table);
  } else {
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(b.timeout_s * 1000.0));
    if (b.transport == "socket") {
      backend = remote_backend(b.endpoint, Transport::socket, vocab->size(), timeout);
    } else {
      backend = remote_backend(b.command, vocab->size(), timeout);
    }
  }
  return {spec.name, std::move(vocab), std::move(embeddings), std::move(backend)};
}

std::vector<Model> load_models(const RunConfig& config) {
  std::vector<Model> models;
  for (const auto& spec : config.models) models.push_back(load_model(spec));
  return models;
}

}  // namespace relens::cli
