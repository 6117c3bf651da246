#include <doctest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "relens/decode.hpp"
#include "relens/error.hpp"
#include "relens/harness.hpp"

using namespace relens;

namespace {

// "2", "+", "=", "4", "<eos>", "5"
std::shared_ptr<TableModel> arithmetic_table() {
  auto t = std::make_shared<TableModel>(TableModel::uniform("calc", 6));
  t->set({0, 1, 0, 2}, fixture::one_hot(6, 3));
  t->set({0, 1, 0, 2, 3}, fixture::one_hot(6, 4));
  return t;
}

const std::vector<std::string> kArith = {"2", "+", "=", "4", "<eos>", "5"};

}  // namespace

TEST_CASE("scripted single model answers 2+2=") {
  auto setup = build_setup({fixture::make_model("calc", kArith, arithmetic_table())}, AnchorStrategy::full(), {},
                           StopConditions{8, {"<eos>"}}, 0);
  auto session = make_session(setup, 0);
  const auto out = generate(session, "2+2=");
  CHECK(out.text == "4");
  CHECK(out.trace.size() == 2);
  CHECK(greedy_generate(setup.models[0], "2+2=", setup.stop) == "4");
}

TEST_CASE("max_tokens zero generates nothing") {
  auto setup = build_setup({fixture::make_model("calc", kArith, arithmetic_table())}, AnchorStrategy::full(), {},
                           StopConditions{0, {}}, 0);
  auto session = make_session(setup, 0);
  const auto out = generate(session, "2+2=");
  CHECK(out.text.empty());
  CHECK(out.trace.empty());
}

TEST_CASE("argmax breaks ties to the lowest id") {
  const std::vector<double> v = {0.2, 0.4, 0.4};
  CHECK(argmax(v) == 1);
}

TEST_CASE("single model and self-ensemble follow the model's greedy decode") {
  const auto& w = fixture::toy_world();
  const StopConditions stop{40, {}};
  const std::string prompt = w.bench.dev.front().prompt;
  const std::string expected = greedy_generate(w.models[0], prompt, stop);

  auto single = build_setup({w.models[0]}, AnchorStrategy::full(), {}, stop, 0);
  auto s1 = make_session(single, 0);
  CHECK(generate(s1, prompt).text == expected);

  auto pair = build_setup({w.models[0], w.models[0]}, AnchorStrategy::full(), {}, stop, 0);
  auto s2 = make_session(pair, 1);
  const auto out = generate(s2, prompt);
  CHECK(out.text == expected);
  for (const auto& rec : out.trace) CHECK(rec.loss0 <= 1e-9);
}

TEST_CASE("confident expert pulls a uniform main model to its token") {
  const std::vector<std::string> surfaces = {"a", "b", "c", "d"};
  auto confident = std::make_shared<TableModel>("A", 4, fixture::one_hot(4, 2));
  auto uniform = std::make_shared<TableModel>(TableModel::uniform("B", 4));
  EnsembleConfig cfg;
  cfg.eta = 0.1;
  cfg.steps = 50;
  auto setup = build_setup({fixture::make_model("A", surfaces, confident), fixture::make_model("B", surfaces, uniform)},
                           AnchorStrategy::full(), cfg, StopConditions{1, {}}, 0);
  auto session = make_session(setup, 1);
  session.reset("a");
  CHECK(session.ensemble_step() == "c");
}

TEST_CASE("option scoring") {
  const std::vector<std::string> surfaces = {"x", "y", "z", "w", "v"};
  auto uniform = std::make_shared<TableModel>(TableModel::uniform("u", 5));
  auto setup = build_setup({fixture::make_model("u", surfaces, uniform)}, AnchorStrategy::full(), {}, {}, 0);
  auto session = make_session(setup, 0);
  std::size_t length = 0;
  const double score = score_option(session, "x", "yzw", &length);
  CHECK(length == 3);
  CHECK(score == doctest::Approx(-3.0 * std::log(5.0)));

  auto scripted = std::make_shared<TableModel>(TableModel::uniform("s", 5));
  scripted->set({0}, fixture::one_hot(5, 1));
  scripted->set({0, 1}, fixture::one_hot(5, 2));
  auto one_hot_setup = build_setup({fixture::make_model("s", surfaces, scripted)}, AnchorStrategy::full(), {}, {}, 0);
  auto s2 = make_session(one_hot_setup, 0);
  CHECK(score_option(s2, "x", "yz") == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(score_option(s2, "x", "q"), ArgumentError);
}

TEST_CASE("two-option item follows the model with a preference") {
  const std::vector<std::string> surfaces = {"q", "r", "s", "t"};
  // A strongly prefers "r" after "q"; B has no opinion.
  auto a = std::make_shared<TableModel>(TableModel::uniform("A", 4));
  a->set({0}, {0.02, 0.9, 0.04, 0.04});
  auto b = std::make_shared<TableModel>(TableModel::uniform("B", 4));
  auto setup = build_setup({fixture::make_model("A", surfaces, a), fixture::make_model("B", surfaces, b)},
                           AnchorStrategy::full(), EnsembleConfig{0.1, 50}, {}, 0);
  auto session = make_session(setup, 1);
  EvalItem item;
  item.kind = EvalItem::Kind::multiple_choice;
  item.prompt = "q";
  item.options = {"s", "r"};
  item.gold = 1;
  CHECK(item_correct(session, item));
}

TEST_CASE("untokenizable text is reported with the model name") {
  const std::vector<std::string> wide = {"a", "b"}, narrow = {"a"};
  auto t1 = std::make_shared<TableModel>(TableModel::uniform("wide", 2));
  auto t2 = std::make_shared<TableModel>(TableModel::uniform("narrow", 1));
  std::vector<SessionMember> members;
  auto m1 = fixture::make_model("wide", wide, t1);
  auto m2 = fixture::make_model("narrow", narrow, t2);
  auto setup = build_setup({m1, m2}, AnchorStrategy::full(), {}, {}, 0);
  auto session = make_session(setup, 0);
  CHECK_THROWS_AS(session.reset("b"), ArgumentError);
  session.reset("a");
  try {
    session.append("b");
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("narrow") != std::string::npos);
  }
}

TEST_CASE("backend failures name the model") {
  struct Broken : ModelBackend {
    std::string n = "broken";
    const std::string& name() const override { return n; }
    std::size_t vocab_size() const override { return 2; }
    AbsoluteDistribution next_distribution(std::span<const TokenId>) override { throw std::runtime_error("down"); }
  };
  const std::vector<std::string> s = {"a", "b"};
  auto setup = build_setup({fixture::make_model("broken", s, std::make_shared<Broken>())}, AnchorStrategy::full(), {},
                           {}, 0);
  auto session = make_session(setup, 0);
  session.reset("a");
  try {
    session.ensemble_step();
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()).find("broken") != std::string::npos);
  }
}

TEST_CASE("trace lines keep their field order") {
  auto setup = build_setup({fixture::make_model("calc", kArith, arithmetic_table())}, AnchorStrategy::full(), {},
                           StopConditions{8, {"<eos>"}}, 0);
  auto session = make_session(setup, 0);
  const auto out = generate(session, "2+2=");
  std::ostringstream s;
  write_trace(out.trace, s);
  std::istringstream lines(s.str());
  std::string line;
  std::getline(lines, line);
  const auto j = nlohmann::ordered_json::parse(line);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"step", "emitted", "loss0", "lossT", "per_model_top"});
  CHECK(j["emitted"] == "4");
}

TEST_CASE("heterogeneous copy task matches the recorded trace") {
  const auto& w = fixture::toy_world();
  EnsembleConfig cfg;
  cfg.eta = 0.15;
  auto setup = build_setup({w.models[0], w.models[1]}, AnchorStrategy::full(), cfg, StopConditions{12, {"."}}, 0);
  auto session = make_session(setup, 1);
  // Start of a training sentence; the continuation reproduces it.
  const auto& corpus = w.bench.models[0].corpus;
  const auto start = corpus.find("\nthe ") + 1;
  const auto line = corpus.substr(start, corpus.find('\n', start) - start);
  const auto cut = line.rfind(' ', line.size() - 3);
  const auto prompt = line.substr(0, cut);
  const auto out = generate(session, prompt);
  CAPTURE(line);
  CHECK(prompt + out.text + "." == line);
  std::ostringstream s;
  write_trace(out.trace, s);
  CHECK(fixture::matches_golden("copy_trace.jsonl", s.str()));
}

TEST_CASE("recorded decode replays token for token through table models") {
  const auto& w = fixture::toy_world();
  std::vector<Model> recorded = {w.models[0], w.models[2]};
  std::vector<std::shared_ptr<RecordingBackend>> recorders;
  for (auto& m : recorded) {
    recorders.push_back(std::make_shared<RecordingBackend>(m.backend));
    m.backend = recorders.back();
  }
  auto setup = build_setup(recorded, AnchorStrategy::full(), {}, StopConditions{20, {}}, 0);
  auto session = make_session(setup, 0);
  const auto original = generate(session, w.bench.dev[3].prompt);

  std::vector<Model> replay = recorded;
  for (std::size_t m = 0; m < replay.size(); ++m) {
    replay[m].backend = std::make_shared<TableModel>(recorders[m]->recording());
  }
  auto replay_setup = build_setup(replay, AnchorStrategy::full(), {}, StopConditions{20, {}}, 0);
  auto replay_session = make_session(replay_setup, 0);
  const auto again = generate(replay_session, w.bench.dev[3].prompt);
  CHECK(again.text == original.text);
  REQUIRE(again.trace.size() == original.trace.size());
  for (std::size_t t = 0; t < again.trace.size(); ++t) CHECK(again.trace[t].emitted_id == original.trace[t].emitted_id);
}
