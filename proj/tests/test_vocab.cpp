#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "relens/error.hpp"
#include "relens/toy.hpp"
#include "relens/vocab.hpp"

using namespace relens;

namespace {

struct MarkerCase {
  const char* raw;
  MarkerConvention convention;
  std::string canonical;
};

// Written out by hand from the GPT-2 byte table and the sentencepiece marker rules.
const std::vector<MarkerCase> kMarkerCases = {
    {"\xC4\xA0the", MarkerConvention::byte_bpe, " the"},           // Ġthe
    {"the", MarkerConvention::byte_bpe, "the"},
    {"\xC4\x8A", MarkerConvention::byte_bpe, "\n"},                // Ċ
    {"\xC4\x89", MarkerConvention::byte_bpe, "\t"},                // ĉ
    {"\xC4\x8D", MarkerConvention::byte_bpe, "\r"},                // č
    {"\xC4\xA0\xC4\xA0", MarkerConvention::byte_bpe, "  "},        // ĠĠ
    {"\xC4\x80", MarkerConvention::byte_bpe, std::string(1, '\0')},  // Ā
    {"\xC4\xA1", MarkerConvention::byte_bpe, "\x7F"},              // ġ
    {"\xC4\xA2", MarkerConvention::byte_bpe, "\x80"},              // Ģ
    {"\xC5\x82", MarkerConvention::byte_bpe, "\xA0"},              // ł
    {"\xC5\x83", MarkerConvention::byte_bpe, "\xAD"},              // Ń
    {"\xC3\xA9", MarkerConvention::byte_bpe, "\xE9"},              // é stands for byte 0xE9
    {"\xC3\x83\xC2\xA9", MarkerConvention::byte_bpe, "\xC3\xA9"},  // Ã© is UTF-8 é
    {"\xC4\xA0\xC3\x83\xC2\xA9t", MarkerConvention::byte_bpe, " \xC3\xA9t"},
    {"\xC3\xBF", MarkerConvention::byte_bpe, "\xFF"},              // ÿ
    {"\xC2\xA1", MarkerConvention::byte_bpe, "\xA1"},              // ¡
    {"\xC4\xA0.", MarkerConvention::byte_bpe, " ."},
    {"<|endoftext|>", MarkerConvention::byte_bpe, "<|endoftext|>"},
    {"\xE2\x96\x81the", MarkerConvention::sentencepiece, " the"},  // ▁the
    {"<0x0A>", MarkerConvention::sentencepiece, "\n"},
    {"\xE2\x96\x81\xE2\x96\x81" "a", MarkerConvention::sentencepiece, "  a"},
    {"<0xZZ>", MarkerConvention::sentencepiece, "<0xZZ>"},
    {"the", MarkerConvention::plain, "the"},
    {"\xE2\x96\x81the", MarkerConvention::plain, "\xE2\x96\x81the"},
};

std::vector<std::string> numbered_surfaces(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("w" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("canonicalize matches the hand-built marker table") {
  for (const auto& c : kMarkerCases) {
    CAPTURE(c.raw);
    CHECK(canonicalize(c.raw, c.convention) == c.canonical);
  }
}

TEST_CASE("canonicalize inverts the toy renderer for every byte") {
  for (int b = 0; b < 256; ++b) {
    const std::string s(1, static_cast<char>(b));
    CHECK(canonicalize(to_convention(" " + s, MarkerConvention::byte_bpe), MarkerConvention::byte_bpe) == " " + s);
    CHECK(canonicalize(to_convention(" " + s, MarkerConvention::sentencepiece),
                       MarkerConvention::sentencepiece) == " " + s);
  }
}

TEST_CASE("unknown marker convention is a configuration error") {
  CHECK_THROWS_AS(parse_convention("wordpiece"), ConfigError);
  CHECK(parse_convention("byte-bpe") == MarkerConvention::byte_bpe);
}

TEST_CASE("vocabulary lookup is the inverse of id lookup") {
  const std::vector<std::string> s = {"a", "b", " c", "ab"};
  const auto v = Vocabulary::from_surfaces(s);
  REQUIRE(v.size() == 4);
  for (TokenId id = 0; id < v.size(); ++id) CHECK(*v.find(v.surface(id)) == id);
  CHECK_FALSE(v.find("zz"));
  CHECK_THROWS_AS(v.token(4), ArgumentError);
}

TEST_CASE("non-contiguous ids are rejected") {
  std::vector<Token> tokens = {{0, "a", "a"}, {2, "b", "b"}};
  CHECK_THROWS_AS(Vocabulary(std::move(tokens)), ArgumentError);
}

TEST_CASE("colliding canonical surfaces keep the lowest id") {
  const std::vector<std::string> raw = {"x", "\xE2\x96\x81" "a", " a"};
  const auto v = Vocabulary::from_raw(raw, MarkerConvention::sentencepiece);
  CHECK(v.collisions() == 1);
  CHECK(*v.find(" a") == 1);
  CHECK(v.is_representative(1));
  CHECK_FALSE(v.is_representative(2));
  CHECK(v.surfaces().size() == 2);
}

TEST_CASE("vocabulary file round trip") {
  const std::vector<std::string> s = {"a", " b", "\n", "\xFF\x00z"};
  const auto v = Vocabulary::from_surfaces(s);
  const auto path = std::filesystem::temp_directory_path() / "relens_vocab_test.jsonl";
  write_vocabulary(v, path);
  const auto back = read_vocabulary(path);
  REQUIRE(back.size() == v.size());
  for (TokenId id = 0; id < v.size(); ++id) CHECK(back.surface(id) == v.surface(id));
  std::filesystem::remove(path);
}

TEST_CASE("tokenizer takes the longest match") {
  const std::vector<std::string> s = {"a", "b", "ab", "abb", " ", " ab"};
  const auto v = Vocabulary::from_surfaces(s);
  const Tokenizer tok(v);
  CHECK(tok.encode("abba") == std::vector<TokenId>{3, 0});
  CHECK(tok.encode(" abab") == std::vector<TokenId>{5, 2});
  CHECK(tok.decode(tok.encode("ab ab b")) == "ab ab b");
  CHECK_THROWS_AS(tok.encode("abc"), ArgumentError);
  CHECK_FALSE(tok.try_encode("c"));
}

TEST_CASE("common tokens: small cases") {
  const std::vector<std::string> a = {"a", "b", "c"}, b = {"b", "c", "d"};
  const auto va = Vocabulary::from_surfaces(a), vb = Vocabulary::from_surfaces(b);
  const std::vector<const Vocabulary*> ab = {&va, &vb};
  CHECK(common_tokens(ab) == std::set<std::string>{"b", "c"});
  const std::vector<const Vocabulary*> aa = {&va, &va};
  CHECK(common_tokens(aa) == va.surfaces());
  CHECK_THROWS_AS(common_tokens(std::vector<const Vocabulary*>{&va}), ArgumentError);
  const std::vector<std::string> z = {"z"};
  const auto vz = Vocabulary::from_surfaces(z);
  CHECK_THROWS_AS(common_tokens(std::vector<const Vocabulary*>{&va, &vz}), ArgumentError);
}

TEST_CASE("common tokens of three toy BPE vocabularies match a nested-loop oracle") {
  const auto bench = make_toy_benchmark(ToyOptions{});
  const auto& v0 = bench.models[0].vocab;
  const auto& v1 = bench.models[1].vocab;
  const auto& v2 = bench.models[2].vocab;
  std::set<std::string> expected;
  for (const Token& t0 : v0.tokens()) {
    bool in1 = false, in2 = false;
    for (const Token& t1 : v1.tokens()) in1 |= t1.surface == t0.surface;
    for (const Token& t2 : v2.tokens()) in2 |= t2.surface == t0.surface;
    if (in1 && in2) expected.insert(t0.surface);
  }
  std::vector<const Vocabulary*> order = {&v0, &v1, &v2};
  CHECK(common_tokens(order) == expected);
  // Order independence over every permutation.
  std::sort(order.begin(), order.end());
  do {
    CHECK(common_tokens(order) == expected);
  } while (std::next_permutation(order.begin(), order.end()));
  // Associativity: intersecting pairwise first gives the same set.
  const auto first = common_tokens(std::vector<const Vocabulary*>{&v0, &v1});
  std::set<std::string> staged;
  for (const auto& s : first) {
    if (v2.find(s)) staged.insert(s);
  }
  CHECK(staged == expected);
}

TEST_CASE("select_anchors full uses every common token in byte order") {
  const auto surfaces = numbered_surfaces(30);
  const auto v = Vocabulary::from_surfaces(surfaces);
  std::vector<std::string> reversed(surfaces.rbegin(), surfaces.rend());
  const auto w = Vocabulary::from_surfaces(reversed);
  const std::vector<const Vocabulary*> vocabs = {&v, &w};
  const auto common = common_tokens(vocabs);
  const auto a = select_anchors(common, AnchorStrategy::full(), vocabs);
  CHECK(a.size() == common.size());
  CHECK(std::is_sorted(a.anchors.begin(), a.anchors.end()));
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(vocabs[m]->surface(a.per_model_ids[m][k]) == a.anchors[k]);
  }
  AnchorStrategy seeded = AnchorStrategy::full();
  seeded.seed = 99;
  CHECK(select_anchors(common, seeded, vocabs).anchors == a.anchors);
  CHECK(select_anchors(common, AnchorStrategy::sample(common.size(), 5), vocabs).anchors == a.anchors);
}

TEST_CASE("select_anchors sample is pinned under a fixed seed") {
  const auto surfaces = numbered_surfaces(100);
  const std::set<std::string> common(surfaces.begin(), surfaces.end());
  const auto picked = sample_anchor_surfaces(common, AnchorStrategy::sample(10, 7));
  const std::vector<std::string> pinned = {"w10", "w13", "w17", "w31", "w74", "w75", "w84", "w89", "w90", "w94"};
  CHECK(picked == pinned);
  CHECK(sample_anchor_surfaces(common, AnchorStrategy::sample(10, 7)) == picked);
  CHECK_THROWS_AS(sample_anchor_surfaces(common, AnchorStrategy::sample(101, 7)), ArgumentError);
  CHECK_THROWS_AS(sample_anchor_surfaces(common, AnchorStrategy::sample(0, 7)), ArgumentError);
}

TEST_CASE("anchor strategy parsing") {
  CHECK(AnchorStrategy::parse("full", 3).kind == AnchorStrategy::Kind::full);
  const auto s = AnchorStrategy::parse("sample:25", 3);
  CHECK(s.count == 25);
  CHECK(s.seed == 3);
  CHECK_THROWS_AS(AnchorStrategy::parse("sample:x", 3), ConfigError);
  CHECK_THROWS_AS(AnchorStrategy::parse("some", 3), ConfigError);
}
