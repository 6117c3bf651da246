#include "relens/vocab.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/beast/core/detail/base64.hpp>
#include <json.hpp>

#include "relens/error.hpp"
#include "relens/log.hpp"

namespace relens {

namespace {

namespace b64 = boost::beast::detail::base64;

std::string base64_encode(std::string_view bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string_view body = text;
  while (!body.empty() && body.back() == '=') body.remove_suffix(1);
  std::string out(b64::decoded_size(text.size()), '\0');
  auto [written, read] = b64::decode(out.data(), body.data(), body.size());
  if (read != body.size() || text.size() % 4 != 0 || text.size() - body.size() > 2) {
    throw ArgumentError("invalid base64: " + std::string(text));
  }
  out.resize(written);
  return out;
}

// Decodes one UTF-8 code point at `pos`; returns its length or 0 if invalid.
std::size_t utf8_decode(std::string_view s, std::size_t pos, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  std::size_t len = 0;
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return 0;
  }
  if (pos + len > s.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[pos + k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  return len;
}

// GPT-2 byte-to-unicode table, inverted: code point -> byte.
const std::unordered_map<char32_t, unsigned char>& byte_bpe_table() {
  static const auto table = [] {
    std::array<bool, 256> printable{};
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
    std::unordered_map<char32_t, unsigned char> inverse;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      const char32_t cp = printable[b] ? static_cast<char32_t>(b) : next++;
      inverse.emplace(cp, static_cast<unsigned char>(b));
    }
    return inverse;
  }();
  return table;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string canonicalize_sentencepiece(std::string_view raw) {
  static constexpr std::string_view kSpaceMarker = "\xE2\x96\x81";  // U+2581
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw.substr(i, kSpaceMarker.size()) == kSpaceMarker) {
      out.push_back(' ');
      i += kSpaceMarker.size();
      continue;
    }
    if (i + 6 <= raw.size() && raw.substr(i, 3) == "<0x" && raw[i + 5] == '>') {
      const int hi = hex_value(raw[i + 3]);
      const int lo = hex_value(raw[i + 4]);
      if (hi >= 0 && lo >= 0) {
        out.push_back(static_cast<char>(hi * 16 + lo));
        i += 6;
        continue;
      }
    }
    out.push_back(raw[i++]);
  }
  return out;
}

std::string canonicalize_byte_bpe(std::string_view raw) {
  const auto& table = byte_bpe_table();
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    char32_t cp = 0;
    const std::size_t len = utf8_decode(raw, i, cp);
    if (len == 0) {
      out.push_back(raw[i++]);
      continue;
    }
    if (auto it = table.find(cp); it != table.end()) {
      out.push_back(static_cast<char>(it->second));
    } else {
      out.append(raw.substr(i, len));
    }
    i += len;
  }
  return out;
}

}  // namespace

MarkerConvention parse_convention(std::string_view name) {
  if (name == "plain") return MarkerConvention::plain;
  if (name == "sentencepiece") return MarkerConvention::sentencepiece;
  if (name == "byte_bpe" || name == "byte-bpe") return MarkerConvention::byte_bpe;
  throw ConfigError("unknown marker convention '" + std::string(name) + "'");
}

std::string_view convention_name(MarkerConvention convention) {
  switch (convention) {
    case MarkerConvention::plain: return "plain";
    case MarkerConvention::sentencepiece: return "sentencepiece";
    case MarkerConvention::byte_bpe: return "byte_bpe";
  }
  return "plain";
}

std::string canonicalize(std::string_view raw, MarkerConvention convention) {
  switch (convention) {
    case MarkerConvention::plain: return std::string(raw);
    case MarkerConvention::sentencepiece: return canonicalize_sentencepiece(raw);
    case MarkerConvention::byte_bpe: return canonicalize_byte_bpe(raw);
  }
  throw ConfigError("unknown marker convention");
}

std::string byte_bpe_symbol(unsigned char byte) {
  for (const auto& [cp, b] : byte_bpe_table()) {
    if (b == byte) return utf8_encode(cp);
  }
  return std::string(1, static_cast<char>(byte));
}

std::string display_surface(std::string_view canonical) {
  std::string out;
  std::size_t i = 0;
  while (i < canonical.size()) {
    char32_t cp = 0;
    const std::size_t len = utf8_decode(canonical, i, cp);
    if (len == 0 || cp < 0x20 || cp == 0x7F) {
      static constexpr char kHex[] = "0123456789ABCDEF";
      const auto b = static_cast<unsigned char>(canonical[i]);
      out += "<0x";
      out.push_back(kHex[b >> 4]);
      out.push_back(kHex[b & 0xF]);
      out.push_back('>');
      ++i;
    } else {
      out.append(canonical.substr(i, len));
      i += len;
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const Token& t = tokens_[i];
    if (t.id != i) {
      throw ArgumentError("token ids must be contiguous from 0; found id " + std::to_string(t.id) +
                          " at position " + std::to_string(i));
    }
    if (t.surface.empty()) throw ArgumentError("token " + std::to_string(i) + " has an empty surface");
    auto [it, inserted] = by_surface_.emplace(t.surface, t.id);
    if (!inserted) {
      ++collisions_;
      logger().warn("surface '{}' of token {} collides with token {}; keeping the lower id",
                    display_surface(t.surface), t.id, it->second);
    }
    max_bytes_ = std::max(max_bytes_, t.surface.size());
  }
}

Vocabulary Vocabulary::from_surfaces(std::span<const std::string> canonical_surfaces) {
  std::vector<Token> tokens;
  tokens.reserve(canonical_surfaces.size());
  for (std::size_t i = 0; i < canonical_surfaces.size(); ++i) {
    tokens.push_back({static_cast<TokenId>(i), canonical_surfaces[i],
                      display_surface(canonical_surfaces[i])});
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::from_raw(std::span<const std::string> raw_surfaces,
                                MarkerConvention convention) {
  std::vector<Token> tokens;
  tokens.reserve(raw_surfaces.size());
  for (std::size_t i = 0; i < raw_surfaces.size(); ++i) {
    tokens.push_back({static_cast<TokenId>(i), canonicalize(raw_surfaces[i], convention),
                      raw_surfaces[i]});
  }
  return Vocabulary(std::move(tokens));
}

const Token& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw ArgumentError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                        std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
  auto it = by_surface_.find(std::string(surface));
  if (it == by_surface_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::is_representative(TokenId id) const {
  auto found = find(token(id).surface);
  return found && *found == id;
}

std::set<std::string> Vocabulary::surfaces() const {
  std::set<std::string> out;
  for (const auto& [surface, id] : by_surface_) out.insert(surface);
  return out;
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocabulary file " + path.string());
  std::vector<Token> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Token t;
      t.id = j.at("id").get<TokenId>();
      t.surface = base64_decode(j.at("bytes").get<std::string>());
      t.display = j.value("display", display_surface(t.surface));
      tokens.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return Vocabulary(std::move(tokens));
}

void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write vocabulary file " + path.string());
  for (const Token& t : vocab.tokens()) {
    nlohmann::json j = {{"id", t.id}, {"bytes", base64_encode(t.surface)}, {"display", t.display}};
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

std::optional<std::vector<TokenId>> Tokenizer::try_encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::size_t pos = 0;
  const std::size_t longest = vocab_->max_surface_bytes();
  while (pos < text.size()) {
    std::size_t len = std::min(longest, text.size() - pos);
    std::optional<TokenId> hit;
    for (; len > 0; --len) {
      if ((hit = vocab_->find(text.substr(pos, len)))) break;
    }
    if (!hit) return std::nullopt;
    ids.push_back(*hit);
    pos += len;
  }
  return ids;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  auto ids = try_encode(text);
  if (ids) return std::move(*ids);
  // Locate the first uncovered byte for the error message.
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t len = std::min(vocab_->max_surface_bytes(), text.size() - pos);
    for (; len > 0; --len) {
      if (vocab_->find(text.substr(pos, len))) break;
    }
    if (len == 0) break;
    pos += len;
  }
  throw ArgumentError("text not tokenizable at byte " + std::to_string(pos) + " ('" +
                      display_surface(text.substr(pos, 1)) + "')");
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += vocab_->surface(id);
  return out;
}

std::set<std::string> common_tokens(std::span<const Vocabulary* const> vocabularies) {
  if (vocabularies.size() < 2) throw ArgumentError("common_tokens needs at least 2 vocabularies");
  // Start from the smallest inventory; membership tests against the rest.
  const auto smallest = std::min_element(
      vocabularies.begin(), vocabularies.end(),
      [](const Vocabulary* a, const Vocabulary* b) { return a->size() < b->size(); });
  std::set<std::string> out;
  for (const std::string& surface : (*smallest)->surfaces()) {
    bool everywhere = true;
    for (const Vocabulary* v : vocabularies) {
      if (!v->find(surface)) {
        everywhere = false;
        break;
      }
    }
    if (everywhere) out.insert(surface);
  }
  if (out.empty()) throw ArgumentError("vocabularies share no tokens; ensemble impossible");
  return out;
}

AnchorStrategy AnchorStrategy::parse(std::string_view text, std::uint64_t seed) {
  if (text == "full") return full();
  if (text.starts_with("sample:")) {
    const std::string digits(text.substr(7));
    std::size_t consumed = 0;
    long long k = -1;
    try {
      k = std::stoll(digits, &consumed);
    } catch (const std::exception&) {
    }
    if (consumed != digits.size() || k < 1) {
      throw ConfigError("anchor strategy '" + std::string(text) + "': K must be a positive integer");
    }
    return sample(static_cast<std::size_t>(k), seed);
  }
  throw ConfigError("anchor strategy must be 'full' or 'sample:K', got '" + std::string(text) + "'");
}

std::string AnchorStrategy::describe() const {
  return kind == Kind::full ? "full" : "sample:" + std::to_string(count);
}

std::vector<std::string> sample_anchor_surfaces(const std::set<std::string>& common,
                                                const AnchorStrategy& strategy) {
  std::vector<std::string> pool(common.begin(), common.end());
  if (strategy.kind == AnchorStrategy::Kind::full) return pool;
  if (strategy.count < 1 || strategy.count > pool.size()) {
    throw ArgumentError("anchor sample size " + std::to_string(strategy.count) +
                        " outside [1, " + std::to_string(pool.size()) + "]");
  }
  // Partial Fisher-Yates over the sorted pool.
  std::mt19937_64 rng(strategy.seed);
  for (std::size_t i = 0; i < strategy.count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(strategy.count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

AnchorSet select_anchors(const std::set<std::string>& common, const AnchorStrategy& strategy,
                         std::span<const Vocabulary* const> vocabularies) {
  AnchorSet set;
  set.anchors = sample_anchor_surfaces(common, strategy);
  set.per_model_ids.resize(vocabularies.size());
  for (std::size_t m = 0; m < vocabularies.size(); ++m) {
    auto& ids = set.per_model_ids[m];
    ids.reserve(set.anchors.size());
    for (const std::string& surface : set.anchors) {
      auto id = vocabularies[m]->find(surface);
      if (!id) {
        throw ArgumentError("anchor '" + display_surface(surface) + "' missing from model " +
                            std::to_string(m));
      }
      ids.push_back(*id);
    }
  }
  return set;
}

void write_anchor_manifest(const AnchorSet& anchors, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write anchor manifest " + path.string());
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& model_ids : anchors.per_model_ids) ids.push_back(model_ids[k]);
    nlohmann::json j = {{"index", k}, {"bytes", base64_encode(anchors.anchors[k])}, {"ids", ids}};
    out << j.dump() << '\n';
  }
}

}  // namespace relens
