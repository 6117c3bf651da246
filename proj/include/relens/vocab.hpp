#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace relens {

using TokenId = std::uint32_t;

struct Token {
  TokenId id = 0;
  std::string surface;  // canonical bytes
  std::string display;
};

// How a tokenizer marks word-initial spaces and raw bytes in its surfaces.
//   plain          surfaces are already literal bytes
//   sentencepiece  U+2581 stands for a space, <0xNN> for a raw byte
//   byte_bpe       GPT-2 style byte-to-unicode table (U+0120 is a space)
enum class MarkerConvention { plain, sentencepiece, byte_bpe };

MarkerConvention parse_convention(std::string_view name);
std::string_view convention_name(MarkerConvention convention);

std::string canonicalize(std::string_view raw, MarkerConvention convention);

// UTF-8 symbol the byte_bpe convention uses for `byte`.
std::string byte_bpe_symbol(unsigned char byte);

// Readable rendering of canonical bytes: control and non-UTF-8 bytes are escaped.
std::string display_surface(std::string_view canonical);

// Ordered token inventory. Ids are contiguous from 0. Canonical surfaces may
// collide (e.g. after marker stripping); the lowest id wins lookups and the
// others are excluded from cross-model matching.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<Token> tokens);

  static Vocabulary from_surfaces(std::span<const std::string> canonical_surfaces);
  static Vocabulary from_raw(std::span<const std::string> raw_surfaces, MarkerConvention convention);

  std::size_t size() const { return tokens_.size(); }
  const Token& token(TokenId id) const;
  const std::string& surface(TokenId id) const { return token(id).surface; }
  const std::vector<Token>& tokens() const { return tokens_; }

  std::optional<TokenId> find(std::string_view surface) const;

  // True when this id is the representative for its surface.
  bool is_representative(TokenId id) const;
  // Surfaces that take part in intersection (one per distinct surface).
  std::set<std::string> surfaces() const;

  std::size_t max_surface_bytes() const { return max_bytes_; }
  std::size_t collisions() const { return collisions_; }

 private:
  std::vector<Token> tokens_;
  std::unordered_map<std::string, TokenId> by_surface_;
  std::size_t max_bytes_ = 0;
  std::size_t collisions_ = 0;
};

// JSON-lines: {"id": int, "bytes": base64, "display": string}, in id order.
Vocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);

// Greedy longest-match segmentation over canonical surfaces.
class Tokenizer {
 public:
  explicit Tokenizer(const Vocabulary& vocab) : vocab_(&vocab) {}

  // Throws ArgumentError naming the first byte offset no token covers.
  std::vector<TokenId> encode(std::string_view text) const;
  std::optional<std::vector<TokenId>> try_encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  const Vocabulary& vocabulary() const { return *vocab_; }

 private:
  const Vocabulary* vocab_;
};

std::set<std::string> common_tokens(std::span<const Vocabulary* const> vocabularies);

struct AnchorStrategy {
  enum class Kind { full, sample } kind = Kind::full;
  std::size_t count = 0;  // sample only
  std::uint64_t seed = 0;

  static AnchorStrategy full() { return {}; }
  static AnchorStrategy sample(std::size_t count, std::uint64_t seed) {
    return {Kind::sample, count, seed};
  }
  // "full" or "sample:K"; the seed comes from the run configuration.
  static AnchorStrategy parse(std::string_view text, std::uint64_t seed);
  std::string describe() const;
};

struct AnchorSet {
  std::vector<std::string> anchors;  // sorted by bytes
  std::vector<std::vector<TokenId>> per_model_ids;

  std::size_t size() const { return anchors.size(); }
};

std::vector<std::string> sample_anchor_surfaces(const std::set<std::string>& common,
                                                const AnchorStrategy& strategy);

AnchorSet select_anchors(const std::set<std::string>& common, const AnchorStrategy& strategy,
                         std::span<const Vocabulary* const> vocabularies);

// Anchors manifest: one JSON object per line {"index","bytes","ids":[per model]}.
void write_anchor_manifest(const AnchorSet& anchors, const std::filesystem::path& path);

}  // namespace relens
