#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/text.hpp"

namespace kpig::lm {

using TokenId = std::int32_t;

inline constexpr std::string_view kMaskLiteral = "[MASK]";
inline constexpr std::string_view kSepLiteral = "[SEP]";

/// Word-level vocabulary. Text splits into alphanumeric runs and single
/// punctuation characters; each piece remembers whether whitespace preceded
/// it ("word") or not ("##word"), which lets decode restore single-spaced text
/// exactly. The literals "[MASK]" and "[SEP]" always map to their special ids.
class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kUnk = 1;
    static constexpr TokenId kBos = 2;
    static constexpr TokenId kEos = 3;
    static constexpr TokenId kMask = 4;
    static constexpr TokenId kSep = 5;
    static constexpr TokenId kNumSpecial = 6;

    Vocabulary() { reset_specials(); }

    /// Builds a vocabulary covering every piece that occurs in texts.
    static Vocabulary build(const std::vector<std::string>& texts) {
        std::set<std::string> pieces;
        for (const auto& t : texts) {
            for (auto& p : split_pieces(t)) {
                if (p != kMaskLiteral && p != kSepLiteral) {
                    pieces.insert(std::move(p));
                }
            }
        }
        Vocabulary v;
        for (const auto& p : pieces) {
            v.add(p);
        }
        return v;
    }

    /// Reconstructs from a token list in id order (specials first).
    static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
        Vocabulary v;
        if (tokens.size() < static_cast<std::size_t>(kNumSpecial)) {
            throw ParseError("vocabulary is missing special tokens");
        }
        for (TokenId i = 0; i < kNumSpecial; ++i) {
            if (tokens[static_cast<std::size_t>(i)] != v.tokens_[static_cast<std::size_t>(i)]) {
                throw ParseError("vocabulary special token mismatch at id " + std::to_string(i));
            }
        }
        for (std::size_t i = kNumSpecial; i < tokens.size(); ++i) {
            v.add(tokens[i]);
        }
        return v;
    }

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    TokenId id_of(const std::string& piece) const {
        auto it = ids_.find(piece);
        return it == ids_.end() ? kUnk : it->second;
    }

    std::vector<TokenId> encode(std::string_view s) const {
        std::vector<TokenId> out;
        for (const auto& p : split_pieces(s)) {
            if (p == kMaskLiteral) {
                out.push_back(kMask);
            } else if (p == kSepLiteral) {
                out.push_back(kSep);
            } else {
                out.push_back(id_of(p));
            }
        }
        return out;
    }

    std::string decode(const std::vector<TokenId>& ids) const {
        std::string out;
        for (TokenId id : ids) {
            if (id == kPad || id == kBos || id == kEos) {
                continue;
            }
            const std::string& tok = token(id);
            if (tok.rfind("##", 0) == 0 && tok.size() > 2) {
                out += tok.substr(2);
            } else {
                if (!out.empty()) {
                    out += ' ';
                }
                out += tok;
            }
        }
        return out;
    }

    /// Splits text into vocabulary pieces ("word" / "##word" forms).
    static std::vector<std::string> split_pieces(std::string_view s) {
        std::vector<std::string> out;
        bool spaced = true;
        std::size_t i = 0;
        while (i < s.size()) {
            const char c = s[i];
            if (text::is_space(c)) {
                spaced = true;
                ++i;
                continue;
            }
            std::string piece;
            bool special = false;
            for (auto literal : {kMaskLiteral, kSepLiteral}) {
                if (s.substr(i, literal.size()) == literal) {
                    out.emplace_back(literal);
                    i += literal.size();
                    spaced = false;
                    special = true;
                    break;
                }
            }
            if (special) {
                continue;
            }
            if (text::is_alnum(c)) {
                std::size_t j = i;
                while (j < s.size() && text::is_alnum(s[j])) {
                    ++j;
                }
                piece = std::string(s.substr(i, j - i));
                i = j;
            } else {
                piece = std::string(1, c);
                ++i;
            }
            out.push_back(spaced ? piece : "##" + piece);
            spaced = false;
        }
        return out;
    }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    void reset_specials() {
        tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>", std::string(kMaskLiteral), std::string(kSepLiteral)};
        ids_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            ids_[tokens_[i]] = static_cast<TokenId>(i);
        }
    }

    void add(const std::string& piece) {
        if (ids_.count(piece) != 0) {
            return;
        }
        ids_[piece] = static_cast<TokenId>(tokens_.size());
        tokens_.push_back(piece);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace kpig::lm
