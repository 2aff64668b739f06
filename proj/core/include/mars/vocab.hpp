#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mars {

// Character-level vocabulary: four reserved specials followed by printable
// ASCII. Fixed at compile time so every corpus, checkpoint and engine agrees
// on token ids without a persisted vocab table.
struct CharVocab {
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int mask_id = 3;
    static constexpr int first_char = 32;   // ' '
    static constexpr int last_char = 126;   // '~'
    static constexpr int num_specials = 4;

    static constexpr int size() { return num_specials + (last_char - first_char + 1); }

    static bool encodable(char c) {
        return static_cast<unsigned char>(c) >= first_char &&
               static_cast<unsigned char>(c) <= last_char;
    }
    static int char_to_id(char c);                       // throws on unknown character
    static std::vector<int> encode(std::string_view text);
    static std::string decode(std::span<const int> ids); // specials are dropped

    static std::vector<int> encode_prompt(std::string_view text);   // BOS + chars
    static std::vector<int> encode_response(std::string_view text); // chars + EOS
};

} // namespace mars
