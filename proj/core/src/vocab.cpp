#include "mars/vocab.hpp"

#include <stdexcept>

namespace mars {

int CharVocab::char_to_id(char c) {
    if (!encodable(c)) {
        throw std::runtime_error(std::string("vocab: unknown character 0x") +
                                 std::to_string(static_cast<unsigned char>(c)));
    }
    return num_specials + (static_cast<unsigned char>(c) - first_char);
}

std::vector<int> CharVocab::encode(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(char_to_id(c));
    return out;
}

std::string CharVocab::decode(std::span<const int> ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < num_specials) continue;
        if (id >= size()) throw std::runtime_error("vocab: id out of range");
        out.push_back(static_cast<char>(first_char + (id - num_specials)));
    }
    return out;
}

std::vector<int> CharVocab::encode_prompt(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size() + 1);
    out.push_back(bos_id);
    for (char c : text) out.push_back(char_to_id(c));
    return out;
}

std::vector<int> CharVocab::encode_response(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size() + 1);
    for (char c : text) out.push_back(char_to_id(c));
    out.push_back(eos_id);
    return out;
}

} // namespace mars
