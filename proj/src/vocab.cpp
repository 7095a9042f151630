#include "conmax/vocab.hpp"

#include <sstream>
#include <stdexcept>

namespace conmax {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (int i = 0; i < (int)tokens_.size(); i++) {
        auto [it, fresh] = index_.emplace(tokens_[i], i);
        (void)it;
        if (!fresh) throw std::invalid_argument("duplicate token in vocab: " + tokens_[i]);
    }
    auto maybe = [&](const std::string& t) {
        auto it = index_.find(t);
        return it == index_.end() ? -1 : it->second;
    };
    plus = maybe("+");
    times = maybe("*");
    equals = maybe("=");
    semi = maybe(";");
    question = maybe("?");
    check = maybe("check");
    again = maybe("again");
    so = maybe("so");
    compress = maybe("<compress>");
    end_think = maybe("<end_think>");
    ans = maybe("<ans>");
    eos = maybe("<eos>");
    pad = maybe("<pad>");
}

const Vocab& Vocab::toy() {
    static const Vocab v({
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
        "+", "*", "=", ";", "?",
        "check", "again", "so",
        "<compress>", "<end_think>", "<ans>", "<eos>", "<pad>",
    });
    return v;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= (int)tokens_.size())
        throw std::out_of_range("token id out of range: " + std::to_string(id));
    return tokens_[id];
}

int Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw std::invalid_argument("unknown token: \"" + token + "\"");
    return it->second;
}

bool Vocab::contains(const std::string& token) const { return index_.count(token) != 0; }

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
}

std::vector<int> Vocab::encode_text(const std::string& text) const {
    std::vector<int> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(id(tok));
    return out;
}

std::string Vocab::decode_text(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); i++) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

std::vector<int> Vocab::number_tokens(int value) const {
    if (value < 0) throw std::invalid_argument("number_tokens: negative value");
    std::string s = std::to_string(value);
    std::vector<int> out;
    out.reserve(s.size());
    for (char c : s) out.push_back(c - '0');
    return out;
}

}  // namespace conmax
