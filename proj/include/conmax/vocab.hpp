#pragma once
// Closed token vocabulary for the arithmetic-trace toy domain.
// Token ids are assigned in declaration order and are stable across runs;
// datasets and checkpoints depend on that stability.

#include <string>
#include <unordered_map>
#include <vector>

namespace conmax {

class Vocab {
  public:
    explicit Vocab(std::vector<std::string> tokens);

    // The fixed toy vocabulary: digits 0-9, "+", "*", "=", ";", "?",
    // "check", "again", "so", "<compress>", "<end_think>", "<ans>",
    // "<eos>", "<pad>".
    static const Vocab& toy();

    int size() const { return (int)tokens_.size(); }
    const std::string& token(int id) const;
    int id(const std::string& token) const;  // throws on unknown token
    bool contains(const std::string& token) const;

    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    // Text forms are space-separated token strings ("3 4 + 7 ?").
    std::vector<int> encode_text(const std::string& text) const;
    std::string decode_text(const std::vector<int>& ids) const;

    bool is_digit(int id) const { return id >= 0 && id <= 9; }

    // Numbers are rendered digit-wise: 14 -> {"1","4"}, 0 -> {"0"}.
    std::vector<int> number_tokens(int value) const;

    int plus = -1, times = -1, equals = -1, semi = -1, question = -1;
    int check = -1, again = -1, so = -1;
    int compress = -1, end_think = -1, ans = -1, eos = -1, pad = -1;

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace conmax
