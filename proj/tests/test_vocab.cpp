#include <stdexcept>

#include "conmax/vocab.hpp"
#include "doctest.h"

using namespace conmax;

TEST_CASE("toy vocabulary ids are stable") {
    const Vocab& v = Vocab::toy();
    CHECK(v.size() == 23);
    for (int d = 0; d <= 9; d++) {
        CHECK(v.id(std::to_string(d)) == d);
        CHECK(v.is_digit(d));
    }
    CHECK(v.plus == v.id("+"));
    CHECK(v.times == v.id("*"));
    CHECK(v.equals == v.id("="));
    CHECK(v.semi == v.id(";"));
    CHECK(v.question == v.id("?"));
    CHECK(v.check == v.id("check"));
    CHECK(v.again == v.id("again"));
    CHECK(v.so == v.id("so"));
    CHECK(v.compress == v.id("<compress>"));
    CHECK(v.end_think == v.id("<end_think>"));
    CHECK(v.ans == v.id("<ans>"));
    CHECK(v.eos == v.id("<eos>"));
    CHECK(v.pad == v.id("<pad>"));
    CHECK(!v.is_digit(v.plus));
}

TEST_CASE("encode/decode round-trips and text forms agree") {
    const Vocab& v = Vocab::toy();
    std::string text = "3 4 + 7 ? <end_think> <ans> 1 <eos>";
    std::vector<int> ids = v.encode_text(text);
    CHECK(v.decode_text(ids) == text);
    CHECK(v.encode(v.decode(ids)) == ids);
}

TEST_CASE("unknown tokens are named in the error") {
    const Vocab& v = Vocab::toy();
    CHECK(!v.contains("banana"));
    CHECK_THROWS_WITH_AS(v.id("banana"), doctest::Contains("banana"), std::invalid_argument);
    CHECK_THROWS_AS(v.encode_text("3 banana"), std::invalid_argument);
    CHECK_THROWS_AS(v.token(99), std::out_of_range);
}

TEST_CASE("number_tokens renders digit-wise") {
    const Vocab& v = Vocab::toy();
    CHECK(v.decode_text(v.number_tokens(0)) == "0");
    CHECK(v.decode_text(v.number_tokens(7)) == "7");
    CHECK(v.decode_text(v.number_tokens(14)) == "1 4");
    CHECK(v.decode_text(v.number_tokens(99)) == "9 9");
}
