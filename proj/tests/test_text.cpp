#include "lattrack/text.hpp"
#include "test_util.hpp"

using namespace lattrack;
using namespace lattrack::testing;

namespace {

TextEncoder default_encoder(const Vocabulary& v) {
  torch::manual_seed(0);
  TextEncoderConfig c;
  c.vocab_size = v.size();
  return TextEncoder(c);
}

}  // namespace

TEST(Tokenize, PadsToLength) {
  const auto v = Vocabulary::caption_grammar();
  const auto ids = tokenize("track the red circle", v);
  const std::vector<std::int64_t> want = {v.id("track"), v.id("the"), v.id("red"), v.id("circle"),
                                          Vocabulary::kPad, Vocabulary::kPad, Vocabulary::kPad, Vocabulary::kPad};
  EXPECT_EQ(ids, want);
}

TEST(Tokenize, EmptyIsNull) {
  const auto ids = tokenize("", Vocabulary::caption_grammar());
  ASSERT_EQ(ids.size(), 8u);
  EXPECT_EQ(ids[0], Vocabulary::kNull);
  for (std::size_t i = 1; i < ids.size(); ++i) EXPECT_EQ(ids[i], Vocabulary::kPad);
}

TEST(Tokenize, UnknownWord) {
  const auto v = Vocabulary::caption_grammar();
  const auto ids = tokenize("track the zephyr circle", v);
  EXPECT_EQ(ids[2], Vocabulary::kUnk);
  EXPECT_EQ(ids[3], v.id("circle"));
}

TEST(Tokenize, LowercasesAndTruncates) {
  const auto v = Vocabulary::caption_grammar();
  EXPECT_EQ(tokenize("TRACK The RED circle", v), tokenize("track the red circle", v));
  EXPECT_EQ(tokenize("the the the the the the the the the the", v).size(), 8u);
}

TEST(Vocabulary, JsonRoundTripAndReserved) {
  const auto v = Vocabulary::caption_grammar();
  const auto back = Vocabulary::from_json(v.to_json());
  EXPECT_EQ(back.size(), v.size());
  EXPECT_EQ(back.id("magenta"), v.id("magenta"));
  EXPECT_EQ(v.token(Vocabulary::kPad), v.token(0));
  EXPECT_EQ(v.id("zephyr"), Vocabulary::kUnk);
}

TEST(TextEncoder, ShapeAndDeterminism) {
  const auto v = Vocabulary::caption_grammar();
  auto enc = default_encoder(v);
  torch::NoGradGuard ng;
  const auto a = encode_text(tokenize("track the red circle", v), enc);
  const auto b = encode_text(tokenize("track the red circle", v), enc);
  EXPECT_EQ(a.embeddings.sizes(), (std::vector<int64_t>{8, 64}));
  EXPECT_TRUE(torch::equal(a.embeddings, b.embeddings));
  const auto c = encode_text(tokenize("track the blue circle", v), enc);
  EXPECT_GT(max_abs(a.embeddings, c.embeddings), 0.0);
}

TEST(TextEncoder, NullCondition) {
  const auto v = Vocabulary::caption_grammar();
  auto enc = default_encoder(v);
  torch::NoGradGuard ng;
  const auto n1 = null_condition(v, enc);
  const auto n2 = null_condition(v, enc);
  EXPECT_TRUE(n1.is_null);
  EXPECT_EQ(n1.embeddings.sizes(), (std::vector<int64_t>{8, 64}));
  EXPECT_TRUE(torch::equal(n1.embeddings, n2.embeddings));
  EXPECT_GT(max_abs(n1.embeddings, encode_text(tokenize("track the red circle", v), enc).embeddings), 0.0);
}

TEST(TextEncoder, IdOutOfRange) {
  const auto v = Vocabulary::caption_grammar();
  auto enc = default_encoder(v);
  std::vector<std::int64_t> ids(8, v.size());
  EXPECT_LT_ERROR(encode_text(ids, enc), ErrorKind::Range);
}
