#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "adloop/trace.hpp"
#include "trace_gen.hpp"

using namespace adloop;

namespace {

const Vocabulary kV = Vocabulary::standard();

ErrorCode parse_error(const TraceStream& s, const TraceFormat& f) {
  try {
    parse_trace(s, f);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("stream parsed unexpectedly");
  return ErrorCode::kInternal;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  CHECK(kV.size() == 15);
  CHECK_NOTHROW(kV.validate());
  for (TokenId t = 0; t < 8; ++t) CHECK(kV.is_text(t));
  for (TokenId t = 8; t < 15; ++t) CHECK(kV.is_special(t));
  Vocabulary clash = kV;
  clash.vt_open = clash.think_open;
  CHECK_THROWS_AS(clash.validate(), Error);
}

TEST_CASE("minimal trace renders to the fixed frame") {
  ThoughtTrace t;
  t.answer = std::vector<TokenId>{0};
  const TraceStream s = render_trace(t, TraceFormat{});
  CHECK(s.tokens == std::vector<TokenId>{kV.think_open, kV.think_close, kV.answer_sep, 0, kV.end});
  CHECK(s.vectors.empty());
  CHECK(parse_trace(s, TraceFormat{}) == t);
}

TEST_CASE("visual payload sits inside one vt pair") {
  ThoughtTrace t;
  t.segments = {Segment::text({1, 2}), Segment::visual({{0.5, 1.0}, {-1.0, 2.0}})};
  t.answer = std::vector<TokenId>{3};
  t.mode = Mode::kVPlus;
  const TraceStream s = render_trace(t, TraceFormat{});
  CHECK(s.tokens == std::vector<TokenId>{kV.think_open, 1, 2, kV.vt_open, kV.vec, kV.vec,
                                         kV.vt_close, kV.think_close, kV.answer_sep, 3, kV.end});
  CHECK(s.vectors == std::vector<Vec>{{0.5, 1.0}, {-1.0, 2.0}});
}

TEST_CASE("render rejects invalid traces") {
  ThoughtTrace t;
  t.answer = std::vector<TokenId>{0};
  t.segments = {Segment::text({1}), Segment::text({2})};
  CHECK_THROWS_AS(render_trace(t, TraceFormat{}), Error);
  t.segments = {Segment::visual({{1.0}})};
  t.mode = Mode::kVMinus;
  CHECK_THROWS_AS(render_trace(t, TraceFormat{}), Error);
  t.mode = Mode::kVPlus;
  t.answer = std::vector<TokenId>{};
  CHECK_THROWS_AS(render_trace(t, TraceFormat{}), Error);
}

TEST_CASE("parse error codes") {
  TraceFormat f;
  f.budget_k = 2;
  ThoughtTrace t;
  t.segments = {Segment::text({1}), Segment::visual({{1.0}, {2.0}})};
  t.answer = std::vector<TokenId>{0};
  t.mode = Mode::kVPlus;
  const TraceStream good = render_trace(t, f);

  SUBCASE("missing think close") {
    TraceStream s = good;
    s.tokens.erase(s.tokens.begin() + 6);  // </think>
    CHECK(parse_error(s, f) == ErrorCode::kUnbalancedTags);
  }
  SUBCASE("budget exceeded") {
    TraceStream s = good;
    s.tokens.insert(s.tokens.begin() + 3, kV.vec);
    s.vectors.insert(s.vectors.begin(), Vec{0.0});
    CHECK(parse_error(s, f) == ErrorCode::kBudgetExceeded);
  }
  SUBCASE("missing answer") {
    TraceStream s = good;
    s.tokens = {kV.think_open, kV.think_close, kV.end};
    s.vectors.clear();
    s.mode.reset();
    CHECK(parse_error(s, f) == ErrorCode::kMissingAnswer);
  }
  SUBCASE("v- stream with a visual thought") {
    TraceStream s = good;
    s.mode = Mode::kVMinus;
    CHECK(parse_error(s, f) == ErrorCode::kModeInconsistency);
  }
}

TEST_CASE("validate_format") {
  ThoughtTrace t;
  t.segments = {Segment::text({1})};
  t.answer = std::vector<TokenId>{0};
  const TraceStream good = render_trace(t, TraceFormat{});
  CHECK(validate_format(good, TraceFormat{}));
  TraceStream truncated = good;
  truncated.tokens.resize(3);
  CHECK_FALSE(validate_format(truncated, TraceFormat{}));
  const TraceStream early{{kV.think_open, 1, kV.answer_sep, 0, kV.think_close, kV.end}, {}, {}};
  CHECK_FALSE(validate_format(early, TraceFormat{}));
}

TEST_CASE("render and parse are inverse on random traces") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const TraceFormat f = gen::random_format(rng);
    const ThoughtTrace t = gen::random_trace(rng, f);
    const TraceStream s = render_trace(t, f);
    const ThoughtTrace back = parse_trace(s, f);
    REQUIRE(back == t);
    REQUIRE(render_trace(back, f) == s);
    for (const Segment& seg : back.segments) {
      if (seg.is_visual()) CHECK(seg.latent_vectors.size() <= f.budget_k);
    }
  }
}

TEST_CASE("corrupted streams report the expected code") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const TraceFormat f = gen::random_format(rng);
    const ThoughtTrace t = gen::random_trace(rng, f);
    const gen::Mutation m = gen::mutate(rng, t, f);
    CHECK(parse_error(m.stream, f) == m.expected);
    CHECK_FALSE(validate_format(m.stream, f));
  }
}

TEST_CASE("answer extraction and visual usage") {
  ThoughtTrace t;
  t.segments = {Segment::visual({{1.0}})};
  t.answer = std::vector<TokenId>{2, 3};
  t.mode = Mode::kVPlus;
  const TraceStream s = render_trace(t, TraceFormat{});
  const ExtractedAnswer a = extract_answer(s, kV);
  CHECK(a.found);
  CHECK(a.tokens == std::vector<TokenId>{2, 3});
  CHECK(uses_visual_thoughts(s, kV));
  CHECK_FALSE(extract_answer(TraceStream{{kV.think_open}, {}, {}}, kV).found);
}

TEST_CASE("text records round-trip") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const TraceFormat f = gen::random_format(rng);
    TraceStream s = render_trace(gen::random_trace(rng, f), f);
    if (i % 3 == 0) s.mode.reset();
    const std::string line = format_trace_record(s, kV);
    CHECK(parse_trace_record(line, kV) == s);
  }
  const TraceStream s = parse_trace_record("mode=v+ <think> 0 <vt> [0.5 1] </vt> </think> <answer> 0 <end>", kV);
  CHECK(s.tokens.size() == 9);
  CHECK(s.vectors == std::vector<Vec>{{0.5, 1.0}});
  CHECK_THROWS_AS(parse_trace_record("<think> 0", kV), Error);
  CHECK_THROWS_AS(parse_trace_record("mode=v+ <think> 99", kV), Error);
  CHECK_THROWS_AS(parse_trace_record("mode=v+ [0.5 1", kV), Error);
}
