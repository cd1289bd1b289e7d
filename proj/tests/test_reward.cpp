#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "adloop/error.hpp"
#include "adloop/reward.hpp"
#include "adloop/stage1.hpp"

using namespace adloop;

namespace {

const Vocabulary kV = Vocabulary::standard();

TraceFormat nav_format() { return TraceFormat{kV, 16, std::nullopt}; }

RewardBreakdown plus(double base, bool correct = true, bool used = true) {
  RewardBreakdown r;
  r.r_base = r.r_final = base;
  r.correct = correct;
  r.used_adloop = used;
  return r;
}

RewardBreakdown minus(double base) { return plus(base, true, false); }

std::vector<RewardBreakdown> random_side(std::mt19937_64& rng, std::size_t n, bool adloop) {
  // Dyadic values keep every sum and difference exact.
  std::uniform_int_distribution<int> eighths(0, 12);
  std::bernoulli_distribution coin(0.7);
  std::vector<RewardBreakdown> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(plus(eighths(rng) / 8.0, coin(rng), adloop));
  }
  return out;
}

}  // namespace

TEST_CASE("base reward adds format and content") {
  const StateEncoder enc;
  const RewardConfig cfg;
  const TaskInstance task = make_navigation_instance("q", generate_map(3, 5, 3));
  const TraceFormat fmt = nav_format();

  std::vector<TokenId> answer;
  for (Action a : task.gold_actions) answer.push_back(static_cast<TokenId>(a));

  SUBCASE("malformed trace with the right answer") {
    TraceStream s{{kV.answer_sep}, {}, {}};
    s.tokens.insert(s.tokens.end(), answer.begin(), answer.end());
    s.tokens.push_back(kV.end);
    REQUIRE_FALSE(validate_format(s, fmt));
    const RewardBreakdown r = base_reward(s, task, fmt, enc, cfg);
    CHECK(r.r_format == 0.0);
    CHECK(r.r_content == 1.0);
    CHECK(r.r_base == 1.0);
    CHECK(r.correct);
  }

  const auto well_formed = [&](const std::vector<TokenId>& ans) {
    TraceStream s{{kV.think_open, 0, kV.think_close, kV.answer_sep}, {}, Mode::kVMinus};
    s.tokens.insert(s.tokens.end(), ans.begin(), ans.end());
    s.tokens.push_back(kV.end);
    REQUIRE(validate_format(s, fmt));
    return s;
  };

  SUBCASE("well-formed trace with a wrong answer") {
    // Walking into the edge repeatedly never reaches the goal.
    std::vector<TokenId> wrong(task.gold_actions.size(), static_cast<TokenId>(Action::kUp));
    if (judge_navigation_tokens(task.map, wrong) == 1.0) wrong.assign(wrong.size(), 2);
    const RewardBreakdown r = base_reward(well_formed(wrong), task, fmt, enc, cfg);
    CHECK(r.r_base == 0.5);
    CHECK_FALSE(r.correct);
    CHECK_FALSE(r.used_adloop);
  }

  SUBCASE("well-formed trace with the right answer") {
    const RewardBreakdown r = base_reward(well_formed(answer), task, fmt, enc, cfg);
    CHECK(r.r_base == 1.5);
    CHECK(r.r_final == 1.5);
    CHECK(r.correct);
  }

  SUBCASE("usage comes from the realised trace") {
    Stage1Config s1;
    s1.budget_k = 16;
    const TraceStream gold = render_trace(build_gold_trace(task, s1, enc), fmt);
    const RewardBreakdown r = base_reward(gold, task, fmt, enc, cfg);
    CHECK(r.used_adloop);
    CHECK(r.r_base == 1.5);
  }
}

TEST_CASE("drafting correctness threshold") {
  const StateEncoder enc;
  const RewardConfig cfg;
  const TaskInstance task = generate_drafting(11, 3, 4, "d", enc);
  const TraceFormat fmt{kV, 16, GridShape{task.target_grid.height(), task.target_grid.width()}};
  const auto answer_with = [&](std::size_t wrong_cells) {
    TraceStream s{{kV.think_open, 4, kV.think_close, kV.answer_sep}, {}, Mode::kVMinus};
    for (std::size_t i = 0; i < task.target_grid.size(); ++i) {
      Vec v = task.target_grid.at(i);
      if (i < wrong_cells) {
        const CellType c = enc.nearest(v);
        const Vec& other = enc.embedding(static_cast<CellType>((static_cast<int>(c) + 1) % kNumCellTypes));
        std::copy(other.begin(), other.begin() + static_cast<std::ptrdiff_t>(enc.type_dims()), v.begin());
      }
      s.tokens.push_back(kV.vec);
      s.vectors.push_back(v);
    }
    s.tokens.push_back(kV.end);
    return s;
  };
  const RewardBreakdown right = base_reward(answer_with(0), task, fmt, enc, cfg);
  CHECK(right.r_content == 1.0);
  CHECK(right.correct);
  const RewardBreakdown half = base_reward(answer_with(4), task, fmt, enc, cfg);
  CHECK(half.r_content == doctest::Approx(5.0 / 9.0));
  CHECK(half.correct);
  const RewardBreakdown mostly_wrong = base_reward(answer_with(5), task, fmt, enc, cfg);
  CHECK(mostly_wrong.r_content == doctest::Approx(4.0 / 9.0));
  CHECK_FALSE(mostly_wrong.correct);
  CHECK(mostly_wrong.r_base == doctest::Approx(0.5 + 4.0 / 9.0));
}

TEST_CASE("margin bonus worked case") {
  const auto out = margin_bonus({plus(0.9), plus(0.5)}, {minus(0.6), minus(0.4)}, 1.0, 0.2);
  CHECK(out[0].bonus == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(out[1].bonus == 0.0);
  CHECK(out[0].r_final == 1.0);
  CHECK(out[1].r_final == 0.5);
}

TEST_CASE("margin bonus gates") {
  const std::vector<RewardBreakdown> vm{minus(0.2)};
  CHECK(margin_bonus({plus(1.5, false, true)}, vm, 1.0, 0.2)[0].bonus == 0.0);
  CHECK(margin_bonus({plus(1.5, true, false)}, vm, 1.0, 0.2)[0].bonus == 0.0);
  CHECK(margin_bonus({plus(1.5)}, vm, 0.0, 0.2)[0].bonus == 0.0);
  CHECK_THROWS_AS(margin_bonus({plus(1.0)}, {}, 1.0, 0.2), Error);
  CHECK_THROWS_AS(margin_bonus({plus(1.0)}, vm, -1.0, 0.2), Error);
  CHECK_THROWS_AS(margin_bonus({plus(1.0)}, vm, 1.0, -0.1), Error);
}

TEST_CASE("margin bonus monotonicity") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.5);
  const auto bonus = [](double b, double m, double lambda, double delta) {
    return margin_bonus({plus(b)}, {minus(m), minus(m / 2)}, lambda, delta)[0].bonus;
  };
  for (int i = 0; i < 1000; ++i) {
    const double b = u(rng), m = u(rng), d = u(rng) / 3, step = u(rng) / 10;
    CHECK(bonus(b + step, m, 1.0, d) >= bonus(b, m, 1.0, d));
    CHECK(bonus(b, m + step, 1.0, d) <= bonus(b, m, 1.0, d));
    CHECK(bonus(b, m, 1.0, d + step) <= bonus(b, m, 1.0, d));
    const double one = bonus(b, m, 1.0, d);
    CHECK(bonus(b, m, 2.5, d) == doctest::Approx(2.5 * one).epsilon(1e-12));
  }
}

TEST_CASE("inter-group indicator") {
  CHECK(inter_group({1.0, 0.2}, {0.6, 0.1}) == std::vector<double>{1, 1, 0, 0});
  CHECK(inter_group({0.5, 0.2}, {0.6, 0.1}) == std::vector<double>{0, 0, 1, 1});
  CHECK(inter_group({0.6, 0.2}, {0.6, 0.1}) == std::vector<double>{1, 1, 1, 1});
  CHECK(inter_group({0.6 + 1e-12}, {0.6}) == std::vector<double>{1, 0});
  CHECK_THROWS_AS(inter_group({}, {0.1}), Error);
}

TEST_CASE("assemble group") {
  SUBCASE("all equal") {
    const GroupRewards g = assemble_group("q", {plus(1.0), plus(1.0)}, {minus(1.0), minus(1.0)},
                                          1.0, 0.2);
    CHECK(g.r_inter == std::vector<double>{1, 1, 1, 1});
    CHECK(g.r_intra == std::vector<double>{1, 1, 1, 1});
  }
  SUBCASE("intra mirrors final and v- never gets a bonus") {
    RewardBreakdown stray = minus(0.4);
    stray.bonus = 3.0;
    stray.r_final = 9.0;
    const GroupRewards g =
        assemble_group("q", {plus(1.5), plus(0.5)}, {stray, minus(0.2)}, 1.0, 0.2);
    CHECK(g.query_id == "q");
    for (const RewardBreakdown& r : g.v_minus) {
      CHECK(r.bonus == 0.0);
      CHECK(r.r_final == r.r_base);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const RewardBreakdown& r = i < 2 ? g.v_plus[i] : g.v_minus[i - 2];
      CHECK(g.r_intra[i] == r.r_final);
      if (r.bonus > 0) CHECK((r.correct && r.used_adloop));
    }
    CHECK(g.v_plus[0].r_final == doctest::Approx(1.5 + 0.9));
  }
  SUBCASE("size mismatch") {
    CHECK_THROWS_AS(assemble_group("q", {plus(1.0)}, {minus(1.0), minus(1.0)}, 1.0, 0.2), Error);
  }
}

TEST_CASE("shift invariance") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> sixteenths(-32, 32);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t half = 1 + trial % 4;
    const auto vp = random_side(rng, half, true);
    const auto vm = random_side(rng, half, false);
    const GroupRewards base = assemble_group("q", vp, vm, 1.0, 0.25);
    for (int s = 0; s < 10; ++s) {
      const double c = sixteenths(rng) / 16.0;
      auto sp = vp, sm = vm;
      for (auto& r : sp) r.r_base += c;
      for (auto& r : sm) r.r_base += c;
      const GroupRewards shifted = assemble_group("q", sp, sm, 1.0, 0.25);
      CHECK(shifted.r_inter == base.r_inter);
      for (std::size_t i = 0; i < half; ++i) {
        CHECK(shifted.v_plus[i].bonus == base.v_plus[i].bonus);
      }
      for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(shifted.r_intra[i] == base.r_intra[i] + c);
      }
    }
  }
}
