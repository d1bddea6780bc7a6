#include <doctest.h>

#include <cmath>

#include "upet/losses.hpp"

using namespace upet;

TEST_CASE("ce") {
  CHECK(ce(1.0) == doctest::Approx(0.0));
  CHECK(ce(0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::isfinite(ce(kProbFloor)));
  CHECK_THROWS_AS(ce(0.0), std::domain_error);
}

TEST_CASE("phce values") {
  const double tau = 2.0;
  // knee at p = 0.5
  CHECK(phce(0.5, tau) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(phce(0.25, tau) == doctest::Approx(1.193147).epsilon(1e-6));
  CHECK(phce(1.0, tau) == doctest::Approx(0.0));
  // above the knee it coincides with CE
  CHECK(phce(0.8, tau) == doctest::Approx(ce(0.8)).epsilon(1e-12));
}

TEST_CASE("phce continuity and bounded slope") {
  for (double tau : {1.5, 2.0, 5.0, 10.0, 50.0}) {
    const double knee = 1.0 / tau;
    const double eps = 1e-9;
    CHECK(phce(knee - eps, tau) == doctest::Approx(phce(knee + eps, tau)).epsilon(1e-6));
    CHECK(phce_dp(knee - eps, tau) == doctest::Approx(phce_dp(knee + eps, tau)).epsilon(1e-5));
    for (double p = 0.001; p < 1.0; p += 0.013) {
      CHECK(std::abs(phce_dp(p, tau)) <= tau + 1e-12);
      // linear branch below the knee
      if (p < knee) {
        CHECK(phce_dp(p, tau) == doctest::Approx(-tau).epsilon(1e-12));
      }
      // analytic derivative matches finite differences
      const double h = 1e-7;
      const double fd = (phce(p + h, tau) - phce(p - h, tau)) / (2 * h);
      CHECK(phce_dp(p, tau) == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("phce stays bounded near p = 0, ce does not") {
  const double tau = 10.0;
  CHECK(phce(kProbFloor, tau) == doctest::Approx(std::log(tau) + 1.0).epsilon(1e-9));
  CHECK(ce(kProbFloor) > phce(kProbFloor, tau));
  CHECK_THROWS_AS(phce(0.0, tau), std::domain_error);
  CHECK_THROWS_AS(phce(0.5, 1.0), ConfigError);
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.tau = 10.0;
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda = 0.1;
  cfg.g_temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("loss_value dispatches on kind") {
  LossConfig cfg;
  cfg.tau = 2.0;
  cfg.kind = LossKind::CE;
  CHECK(loss_value(0.25, cfg) == doctest::Approx(ce(0.25)));
  cfg.kind = LossKind::PHCE;
  CHECK(loss_value(0.25, cfg) == doctest::Approx(phce(0.25, 2.0)));
}

TEST_CASE("contrastive term") {
  ContrastiveScores s;
  s.positive = 1.0;
  s.negatives = {0.0};
  // r = e / (e + 1)
  const double r = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(contrastive_term(s, ContrastiveForm::NegLog) == doctest::Approx(-std::log(r)).epsilon(1e-9));
  CHECK(contrastive_term(s, ContrastiveForm::NegLog) == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(contrastive_term(s, ContrastiveForm::LiteralPaper) == doctest::Approx(r).epsilon(1e-9));
}

TEST_CASE("contrastive term negatives are averaged") {
  ContrastiveScores one;
  one.positive = 0.7;
  one.negatives = {0.2};
  ContrastiveScores rep;
  rep.positive = 0.7;
  rep.negatives = {0.2, 0.2, 0.2};
  CHECK(contrastive_term(one, ContrastiveForm::NegLog) ==
        doctest::Approx(contrastive_term(rep, ContrastiveForm::NegLog)).epsilon(1e-12));
}

TEST_CASE("contrastive_reg skips incomplete anchors") {
  const Vec a{1.0, 0.0};
  const Vec b{0.0, 1.0};
  const Vec c{1.0, 1.0};

  std::vector<const Vec*> anchors{&a, &b};
  std::vector<const Vec*> positives{&c, nullptr};
  std::vector<std::vector<const Vec*>> negatives{{&b}, {&a}};
  const ContrastiveResult r =
      contrastive_reg(anchors, positives, negatives, 1.0, ContrastiveForm::NegLog);
  CHECK(r.anchors == 1);
  CHECK(r.skipped == 1);
  // g+ = cos(a,c) = 1/sqrt(2), g- = cos(a,b) = 0
  const double gp = 1.0 / std::sqrt(2.0);
  const double expect = -std::log(std::exp(gp) / (std::exp(gp) + 1.0));
  CHECK(r.value == doctest::Approx(expect).epsilon(1e-9));

  const ContrastiveResult none = contrastive_reg({&a}, {nullptr}, {{}}, 1.0, ContrastiveForm::NegLog);
  CHECK(none.anchors == 0);
  CHECK(none.value == 0.0);
}

TEST_CASE("contrastive_reg temperature sharpens scores") {
  const Vec a{1.0, 0.0};
  const Vec pos{1.0, 0.1};
  const Vec neg{0.0, 1.0};
  const ContrastiveResult warm = contrastive_reg({&a}, {&pos}, {{&neg}}, 1.0, ContrastiveForm::NegLog);
  const ContrastiveResult cold = contrastive_reg({&a}, {&pos}, {{&neg}}, 0.1, ContrastiveForm::NegLog);
  // smaller temperature widens the score gap, shrinking the loss here
  CHECK(cold.value < warm.value);
}
