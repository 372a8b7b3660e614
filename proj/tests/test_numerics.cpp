#include <cmath>
#include <limits>
#include <vector>

#include "altune/classifier.hpp"
#include "altune/numerics.hpp"
#include "altune/rng.hpp"
#include "doctest.h"

using namespace altune;

namespace {

DenseNet single_layer(Matrix w, std::vector<double> b, Activation act) {
  return DenseNet({DenseLayer{std::move(w), std::move(b), act}});
}

// Textbook Adam on one scalar, for comparison with adam_step.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double p, double g, double lr = 1e-4) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    return p - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("identity layer with unit weights passes input through") {
    const auto net = single_layer(Matrix(2, 2, {1, 0, 0, 1}), {0, 0}, Activation::kIdentity);
    const std::vector<double> in{1, 2};
    CHECK(net.forward(in) == std::vector<double>{1, 2});
  }

  TEST_CASE("relu clamps negative pre-activations") {
    const auto net = single_layer(Matrix(2, 2, {1, 0, 0, 1}), {0, 0}, Activation::kRelu);
    const std::vector<double> in{-1, 2};
    CHECK(net.forward(in) == std::vector<double>{0, 2});
  }

  TEST_CASE("two-layer forward pass matches straight-line arithmetic") {
    DenseNet net({DenseLayer{Matrix(3, 2, {0.5, -0.2, 0.1, 0.3, -0.4, 0.6}), {0.1, -0.1, 0.05},
                             Activation::kTanh},
                  DenseLayer{Matrix(1, 3, {0.2, -0.5, 0.3}), {0.05}, Activation::kIdentity}});
    const std::vector<double> in{1, 0};
    const double h0 = std::tanh(0.5 * 1 + -0.2 * 0 + 0.1);
    const double h1 = std::tanh(0.1 * 1 + 0.3 * 0 - 0.1);
    const double h2 = std::tanh(-0.4 * 1 + 0.6 * 0 + 0.05);
    const double oracle = 0.2 * h0 - 0.5 * h1 + 0.3 * h2 + 0.05;
    const auto out = net.forward(in);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == doctest::Approx(oracle).epsilon(1e-15));
    CHECK(out[0] == doctest::Approx(0.0564972500987074).epsilon(1e-12));
  }

  TEST_CASE("dimension mismatch reports expected and actual widths") {
    const auto net = single_layer(Matrix(2, 3), {0, 0}, Activation::kIdentity);
    const std::vector<double> in{1, 2};
    try {
      (void)net.forward(in);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(e.expected() == 3);
      CHECK(e.actual() == 2);
      CHECK(std::string(e.what()).find('3') != std::string::npos);
    }
  }

  TEST_CASE("chained layers must agree on widths") {
    CHECK_THROWS_AS(DenseNet({DenseLayer{Matrix(3, 2), {0, 0, 0}, Activation::kTanh},
                              DenseLayer{Matrix(1, 4), {0}, Activation::kIdentity}}),
                    DimensionError);
  }

  TEST_CASE("softmax") {
    SUBCASE("zero logits give the uniform distribution") {
      const std::vector<double> z{0, 0, 0, 0};
      const auto p = softmax(z);
      for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("large logits do not overflow") {
      const std::vector<double> z{1000, 0};
      const auto p = softmax(z);
      CHECK(p[0] == doctest::Approx(1.0));
      CHECK(p[1] == doctest::Approx(0.0));
      CHECK(std::isfinite(p[0]));
    }
    SUBCASE("two-class value") {
      const std::vector<double> z{1, 2};
      const auto p = softmax(z);
      const double oracle = 1.0 / (1.0 + std::exp(1.0));
      CHECK(p[0] == doctest::Approx(oracle).epsilon(1e-14));
      CHECK(std::abs(p[0] - 0.26894) < 1e-5);
      CHECK(std::abs(p[1] - 0.73106) < 1e-5);
    }
    SUBCASE("empty input is rejected") {
      CHECK_THROWS_AS(softmax(std::vector<double>{}), NumericsError);
    }
    SUBCASE("non-finite logits are rejected") {
      const std::vector<double> z{1, std::numeric_limits<double>::quiet_NaN()};
      CHECK_THROWS_AS(softmax(z), NumericsError);
    }
  }

  TEST_CASE("ProbVector validates its entries") {
    CHECK_THROWS_AS(ProbVector({0.5, 0.6}), NumericsError);
    CHECK_THROWS_AS(ProbVector({-0.1, 1.1}), NumericsError);
    CHECK_NOTHROW(ProbVector({0.5, 0.5}));
    CHECK(ProbVector({0.4, 0.3, 0.3}).argmax() == 0);
    CHECK(ProbVector({0.3, 0.4, 0.3}).argmax() == 1);
    CHECK(ProbVector({0.25, 0.25, 0.5}).argmax() == 2);
    CHECK(ProbVector({0.5, 0.5}).argmax() == 0);
  }

  TEST_CASE("cross-entropy") {
    SUBCASE("perfect one-hot prediction") {
      const std::vector<ProbVector> p{ProbVector({1, 0, 0})};
      CHECK(cross_entropy(p, Matrix(1, 3, {1, 0, 0})) == 0.0);
    }
    SUBCASE("uniform prediction over four classes") {
      const std::vector<ProbVector> p{ProbVector({0.25, 0.25, 0.25, 0.25})};
      CHECK(cross_entropy(p, Matrix(1, 4, {0, 0, 1, 0})) ==
            doctest::Approx(std::log(4.0)).epsilon(1e-14));
    }
    SUBCASE("batch of two") {
      const std::vector<ProbVector> p{ProbVector({0.7, 0.1, 0.1, 0.1}),
                                      ProbVector({0.25, 0.25, 0.25, 0.25})};
      const Matrix truth(2, 4, {1, 0, 0, 0, 0, 1, 0, 0});
      const double oracle = (-std::log(0.7) - std::log(0.25)) / 2.0;
      CHECK(cross_entropy(p, truth) == doctest::Approx(oracle).epsilon(1e-14));
      CHECK(std::abs(cross_entropy(p, truth) - 0.871483) < 5e-6);
      const std::vector<std::size_t> labels{0, 1};
      CHECK(cross_entropy(p, labels) == doctest::Approx(oracle).epsilon(1e-14));
    }
    SUBCASE("confident wrong prediction is clamped") {
      const std::vector<ProbVector> p{ProbVector({1, 0})};
      CHECK(cross_entropy(p, Matrix(1, 2, {0, 1})) ==
            doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    }
    SUBCASE("class-count mismatch") {
      const std::vector<ProbVector> p{ProbVector({0.5, 0.5})};
      CHECK_THROWS_AS(cross_entropy(p, Matrix(1, 3, {1, 0, 0})), NumericsError);
      CHECK_THROWS_AS(cross_entropy(p, Matrix(2, 2, {1, 0, 0, 1})), NumericsError);
    }
    SUBCASE("truth rows must be one-hot") {
      const std::vector<ProbVector> p{ProbVector({0.5, 0.5})};
      CHECK_THROWS_AS(cross_entropy(p, Matrix(1, 2, {0.5, 0.5})), NumericsError);
    }
  }

  TEST_CASE("softmax_cross_entropy gradient is p - y over the batch") {
    const Matrix logits(2, 3, {1, 2, 3, 0, 0, 0});
    const std::vector<std::size_t> labels{2, 0};
    Matrix g;
    const double loss = softmax_cross_entropy(logits, labels, &g);
    const auto p0 = softmax(logits.row(0));
    const auto p1 = softmax(logits.row(1));
    CHECK(loss == doctest::Approx((-std::log(p0[2]) - std::log(p1[0])) / 2).epsilon(1e-14));
    CHECK(g(0, 2) == doctest::Approx((p0[2] - 1.0) / 2).epsilon(1e-14));
    CHECK(g(1, 1) == doctest::Approx(p1[1] / 2).epsilon(1e-14));
  }

  TEST_CASE("adam") {
    std::vector<double> w{0.5, -1.0};
    std::vector<ParamView> params{{"w", w}};

    SUBCASE("zero gradient leaves parameters and counts the step") {
      AdamState s(AdamConfig{}, params);
      adam_step(params, zeros_like(params), s);
      CHECK(w == std::vector<double>{0.5, -1.0});
      CHECK(s.step == 1);
    }
    SUBCASE("first unit-gradient step moves by the learning rate") {
      AdamState s(AdamConfig{}, params);
      GradBlocks g{{1.0, 1.0}};
      adam_step(params, g, s);
      CHECK(0.5 - w[0] == doctest::Approx(1e-4).epsilon(1e-7));
    }
    SUBCASE("two steps agree with a textbook recurrence") {
      AdamState s(AdamConfig{}, params);
      ScalarAdam ref0, ref1;
      double r0 = 0.5, r1 = -1.0;
      for (int i = 0; i < 2; ++i) {
        GradBlocks g{{0.3, -2.0}};
        adam_step(params, g, s);
        r0 = ref0.step(r0, 0.3);
        r1 = ref1.step(r1, -2.0);
      }
      CHECK(std::abs(w[0] - r0) < 1e-12);
      CHECK(std::abs(w[1] - r1) < 1e-12);
    }
    SUBCASE("non-finite gradient names the block and changes nothing") {
      std::vector<double> b{1.0};
      std::vector<ParamView> two{{"w", w}, {"layer.bias", b}};
      AdamState s(AdamConfig{}, two);
      GradBlocks g{{0.1, 0.1}, {std::numeric_limits<double>::infinity()}};
      try {
        adam_step(two, g, s);
        FAIL("expected NumericsError");
      } catch (const NumericsError& e) {
        CHECK(std::string(e.what()).find("layer.bias") != std::string::npos);
      }
      CHECK(w == std::vector<double>{0.5, -1.0});
      CHECK(s.step == 0);
    }
    SUBCASE("shape mismatch") {
      AdamState s(AdamConfig{}, params);
      GradBlocks g{{0.1}};
      CHECK_THROWS_AS(adam_step(params, g, s), NumericsError);
    }
  }

  TEST_CASE("finite-difference check on a quadratic") {
    std::vector<double> p{0.3, -1.2, 2.5, 0.0};
    std::vector<ParamView> params{{"p", p}};
    auto loss = [&] {
      double s = 0.0;
      for (double v : p) s += 0.5 * v * v;
      return s;
    };
    GradBlocks analytic{p};
    const auto report = finite_diff_check(loss, params, analytic);
    CHECK(report.checked == 4);
    CHECK(report.max_relative_error < 1e-7);
    CHECK(p == std::vector<double>{0.3, -1.2, 2.5, 0.0});
  }

  TEST_CASE("finite-difference check flags a wrong gradient") {
    std::vector<double> p{1.0, 2.0};
    std::vector<ParamView> params{{"p", p}};
    auto loss = [&] { return p[0] * p[0] + p[1]; };
    GradBlocks wrong{{2.0, 0.5}};
    const auto report = finite_diff_check(loss, params, wrong);
    CHECK(report.max_relative_error == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(report.worst_block == "p");
    CHECK(report.worst_index == 1);
  }

  TEST_CASE("finite-difference check on cross-entropy through a two-layer net") {
    auto rng = make_rng(11, Stream::kEncoderInit);
    const std::vector<std::size_t> widths{5, 7, 3};
    const std::vector<Activation> acts{Activation::kTanh, Activation::kIdentity};
    DenseNet net = DenseNet::glorot(widths, acts, rng);
    Matrix x(4, 5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : x.values()) v = n(rng);
    const std::vector<std::size_t> y{0, 2, 1, 2};
    auto params = net.parameters("net");
    auto loss = [&] { return softmax_cross_entropy(net.forward(x), y); };
    DenseNet::Trace trace;
    Matrix g;
    softmax_cross_entropy(net.forward(x, trace), y, &g);
    GradBlocks grads = zeros_like(params);
    net.backward(trace, g, grads);
    const auto report = finite_diff_check(loss, params, grads);
    CHECK(report.checked == net.param_count());
    CHECK(report.max_relative_error < 1e-4);
  }

  TEST_CASE("sampled finite-difference check visits the requested count") {
    std::vector<double> p(500, 0.25);
    std::vector<ParamView> params{{"p", p}};
    auto loss = [&] {
      double s = 0.0;
      for (double v : p) s += v * v * v;
      return s;
    };
    GradBlocks g{std::vector<double>(500, 3 * 0.25 * 0.25)};
    GradCheckOptions opts;
    opts.max_checked = 120;
    opts.seed = 3;
    const auto report = finite_diff_check(loss, params, g, opts);
    CHECK(report.checked == 120);
    CHECK(report.max_relative_error < 1e-8);
  }

  TEST_CASE("cosine similarity") {
    const std::vector<double> a{1, 2, 3};
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    CHECK(std::abs(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 0}) -
                   0.70711) < 1e-5);
    CHECK(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 0}) ==
          doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}),
                    NumericsError);
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1}, std::vector<double>{1, 0}),
                    DimensionError);
  }

  TEST_CASE("glorot initialization respects its bound and zero biases") {
    auto rng = make_rng(5, Stream::kEncoderInit);
    const std::vector<std::size_t> widths{10, 6};
    const std::vector<Activation> acts{Activation::kRelu};
    const auto net = DenseNet::glorot(widths, acts, rng);
    const double bound = std::sqrt(6.0 / 16.0);
    for (double w : net.layers()[0].weight.values()) CHECK(std::abs(w) <= bound);
    for (double b : net.layers()[0].bias) CHECK(b == 0.0);
    CHECK(net.param_count() == 66);
  }

  TEST_CASE("activation names round-trip") {
    for (auto a : {Activation::kIdentity, Activation::kRelu, Activation::kTanh}) {
      CHECK(activation_from_string(to_string(a)) == a);
    }
    CHECK_THROWS(activation_from_string("sigmoid"));
  }
}
