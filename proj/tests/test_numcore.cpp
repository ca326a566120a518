#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "avfuse/gradcheck.hpp"
#include "avfuse/kernels.hpp"
#include "avfuse/ops.hpp"

using namespace avf;

namespace {

// Wraps a graph builder (tape, input var) -> scalar var into the value/grad
// closures the finite-difference harness consumes.
using Builder = std::function<VarPtr<double>(Tape<double>&, const VarPtr<double>&)>;

GradCheckReport check_builder(const Builder& build, const MatrixD& x0,
                              double step = 1e-5) {
  ScalarFn value_fn = [&](const MatrixD& x) {
    Tape<double> tape;
    auto vx = ops::constant(tape, x);
    return build(tape, vx)->value(0, 0);
  };
  GradFn grad_fn = [&](const MatrixD& x) {
    Tape<double> tape;
    auto vx = ops::constant(tape, x);
    auto loss = build(tape, vx);
    tape.backward(loss);
    return vx->grad;
  };
  return grad_check(value_fn, grad_fn, x0, step);
}

// Random linear functional of the op output so the whole Jacobian is probed.
VarPtr<double> project(Tape<double>& tape, const VarPtr<double>& out, Rng& rng) {
  auto c = ops::constant(tape, random_normal<double>(out->value.rows(), out->value.cols(), 1.0, rng));
  return ops::sum_all(tape, ops::hadamard(tape, out, c));
}

}  // namespace

TEST_CASE("affine identity and arithmetic oracle") {
  MatrixD eye = MatrixD::from_rows({{1, 0}, {0, 1}});
  MatrixD zero_bias(1, 2);
  CHECK(affine(eye, eye, zero_bias) == eye);

  MatrixD x = MatrixD::from_rows({{1, 2}});
  MatrixD bias = MatrixD::from_rows({{1, 1}});
  MatrixD out = affine(x, eye, bias);
  CHECK(out(0, 0) == doctest::Approx(2));
  CHECK(out(0, 1) == doctest::Approx(3));
}

TEST_CASE("affine shape mismatch names both shapes") {
  MatrixD x(2, 3), w(2, 2), b(1, 2);
  CHECK_THROWS_WITH_AS(affine(x, w, b), doctest::Contains("2x3"), DimensionError);
  try {
    affine(x, w, b);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("2x2") != std::string::npos);
  }
}

TEST_CASE("masked_softmax basics") {
  SUBCASE("symmetry") {
    MatrixD s = MatrixD::from_rows({{0, 0}});
    auto p = masked_softmax(s, Mask{1, 1});
    REQUIRE(p.has_value());
    CHECK((*p)(0, 0) == doctest::Approx(0.5));
    CHECK((*p)(0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("direct exp/sum oracle") {
    MatrixD s = MatrixD::from_rows({{1, 2, 3}});
    auto p = masked_softmax(s, Mask{1, 1, 1});
    REQUIRE(p.has_value());
    CHECK((*p)(0, 0) == doctest::Approx(0.0900).epsilon(1e-4));
    CHECK((*p)(0, 1) == doctest::Approx(0.2447).epsilon(1e-4));
    CHECK((*p)(0, 2) == doctest::Approx(0.6652).epsilon(1e-4));
  }
  SUBCASE("all masked is a first-class signal, never NaN") {
    MatrixD s = MatrixD::from_rows({{3, 1}});
    auto p = masked_softmax(s, Mask{0, 0});
    CHECK(!p.has_value());
  }
  SUBCASE("masked positions are exactly zero") {
    MatrixD s = MatrixD::from_rows({{5, 1, 2}});
    auto p = masked_softmax(s, Mask{1, 0, 1});
    REQUIRE(p.has_value());
    CHECK((*p)(0, 1) == 0.0);
    CHECK((*p)(0, 0) + (*p)(0, 2) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("masked_softmax stability and shift invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t q = rng.index(1, 5), k = rng.index(1, 8);
    MatrixD s = random_normal<double>(q, k, 1.0, rng);
    // include entries of magnitude 1e4
    if (trial % 2 == 0) s(0, rng.below(k)) = 1e4 * (rng.bernoulli(0.5) ? 1 : -1);
    Mask mask(k, 0);
    for (auto& m : mask) m = rng.bernoulli(0.6);
    mask[rng.below(k)] = 1;  // at least one key
    auto p = masked_softmax(s, mask);
    REQUIRE(p.has_value());
    CHECK(p->all_finite());
    for (std::size_t i = 0; i < q; ++i) {
      double row_sum = 0;
      for (std::size_t j = 0; j < k; ++j) row_sum += (*p)(i, j);
      CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // invariance to adding a constant to every unmasked score in a row
    const double c = rng.uniform(-3, 3);
    MatrixD shifted = s;
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (mask[j]) shifted(i, j) += c;
    auto p2 = masked_softmax(shifted, mask);
    for (std::size_t i = 0; i < p->size(); ++i)
      CHECK(p->data()[i] == doctest::Approx(p2->data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("layer_norm examples") {
  MatrixD ones_gain = MatrixD::from_rows({{1, 1}});
  MatrixD zero_shift(1, 2);
  SUBCASE("constant row maps to zeros under eps guard") {
    MatrixD x = MatrixD::from_rows({{4, 4}});
    MatrixD out = layer_norm(x, ones_gain, zero_shift, 1e-5);
    CHECK(out(0, 0) == doctest::Approx(0.0));
    CHECK(out(0, 1) == doctest::Approx(0.0));
  }
  SUBCASE("hand-computed mean=2 std=1") {
    MatrixD x = MatrixD::from_rows({{1, 3}});
    MatrixD out = layer_norm(x, ones_gain, zero_shift, 1e-12);
    CHECK(out(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("gain 0 gives constant shift") {
    MatrixD x = MatrixD::from_rows({{2, -7, 3}});
    MatrixD g(1, 3, 0.0), b(1, 3, 1.5);
    MatrixD out = layer_norm(x, g, b, 1e-5);
    for (std::size_t j = 0; j < 3; ++j) CHECK(out(0, j) == doctest::Approx(1.5));
  }
  SUBCASE("eps must be positive") {
    MatrixD x(1, 2, 1.0);
    CHECK_THROWS_AS(layer_norm(x, ones_gain, zero_shift, 0.0), ConfigError);
  }
}

TEST_CASE("layer_norm row statistics invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = rng.index(1, 4), d = rng.index(4, 32);
    MatrixD x = random_normal<double>(n, d, 3.0, rng);
    MatrixD g(1, d, 1.0), b(1, d, 0.0);
    MatrixD out = layer_norm(x, g, b, 1e-5);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < d; ++j) mean += out(i, j);
      mean /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) var += (out(i, j) - mean) * (out(i, j) - mean);
      var /= static_cast<double>(d);
      CHECK(std::abs(mean) <= 1e-6);
      CHECK(var >= 1.0 - 1e-4);
      CHECK(var <= 1.0 + 1e-4);
    }
  }
}

TEST_CASE("positional encoding formula") {
  MatrixD pe = positional_encoding<double>(4, 6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(pe(0, 2 * i) == doctest::Approx(0.0));
    CHECK(pe(0, 2 * i + 1) == doctest::Approx(1.0));
  }
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-6));
  for (std::size_t i = 0; i < pe.size(); ++i) {
    CHECK(pe.data()[i] >= -1.0);
    CHECK(pe.data()[i] <= 1.0);
  }
  CHECK_THROWS_AS(positional_encoding<double>(4, 5), ConfigError);
}

TEST_CASE("grad_check harness on closed forms") {
  SUBCASE("sum of squares") {
    ScalarFn f = [](const MatrixD& x) {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i] * x.data()[i];
      return s;
    };
    GradFn g = [](const MatrixD& x) {
      MatrixD out(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = 2 * x.data()[i];
      return out;
    };
    MatrixD x0 = MatrixD::from_rows({{1, 2}});
    auto report = grad_check(f, g, x0, 1e-5);
    CHECK(report.analytic_finite);
    CHECK(report.max_rel_error < 1e-6);
  }
  SUBCASE("constant function has zero error") {
    ScalarFn f = [](const MatrixD&) { return 3.0; };
    GradFn g = [](const MatrixD& x) { return MatrixD(x.rows(), x.cols()); };
    auto report = grad_check(f, g, MatrixD(2, 2, 1.0), 1e-5);
    CHECK(report.max_rel_error == 0.0);
  }
  SUBCASE("corrupted gradient is flagged (negative control)") {
    ScalarFn f = [](const MatrixD& x) { return x.data()[0] * x.data()[0]; };
    GradFn g = [](const MatrixD& x) {
      MatrixD out(x.rows(), x.cols());
      out.data()[0] = 2 * x.data()[0] + 0.5;  // deliberately wrong
      return out;
    };
    auto report = grad_check(f, g, MatrixD(1, 1, 1.0), 1e-5);
    CHECK(report.max_rel_error > 1e-2);
  }
  SUBCASE("non-finite analytic gradient reports the coordinate") {
    ScalarFn f = [](const MatrixD&) { return 0.0; };
    GradFn g = [](const MatrixD& x) {
      MatrixD out(x.rows(), x.cols());
      out.data()[1] = std::numeric_limits<double>::quiet_NaN();
      return out;
    };
    auto report = grad_check(f, g, MatrixD(1, 3, 1.0), 1e-5);
    CHECK(!report.analytic_finite);
    CHECK(report.worst_coord == 1);
    CHECK(report.message.find("1") != std::string::npos);
  }
  SUBCASE("step outside [1e-7, 1e-3] rejected") {
    ScalarFn f = [](const MatrixD&) { return 0.0; };
    GradFn g = [](const MatrixD& x) { return MatrixD(x.rows(), x.cols()); };
    CHECK_THROWS_AS(grad_check(f, g, MatrixD(1, 1, 0.0), 1e-2), ConfigError);
  }
}

TEST_CASE("every primitive backward matches finite differences on 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(mix_seed(314, seed));
    // d >= 3: layer_norm over 2 columns is piecewise constant (output is
    // +-sign of the difference), so its true gradient is the eps term alone
    // and finite differences cannot resolve it.
    const std::size_t n = rng.index(1, 4), d = rng.index(3, 6);
    CAPTURE(seed);

    MatrixD x0 = random_normal<double>(n, d, 1.0, rng);
    MatrixD other = random_normal<double>(n, d, 1.0, rng);
    MatrixD w0 = random_normal<double>(d, 3, 1.0, rng);
    MatrixD b0 = random_normal<double>(1, 3, 1.0, rng);
    const std::uint64_t proj_seed = rng.next_u64();

    auto with_projection = [&](auto&& op) -> Builder {
      return [op, proj_seed](Tape<double>& tape, const VarPtr<double>& vx) {
        Rng prng(proj_seed);
        return project(tape, op(tape, vx), prng);
      };
    };

    std::vector<Builder> builders;
    builders.push_back(with_projection([other](Tape<double>& t, const VarPtr<double>& x) {
      return ops::add(t, x, ops::constant(t, other));
    }));
    builders.push_back(with_projection([other](Tape<double>& t, const VarPtr<double>& x) {
      return ops::add_const(t, x, other);
    }));
    builders.push_back(with_projection([](Tape<double>& t, const VarPtr<double>& x) {
      return ops::scale(t, x, 1.7);
    }));
    builders.push_back(with_projection([other](Tape<double>& t, const VarPtr<double>& x) {
      return ops::hadamard(t, x, ops::constant(t, other));
    }));
    builders.push_back(with_projection([other](Tape<double>& t, const VarPtr<double>& x) {
      // gate input must be in a smooth regime; squash through sigmoid first
      auto g = ops::sigmoid(t, x);
      return ops::gate_blend(t, g, ops::constant(t, other), x);
    }));
    builders.push_back(with_projection([w0, b0](Tape<double>& t, const VarPtr<double>& x) {
      return ops::affine(t, x, ops::constant(t, w0), ops::constant(t, b0));
    }));
    builders.push_back(with_projection([w0](Tape<double>& t, const VarPtr<double>& x) {
      return ops::matmul(t, x, ops::constant(t, w0));
    }));
    builders.push_back(with_projection([other](Tape<double>& t, const VarPtr<double>& x) {
      return ops::matmul_nt(t, x, ops::constant(t, other));
    }));
    builders.push_back(with_projection([other](Tape<double>& t, const VarPtr<double>& x) {
      return ops::concat_cols(t, x, ops::constant(t, other));
    }));
    builders.push_back(with_projection([d](Tape<double>& t, const VarPtr<double>& x) {
      return ops::slice_cols(t, x, 1, d - 1);
    }));
    builders.push_back(with_projection([](Tape<double>& t, const VarPtr<double>& x) {
      return ops::gelu(t, x);
    }));
    builders.push_back(with_projection([](Tape<double>& t, const VarPtr<double>& x) {
      return ops::sigmoid(t, x);
    }));
    {
      Mask mask(d, 0);
      Rng mrng(mix_seed(99, seed));
      for (auto& m : mask) m = mrng.bernoulli(0.7);
      mask[mrng.below(d)] = 1;
      builders.push_back(with_projection([mask](Tape<double>& t, const VarPtr<double>& x) {
        return ops::row_softmax_masked(t, x, mask);
      }));
    }
    {
      MatrixD gain = random_normal<double>(1, d, 1.0, rng);
      MatrixD shift = random_normal<double>(1, d, 1.0, rng);
      builders.push_back(with_projection([gain, shift](Tape<double>& t, const VarPtr<double>& x) {
        return ops::layer_norm(t, x, ops::constant(t, gain), ops::constant(t, shift), 1e-5);
      }));
    }
    {
      const std::uint64_t drop_seed = rng.next_u64();
      builders.push_back(with_projection([drop_seed](Tape<double>& t, const VarPtr<double>& x) {
        Rng drng(drop_seed);  // identical mask on every evaluation
        return ops::dropout(t, x, 0.4, true, &drng);
      }));
    }
    builders.push_back([](Tape<double>& t, const VarPtr<double>& x) {
      return ops::sum_all(t, x);
    });

    for (std::size_t op_idx = 0; op_idx < builders.size(); ++op_idx) {
      CAPTURE(op_idx);
      auto report = check_builder(builders[op_idx], x0);
      CHECK(report.analytic_finite);
      CHECK(report.max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("parameter-side gradients of affine") {
  Rng rng(21);
  MatrixD x = random_normal<double>(3, 4, 1.0, rng);
  MatrixD w0 = random_normal<double>(4, 2, 1.0, rng);
  MatrixD b0 = random_normal<double>(1, 2, 1.0, rng);
  const std::uint64_t proj_seed = rng.next_u64();

  Builder wrt_w = [x, b0, proj_seed](Tape<double>& t, const VarPtr<double>& w) {
    Rng prng(proj_seed);
    return project(t, ops::affine(t, ops::constant(t, x), w, ops::constant(t, b0)), prng);
  };
  Builder wrt_b = [x, w0, proj_seed](Tape<double>& t, const VarPtr<double>& b) {
    Rng prng(proj_seed);
    return project(t, ops::affine(t, ops::constant(t, x), ops::constant(t, w0), b), prng);
  };
  CHECK(check_builder(wrt_w, w0).max_rel_error <= 1e-4);
  CHECK(check_builder(wrt_b, b0).max_rel_error <= 1e-4);
}

TEST_CASE("tape backward accumulates through shared nodes") {
  Tape<double> tape;
  auto x = ops::constant(tape, MatrixD(1, 1, 3.0));
  auto y = ops::add(tape, x, x);  // y = 2x
  auto loss = ops::sum_all(tape, ops::hadamard(tape, y, y));  // (2x)^2
  tape.backward(loss);
  CHECK(x->grad(0, 0) == doctest::Approx(8 * 3.0));  // d/dx 4x^2 = 8x
}

TEST_CASE("coordinate subsets restrict the harness") {
  ScalarFn f = [](const MatrixD& x) { return x.data()[0] + 2 * x.data()[1]; };
  GradFn g = [](const MatrixD& x) {
    MatrixD out(x.rows(), x.cols());
    out.data()[0] = 1.0;
    out.data()[1] = 999.0;  // wrong, but excluded from the subset
    return out;
  };
  const std::size_t coords[] = {0};
  auto report = grad_check(f, g, MatrixD(1, 2, 1.0), 1e-5, coords);
  CHECK(report.checked_coords == 1);
  CHECK(report.max_rel_error < 1e-6);
}
