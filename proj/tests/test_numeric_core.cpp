#include <cmath>
#include <fstream>

#include "clipose/autograd.hpp"
#include "clipose/checkpoint.hpp"
#include "clipose/digest.hpp"
#include "clipose/errors.hpp"
#include "clipose/gradcheck.hpp"
#include "clipose/param_store.hpp"
#include "clipose/rng.hpp"
#include "clipose/tensor.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clipose;
using clipose::testing::random_matrix;

TEST_SUITE("tensor") {
  TEST_CASE("identity leaves a matrix unchanged on both sides") {
    const Tensor a = Tensor::matrix(3, 3, {0.3, -1.7, 2.25, 5.0, 0.1, -0.6, 7.5, 8.125, -9.0});
    CHECK(matmul(Tensor::identity(3), a) == a);
    CHECK(matmul(a, Tensor::identity(3)) == a);
  }

  TEST_CASE("row times column") {
    const Tensor r = matmul(Tensor::matrix(1, 2, {1, 2}), transpose(Tensor::matrix(1, 2, {3, 4})));
    CHECK(r.shape() == Shape{1, 1});
    CHECK(r.item() == 11.0);
  }

  TEST_CASE("mismatched inner dimensions") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  }

  TEST_CASE("construction rejects bad shapes and non-finite values") {
    CHECK_THROWS_AS(Tensor({2, 0}, {}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor({1}, {NAN}), NumericError);
    CHECK_THROWS_AS(Tensor::zeros({2, 2}).item(), ContractError);
  }

  TEST_CASE("softmax of a symmetric row") {
    const Tensor s = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
    CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("softmax matches the reference values") {
    const Tensor s = softmax_rows(Tensor::matrix(1, 3, {1, 2, 3}));
    const double expected[] = {0.0900305731703805, 0.244728471054798, 0.665240955774822};
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(s[i] - expected[i]) < 1e-12);
  }

  TEST_CASE("softmax rows sum to one and ignore row shifts") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor x = random_matrix(rng, 4, 7, 20.0);
      const Tensor s = softmax_rows(x);
      Tensor shifted = x;
      for (std::size_t r = 0; r < 4; ++r) {
        const double c = rng.uniform(-50, 50);
        for (double& v : shifted.mutable_row(r)) v += c;
      }
      CHECK(max_abs_diff(softmax_rows(shifted), s) < 1e-12);
      for (std::size_t r = 0; r < 4; ++r) {
        double total = 0;
        for (double v : s.row(r)) total += v;
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }

  TEST_CASE("softmax survives large magnitudes") {
    const Tensor s = softmax_rows(Tensor::matrix(1, 3, {1000, 1001, 1002}));
    CHECK(s.all_finite());
    CHECK(std::abs(s[2] - 0.665240955774822) < 1e-12);
  }

  TEST_CASE("l2 normalization") {
    const Tensor n = l2_normalize_rows(Tensor::matrix(3, 2, {3, 4, 0.6, 0.8, 0, 0}));
    CHECK(n.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(n.at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(std::abs(n.at(1, 0) - 0.6) < 1e-15);
    CHECK(std::abs(n.at(1, 1) - 0.8) < 1e-15);
    CHECK(n.at(2, 0) == 0.0);
    CHECK(n.at(2, 1) == 0.0);
  }

  TEST_CASE("cross entropy of uniform logits is ln C") {
    const std::vector<std::size_t> targets = {0, 3, 5, 1};
    CHECK(std::abs(cross_entropy_mean(Tensor::zeros({4, 6}), targets) - std::log(6.0)) < 1e-12);
  }

  TEST_CASE("cross entropy reference value") {
    const std::vector<std::size_t> target = {2};
    CHECK(std::abs(cross_entropy_mean(Tensor::matrix(1, 3, {1, 2, 3}), target) - 0.407605964444380) < 1e-12);
  }

  TEST_CASE("cross entropy saturates near zero and is never negative") {
    const std::vector<std::size_t> targets = {1, 0, 2};
    Tensor logits = Tensor::zeros({3, 3});
    for (std::size_t r = 0; r < 3; ++r) logits.at(r, targets[r]) = 1000.0;
    CHECK(cross_entropy_mean(logits, targets) < 1e-6);

    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      CHECK(cross_entropy_mean(random_matrix(rng, 3, 3, 10.0), targets) >= 0.0);
    }
  }

  TEST_CASE("cross entropy rejects bad targets") {
    const std::vector<std::size_t> out_of_range = {3};
    const std::vector<std::size_t> too_many = {0, 1};
    CHECK_THROWS_AS(cross_entropy_mean(Tensor::zeros({1, 3}), out_of_range), IndexError);
    CHECK_THROWS_AS(cross_entropy_mean(Tensor::zeros({1, 3}), too_many), DimensionError);
  }
}

TEST_SUITE("autograd") {
  TEST_CASE("gradient of a sum is all ones") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::matrix(2, 3, {1, -2, 3, 0.5, 0, 9}));
    ag::backward(ag::sum(ag::parameter(w)));
    CHECK(w.grad == Tensor::filled({2, 3}, 1.0));
    CHECK(w.grad_ready);
  }

  TEST_CASE("gradient of a squared norm") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::filled({1}, 3.0));
    ag::backward(ag::sum_squares(ag::parameter(w)));
    CHECK(w.grad.item() == 6.0);
  }

  TEST_CASE("gradients accumulate across backward calls") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::filled({1}, 3.0));
    ag::backward(ag::sum_squares(ag::parameter(w)));
    ag::backward(ag::sum_squares(ag::parameter(w)));
    CHECK(w.grad.item() == 12.0);
    store.zero_grad();
    CHECK(w.grad.item() == 0.0);
    CHECK_FALSE(w.grad_ready);
  }

  TEST_CASE("a parameter used twice collects both contributions") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::matrix(1, 2, {1, 2}));
    const ag::Var v = ag::parameter(w);
    ag::backward(ag::sum(ag::add(v, ag::scale(v, 3.0))));
    CHECK(w.grad == Tensor::filled({1, 2}, 4.0));
  }

  TEST_CASE("backward needs a scalar root") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(ag::backward(ag::parameter(w)), ContractError);
  }

  TEST_CASE("read-only access does not track gradients") {
    ParamStore store;
    store.add("w", Tensor::filled({1}, 2.0));
    const ParamStore& frozen = store;
    const ag::ParamAccess tracked(store), readonly(frozen);
    CHECK(tracked.tracked());
    CHECK_FALSE(readonly.tracked());
    ag::backward(ag::sum_squares(readonly("w")));
    CHECK_FALSE(store.at("w").grad_ready);
  }
}

namespace {

// Small store of random parameters in [-1, 1] for per-operation checks.
ParamStore random_store(std::uint64_t seed, std::initializer_list<std::pair<const char*, Shape>> specs) {
  Rng rng(seed);
  ParamStore store;
  for (const auto& [name, shape] : specs) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1, 1);
    store.add(name, Tensor(shape, std::move(v)));
  }
  return store;
}

void expect_pass(const LossGraph& f, ParamStore& store) {
  const GradCheckReport r = check_gradients(f, store, 1e-4);
  for (const auto& e : r.entries) {
    INFO(e.name << " relative error " << e.max_relative_error);
    CHECK(e.max_relative_error <= 1e-4);
  }
  CHECK(r.pass);
}

ag::Var p(ParamStore& s, const char* name) { return ag::ParamAccess(s)(name); }

}  // namespace

TEST_SUITE("gradcheck") {
  TEST_CASE("quadratic is exact under central differences") {
    ParamStore store;
    store.add("x", Tensor::filled({1}, 3.0));
    const GradCheckReport r = check_gradients([](ParamStore& s) { return ag::sum_squares(p(s, "x")); }, store, 1e-8);
    CHECK(r.pass);
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].max_relative_error < 1e-9);
    CHECK(r.entries[0].coordinates_checked == 1);
    CHECK(store.at("x").value.item() == 3.0);
  }

  TEST_CASE("zero tolerance fails on a nonlinear op") {
    ParamStore store = random_store(3, {{"x", {2, 3}}});
    const GradCheckReport r =
        check_gradients([](ParamStore& s) { return ag::sum(ag::tanh(p(s, "x"))); }, store, 0.0);
    CHECK_FALSE(r.pass);
  }

  TEST_CASE("non-finite loss aborts the check") {
    ParamStore store;
    store.add("x", Tensor::filled({1}, 1.0));
    auto blowup = [](ParamStore& s) { return ag::sum(ag::mul_exp_scalar(p(s, "x"), ag::constant(Tensor::filled({1}, 1e6)))); };
    CHECK_THROWS_AS(check_gradients(blowup, store, 1e-4), NumericError);
  }

  TEST_CASE("large tensors are sampled") {
    ParamStore store = random_store(4, {{"x", {20, 10}}});
    const GradCheckReport r = check_gradients([](ParamStore& s) { return ag::sum_squares(p(s, "x")); }, store, 1e-4);
    CHECK(r.entries[0].coordinates_checked == 64);
  }

  TEST_CASE("matmul, matmul_nt and transpose") {
    ParamStore store = random_store(10, {{"a", {3, 4}}, {"b", {4, 2}}, {"c", {5, 4}}});
    expect_pass([](ParamStore& s) {
      return ag::add(ag::sum_squares(ag::matmul(p(s, "a"), p(s, "b"))),
                     ag::sum_squares(ag::matmul_nt(p(s, "a"), p(s, "c"))));
    }, store);
    expect_pass([](ParamStore& s) { return ag::sum_squares(ag::matmul(ag::transpose(p(s, "a")), p(s, "a"))); }, store);
  }

  TEST_CASE("bias, scale and tanh") {
    ParamStore store = random_store(11, {{"x", {3, 4}}, {"b", {1, 4}}});
    expect_pass([](ParamStore& s) {
      return ag::sum_squares(ag::tanh(ag::scale(ag::add_row_bias(p(s, "x"), p(s, "b")), 1.7)));
    }, store);
  }

  TEST_CASE("exponential scalar factor") {
    ParamStore store = random_store(12, {{"x", {2, 3}}, {"t", {1}}});
    expect_pass([](ParamStore& s) { return ag::sum_squares(ag::mul_exp_scalar(p(s, "x"), p(s, "t"))); }, store);
  }

  TEST_CASE("row gathering and grouped sums") {
    ParamStore store = random_store(13, {{"table", {5, 3}}});
    expect_pass([](ParamStore& s) {
      const ag::Var g = ag::gather_rows(p(s, "table"), {4, 0, 0, 2, 1, 4});
      return ag::sum_squares(ag::weighted_group_sum(g, 3, {0.5, 0.25, 0.25, 1.0, 0.0, 2.0}));
    }, store);
  }

  TEST_CASE("row normalization") {
    ParamStore store = random_store(14, {{"x", {4, 3}}, {"w", {4, 3}}});
    expect_pass([](ParamStore& s) {
      return ag::sum(ag::matmul_nt(ag::l2_normalize_rows(p(s, "x")), p(s, "w")));
    }, store);
  }

  TEST_CASE("cross entropy") {
    ParamStore store = random_store(15, {{"logits", {4, 5}}});
    expect_pass([](ParamStore& s) { return ag::cross_entropy_mean(ag::scale(p(s, "logits"), 3.0), {0, 4, 2, 2}); },
                store);
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("zero gradient and no decay leaves parameters unchanged") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::matrix(1, 3, {0.5, -2, 7}));
    const Tensor before = w.value;
    w.grad_ready = true;
    optimizer_step(store, 1e-2, 0.0);
    CHECK(w.value == before);
  }

  TEST_CASE("first step from zero") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::filled({1}, 0.0));
    w.grad = Tensor::filled({1}, 1.0);
    w.grad_ready = true;
    optimizer_step(store, 1e-5, 1e-3);
    CHECK(std::abs(w.value.item() - (-1e-5 / (1 + 1e-8))) < 1e-18);
    CHECK(std::abs(std::abs(w.value.item()) - 1e-5) < 1e-9);
  }

  TEST_CASE("first step from one includes the decoupled decay") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::filled({1}, 1.0));
    w.grad = Tensor::filled({1}, 1.0);
    w.grad_ready = true;
    optimizer_step(store, 1e-5, 1e-3);
    CHECK(std::abs(w.value.item() - (1 - 1e-8 - 1e-5 / (1 + 1e-8))) < 1e-15);
    CHECK(std::abs(w.value.item() - (1 - 1e-5 - 1e-8)) < 1e-12);
  }

  TEST_CASE("step counter, zeroed gradients, frozen parameters") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::filled({1}, 1.0));
    Parameter& f = store.add("f", Tensor::filled({1}, 1.0));
    f.frozen = true;
    ag::backward(ag::sum_squares(ag::parameter(w)));
    optimizer_step(store, 0.1, 0.0);
    CHECK(store.step() == 1);
    CHECK(w.grad.item() == 0.0);
    CHECK_FALSE(w.grad_ready);
    CHECK(w.value.item() < 1.0);
    CHECK(f.value.item() == 1.0);
  }

  TEST_CASE("missing gradients are a contract error") {
    ParamStore store;
    store.add("w", Tensor::filled({1}, 1.0));
    CHECK_THROWS_AS(optimizer_step(store, 0.1, 0.0), ContractError);
    CHECK(store.step() == 0);
  }

  TEST_CASE("upper clamp is re-applied after the update") {
    ParamStore store;
    Parameter& w = store.add("w", Tensor::filled({1}, 0.99));
    w.clamped = true;
    w.upper_clamp = 1.0;
    for (int i = 0; i < 20; ++i) {
      w.grad = Tensor::filled({1}, -1.0);
      w.grad_ready = true;
      optimizer_step(store, 0.1, 0.0);
      CHECK(w.value.item() <= 1.0);
    }
    CHECK(w.value.item() == 1.0);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit exact") {
    clipose::testing::TempDir dir;
    Rng rng(8);
    ParamStore store;
    store.add("a", random_matrix(rng, 3, 4));
    Parameter& b = store.add("b", Tensor::filled({1}, 1.0 / 3.0));
    b.frozen = true;
    Parameter& a = store.at("a");
    a.first_moment = random_matrix(rng, 3, 4);
    a.second_moment = random_matrix(rng, 3, 4, 0.5);
    store.set_step(17);
    const nlohmann::json header = {{"model", "test"}, {"n", 2}};
    save_checkpoint(dir / "x.ckpt", store, header);

    const Checkpoint back = load_checkpoint(dir / "x.ckpt");
    CHECK(back.header == header);
    CHECK(back.params.step() == 17);
    REQUIRE(back.params.size() == 2);
    CHECK(back.params.params()[0].name == "a");
    CHECK(back.params.at("a").value == a.value);
    CHECK(back.params.at("a").first_moment == a.first_moment);
    CHECK(back.params.at("a").second_moment == a.second_moment);
    CHECK(back.params.at("b").value.item() == 1.0 / 3.0);
    CHECK(back.params.at("b").frozen);

    save_checkpoint(dir / "y.ckpt", back.params, back.header);
    CHECK(file_sha256(dir / "x.ckpt") == file_sha256(dir / "y.ckpt"));
  }

  TEST_CASE("bad magic and missing files are I/O errors") {
    clipose::testing::TempDir dir;
    std::ofstream(dir / "bad.ckpt") << "NOTACKPTxxxxxxxxxxxxxxxx";
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  }

  TEST_CASE("truncated file is an I/O error") {
    clipose::testing::TempDir dir;
    ParamStore store;
    store.add("a", Tensor::filled({4, 4}, 2.0));
    save_checkpoint(dir / "x.ckpt", store, nlohmann::json::object());
    std::filesystem::resize_file(dir / "x.ckpt", std::filesystem::file_size(dir / "x.ckpt") - 9);
    CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), IoError);
  }
}

TEST_SUITE("rng and digest") {
  TEST_CASE("sha-256 test vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("tensor digests depend on shape and values") {
    CHECK(tensor_sha256(Tensor::zeros({2, 3})) == tensor_sha256(Tensor::zeros({2, 3})));
    CHECK(tensor_sha256(Tensor::zeros({2, 3})) != tensor_sha256(Tensor::zeros({3, 2})));
    CHECK(tensor_sha256(Tensor::zeros({2, 3})) != tensor_sha256(Tensor::filled({2, 3}, 1e-300)));
  }

  TEST_CASE("named seeds are stable and distinct") {
    CHECK(derive_seed(7, "split") == derive_seed(7, "split"));
    CHECK(derive_seed(7, "split") != derive_seed(7, "init"));
    CHECK(derive_seed(7, "split") != derive_seed(8, "split"));
    CHECK(derive_seed(7, 0) != derive_seed(7, 1));
  }

  TEST_CASE("uniform draws stay in range and below() is unbiased enough") {
    Rng rng(1);
    std::vector<int> hist(6, 0);
    int outside = 0;
    for (int i = 0; i < 60000; ++i) {
      const double u = rng.uniform();
      outside += !(u >= 0.0 && u < 1.0);
      ++hist[rng.below(6)];
    }
    CHECK(outside == 0);
    for (int h : hist) CHECK(std::abs(h - 10000) < 500);
  }
}
