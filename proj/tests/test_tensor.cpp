#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "simic/ops.hpp"
#include "simic/tensor.hpp"

using namespace simic;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape/data invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.ndim() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(t.data()[i] == 1.5);

  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({-1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("grad buffer matches data shape") {
  Tensor t({3, 2}, 0.0, true);
  CHECK_FALSE(t.has_grad());
  t.grad();                     // allocate on demand
  CHECK(t.has_grad());
  CHECK(t.grad_vec().size() == t.numel());
  for (double g : t.grad_vec()) CHECK(g == 0.0);
}

TEST_CASE("loss = sum(x) gives all-ones grad") {
  Tensor x = Tensor::from_data({2, 2}, {1.0, -2.0, 3.0, 0.5}, true);
  Tensor loss = sum_all(x);
  loss.backward();
  for (double g : x.grad_vec()) CHECK(g == 1.0);
}

TEST_CASE("fan-out accumulates: sum(x + x) gives all-twos grad") {
  Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
  Tensor loss = sum_all(add(x, x));
  loss.backward();
  for (double g : x.grad_vec()) CHECK(g == 2.0);
}

TEST_CASE("gradients accumulate across backward calls until zero_grad") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  sum_all(x).backward();
  sum_all(x).backward();
  for (double g : x.grad_vec()) CHECK(g == 2.0);
  x.zero_grad();
  sum_all(x).backward();
  for (double g : x.grad_vec()) CHECK(g == 1.0);
}

TEST_CASE("backward rejects non-scalar and off-tape losses") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y = add(x, x);
  CHECK_THROWS_AS(y.backward(), std::invalid_argument);  // not a scalar

  Tensor z = Tensor::scalar(4.0);  // no tape behind it
  CHECK_THROWS_AS(z.backward(), std::invalid_argument);
}

TEST_CASE("NoGradGuard suppresses recording") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  {
    NoGradGuard ng;
    Tensor y = add(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = add(x, x);
  CHECK(y.requires_grad());
}

TEST_CASE("every reachable requires_grad tensor gets a grad after backward") {
  Tensor a = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor b = Tensor::from_data({2}, {0.5, -1.0}, true);
  Tensor c = add(a, b);
  Tensor d = relu(c);
  Tensor loss = sum_all(d);
  loss.backward();
  CHECK(a.has_grad());
  CHECK(b.has_grad());
  CHECK(c.has_grad());
  CHECK(d.has_grad());
}

TEST_CASE("tape visits reused nodes once: diamond graph grad is exact") {
  // loss = sum((x+x) + (x+x)) reuses the same intermediate twice.
  Tensor x = Tensor::from_data({2}, {1.0, -1.0}, true);
  Tensor mid = add(x, x);
  Tensor loss = sum_all(add(mid, mid));
  loss.backward();
  for (double g : x.grad_vec()) CHECK(g == 4.0);
}

TEST_CASE("clone detaches from the tape") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y = add(x, x);
  Tensor c = y.clone();
  CHECK_FALSE(c.requires_grad());
  c.data()[0] = 99.0;
  CHECK(y.data()[0] == 2.0);  // deep copy
}

TEST_SUITE_END();
