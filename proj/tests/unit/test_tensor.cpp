#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "../support/op_catalog.hpp"
#include "pa3/tensor.hpp"
#include "pa3/tensor_io.hpp"

using namespace pa3;
using pa3::testing::gradcheck;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Matmul, IdentityAndDot) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(values(matmul(a, Tensor::matrix({{1, 0}, {0, 1}}))), (std::vector<double>{1, 2, 3, 4}));
  const Tensor d = matmul(Tensor::matrix({{1, 0}}), Tensor::matrix({{2}, {5}}));
  EXPECT_EQ(d.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(d.item(), 2.0);
}

TEST(Matmul, GradientOfSum) {
  Tensor a = Tensor::matrix({{1, 2}}, true);
  const Tensor b = Tensor::matrix({{3}, {4}});
  sum(matmul(a, b)).backward();
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{3, 4}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  EXPECT_EQ(values(softmax_rows(Tensor::matrix({{0, 0}}))), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(values(softmax_rows(Tensor::matrix({{1000, 1000}}))), (std::vector<double>{0.5, 0.5}));
  const auto s = values(softmax_rows(Tensor::matrix({{0.7071, 0}})));
  EXPECT_NEAR(s[0], 0.6698, 1e-3);
  EXPECT_NEAR(s[1], 0.3302, 1e-3);
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = pa3::testing::random_tensor({4, 7}, rng, -1e4, 1e4);
    const auto s = values(softmax_rows(x));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(s[r * 7 + c], 0.0);
        total += s[r * 7 + c];
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Sigmoid, Examples) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  const double hi = sigmoid(Tensor::scalar(40.0)).item();
  EXPECT_NEAR(hi, 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(sigmoid(Tensor::scalar(-800.0)).item()));
  Tensor x = Tensor::scalar(0.0, true);
  sigmoid(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::zeros({2, 2}, true);
  sum(x).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), std::vector<double>(4, 1.0));
}

TEST(Backward, Square) {
  Tensor x = Tensor::matrix({{1, 2}}, true);
  sum(x * x).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = Tensor::zeros({2, 2}, true);
  const Tensor loss = sum(x);
  loss.backward();
  loss.backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), std::vector<double>(4, 2.0));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = Tensor::zeros({2, 2}, true);
  EXPECT_THROW((x * 2.0).backward(), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::ones({2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = x * 3.0;
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(GradTape, UnrelatedEntriesDoNotChangeGradients) {
  Rng rng(5);
  Tensor a = pa3::testing::random_tensor({3, 3}, rng);
  Tensor b = pa3::testing::random_tensor({3, 3}, rng);
  const Tensor loss = sum(softmax_rows(matmul(a, b)));
  loss.backward();
  const std::vector<double> first(a.grad().begin(), a.grad().end());
  a.zero_grad();
  b.zero_grad();
  // Extra branches hanging off the same leaves but not part of the loss.
  const Tensor noise = sum(exp(a) * b) + sum(tanh(b));
  (void)noise;
  const Tensor combined = loss + 0.0 * sum(a);
  GradTape tape = GradTape::record(combined);
  EXPECT_GT(tape.size(), 0u);
  combined.backward();
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_NEAR(a.grad()[i], first[i], 1e-12);
}

TEST(Determinism, ReplayIsBitIdentical) {
  auto run = [] {
    Rng rng(11);
    Tensor a = pa3::testing::random_tensor({4, 4}, rng);
    Tensor b = pa3::testing::random_tensor({4, 4}, rng);
    const Tensor y = layer_norm(softmax_rows(matmul(a, b)), Tensor::ones({4}), Tensor::zeros({4}));
    sum(y * y).backward();
    auto out = values(y);
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Broadcast, LeadingAxes) {
  const Tensor a = Tensor::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor b = Tensor::matrix({{10, 20}, {30, 40}});
  EXPECT_EQ(values(a + b), (std::vector<double>{11, 22, 33, 44, 15, 26, 37, 48}));
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), DimensionError);
}

TEST(Shapes, TransposeReshapeConcat) {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(values(transpose(a)), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(reshape(a, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(a, {4, 2}), DimensionError);
  EXPECT_EQ(values(concat({a, a}, 1)), (std::vector<double>{1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6}));
  EXPECT_DOUBLE_EQ(mean(a).item(), 3.5);
}

TEST(Embedding, ScatterAddsRepeatedIds) {
  Tensor table = Tensor::zeros({3, 2}, true);
  const std::vector<std::size_t> ids{2, 0, 2};
  sum(embedding(table, ids)).backward();
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()), (std::vector<double>{1, 1, 0, 0, 2, 2}));
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(embedding(table, bad), DataError);
}

TEST(OpCatalog, EveryOpPassesGradcheck) {
  for (const auto& op : pa3::testing::op_catalog()) {
    Rng rng(1000);
    for (int trial = 0; trial < 10; ++trial) {
      const auto r = gradcheck(op.build, op.inputs(rng), static_cast<std::uint64_t>(trial));
      EXPECT_LT(r.max_rel_error, 1e-4) << op.name << " trial " << trial;
    }
  }
}

TEST(TensorIo, RoundTripIsExact) {
  Rng rng(2);
  const Tensor t = pa3::testing::random_tensor({2, 3, 4}, rng);
  std::stringstream buf;
  write_tensor(buf, t);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "PA3T");
  EXPECT_EQ(bytes.size(), 4u + 4u + 3u * 8u + 24u * 8u);
  const Tensor back = read_tensor(buf);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(values(back), values(t));
}

TEST(TensorIo, BadMagicIsDataError) {
  std::stringstream buf("XXXX");
  EXPECT_THROW(read_tensor(buf), DataError);
}
