#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "focalfuse/train/trainer.hpp"
#include "support/oracles.hpp"

using namespace focalfuse;
using namespace focalfuse::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("focalfuse_training_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

/// Sets each parameter's gradient to the gradient of 0.5 * sum(a * p^2).
void quadratic_grad(arch::ParamStore<double>& ps, const std::vector<Tensor<double>>& a) {
  ps.zero_grad();
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  Tensor<double> total = Tensor<double>::scalar(0.0);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    total = add(total, scale(sum(mul(mul(ps.tensor(i), ps.tensor(i)), a[i])), 0.5));
  }
  tape.backward(total);
}

std::vector<data::VolumeSample> tiny_dataset(std::size_t n, std::uint64_t seed) {
  data::PhantomSpec spec;
  spec.extents = {32, 16, 16};
  spec.num_classes = 3;
  spec.seed = seed;
  std::vector<data::VolumeSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(data::generate_phantom_at(spec, i));
  return out;
}

arch::ModelConfig tiny_config(arch::Variant v = arch::Variant::focal_fuse) {
  arch::ModelConfig cfg;
  cfg.variant = v;
  cfg.base_channels = 2;
  cfg.num_classes = 3;
  cfg.dense_layers_per_block = 1;
  return cfg;
}

bool same_params(const arch::ParamStore<float>& a, const arch::ParamStore<float>& b) {
  if (a.names() != b.names()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.tensor(i).data();
    const auto y = b.tensor(i).data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST(CyclicLr, BoundsAndMidpoint) {
  EXPECT_EQ(cyclic_lr(0), 0.0005);
  EXPECT_EQ(cyclic_lr(100), 0.003);
  EXPECT_DOUBLE_EQ(cyclic_lr(50), 0.00175);
  EXPECT_EQ(cyclic_lr(0, kLrMin, kLrMax, 7), 0.0005);
  EXPECT_EQ(cyclic_lr(7, kLrMin, kLrMax, 7), 0.003);
  EXPECT_EQ(cyclic_lr(14, kLrMin, kLrMax, 7), 0.0005);
}

TEST(CyclicLr, PeriodicPiecewiseLinearAndBounded) {
  for (std::int64_t hc : {1, 2, 5, 100}) {
    for (std::int64_t i = 0; i < 6 * hc; ++i) {
      const double lr = cyclic_lr(i, kLrMin, kLrMax, hc);
      EXPECT_GE(lr, kLrMin);
      EXPECT_LE(lr, kLrMax);
      EXPECT_EQ(lr, cyclic_lr(i + 2 * hc, kLrMin, kLrMax, hc));
      if (i % hc != 0) {
        // Zero second difference away from the turning points.
        const double d2 = cyclic_lr(i + 1, kLrMin, kLrMax, hc) - 2 * lr + cyclic_lr(i - 1, kLrMin, kLrMax, hc);
        EXPECT_NEAR(d2, 0.0, 1e-15);
      }
    }
  }
}

TEST(CyclicLr, InvalidArguments) {
  EXPECT_THROW(cyclic_lr(0, kLrMin, kLrMax, 0), ConfigError);
  EXPECT_THROW(cyclic_lr(-1), ConfigError);
}

TEST(Adam, ZeroGradientIsANoOp) {
  arch::ParamStore<double> ps;
  auto p = ps.add("p", Shape{3}, 0.25);
  OptimState<double> st(ps);
  adam_step(ps, st, 0.003);
  EXPECT_EQ(st.step, 1);
  for (double v : p.data()) EXPECT_EQ(v, 0.25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  arch::ParamStore<double> ps;
  auto p = ps.add("p", Shape{1}, 1.0);
  OptimState<double> st(ps);
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    tape.backward(sum(p));  // gradient 1
  }
  adam_step(ps, st, 0.001);
  // Bias correction makes m_hat = g and v_hat = g^2, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.data()[0], 1.0 - 0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_GT(st.v[0].data()[0], 0.0);
}

TEST(Adam, QuadraticTrajectoryMatchesOracle) {
  std::mt19937_64 rng(1);
  arch::ParamStore<double> ps;
  ps.add("a", Shape{4});
  ps.add("b", Shape{2, 3});
  std::vector<Tensor<double>> curv;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto d = ps.tensor(i).mutable_data();
    for (auto& v : d) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    curv.push_back(oracle::random_tensor<double>(ps.tensor(i).shape(), rng, 0.5, 2.0));
  }
  // Straight-line reference with its own moment buffers.
  std::vector<std::vector<double>> x, m, v;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    x.emplace_back(ps.tensor(i).data().begin(), ps.tensor(i).data().end());
    m.emplace_back(x.back().size(), 0.0);
    v.emplace_back(x.back().size(), 0.0);
  }
  OptimState<double> st(ps);
  for (int t = 1; t <= 5; ++t) {
    const double lr = cyclic_lr(t - 1, kLrMin, kLrMax, 2);
    quadratic_grad(ps, curv);
    adam_step(ps, st, lr);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < x[i].size(); ++j) {
        const double g = curv[i].data()[j] * x[i][j];
        m[i][j] = 0.9 * m[i][j] + 0.1 * g;
        v[i][j] = 0.999 * v[i][j] + 0.001 * g * g;
        const double mh = m[i][j] / (1 - std::pow(0.9, t));
        const double vh = v[i][j] / (1 - std::pow(0.999, t));
        x[i][j] -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j) EXPECT_NEAR(ps.tensor(i).data()[j], x[i][j], 1e-12);
  EXPECT_EQ(st.step, 5);
}

TEST(Adam, NonFiniteGradientNamesTheParameter) {
  arch::ParamStore<double> ps;
  ps.add("ok", Shape{1}, 1.0);
  auto bad = ps.add("encoder.bad", Shape{2}, 1e-300);
  OptimState<double> st(ps);
  {
    // Each use contributes 1e308 to the gradient; the forward values stay finite.
    const Tensor<double> big(Shape{2}, 1e308);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    tape.backward(add(sum(mul(bad, big)), sum(mul(bad, big))));
  }
  try {
    adam_step(ps, st, 0.001);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.bad"), std::string::npos);
  }
  EXPECT_EQ(st.step, 0);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto cfg = tiny_config();
  arch::Model<float> model(cfg, 5);
  OptimState<float> st(model.params());
  st.step = 17;
  std::mt19937_64 rng(5);
  for (auto& t : st.m)
    for (auto& x : t.mutable_data()) x = std::uniform_real_distribution<float>(-1, 1)(rng);
  for (auto& t : st.v)
    for (auto& x : t.mutable_data()) x = std::uniform_real_distribution<float>(0, 1)(rng);
  const auto dir = scratch_dir("roundtrip");
  save_checkpoint(model.params(), st, cfg, dir / "a.ckpt");
  const auto ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.config, cfg);
  EXPECT_EQ(ck.optim.step, 17);
  arch::Model<float> other(cfg, 99);
  OptimState<float> st2;
  restore(ck, cfg, other.params(), &st2);
  EXPECT_TRUE(same_params(model.params(), other.params()));
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    EXPECT_TRUE(std::equal(st.m[i].data().begin(), st.m[i].data().end(), st2.m[i].data().begin()));
    EXPECT_TRUE(std::equal(st.v[i].data().begin(), st.v[i].data().end(), st2.v[i].data().begin()));
  }
  // Saving the restored state reproduces the file byte for byte.
  EXPECT_EQ(encode_checkpoint(other.params(), st2, cfg), data::detail::read_file(dir / "a.ckpt"));
}

TEST(Checkpoint, CorruptionAndMismatchAreRejected) {
  const auto cfg = tiny_config();
  arch::Model<float> model(cfg, 6);
  const OptimState<float> st(model.params());
  const std::string bytes = encode_checkpoint(model.params(), st, cfg);

  std::string flipped = bytes;
  flipped[flipped.size() - 5] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 4)), FormatError);
  EXPECT_THROW(decode_checkpoint("garbage"), FormatError);
  std::string future = bytes;
  future.replace(0, 8, "FFCKPT 2");
  EXPECT_THROW(decode_checkpoint(future), FormatError);

  const auto ck = decode_checkpoint(bytes);
  arch::Model<float> msf(tiny_config(arch::Variant::msf3d), 6);
  EXPECT_THROW(restore(ck, msf.config(), msf.params()), ConfigError);
}

TEST(Train, SameSeedIsBitwiseReproducible) {
  const auto ds = tiny_dataset(2, 3);
  TrainOptions o;
  o.epochs = 2;
  o.seed = 11;
  o.half_cycle = 3;
  o.checkpoint_dir = scratch_dir("determinism");
  const auto a = train::train(tiny_config(), ds, ds, o);
  const std::string first_ckpt = data::detail::read_file(o.checkpoint_dir / "last.ckpt");
  const auto b = train::train(tiny_config(), ds, ds, o);
  EXPECT_EQ(a.log.iterations_tsv(), b.log.iterations_tsv());
  EXPECT_EQ(a.log.validations_tsv(), b.log.validations_tsv());
  EXPECT_TRUE(same_params(a.model.params(), b.model.params()));
  EXPECT_EQ(first_ckpt, data::detail::read_file(o.checkpoint_dir / "last.ckpt"));

  ASSERT_EQ(a.log.iterations.size(), 4u);
  for (const auto& r : a.log.iterations) EXPECT_EQ(r.lr, cyclic_lr(r.iteration, kLrMin, kLrMax, 3));
  ASSERT_EQ(a.log.validations.size(), 1u);
  EXPECT_EQ(a.log.validations[0].epoch, 1);

  o.seed = 12;
  const auto c = train::train(tiny_config(), ds, ds, o);
  EXPECT_NE(a.log.iterations_tsv(), c.log.iterations_tsv());
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  const auto ds = tiny_dataset(1, 4);
  TrainOptions o;
  o.epochs = 2;
  set_num_threads(1);
  const auto a = train::train(tiny_config(arch::Variant::msf3d), ds, {}, o);
  set_num_threads(3);
  const auto b = train::train(tiny_config(arch::Variant::msf3d), ds, {}, o);
  set_num_threads(1);
  EXPECT_EQ(a.log.iterations_tsv(), b.log.iterations_tsv());
  EXPECT_TRUE(same_params(a.model.params(), b.model.params()));
}

TEST(Train, DivergenceReportsTheIteration) {
  const auto ds = tiny_dataset(1, 5);
  TrainOptions o;
  o.epochs = 3;
  o.lr_min = 1e36;
  o.lr_max = 1e36;
  try {
    train::train(tiny_config(), ds, {}, o);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.iteration(), 1);
  }
}

TEST(Train, RejectsInconsistentInputs) {
  auto ds = tiny_dataset(1, 6);
  TrainOptions o;
  o.epochs = 1;
  EXPECT_THROW(train::train(tiny_config(), {}, {}, o), ConfigError);
  auto wrong = tiny_config();
  wrong.num_classes = 4;
  EXPECT_THROW(train::train(wrong, ds, {}, o), ConfigError);
  o.epochs = 0;
  EXPECT_THROW(train::train(tiny_config(), ds, {}, o), ConfigError);
}

TEST(Train, LossFallsOnATinyProblem) {
  const auto ds = tiny_dataset(1, 7);
  TrainOptions o;
  o.epochs = 30;
  o.half_cycle = 10;
  const auto r = train::train(tiny_config(), ds, ds, o);
  const auto& it = r.log.iterations;
  double head = 0, tail = 0;
  for (int k = 0; k < 5; ++k) head += it[static_cast<std::size_t>(k)].loss, tail += it[it.size() - 1 - k].loss;
  EXPECT_LT(tail, 0.8 * head);  // about 0.72 at this size
}
