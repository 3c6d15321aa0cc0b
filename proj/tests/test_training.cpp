#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "esres/model.hpp"
#include "esres/rng.hpp"
#include "esres/training.hpp"
#include "esres/weights.hpp"
#include "helpers.hpp"

using namespace esres;
using train::TrainConfig;

namespace {

// Clips long enough for a handful of analysis frames, tonally separated by
// class so a tiny network can tell them apart.
train::Dataset tone_dataset(int per_class, int classes, int64_t len = 4410,
                            bool stereo = false) {
  std::vector<train::Sample> samples;
  Rng rng(5000);
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      const double freq = 400.0 * std::pow(2.0, c);
      auto clip = testutil::tone(freq, 44100, len, 0.5, rng.uniform(0.0, 3.0));
      for (auto& v : clip.samples) v += static_cast<float>(rng.uniform(-0.01, 0.01));
      samples.push_back({std::move(clip), c});
    }
  return train::Dataset::from_clips(std::move(samples), stereo);
}

nn::ModelConfig tiny_model(int classes) {
  nn::ModelConfig mc;
  mc.num_classes = classes;
  mc.width_scale = 0.125;
  mc.num_stages = 2;
  return mc;
}

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("learning rate schedule endpoints and pieces") {
  TrainConfig cfg;
  CHECK(train::lr_schedule(0, cfg) == 2.5e-5);
  CHECK(train::lr_schedule(4, cfg) == 2.5e-5);
  CHECK(train::lr_schedule(14, cfg) == 2.5e-4);
  CHECK(train::lr_schedule(15, cfg) == doctest::Approx(2.5e-4 * 0.985).epsilon(1e-12));

  const double last = train::lr_schedule(299, cfg);
  CHECK(std::abs(last - 3.37e-6) / 3.37e-6 <= 0.005);
  CHECK(last == doctest::Approx(2.5e-4 * std::pow(0.985, 285)).epsilon(1e-12));

  for (int e = 1; e < 5; ++e) CHECK(train::lr_schedule(e, cfg) == train::lr_schedule(0, cfg));
  for (int e = 5; e <= 14; ++e)
    CHECK(train::lr_schedule(e, cfg) > train::lr_schedule(e - 1, cfg));
  for (int e = 15; e < 300; ++e)
    CHECK(train::lr_schedule(e, cfg) < train::lr_schedule(e - 1, cfg));

  CHECK_THROWS_AS(train::lr_schedule(-1, cfg), ConfigError);
  CHECK_THROWS_AS(train::lr_schedule(300, cfg), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.gamma = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.base_lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.inversion_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.scale_lo = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("adam drives a quadratic to zero") {
  auto x = nn::Tensor<float>::from({1, 1}, {1.0f}, true);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  train::AdamOptimizer opt({{"x", x}}, cfg);
  for (int i = 0; i < 100; ++i) {
    x.node()->ensure_grad();
    x.grad()[0] = 2.0f * x.value()[0];
    opt.step(0.1);
    // oscillates near the optimum, but never beyond the starting magnitude
    CHECK(std::abs(x.value()[0]) <= 1.0 + 1e-6);
  }
  CHECK(std::abs(x.value()[0]) < 1e-2);
  CHECK(opt.steps() == 100);
}

TEST_CASE("adam first step moves by the learning rate") {
  auto x = nn::Tensor<float>::from({1, 1}, {0.5f}, true);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  train::AdamOptimizer opt({{"x", x}}, cfg);
  x.node()->ensure_grad();
  x.grad()[0] = 0.37f;
  opt.step(0.01);
  // exact step is lr * g / (|g| + eps); slack covers float parameter storage
  CHECK(std::abs((0.5 - x.value()[0]) - 0.01) <= 1e-7);
}

TEST_CASE("decay applies to matrix weights only") {
  auto w = nn::Tensor<float>::from({1, 1}, {1.0f}, true);
  auto b = nn::Tensor<float>::from({1}, {1.0f}, true);
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  train::AdamOptimizer opt({{"w", w}, {"b", b}}, cfg);
  float prev = 1.0f;
  for (int i = 0; i < 50; ++i) {
    w.node()->ensure_grad();
    b.node()->ensure_grad();
    w.zero_grad();
    b.zero_grad();
    opt.step(0.01);
    CHECK(w.value()[0] < prev);
    CHECK(w.value()[0] > 0.0f);
    prev = w.value()[0];
    CHECK(b.value()[0] == 1.0f);
  }
}

TEST_CASE("zero learning rate freezes parameters") {
  auto w = nn::Tensor<float>::from({2, 2}, {0.1f, -0.2f, 0.3f, -0.4f}, true);
  TrainConfig cfg;
  train::AdamOptimizer opt({{"w", w}}, cfg);
  const auto before = w.value();
  w.node()->ensure_grad();
  for (auto& g : w.grad()) g = 0.5f;
  opt.step(0.0);
  CHECK(w.value() == before);
}

TEST_CASE("non-finite gradients abort with the parameter name") {
  auto w = nn::Tensor<float>::from({1, 2}, {0.1f, 0.2f}, true);
  TrainConfig cfg;
  train::AdamOptimizer opt({{"stem.weight", w}}, cfg);
  w.node()->ensure_grad();
  w.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  try {
    opt.step(0.01);
    CHECK(false);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("stem.weight") != std::string::npos);
  }
}

TEST_CASE("parameters without a gradient buffer are skipped") {
  auto w = nn::Tensor<float>::from({1, 1}, {1.0f}, true);
  TrainConfig cfg;
  cfg.weight_decay = 0.5;
  train::AdamOptimizer opt({{"w", w}}, cfg);
  opt.step(0.1);  // no grad buffer allocated yet
  CHECK(w.value()[0] == 1.0f);
}

TEST_CASE("time inversion reverses and inverts back") {
  auto clip = audio::AudioClip::make(1, 3, 8000);
  clip.samples = {1.0f, 2.0f, 3.0f};
  train::time_inversion(clip);
  CHECK(clip.samples == std::vector<float>{3.0f, 2.0f, 1.0f});

  auto noise = audio::AudioClip::make(2, 64, 8000);
  Rng rng(51);
  for (auto& v : noise.samples) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto copy = noise.samples;
  train::time_inversion(noise);
  CHECK(noise.samples != copy);
  train::time_inversion(noise);
  CHECK(noise.samples == copy);
}

TEST_CASE("time scaling keeps the length and shifts the pitch") {
  auto clip = testutil::tone(1000.0, 44100, 44100);
  for (double f : {0.8, 1.0, 1.25}) {
    auto out = train::time_scale(clip, f);
    CHECK(out.length == clip.length);
    CHECK(out.sample_rate == clip.sample_rate);
  }
  CHECK(train::time_scale(clip, 1.0).samples == clip.samples);

  auto slow = train::time_scale(clip, 1.25);
  CHECK(std::abs(testutil::peak_frequency(slow) - 800.0) <= 2.0 * 44100.0 / 16384.0);
  auto fast = train::time_scale(clip, 0.8);
  CHECK(std::abs(testutil::peak_frequency(fast) - 1250.0) <= 2.0 * 44100.0 / 16384.0);
}

TEST_CASE("coin flips hit the documented probability window") {
  Rng rng(123);
  int heads = 0;
  for (int i = 0; i < 10000; ++i) heads += rng.bernoulli(0.5) ? 1 : 0;
  const double frequency = heads / 10000.0;
  CHECK(frequency >= 0.48);
  CHECK(frequency <= 0.52);
}

TEST_CASE("dataset assembly normalizes channels and lengths") {
  std::vector<train::Sample> samples;
  samples.push_back({testutil::tone(400.0, 44100, 2000), 0});
  samples.push_back({testutil::tone(800.0, 44100, 3000), 2});
  auto mono = train::Dataset::from_clips(samples, false);
  CHECK(mono.channels == 1);
  CHECK(mono.num_classes == 3);
  for (const auto& s : mono.samples) CHECK(s.audio.length == 3000);

  auto wide = train::Dataset::from_clips(samples, true);
  CHECK(wide.channels == 2);
  for (const auto& s : wide.samples) {
    CHECK(s.audio.channels == 2);
    CHECK(std::equal(s.audio.channel(0), s.audio.channel(0) + s.audio.length,
                     s.audio.channel(1)));
  }

  auto padded = train::Dataset::from_clips(samples, false, 5000);
  for (const auto& s : padded.samples) CHECK(s.audio.length == 5000);

  CHECK_THROWS_AS(train::Dataset::from_clips({}, false), DataError);
}

TEST_CASE("training runs the schedule and logs one line per epoch") {
  auto data = tone_dataset(4, 2);
  dsp::FrontEndConfig fe;
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.augment = false;
  cfg.seed = 9;

  nn::EsResNet<float> model(tiny_model(2), 40);
  std::ostringstream log;
  auto result = train::train(model, data, iota_ids(8), {}, fe, cfg, &log);

  REQUIRE(result.metrics.size() == 6);
  for (int e = 0; e < 6; ++e) {
    CHECK(result.metrics[e].epoch == e);
    CHECK(result.metrics[e].lr == train::lr_schedule(e, cfg));
    CHECK(std::isfinite(result.metrics[e].train_loss));
    CHECK(result.metrics[e].val_acc == -1.0);
  }
  CHECK(result.metrics.back().train_loss < result.metrics.front().train_loss);

  int lines = 0;
  std::string line;
  std::istringstream in(log.str());
  while (std::getline(in, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), '\t') == 3);
  }
  CHECK(lines == 6);
}

TEST_CASE("validation accuracy lands in the log when requested") {
  auto data = tone_dataset(3, 2);
  dsp::FrontEndConfig fe;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.augment = false;

  nn::EsResNet<float> model(tiny_model(2), 41);
  std::ostringstream log;
  auto result = train::train(model, data, {0, 1, 3, 4}, {2, 5}, fe, cfg, &log);
  for (const auto& m : result.metrics) {
    CHECK(m.val_acc >= 0.0);
    CHECK(m.val_acc <= 1.0);
  }
  std::string first_line = log.str().substr(0, log.str().find('\n'));
  CHECK(std::count(first_line.begin(), first_line.end(), '\t') == 4);
}

TEST_CASE("seeded runs produce bit-identical weights") {
  dsp::FrontEndConfig fe;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.augment = true;  // exercises the per-clip draw order
  cfg.seed = 77;

  auto run = [&] {
    auto data = tone_dataset(3, 2);
    nn::EsResNet<float> model(tiny_model(2), 42);
    train::train(model, data, iota_ids(6), {}, fe, cfg, nullptr);
    return nn::snapshot(model);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.values == b[i].second.values);
  }
}

TEST_CASE("stereo training uses the two-channel path") {
  auto data = tone_dataset(2, 2, 4410, true);
  dsp::FrontEndConfig fe;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.augment = false;
  cfg.stereo = true;

  nn::EsResNet<float> model(tiny_model(2), 43);
  auto result = train::train(model, data, iota_ids(4), {}, fe, cfg, nullptr);
  CHECK(result.metrics.size() == 1);

  auto mono = tone_dataset(2, 2);
  nn::EsResNet<float> model2(tiny_model(2), 43);
  CHECK_THROWS_AS(train::train(model2, mono, iota_ids(4), {}, fe, cfg, nullptr),
                  ConfigError);
}

TEST_CASE("empty training set is rejected") {
  auto data = tone_dataset(2, 2);
  dsp::FrontEndConfig fe;
  TrainConfig cfg;
  nn::EsResNet<float> model(tiny_model(2), 44);
  CHECK_THROWS_AS(train::train(model, data, {}, {}, fe, cfg, nullptr), DataError);
  CHECK_THROWS_AS(train::train(model, data, {99}, {}, fe, cfg, nullptr), DataError);
}

TEST_CASE("a constant predictor scores the base rate") {
  auto data = tone_dataset(1, 10, 2205);
  dsp::FrontEndConfig fe;
  TrainConfig cfg;

  nn::EsResNet<float> model(tiny_model(10), 45);
  for (auto& [name, p] : model.named_parameters()) {
    if (name == "fc.weight") std::fill(p.value().begin(), p.value().end(), 0.0f);
    if (name == "fc.bias") {
      std::fill(p.value().begin(), p.value().end(), 0.0f);
      p.value()[2] = 5.0f;
    }
  }
  const double acc = train::evaluate(model, data, iota_ids(10), fe, cfg);
  CHECK(acc == doctest::Approx(0.1).epsilon(1e-12));

  CHECK_THROWS_AS(train::evaluate(model, data, {}, fe, cfg), DataError);
}

TEST_CASE("cross validation trains one model per round") {
  auto data = tone_dataset(3, 2);
  dsp::FrontEndConfig fe;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.augment = false;

  data::SplitAssignment split;
  split.num_rounds = 2;
  split.test_sets = {{0, 3}, {1, 4}};

  std::ostringstream log;
  auto res = train::cross_validate(tiny_model(2), 46, data, split, fe, cfg, &log);
  REQUIRE(res.fold_acc.size() == 2);
  CHECK(res.mean_acc ==
        doctest::Approx((res.fold_acc[0] + res.fold_acc[1]) / 2.0).epsilon(1e-12));
  CHECK(log.str().find("# round 1") != std::string::npos);
  CHECK(log.str().find("# round 2 accuracy") != std::string::npos);

  data::SplitAssignment bad;
  bad.num_rounds = 1;
  bad.test_sets = {{99}};
  CHECK_THROWS_AS(train::cross_validate(tiny_model(2), 46, data, bad, fe, cfg, nullptr),
                  DataError);
}

}  // TEST_SUITE
