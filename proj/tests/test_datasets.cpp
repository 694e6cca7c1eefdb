#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "refeednet/corpus.hpp"
#include "refeednet/train.hpp"
#include "support.hpp"

using namespace refeednet;
using namespace testing_support;

namespace {

std::array<std::size_t, kClassCount> counts_of(const Dataset& d) {
  std::array<std::size_t, kClassCount> c{};
  for (const auto& it : d) ++c[static_cast<std::size_t>(index_of(it.label))];
  return c;
}

std::set<std::string> ids_of(const Dataset& d) {
  std::set<std::string> s;
  for (const auto& it : d) s.insert(it.source_id);
  return s;
}

}  // namespace

TEST(Classes, NamesRoundTrip) {
  for (TrafficClass c : kAllClasses) EXPECT_EQ(parse_class(to_string(c)), c);
  EXPECT_FALSE(parse_class("Gridlock").has_value());
  EXPECT_THROW(class_from_index(4), Error);
  EXPECT_EQ(index_of(TrafficClass::Empty), 0);
  EXPECT_EQ(index_of(TrafficClass::Jam), 3);
}

TEST(Synth, PerClassCounts) {
  const Dataset d = synth_dataset(100, 1, Domain::Target);
  EXPECT_EQ(d.size(), 400u);
  EXPECT_EQ(counts_of(d), (std::array<std::size_t, 4>{100, 100, 100, 100}));
  const Dataset u = synth_dataset(48, 1, Domain::Shifted);
  EXPECT_EQ(u.size(), 192u);
  EXPECT_EQ(counts_of(u), (std::array<std::size_t, 4>{48, 48, 48, 48}));
  EXPECT_EQ(ids_of(d).size(), d.size());
}

TEST(Synth, SameSeedIsBitwiseIdentical) {
  for (TrafficClass c : kAllClasses)
    for (Domain dom : {Domain::Source, Domain::Target, Domain::Shifted}) {
      const auto a = synth_scene(c, 99, dom);
      const auto b = synth_scene(c, 99, dom);
      EXPECT_TRUE(bitwise_equal(a.pixels.values(), b.pixels.values()));
      EXPECT_EQ(a.source_id, b.source_id);
    }
  EXPECT_FALSE(bitwise_equal(synth_scene(TrafficClass::Jam, 1).pixels.values(),
                             synth_scene(TrafficClass::Jam, 2).pixels.values()));
}

TEST(Synth, PixelsStayInUnitRange) {
  for (std::uint64_t s = 0; s < 50; ++s)
    for (TrafficClass c : kAllClasses)
      for (double v : synth_scene(c, s, Domain::Shifted).pixels.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
}

TEST(Synth, EmptySceneDrawsNoVehicles) {
  // Vehicles are drawn at >= 0.70 before lighting; road and background never
  // get near that, so bright pixels only come from noise tails.
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto img = synth_scene(TrafficClass::Empty, s, Domain::Target);
    std::size_t bright = 0;
    for (double v : img.pixels.values()) bright += v > 0.62;
    EXPECT_LE(bright, 1u) << "seed " << s;
  }
  std::size_t vehicle_scenes = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    std::size_t bright = 0;
    for (double v : synth_scene(TrafficClass::Fluid, s, Domain::Target).pixels.values()) bright += v > 0.62;
    vehicle_scenes += bright >= 6;
  }
  EXPECT_GT(vehicle_scenes, 150u);
}

TEST(Synth, MeanBrightnessNonDecreasingFromEmptyToJam) {
  std::array<double, kClassCount> mean{};
  for (TrafficClass c : kAllClasses) {
    double s = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) s += synth_scene(c, seed).pixels.mean();
    mean[static_cast<std::size_t>(index_of(c))] = s / 1000.0;
  }
  for (std::size_t k = 1; k < kClassCount; ++k) EXPECT_GE(mean[k], mean[k - 1]) << k;
}

TEST(Synth, ZeroPerClassRejected) { EXPECT_THROW(synth_dataset(0, 1, Domain::Target), Error); }

TEST(Split, SeventyFiveAndNinetyPercentOfFourHundred) {
  const Dataset d = synth_dataset(100, 2, Domain::Target);
  auto [a, b] = split(d, {0.75, 1});
  EXPECT_EQ(a.size(), 300u);
  EXPECT_EQ(b.size(), 100u);
  EXPECT_EQ(counts_of(a), (std::array<std::size_t, 4>{75, 75, 75, 75}));
  auto [c, e] = split(d, {0.90, 1});
  EXPECT_EQ(c.size(), 360u);
  EXPECT_EQ(e.size(), 40u);
}

TEST(Split, PartitionIsDisjointAndComplete) {
  const Dataset d = synth_dataset(25, 3, Domain::Target);
  for (double f : {0.9, 0.8, 0.75, 0.7, 0.6, 0.5}) {
    auto [a, b] = split(d, {f, 7});
    auto ia = ids_of(a), ib = ids_of(b);
    for (const auto& id : ia) EXPECT_EQ(ib.count(id), 0u);
    EXPECT_EQ(ia.size() + ib.size(), d.size());
  }
}

TEST(Split, SeedDeterminesMembership) {
  const Dataset d = synth_dataset(100, 4, Domain::Target);
  EXPECT_EQ(ids_of(split(d, {0.75, 5}).first), ids_of(split(d, {0.75, 5}).first));
  EXPECT_NE(ids_of(split(d, {0.75, 5}).first), ids_of(split(d, {0.75, 6}).first));
}

TEST(Split, DegenerateAndInvalidInputs) {
  Dataset one;
  one.add(synth_scene(TrafficClass::Jam, 1));
  try {
    split(one, {0.75, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateSplit);
  }
  const Dataset d = synth_dataset(1, 1, Domain::Target);
  EXPECT_THROW(split(d, {0.99, 1}), Error);
  EXPECT_THROW(split(d, {1.0, 1}), Error);
  EXPECT_THROW(split(d, {0.0, 1}), Error);
}

TEST(Subsample, Stride) {
  std::vector<int> frames(80);
  for (int i = 0; i < 80; ++i) frames[static_cast<std::size_t>(i)] = i;
  EXPECT_EQ(subsample_stride(frames, 1), frames);
  const auto s = subsample_stride(frames, 8);
  ASSERT_EQ(s.size(), 10u);
  EXPECT_EQ(s[1], 8);
  // A 10 fps source at stride 8 keeps 1.25 frames per second.
  EXPECT_DOUBLE_EQ(10.0 / 8.0, 1.25);
  EXPECT_THROW(subsample_stride(frames, 0), Error);
}

TEST(Augment, ReflectIsAnInvolution) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Tensor t = random_tensor({5, 7, 3}, rng);
    EXPECT_TRUE(bitwise_equal(reflect_h(reflect_h(t)).values(), t.values()));
  }
}

TEST(Augment, ReflectSymmetricAndHalfBright) {
  Tensor sym({4, 4, 1});
  for (std::size_t y = 0; y < 4; ++y) {
    sym.at(y, 0, 0) = sym.at(y, 3, 0) = 0.5;
    sym.at(y, 1, 0) = sym.at(y, 2, 0) = 0.2;
  }
  EXPECT_EQ(reflect_h(sym), sym);
  Tensor left({4, 4, 1});
  for (std::size_t y = 0; y < 4; ++y) left.at(y, 0, 0) = left.at(y, 1, 0) = 1.0;
  const Tensor r = reflect_h(left);
  for (std::size_t y = 0; y < 4; ++y) {
    EXPECT_EQ(r.at(y, 2, 0), 1.0);
    EXPECT_EQ(r.at(y, 3, 0), 1.0);
    EXPECT_EQ(r.at(y, 0, 0), 0.0);
  }
}

TEST(Augment, TranslateIdentityAndEdge) {
  Rng rng(2);
  const Tensor t = random_tensor({6, 6, 1}, rng, 0, 1);
  EXPECT_EQ(translate(t, 0, 0), t);
  Tensor dot({6, 6, 1});
  dot.at(2, 0, 0) = 1.0;
  const Tensor moved = translate(dot, 5, 0);
  EXPECT_EQ(moved.at(2, 5, 0), 1.0);
  EXPECT_DOUBLE_EQ(moved.sum(), 1.0);
  EXPECT_THROW(translate(dot, 6, 0), Error);
  EXPECT_THROW(translate(dot, 0, -6), Error);
}

TEST(Augment, TranslateNeverRaisesMean) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Tensor t = random_tensor({8, 8, 1}, rng, 0, 1);
    const int dx = rng.between(-7, 7), dy = rng.between(-7, 7);
    EXPECT_LE(translate(t, dx, dy).mean(), t.mean() + 1e-15);
  }
}

TEST(Pnm, EightBitRoundTrip) {
  const auto img = synth_scene(TrafficClass::Heavy, 3).pixels;
  const Tensor back = decode_pnm(encode_pnm(img));
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255.0 + 1e-12);
  EXPECT_EQ(encode_pnm(back), encode_pnm(img));
}

TEST(Pnm, SixteenBitCommentsAndColor) {
  std::string s = "P5\n# comment\n2 1\n65535\n";
  s += std::string("\xff\xff\x00\x00", 4);
  const Tensor t = decode_pnm(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  EXPECT_EQ(t.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(t[0], 1.0);
  EXPECT_EQ(t[1], 0.0);

  std::string c = "P6 1 1 255\n";
  c += std::string("\xff\x00\x00", 3);
  const Tensor rgb = decode_pnm(std::span(reinterpret_cast<const std::uint8_t*>(c.data()), c.size()));
  EXPECT_EQ(rgb.shape(), (Shape{1, 1, 3}));
  const Tensor gray = resize_nearest(rgb, {2, 2, 1});
  EXPECT_EQ(gray.shape(), (Shape{2, 2, 1}));
  EXPECT_NEAR(gray[0], 0.299, 1e-3);
}

TEST(Pnm, MalformedInputsReportOffsets) {
  auto decode = [](const std::string& s) {
    return decode_pnm(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  try {
    decode("P3 1 1 255\n0");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  try {
    decode("P5 4 4 255\nab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 13u);
  }
  EXPECT_THROW(decode("P5 x 4 255\n"), FormatError);
  EXPECT_THROW(decode(""), FormatError);
}

TEST(Corpus, SaveThenLoadPreservesCountsAndOrder) {
  TempDir dir("corpus");
  const Dataset d = synth_dataset(100, 5, Domain::Target);
  save_dir(d, dir.path());
  LoadReport rep;
  const Dataset a = load_dir(dir.path(), {32, 32, 1}, &rep);
  EXPECT_EQ(a.size(), 400u);
  EXPECT_EQ(rep.loaded, 400u);
  EXPECT_EQ(counts_of(a), (std::array<std::size_t, 4>{100, 100, 100, 100}));
  const Dataset b = load_dir(dir.path(), {32, 32, 1});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].source_id, b[i].source_id);
    EXPECT_EQ(a[i].pixels, b[i].pixels);
  }
}

TEST(Corpus, EmptyRootIsLayoutError) {
  TempDir dir("empty");
  try {
    load_dir(dir.path(), {32, 32, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CorpusLayout);
  }
  EXPECT_THROW(load_dir(dir / "missing", {32, 32, 1}), Error);
}

TEST(Corpus, UnreadableFilesAreSkipped) {
  TempDir dir("skip");
  save_dir(synth_dataset(2, 1, Domain::Target), dir.path());
  std::ofstream(dir / "Jam/zzz.pgm") << "garbage";
  std::ofstream(dir / "Jam/notes.txt") << "ignored";
  LoadReport rep;
  const Dataset d = load_dir(dir.path(), {32, 32, 1}, &rep);
  EXPECT_EQ(d.size(), 8u);
  EXPECT_EQ(rep.skipped, 1u);
  ASSERT_EQ(rep.warnings.size(), 1u);
}

TEST(Corpus, OtherSizesAreResized) {
  TempDir dir("resize");
  Dataset d;
  for (TrafficClass c : kAllClasses) d.add({Tensor({64, 48, 3}, 0.5), c, "x"});
  save_dir(d, dir.path());
  const Dataset back = load_dir(dir.path(), {32, 32, 1});
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[0].pixels.shape(), (Shape{32, 32, 1}));
}

TEST(Domains, ShiftedScoresBelowHeldOutTarget) {
  PretrainConfig pc;
  const MicroCnn base = pretrain_source(pc).model;
  int lower = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Dataset target = synth_dataset(100, 500 + s, Domain::Target);
    const Dataset shifted = synth_dataset(48, 600 + s, Domain::Shifted);
    auto [tr, va] = split(target, {0.75, s});
    TrainConfig tc;
    tc.seed = s;
    tc.epochs = 5;
    const auto res = train(prepare_transfer(base, s), tr, Dataset{}, tc);
    lower += evaluate(res.model, shifted).accuracy < evaluate(res.model, va).accuracy;
  }
  EXPECT_GE(lower, 9);
}
