#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"
#include "xinv/datapipe/balanced_stream.hpp"
#include "xinv/datapipe/manifest.hpp"
#include "xinv/datapipe/pgm.hpp"
#include "xinv/datapipe/synth.hpp"
#include "xinv/error.hpp"

namespace xinv {
namespace {

using testing::read_file;
using testing::TempDir;
using testing::write_file;

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

void touch_images(const TempDir& dir, std::initializer_list<const char*> names) {
  for (const char* n : names) write_pgm(dir / n, Tensor({1, 32, 32}));
}

TEST(Manifest, SourcesInFirstAppearanceOrder) {
  TempDir dir;
  touch_images(dir, {"a.pgm", "b.pgm", "c.pgm"});
  write_file(dir / "m.csv", "path,label,source\na.pgm,1,A\nb.pgm,0,B\nc.pgm,0,A\n");
  const auto m = load_manifest(dir / "m.csv");
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.source_count(), 2u);
  EXPECT_EQ(m.source_index("A"), 0u);
  EXPECT_EQ(m.source_index("B"), 1u);
  EXPECT_FALSE(m.source_index("C").has_value());
  EXPECT_EQ(m.source_of(2), 0u);
  EXPECT_EQ(m.records()[0].path, dir / "a.pgm");
}

TEST(Manifest, EmptyBodyIsAnError) {
  TempDir dir;
  write_file(dir / "m.csv", "path,label,source\n");
  EXPECT_NE(error_of([&] { load_manifest(dir / "m.csv"); }).find("empty manifest"), std::string::npos);
}

TEST(Manifest, DuplicatePathsStayDistinct) {
  TempDir dir;
  touch_images(dir, {"a.pgm"});
  write_file(dir / "m.csv", "path,label,source\na.pgm,1,A\na.pgm,1,A\n");
  EXPECT_EQ(load_manifest(dir / "m.csv").size(), 2u);
}

TEST(Manifest, ErrorsCarryLineNumbers) {
  TempDir dir;
  touch_images(dir, {"a.pgm"});
  write_file(dir / "bad_label.csv", "path,label,source\na.pgm,1,A\na.pgm,2,A\n");
  const auto label_error = error_of([&] { load_manifest(dir / "bad_label.csv"); });
  EXPECT_NE(label_error.find(":3"), std::string::npos);
  EXPECT_NE(label_error.find("unknown label value"), std::string::npos);
  EXPECT_THROW(load_manifest(dir / "bad_label.csv"), ValidationError);

  write_file(dir / "fields.csv", "path,label,source\na.pgm,1\n");
  const auto field_error = error_of([&] { load_manifest(dir / "fields.csv"); });
  EXPECT_NE(field_error.find(":2"), std::string::npos);
  EXPECT_THROW(load_manifest(dir / "fields.csv"), ParseError);

  write_file(dir / "header.csv", "file,label,source\na.pgm,1,A\n");
  EXPECT_THROW(load_manifest(dir / "header.csv"), ParseError);

  write_file(dir / "missing.csv", "path,label,source\nnope.pgm,1,A\n");
  EXPECT_THROW(load_manifest(dir / "missing.csv"), IoError);
}

TEST(Manifest, WriteThenLoadRoundTrips) {
  TempDir dir;
  touch_images(dir, {"a.pgm", "b.pgm"});
  Manifest m({{dir / "a.pgm", 1, "X"}, {dir / "b.pgm", 0, "Y"}});
  write_manifest(dir / "m.csv", m);
  EXPECT_EQ(read_file(dir / "m.csv"), "path,label,source\na.pgm,1,X\nb.pgm,0,Y\n");
  const auto back = load_manifest(dir / "m.csv");
  EXPECT_EQ(back.records()[1].path, dir / "b.pgm");
  EXPECT_EQ(back.records()[1].label, 0);
}

TEST(Manifest, FilterRenumbersSources) {
  TempDir dir;
  touch_images(dir, {"a.pgm"});
  Manifest m({{dir / "a.pgm", 1, "A"}, {dir / "a.pgm", 0, "B"}, {dir / "a.pgm", 1, "C"}});
  const auto rest = m.filter_sources({"A"}, false);
  EXPECT_EQ(rest.sources(), (std::vector<std::string>{"B", "C"}));
  EXPECT_EQ(rest.source_of(1), 1u);
  EXPECT_EQ(m.filter_sources({"C"}).size(), 1u);
}

TEST(Dataset, SubsetAndStack) {
  TempDir dir;
  Tensor img({1, 32, 32});
  img.data()[5] = 1.0;
  write_pgm(dir / "a.pgm", img);
  touch_images(dir, {"b.pgm"});
  Manifest m({{dir / "a.pgm", 1, "A"}, {dir / "b.pgm", 0, "B"}});
  const auto data = load_dataset(m);
  ASSERT_EQ(data.size(), 2u);
  const auto sub = subset_sources(data, {"B", "A"});
  EXPECT_EQ(sub.sources, (std::vector<std::string>{"B", "A"}));
  EXPECT_EQ(sub.examples[0].source, 1u);  // "A" is now index 1
  EXPECT_THROW(subset_sources(data, {"Z"}), ValidationError);
  const std::vector<std::size_t> idx = {1, 0};
  const auto batch = stack_images(data, idx);
  EXPECT_EQ(batch.shape(), (Shape{2, 1, 32, 32}));
  EXPECT_EQ(batch.data()[1024 + 5], 1.0);
  EXPECT_EQ(testing::values(one_hot({2, 0}, 3)), (std::vector<double>{0, 0, 1, 1, 0, 0}));
}

// Balanced stream.

std::vector<std::size_t> sources_for_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < sizes.size(); ++s) out.insert(out.end(), sizes[s], s);
  return out;
}

TEST(BalancedStream, FourAndTwo) {
  const auto rs = sources_for_sizes({4, 2});
  BalancedStream stream(rs, 2, 3, 1);
  const auto epoch = stream.next_epoch();
  const auto c = oracle::count_stream(epoch, rs, 2);
  EXPECT_EQ(c.total, 8u);
  EXPECT_EQ(c.per_source, (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(c.per_record, (std::vector<std::size_t>{1, 1, 1, 1, 2, 2}));
  EXPECT_EQ(epoch.size(), 3u);
  EXPECT_EQ(epoch.back().size(), 2u);
}

TEST(BalancedStream, AlreadyBalancedUsesEachOnce) {
  const auto rs = sources_for_sizes({3, 3, 3});
  BalancedStream stream(rs, 3, 4, 2);
  const auto c = oracle::count_stream(stream.next_epoch(), rs, 3);
  EXPECT_EQ(c.total, 9u);
  EXPECT_EQ(c.per_record, std::vector<std::size_t>(9, 1));
}

TEST(BalancedStream, LargeEpochCountsAreEqual) {
  const auto rs = sources_for_sizes({5000, 137, 2400});
  BalancedStream stream(rs, 3, 64, 3);
  for (int e = 0; e < 2; ++e) {
    const auto c = oracle::count_stream(stream.next_epoch(), rs, 3);
    EXPECT_EQ(c.per_source, (std::vector<std::size_t>{5000, 5000, 5000}));
  }
}

TEST(BalancedStream, RandomSizeTuplesSatisfyCountingOracle) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> ns(1, 6), size(1, 60), bs(1, 17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> sizes(ns(rng));
    for (auto& s : sizes) s = size(rng);
    const auto rs = sources_for_sizes(sizes);
    // Interleave records so indices do not follow source order.
    std::vector<std::size_t> shuffled = rs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto batch = bs(rng);
    BalancedStream stream(shuffled, sizes.size(), batch, rng());
    for (int e = 0; e < 2; ++e) {
      const auto r = oracle::check_balanced_epoch(stream.next_epoch(), shuffled, sizes.size(), batch);
      ASSERT_TRUE(r.passed) << "trial " << trial << ": " << r.detail;
    }
  }
}

TEST(BalancedStream, SameSeedSameOrderDifferentSeedSameCounts) {
  const auto rs = sources_for_sizes({20, 7, 13});
  BalancedStream a(rs, 3, 8, 5), b(rs, 3, 8, 5), c(rs, 3, 8, 6);
  const auto ea = a.next_epoch(), eb = b.next_epoch(), ec = c.next_epoch();
  EXPECT_EQ(ea, eb);
  EXPECT_NE(ea, ec);
  EXPECT_EQ(oracle::count_stream(ea, rs, 3).per_source, oracle::count_stream(ec, rs, 3).per_source);
  EXPECT_NE(a.next_epoch(), ea);  // each epoch reshuffles
}

TEST(BalancedStream, RejectsEmptySource) {
  EXPECT_THROW(BalancedStream(sources_for_sizes({3, 0, 2}), 3, 4, 1), ConfigError);
  EXPECT_THROW(BalancedStream(sources_for_sizes({3}), 1, 0, 1), ConfigError);
}

// PGM.

TEST(Pgm, ZeroImageDecodesToZeros) {
  Tensor zero({1, 4, 3});
  const auto back = decode_pgm(encode_pgm(zero));
  EXPECT_EQ(back.shape(), (Shape{1, 4, 3}));
  for (double v : back.data()) EXPECT_EQ(v, 0.0);
}

TEST(Pgm, MaxvalPixelIsOne) {
  std::string bytes = "P5\n2 1\n255\n";
  bytes.push_back(static_cast<char>(255));
  bytes.push_back(static_cast<char>(51));
  const auto t = decode_pgm(bytes);
  EXPECT_EQ(t.data()[0], 1.0);
  EXPECT_EQ(t.data()[1], 51.0 / 255.0);
}

TEST(Pgm, EightBitRoundTripIsIdentity) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int trial = 0; trial < 20; ++trial) {
    std::string bytes = "P5\n7 5\n255\n";
    for (int i = 0; i < 35; ++i) bytes.push_back(static_cast<char>(byte(rng)));
    EXPECT_EQ(encode_pgm(decode_pgm(bytes)), bytes);
  }
}

TEST(Pgm, AcceptsHeaderComments) {
  std::string bytes = "P5 # made by hand\n1 1\n# max\n255\n";
  bytes.push_back(static_cast<char>(128));
  EXPECT_EQ(decode_pgm(bytes).data()[0], 128.0 / 255.0);
}

TEST(Pgm, MalformedHeaders) {
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\n0"), ParseError);
  EXPECT_THROW(decode_pgm("P5\n1 1\n65535\n00"), ParseError);
  EXPECT_THROW(decode_pgm("P5\nx 1\n255\n0"), ParseError);
  EXPECT_THROW(decode_pgm("P5\n4 4\n255\n0"), ParseError);
}

TEST(Pgm, WrongDimensions) {
  TempDir dir;
  write_pgm(dir / "small.pgm", Tensor({1, 16, 16}));
  EXPECT_THROW(decode_image(dir / "small.pgm", 32), ShapeError);
  EXPECT_EQ(decode_image(dir / "small.pgm", 16).shape(), (Shape{1, 16, 16}));
}

// Synthetic generator.

SynthSpec small_spec() {
  SynthSpec s;
  s.n = 40;
  return s;
}

TEST(Synth, DefaultLayout) {
  const auto s = parse_synth_spec("");
  EXPECT_EQ(s.sources, 4u);
  EXPECT_EQ(s.rho, (std::vector<double>{0.95, 0.95, 0.95, 0.0}));
  EXPECT_EQ(s.causal_amplitude, 0.35);
  EXPECT_EQ(s.spurious_amplitude, 0.6);
  EXPECT_EQ(s.noise, 0.1);
  EXPECT_EQ(s.n, 1000u);
}

TEST(Synth, ParseAndEcho) {
  const auto s = parse_synth_spec("# demo\nsources=3\nn=10\nrho=0.5\nseed=9\n");
  EXPECT_EQ(s.rho, (std::vector<double>{0.5, 0.5, 0.5}));
  EXPECT_EQ(parse_synth_spec(s.to_text()).to_text(), s.to_text());
  EXPECT_THROW(parse_synth_spec("colour=red\n"), ParseError);
  EXPECT_THROW(parse_synth_spec("n=ten\n"), ParseError);
  EXPECT_THROW(parse_synth_spec("rho=1.5,0,0,0\n"), ConfigError);
  EXPECT_THROW(parse_synth_spec("causal_amplitude=-1\n"), ConfigError);
  EXPECT_THROW(parse_synth_spec("sources=3\nrho=0,0\n"), ConfigError);
}

TEST(Synth, RegionsAreDistinctCorners) {
  EXPECT_EQ(causal_region(32).row0, 12u);
  EXPECT_EQ(causal_region(32).size, 8u);
  std::set<std::pair<std::size_t, std::size_t>> corners;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto r = watermark_region(32, s);
    EXPECT_EQ(r.size, 6u);
    corners.insert({r.row0, r.col0});
  }
  EXPECT_EQ(corners.size(), 4u);
}

TEST(Synth, WatermarkProbabilityFollowsRho) {
  auto s = small_spec();
  EXPECT_NEAR(watermark_probability(s, 0, 1), 0.975, 1e-12);
  EXPECT_NEAR(watermark_probability(s, 0, 0), 0.025, 1e-12);
  EXPECT_EQ(watermark_probability(s, 3, 1), 0.5);
  EXPECT_EQ(watermark_probability(s, 3, 0), 0.5);
}

TEST(Synth, EmpiricalWatermarkRate) {
  auto s = small_spec();
  std::mt19937_64 rng(4);
  for (std::size_t src : {0u, 3u})
    for (int y : {0, 1}) {
      int marked = 0;
      const int trials = 4000;
      for (int k = 0; k < trials; ++k) {
        SynthFlags flags;
        render_example(s, src, y, rng, &flags);
        marked += flags.watermark;
        EXPECT_EQ(flags.causal, y == 1);
      }
      const double p = watermark_probability(s, src, y);
      const double sd = std::sqrt(p * (1 - p) / trials);
      EXPECT_NEAR(marked / static_cast<double>(trials), p, 4 * sd + 1e-3);
    }
}

TEST(Synth, PixelsClampedAndPatternsPlaced) {
  auto s = small_spec();
  s.noise = 0.0;
  s.rho = {1.0, 1.0, 1.0, 1.0};
  std::mt19937_64 rng(1);
  SynthFlags flags;
  const auto img = render_example(s, 1, 1, rng, &flags);
  ASSERT_TRUE(flags.watermark);
  const auto mark = watermark_region(32, 1), blob = causal_region(32);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) {
      const double v = img.data()[r * 32 + c];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      if (mark.contains(r, c)) {
        EXPECT_EQ(v, 0.6);
      } else if (!blob.contains(r, c)) {
        EXPECT_EQ(v, 0.0);
      }
    }
  EXPECT_EQ(img.data()[16 * 32 + 16], 0.35);
  const auto neg = render_example(s, 1, 0, rng, &flags);
  EXPECT_FALSE(flags.watermark);
  for (double v : neg.data()) EXPECT_EQ(v, 0.0);
}

TEST(Synth, WithoutSpuriousAmplitudeSourcesLookAlike) {
  auto s = small_spec();
  s.spurious_amplitude = 0.0;
  s.noise = 0.0;
  std::mt19937_64 rng(2);
  const auto a = render_example(s, 0, 1, rng), b = render_example(s, 2, 1, rng);
  EXPECT_EQ(testing::values(a), testing::values(b));
}

TEST(Synth, GenerationIsByteReproducible) {
  TempDir a, b;
  const auto spec = small_spec();
  const auto out = synth_generate(spec, a.path());
  synth_generate(spec, b.path());
  EXPECT_EQ(out.train.size(), 4u * 40);
  EXPECT_EQ(out.test.size(), 4u * 40);
  EXPECT_EQ(out.train.source_count(), 4u);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    ASSERT_TRUE(std::filesystem::exists(b.path() / rel)) << rel;
    EXPECT_EQ(read_file(entry.path()), read_file(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 2u * 4 * 40 + 3);
  const auto reloaded = load_manifest(a / "train.csv");
  EXPECT_EQ(reloaded.size(), out.train.size());
  EXPECT_EQ(parse_synth_spec(read_file(a / "synth.txt")).to_text(), spec.to_text());

  auto other = spec;
  other.seed = 8;
  TempDir c;
  synth_generate(other, c.path());
  EXPECT_NE(read_file(a / "src0/train/pos_0000.pgm"), read_file(c / "src0/train/pos_0000.pgm"));
}

}  // namespace
}  // namespace xinv
