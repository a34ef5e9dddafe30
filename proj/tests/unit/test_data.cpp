#include "testkit.hpp"

#include <sipfuse/errors.hpp>
#include <sipfuse/eval.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

namespace {

using namespace sipfuse;
namespace fs = std::filesystem;

std::vector<CacheRecord> random_records(std::mt19937_64& rng, int n) {
  std::vector<CacheRecord> out;
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (int i = 0; i < n; ++i) {
    CacheRecord r;
    r.utterance_id = "utt_" + std::to_string(i);
    r.ear = static_cast<Ear>(i % 2);
    r.backbone = static_cast<Backbone>((i / 2) % 2);
    r.frame_rate_hz = r.backbone == Backbone::canary ? 12.5 : 50.0;
    r.frames.resize(testkit::uniform_int(rng, 1, 6), testkit::uniform_int(rng, 1, 5));
    for (Index k = 0; k < r.frames.size(); ++k) r.frames.data()[k] = g(rng);
    out.push_back(std::move(r));
  }
  return out;
}

void expect_same(const std::vector<CacheRecord>& a, const std::vector<CacheRecord>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].utterance_id, b[i].utterance_id);
    EXPECT_EQ(a[i].ear, b[i].ear);
    EXPECT_EQ(a[i].backbone, b[i].backbone);
    EXPECT_EQ(a[i].frame_rate_hz, b[i].frame_rate_hz);
    EXPECT_EQ(a[i].frames, b[i].frames);
  }
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("sipfuse_test_data_" + name); }

// ---------------------------------------------------------------------------
// cache

TEST(Cache, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  const auto recs = random_records(rng, 40);
  const auto bytes = encode_cache(recs);
  const auto back = decode_cache(bytes);
  expect_same(recs, back);
  EXPECT_EQ(encode_cache(back), bytes);
  const auto path = temp_path("roundtrip.fcache");
  write_cache(path.string(), recs);
  expect_same(read_cache(path.string()), recs);
  fs::remove(path);
}

TEST(Cache, LayoutStartsWithMagicAndHeader) {
  CacheRecord r{"ab", Ear::right, Backbone::wavlm, 50.0, Mat<float>::Constant(2, 3, 1.5f)};
  const auto bytes = encode_cache({r});
  const std::string magic(reinterpret_cast<const char*>(bytes.data()), 8);
  EXPECT_EQ(magic, "FCACHE01");
  EXPECT_EQ(std::to_integer<int>(bytes[8]), 2);  // id length, little-endian u32
  EXPECT_EQ(std::to_integer<int>(bytes[12]), 'a');
  EXPECT_EQ(std::to_integer<int>(bytes[14]), 1);  // ear
  EXPECT_EQ(std::to_integer<int>(bytes[15]), 1);  // backbone
  // header 8 + id 4+2 + codes 2 + rate 8 + dims 8 + payload 24 + checksum 8 + index 8+8+8 + offset 8
  EXPECT_EQ(bytes.size(), 8u + 6 + 2 + 8 + 8 + 24 + 8 + 8 + 8 + 8 + 8);
}

TEST(Cache, FlippedPayloadByteNamesRecord) {
  std::mt19937_64 rng(2);
  const auto recs = random_records(rng, 3);
  auto bytes = encode_cache(recs);
  // First payload byte of record 0: magic + id len + id + codes + rate + dims.
  const std::size_t pos = 8 + 4 + recs[0].utterance_id.size() + 2 + 8 + 8;
  bytes[pos] ^= std::byte{0x01};
  try {
    decode_cache(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("utt_0"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
}

TEST(Cache, EveryByteCorruptionIsDetected) {
  std::mt19937_64 rng(3);
  const auto bytes = encode_cache(random_records(rng, 4));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= std::byte{0x80};
    EXPECT_THROW(decode_cache(bad), FormatError) << "byte " << i;
  }
}

TEST(Cache, EmptyTruncatedAndBadMagic) {
  EXPECT_THROW(decode_cache({}), FormatError);
  std::mt19937_64 rng(4);
  const auto bytes = encode_cache(random_records(rng, 2));
  for (std::size_t len : {std::size_t(4), std::size_t(20), bytes.size() - 1}) {
    EXPECT_THROW(decode_cache(std::vector<std::byte>(bytes.begin(), bytes.begin() + long(len))), FormatError);
  }
  auto bad = bytes;
  bad[0] = std::byte{'X'};
  EXPECT_THROW(decode_cache(bad), FormatError);
  const auto path = temp_path("empty.fcache");
  std::ofstream(path).close();
  EXPECT_THROW(read_cache(path.string()), FormatError);
  fs::remove(path);
}

TEST(Cache, RejectsInvalidRecordsOnWrite) {
  CacheRecord r{"x", Ear::left, Backbone::canary, 12.5, Mat<float>(0, 4)};
  EXPECT_THROW(encode_cache({r}), DataError);
  r.frames = Mat<float>::Ones(2, 2);
  r.frames(1, 1) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(encode_cache({r}), DataError);
}

// ---------------------------------------------------------------------------
// manifest

const std::string kThreeRows = std::string(kManifestHeader) +
                               "\n"
                               "u1,S1,mild,E01,12.5,train\n"
                               "u2,S1,moderate,E02,100,dev\n"
                               "u3,S2,moderately_severe,E09,0,eval\n";

TEST(Manifest, ParsesThreeRows) {
  const Manifest m = parse_manifest(kThreeRows);
  ASSERT_EQ(m.rows.size(), 3u);
  EXPECT_EQ(m.rows[0].utterance_id, "u1");
  EXPECT_EQ(m.rows[0].scene_token, "S1");
  EXPECT_EQ(m.rows[0].severity, Severity::mild);
  EXPECT_EQ(m.rows[0].system_id, "E01");
  EXPECT_EQ(m.rows[0].label, 12.5);
  EXPECT_EQ(m.rows[0].split, Split::train);
  EXPECT_EQ(m.rows[1].split, Split::dev);
  EXPECT_EQ(m.rows[2].severity, Severity::moderately_severe);
  EXPECT_EQ(m.rows[2].split, Split::eval);
}

TEST(Manifest, OutOfRangeLabelNamesRow) {
  const std::string text = std::string(kManifestHeader) + "\nu1,S1,mild,E01,50,train\nu2,S1,mild,E01,101,train\n";
  try {
    parse_manifest(text);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(Manifest, RejectsBadRows) {
  const std::string h = std::string(kManifestHeader) + "\n";
  EXPECT_THROW(parse_manifest(h + "u1,S1,mild,E01,-0.5,train\n"), DataError);
  EXPECT_THROW(parse_manifest(h + "u1,S1,mild,E01,5,train\nu1,S2,mild,E01,5,train\n"), DataError);
  EXPECT_THROW(parse_manifest(h + "u1,S1,severe,E01,5,train\n"), DataError);
  EXPECT_THROW(parse_manifest(h + "u1,S1,mild,E01,5,test\n"), DataError);
  EXPECT_THROW(parse_manifest(h + "u1,S1,mild,E01,5\n"), DataError);
  EXPECT_THROW(parse_manifest(h + "u1,S1,mild,E01,abc,train\n"), DataError);
  EXPECT_THROW(parse_manifest("id,label\nu1,5\n"), DataError);
}

TEST(Manifest, RoundTripPreservesValuesAndMetadata) {
  Manifest m = parse_manifest(kThreeRows);
  m.metadata = {{"profile", "local"}, {"seed", "1"}};
  m.rows[0].label = 0.1 + 0.2;
  const Manifest back = parse_manifest(format_manifest(m));
  EXPECT_EQ(back.metadata, m.metadata);
  ASSERT_EQ(back.rows.size(), m.rows.size());
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].utterance_id, m.rows[i].utterance_id);
    EXPECT_EQ(back.rows[i].scene_token, m.rows[i].scene_token);
    EXPECT_EQ(back.rows[i].severity, m.rows[i].severity);
    EXPECT_EQ(back.rows[i].system_id, m.rows[i].system_id);
    EXPECT_EQ(back.rows[i].label, m.rows[i].label);
    EXPECT_EQ(back.rows[i].split, m.rows[i].split);
  }
  const auto path = temp_path("manifest.csv");
  write_manifest(path.string(), m);
  EXPECT_EQ(format_manifest(read_manifest(path.string())), format_manifest(m));
  fs::remove(path);
}

// ---------------------------------------------------------------------------
// dataset validation

std::vector<CacheRecord> four_records(const std::string& id, int dim = 3) {
  std::vector<CacheRecord> out;
  for (int e = 0; e < 2; ++e) {
    out.push_back({id, static_cast<Ear>(e), Backbone::canary, 12.5, Mat<float>::Ones(5, dim)});
    out.push_back({id, static_cast<Ear>(e), Backbone::wavlm, 50.0, Mat<float>::Ones(20, dim)});
  }
  return out;
}

TEST(ValidateDataset, ConsistentDatasetHasNoProblems) {
  const Manifest m = parse_manifest(kThreeRows);
  std::vector<CacheRecord> recs;
  for (const auto& r : m.rows) {
    for (auto& c : four_records(r.utterance_id)) recs.push_back(c);
  }
  EXPECT_TRUE(validate_dataset(m, recs).empty());
  const auto items = assemble_items(m, recs);
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(items[1].row.utterance_id, "u2");
  EXPECT_EQ(items[1].input.severity, Severity::moderate);
  EXPECT_EQ(items[1].input.wavlm[1].length(), 20);
  EXPECT_EQ(items[1].input.canary[0].frame_rate_hz, 12.5);
}

TEST(ValidateDataset, ReportsEachProblem) {
  const Manifest m = parse_manifest(kThreeRows);
  std::vector<CacheRecord> recs;
  // u1: missing one record.
  auto u1 = four_records("u1");
  u1.pop_back();
  // u2: inconsistent canary rates between ears.
  auto u2 = four_records("u2");
  u2[2].frame_rate_hz = 25.0;
  // u3: absent entirely.
  for (auto* v : {&u1, &u2}) recs.insert(recs.end(), v->begin(), v->end());
  const auto problems = validate_dataset(m, recs);
  ASSERT_GE(problems.size(), 3u);
  auto mentions = [&](const std::string& id) {
    return std::any_of(problems.begin(), problems.end(),
                       [&](const std::string& p) { return p.find(id) != std::string::npos; });
  };
  EXPECT_TRUE(mentions("u1"));
  EXPECT_TRUE(mentions("u2"));
  EXPECT_TRUE(mentions("u3"));
  EXPECT_THROW(assemble_items(m, recs), DataError);
}

TEST(ValidateDataset, RejectsImplausibleRateRatio) {
  Manifest m = parse_manifest(kThreeRows);
  m.rows.resize(1);
  auto recs = four_records("u1");
  for (auto& r : recs) {
    if (r.backbone == Backbone::wavlm) r.frame_rate_hz = 100.0;
  }
  EXPECT_EQ(validate_dataset(m, recs).size(), 1u);
}

// ---------------------------------------------------------------------------
// synthetic generator

TEST(Synth, IsPureFunctionOfInputs) {
  const SynthOptions opt{16, 1, 0.3};
  const auto a = synth_generate(20, 7, SynthProfile::local, opt);
  const auto b = synth_generate(20, 7, SynthProfile::local, opt);
  EXPECT_EQ(encode_cache(a.records), encode_cache(b.records));
  EXPECT_EQ(format_manifest(a.manifest), format_manifest(b.manifest));
  const auto c = synth_generate(20, 8, SynthProfile::local, opt);
  EXPECT_NE(encode_cache(a.records), encode_cache(c.records));
  const auto g = synth_generate(20, 7, SynthProfile::global, opt);
  EXPECT_NE(format_manifest(a.manifest), format_manifest(g.manifest));
}

TEST(Synth, StructureMatchesContract) {
  const auto ds = synth_generate(200, 3, SynthProfile::local, {16, 1, 0.3});
  EXPECT_EQ(ds.manifest.rows.size(), 200u);
  EXPECT_EQ(ds.records.size(), 800u);
  EXPECT_EQ(ds.manifest.metadata.at("profile"), "local");
  EXPECT_TRUE(validate_dataset(ds.manifest, ds.records).empty());
  std::set<std::string> systems;
  std::set<Severity> severities;
  for (const auto& r : ds.manifest.rows) {
    systems.insert(r.system_id);
    severities.insert(r.severity);
    EXPECT_GE(r.label, 0.0);
    EXPECT_LE(r.label, 100.0);
  }
  EXPECT_EQ(int(systems.size()), kSynthSystems);
  EXPECT_EQ(severities.size(), 3u);
  for (const auto& rec : ds.records) {
    EXPECT_EQ(rec.frames.cols(), 16);
  }
  const auto items = assemble_items(ds.manifest, ds.records);
  for (const auto& it : items) {
    const Index tc = it.input.canary[0].length(), tw = it.input.wavlm[0].length();
    EXPECT_GE(tc, 20);
    EXPECT_LE(tc, 80);
    EXPECT_GE(tw, 4 * tc - 2);
    EXPECT_LE(tw, 4 * tc + 2);
  }
}

TEST(Synth, LabelsSpanTenToNinety) {
  const auto ds = synth_generate(2000, 1, SynthProfile::local, {16, 1, 0.3});
  double lo = 100.0, hi = 0.0;
  for (const auto& r : ds.manifest.rows) {
    lo = std::min(lo, r.label);
    hi = std::max(hi, r.label);
  }
  EXPECT_LE(lo, 10.0);
  EXPECT_GE(hi, 90.0);
}

TEST(Synth, PlantedOracleIsAccurate) {
  for (auto profile : {SynthProfile::local, SynthProfile::global}) {
    const auto ds = synth_generate(300, 2, profile, {32, 1, 0.3});
    const auto items = assemble_items(ds.manifest, ds.records);
    std::vector<double> pred, label, noiseless;
    for (std::size_t i = 0; i < items.size(); ++i) {
      pred.push_back(planted_oracle_predict(ds.planted, items[i].input));
      label.push_back(items[i].row.label);
      noiseless.push_back(planted_label(ds.planted, ds.items[i], items[i].row.severity));
    }
    EXPECT_LT(rmse(pred, label), 2.0) << to_string(profile);
    EXPECT_LT(rmse(noiseless, label), 2.0) << to_string(profile);
  }
}

TEST(Synth, SizeLimits) {
  EXPECT_NO_THROW(synth_generate(3, 1, SynthProfile::local, {16, 1, 0.3}));
  EXPECT_THROW(synth_generate(9, 1, SynthProfile::local, {16, 5, 0.3}), ArgumentError);
  EXPECT_NO_THROW(synth_generate(10, 1, SynthProfile::local, {16, 5, 0.3}));
  EXPECT_THROW(synth_generate(10, 1, SynthProfile::local, {8, 1, 0.3}), ArgumentError);
  EXPECT_THROW(parse_profile("bursty"), ConfigError);
}

}  // namespace
