#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include <spdlog/spdlog.h>

#include "emovad/checkpoint.hpp"

using namespace emovad;
using namespace emovad::train;
using grad::Tensor;

namespace {

Archive small_archive() {
  Archive a;
  a.add("w", Tensor<float>({2, 3}, {1.f, -2.f, 3.5f, 0.f, -0.f, 1e-30f}));
  a.add("b", Tensor<float>({1}, {42.f}));
  a.meta = {{"k", "v"}, {"n", 3}};
  return a;
}

// Raw archive builder for malformed inputs.
struct Bytes {
  std::vector<std::uint8_t> b;
  Bytes& u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
    return *this;
  }
  Bytes& str(std::string_view s) {
    b.insert(b.end(), s.begin(), s.end());
    return *this;
  }
  Bytes& f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    return u32(u);
  }
  Bytes& header(std::uint32_t count) { return str("NTAR").u32(kNtarVersion).u32(count); }
  Bytes& meta(std::string_view j = "{}") { return u32(std::uint32_t(j.size())).str(j); }
};

std::size_t parse_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_ntar(bytes);
  } catch (const ParseError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "no ParseError";
  return SIZE_MAX;
}

}  // namespace

TEST(Ntar, RoundTripIsBitExact) {
  auto a = small_archive();
  auto bytes = encode_ntar(a);
  auto back = decode_ntar(bytes);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[0].name, "w");
  EXPECT_EQ(back.entries[0].tensor.dims(), (grad::Dims{2, 3}));
  EXPECT_TRUE(back.entries[0].tensor.same_data(a.entries[0].tensor));
  EXPECT_TRUE(std::signbit(back.entries[0].tensor[4]));
  EXPECT_EQ(back.meta, a.meta);
  EXPECT_EQ(encode_ntar(back), bytes);
}

TEST(Ntar, HeaderLayout) {
  auto bytes = encode_ntar(small_archive());
  auto expect = Bytes().header(2).u32(1).str("w").u32(2).u32(2).u32(3);
  ASSERT_GE(bytes.size(), expect.b.size());
  EXPECT_TRUE(std::equal(expect.b.begin(), expect.b.end(), bytes.begin()));
}

TEST(Ntar, FileRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "emovad_ckpt_test" / "a.ntar";
  write_ntar(small_archive(), path);
  EXPECT_EQ(encode_ntar(read_ntar(path)), encode_ntar(small_archive()));
  std::filesystem::remove_all(path.parent_path());
  EXPECT_THROW(read_ntar(path), InputError);
}

TEST(Ntar, MalformedInputsReportOffsets) {
  EXPECT_EQ(parse_offset(Bytes().str("NTAX").u32(1).u32(0).meta().b), 0u);
  EXPECT_EQ(parse_offset(Bytes().str("NTAR").u32(9).u32(0).meta().b), 4u);
  EXPECT_EQ(parse_offset(Bytes().header(1).u32(0).b), 12u);
  EXPECT_EQ(parse_offset(Bytes().header(1).u32(1).str("x").u32(0).b), 17u);
  EXPECT_EQ(parse_offset(Bytes().header(1).u32(1).str("x").u32(4).b), 17u);
  EXPECT_EQ(parse_offset(Bytes().header(1).u32(1).str("x").u32(2).u32(3).u32(0).b), 25u);
  // Payload claims 4 floats but carries 1.
  EXPECT_EQ(parse_offset(Bytes().header(1).u32(1).str("x").u32(1).u32(4).f32(1).b), 25u);
  auto dup = Bytes().header(2).u32(1).str("x").u32(1).u32(1).f32(0);
  const auto second = dup.b.size();
  dup.u32(1).str("x").u32(1).u32(1).f32(0).meta();
  EXPECT_EQ(parse_offset(dup.b), second);
  auto trailing = Bytes().header(0).meta();
  trailing.b.push_back(0);
  EXPECT_EQ(parse_offset(trailing.b), 18u);
  EXPECT_EQ(parse_offset(Bytes().header(0).meta("{oops").b), 16u);
  EXPECT_EQ(parse_offset(Bytes().header(0).meta("[1]").b), 16u);
  EXPECT_THROW(decode_ntar(Bytes().header(0).b), ParseError);
  EXPECT_NO_THROW(decode_ntar(Bytes().header(0).meta().b));
}

TEST(Archive, LookupAndDuplicates) {
  auto a = small_archive();
  EXPECT_EQ(a.at("b")[0], 42.f);
  EXPECT_EQ(a.find("nope"), nullptr);
  try {
    a.at("nope");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
  EXPECT_THROW(a.add("w", Tensor<float>({1}, {0.f})), Error);
}

TEST(Params, RoundTripThroughArchive) {
  auto p = pipeline::make_params(nn::init_params(3, 8));
  Archive a;
  add_params(a, "model", p);
  auto back = read_params(decode_ntar(encode_ntar(a)), "model");
  p.visit([&](pipeline::Group, const std::string& name, const Tensor<float>& t) {
    EXPECT_TRUE(a.at("model/" + name).same_data(t)) << name;
  });
  std::size_t n = 0;
  back.visit([&](pipeline::Group, const std::string& name, const Tensor<float>& t) {
    ++n;
    EXPECT_TRUE(a.at("model/" + name).same_data(t)) << name;
    EXPECT_FALSE(t.requires_grad());
  });
  EXPECT_EQ(n, a.entries.size());
  EXPECT_THROW(read_params(a, "other"), InputError);
}

TEST(Params, MismatchedFeatureDimsRejected) {
  auto vad = pipeline::make_params(nn::init_params(1, 8));
  auto ser = pipeline::make_params(nn::init_params(1, 16));
  Archive a;
  add_params(a, "model", train::combine_pretrained(vad, ser));
  EXPECT_THROW(read_params(a, "model"), InputError);
}

TEST(State, ArchiveRoundTripPreservesEverything) {
  spdlog::set_level(spdlog::level::err);
  corpus::SynthSpec spec;
  spec.n_train = 6;
  spec.n_val = 3;
  spec.n_test = 0;
  spec.t_min = 30;
  spec.t_max = 50;
  auto utts = corpus::generate_corpus(spec);
  auto train = view(utts, corpus::Split::kTrain), val = view(utts, corpus::Split::kVal);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  auto s = pretrain_vad(train, val, pipeline::make_params(nn::init_params(1, spec.dim)), cfg);
  auto a = state_to_archive(s, {{"seed", 1}});
  EXPECT_EQ(a.meta["seed"], 1);
  auto back = state_from_archive(decode_ntar(encode_ntar(a)));
  EXPECT_EQ(back.phase, s.phase);
  EXPECT_EQ(back.epoch, s.epoch);
  EXPECT_EQ(back.adam.t, s.adam.t);
  EXPECT_EQ(back.trainable, s.trainable);
  EXPECT_EQ(back.best_metric, s.best_metric);
  EXPECT_EQ(back.log.epochs.size(), s.log.epochs.size());
  EXPECT_EQ(encode_ntar(state_to_archive(back, {{"seed", 1}})), encode_ntar(a));
  auto model = model_from_archive(a);
  s.best.visit([&](pipeline::Group, const std::string& name, const Tensor<float>& t) {
    EXPECT_TRUE(a.at("model/" + name).same_data(t)) << name;
  });
  (void)model;

  a.meta.erase("adam_step");
  EXPECT_THROW(state_from_archive(a), InputError);
}
