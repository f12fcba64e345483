#include <gtest/gtest.h>

#include <random>

#include "crowdkernel/study.hpp"
#include "support.hpp"

using namespace crowdkernel;
using namespace ck_test;

TEST(Io, MatrixCsvRoundTripsExactly) {
  std::mt19937_64 rng(601);
  const Eigen::MatrixXd m = gaussian(7, 3, rng, 1e3);
  EXPECT_EQ(io::parse_matrix_csv(io::matrix_csv(m)), m);
  EXPECT_EQ(io::matrix_csv(Eigen::MatrixXd::Identity(2, 2)), "1,0\n0,1\n");
  EXPECT_THROW(io::parse_matrix_csv(""), io::IoError);
  EXPECT_THROW(io::parse_matrix_csv("1,2\n3\n"), io::IoError);
  EXPECT_THROW(io::parse_matrix_csv("1,x\n"), io::IoError);
}

TEST(Io, PcaCsvHasHeaderAndOneRowPerObject) {
  Eigen::MatrixXd c(3, 2);
  c << 0, 1, 2, 3, 4, 5;
  const std::string out = io::pca_csv(c);
  EXPECT_EQ(out, "object_id,x,y\n0,0,1\n1,2,3\n2,4,5\n");
}

TEST(Io, ResponsesJsonlRoundTrip) {
  std::mt19937_64 rng(602);
  auto rs = random_responses(12, 40, rng);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    rs[i].round = static_cast<int>(i / 10);
    if (i % 3 == 0) rs[i].worker = "w" + std::to_string(i);
    rs[i].gold = i % 7 == 0;
  }
  const std::string text = io::responses_jsonl(rs);
  const auto back = io::parse_responses_jsonl(text);
  ASSERT_EQ(back.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(back[i].triple, rs[i].triple);
    EXPECT_EQ(back[i].choice, rs[i].choice);
    EXPECT_EQ(back[i].worker, rs[i].worker);
    EXPECT_EQ(back[i].gold, rs[i].gold);
    EXPECT_EQ(back[i].round, rs[i].round);
  }
  EXPECT_EQ(io::responses_jsonl(back), text);
  const auto first = io::json::parse(text.substr(0, text.find('\n')));
  for (const char* key : {"head", "left", "right", "choice", "worker", "gold", "round"})
    EXPECT_TRUE(first.contains(key)) << key;
}

TEST(Io, ResponsesParserReportsLines) {
  const std::string ok = R"({"head":0,"left":1,"right":2,"choice":"right"})";
  const auto one = io::parse_responses_jsonl(ok + "\n\n");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].choice, Choice::Right);
  EXPECT_FALSE(one[0].gold);
  EXPECT_EQ(one[0].round, 0);
  try {
    io::parse_responses_jsonl(ok + "\n" + R"({"head":0,"left":1,"right":2,"choice":"up"})" + "\n");
    FAIL();
  } catch (const io::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(io::parse_responses_jsonl(R"({"head":0,"left":1})"), io::IoError);
  EXPECT_THROW(io::parse_responses_jsonl("[1,2,3]"), io::IoError);
  EXPECT_THROW(io::parse_responses_jsonl("{oops"), io::IoError);
}

TEST(Io, ManifestParsing) {
  const auto objs = io::parse_manifest("id,image_url,label\n0,a.png,cat\n1,b.png,dog\n\n2,c.png\n");
  ASSERT_EQ(objs.size(), 3u);
  EXPECT_EQ(objs[1], (io::ObjectInfo{1, "b.png", "dog"}));
  EXPECT_EQ(objs[2].label, "");
  EXPECT_EQ(io::parse_manifest("0,x,\n1,y,z\n").size(), 2u);
  EXPECT_THROW(io::parse_manifest("0,a\n2,b\n"), io::IoError);
  EXPECT_THROW(io::parse_manifest("0\n"), io::IoError);
  EXPECT_THROW(io::parse_manifest("0,a,b,c\n"), io::IoError);
  EXPECT_THROW(io::parse_manifest("zero,a,b\n1,c,d\n"), io::IoError);
}

TEST(Io, ConfigRoundTripsAndRejectsUnknownKeys) {
  PipelineConfig pc;
  pc.rounds = 7;
  pc.acquisition = Acquisition::Random;
  pc.fit.head = Head::Logistic;
  pc.fit.mode = FitMode::ProjectedK;
  pc.fit.learn_rate = 0.125;
  PipelineConfig back;
  io::update_from_json(back, io::to_json(pc));
  EXPECT_EQ(io::to_json(back), io::to_json(pc));
  EXPECT_EQ(back.fit.head, Head::Logistic);
  EXPECT_EQ(back.rounds, 7u);
  EXPECT_THROW(io::update_from_json(back, io::json{{"round", 3}}), ParameterError);
  EXPECT_THROW(io::update_from_json(back, io::json{{"fit", {{"dim", 3}}}}), ParameterError);
  EXPECT_THROW(io::update_from_json(back, io::json::array()), ParameterError);
  EXPECT_THROW(io::update_from_json(back, io::json{{"fit", {{"head", "probit"}}}}), ParameterError);

  SyntheticSpec spec;
  spec.edge_growth = 3.0;
  spec.kind = SyntheticKind::Clustered;
  SyntheticSpec spec2;
  io::update_from_json(spec2, io::to_json(spec));
  EXPECT_EQ(io::to_json(spec2), io::to_json(spec));
  EXPECT_THROW(io::update_from_json(spec2, io::json{{"growth", 2}}), ParameterError);

  StudyConfig sc;
  sc.gold_pass = 9;
  StudyConfig sc2;
  io::update_from_json(sc2, io::to_json(sc));
  EXPECT_EQ(io::to_json(sc2), io::to_json(sc));
}

TEST(Io, GoldAndTaskDocuments) {
  const auto gold = io::parse_gold_jsonl(R"({"head":3,"left":1,"right":2,"choice":"left"})"
                                         "\n"
                                         R"({"head":0,"left":4,"right":2,"choice":"right"})"
                                         "\n");
  ASSERT_EQ(gold.size(), 2u);
  EXPECT_EQ(gold[1].triple, (Triple{0, 4, 2}));
  EXPECT_EQ(gold[1].expected, Choice::Right);
  EXPECT_EQ(io::gold_from_json(io::to_json(gold[0])).triple, gold[0].triple);

  Task t;
  t.id = 5;
  t.seed = 99;
  t.worker = "ann";
  t.status = TaskStatus::Rejected;
  t.entries = {{{0, 1, 2}, false, Choice::Left}, {{2, 1, 0}, true, Choice::Right}};
  const Task back = io::task_from_json(io::to_json(t));
  EXPECT_EQ(back.id, 5u);
  EXPECT_EQ(back.entries, t.entries);
  EXPECT_EQ(back.status, TaskStatus::Rejected);
  const io::json view = io::task_view(t);
  EXPECT_EQ(view["task_id"], 5);
  for (const auto& e : view["triples"]) {
    EXPECT_FALSE(e.contains("gold"));
    EXPECT_FALSE(e.contains("expected"));
  }
}

TEST(Io, FitRecordAndMatrixJson) {
  const FitRecord f{3, 12345678901234ull, 90, 0.4321, 2, true};
  const FitRecord g = io::fit_record_from_json(io::to_json(f));
  EXPECT_EQ(g.seed, f.seed);
  EXPECT_EQ(g.loss, f.loss);
  EXPECT_TRUE(g.warm);
  std::mt19937_64 rng(603);
  const Eigen::MatrixXd m = gaussian(4, 2, rng);
  EXPECT_EQ(io::matrix_from_json(io::to_json(m)), m);
  EXPECT_THROW(io::matrix_from_json(io::json::array()), io::IoError);
  EXPECT_THROW(io::matrix_from_json(io::json::parse("[[1,2],[3]]")), io::IoError);
}
