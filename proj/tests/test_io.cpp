#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tinybox/harness.hpp"
#include "tinybox/io.hpp"

using namespace tinybox;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tinybox_io_test";
  fs::create_directories(dir);
  return dir / name;
}

std::size_t malformed_line(std::string_view text) {
  try {
    parse_visdrone_records(text);
  } catch (const MalformedLineError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedLine);
    return e.line_no();
  }
  return 0;
}

}  // namespace

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(-2.5e-7), "-2.5e-07");
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-8, 8));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(VisDrone, HandConvertedExample) {
  const auto g = parse_visdrone_annotations("100,200,50,40,1,4,0,0\n", 1000, 800);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].class_id, 3);
  EXPECT_FALSE(g[0].ignored);
  EXPECT_DOUBLE_EQ(g[0].box.cx, 0.125);
  EXPECT_DOUBLE_EQ(g[0].box.cy, 0.275);
  EXPECT_DOUBLE_EQ(g[0].box.w, 0.05);
  EXPECT_DOUBLE_EQ(g[0].box.h, 0.05);
}

TEST(VisDrone, IgnoredCategories) {
  const auto g = parse_visdrone_annotations("1,1,5,5,0,0,0,0\n1,1,5,5,1,11,0,0\n1,1,5,5,1,10,0,0\n", 100, 100);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_TRUE(g[0].ignored);
  EXPECT_EQ(g[0].class_id, -1);
  EXPECT_TRUE(g[1].ignored);
  EXPECT_FALSE(g[2].ignored);
  EXPECT_EQ(g[2].class_id, 9);
}

TEST(VisDrone, MalformedLinesReportLineNumber) {
  EXPECT_EQ(malformed_line("a,b,c"), 1u);
  EXPECT_EQ(malformed_line("1,2,3,4,1,1,0,0\n1,2,3,4,1\n"), 2u);
  EXPECT_EQ(malformed_line("1,2,3,4,1,1,0,0\n\n1,2,3,4,1,12,0,0\n"), 3u);
  EXPECT_EQ(malformed_line("1,2,3,4,1,1,0,0,9,9\n"), 1u);
  EXPECT_EQ(malformed_line("1,2,3.5,4,1,1\n"), 1u);
  EXPECT_EQ(malformed_line("1,2,,4,1,1\n"), 1u);
  try {
    parse_visdrone_records("x,1,1,1,1,1\n");
  } catch (const MalformedLineError& e) {
    EXPECT_EQ(e.content(), "x,1,1,1,1,1");
  }
}

TEST(VisDrone, NonPositiveSize) {
  try {
    parse_visdrone_records("1,2,0,4,1,1,0,0\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonPositiveSize);
  }
}

TEST(VisDrone, ToleratesCrlfTrailingCommaAndShortLines) {
  const auto r = parse_visdrone_records("684,8,273,116,0,0,0,0,\r\n406,119,265,70,1,4\r\n");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].w, 273);
  EXPECT_EQ(r[1].field_count, 6);
  EXPECT_EQ(r[1].truncation, 0);
}

TEST(VisDrone, RecordRoundTrip) {
  const std::string text = "684,8,273,116,0,0,0,0\n406,119,265,70,1,4,0,0\n255,22,119,128,1,5,1,2\n7,9,3,3,1,2\n";
  const auto r = parse_visdrone_records(text);
  EXPECT_EQ(format_visdrone_records(r), text);
  EXPECT_EQ(parse_visdrone_records(format_visdrone_records(r)), r);
}

TEST(VisDrone, GroundTruthRoundTrip) {
  const std::string text = "100,200,50,40,1,4,0,0\n3,4,17,9,1,1,0,0\n10,10,30,30,0,0,0,0\n";
  const auto g = parse_visdrone_annotations(text, 1000, 800);
  std::vector<VisDroneRecord> back;
  for (const auto& o : g) back.push_back(ground_truth_to_visdrone(o, 1000, 800));
  const auto orig = parse_visdrone_records(text);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_EQ(back[i].x, orig[i].x);
    EXPECT_EQ(back[i].y, orig[i].y);
    EXPECT_EQ(back[i].w, orig[i].w);
    EXPECT_EQ(back[i].h, orig[i].h);
    EXPECT_EQ(back[i].category == 0, orig[i].category == 0);
  }
  EXPECT_EQ(parse_visdrone_annotations(format_visdrone_records(back), 1000, 800), g);
}

TEST(Jsonl, DetectionRoundTrip) {
  SceneSpec spec;
  spec.n_objects = 50;
  const Scene s = gen_scene_with_detections(spec, DetectionNoise{});
  const std::string text = write_detections_jsonl(s.detections);
  EXPECT_EQ(read_detections_jsonl(text), s.detections);
  EXPECT_EQ(write_detections_jsonl(read_detections_jsonl(text)), text);
  EXPECT_EQ(read_ground_truth_jsonl(write_ground_truth_jsonl(s.objects)), s.objects);
}

TEST(Jsonl, FieldOrderAndIgnoredFlag) {
  const std::vector<GroundTruth> g{{"img", -1, BBox(0.5, 0.25, 0.125, 0.5), true}};
  EXPECT_EQ(write_ground_truth_jsonl(g),
            "{\"image_id\":\"img\",\"class_id\":-1,\"cx\":0.5,\"cy\":0.25,\"w\":0.125,\"h\":0.5,\"ignored\":true}\n");
  const std::vector<Detection> d{{"7", 2, BBox(0.5, 0.5, 0.1, 0.2), 0.75}};
  EXPECT_EQ(write_detections_jsonl(d),
            "{\"image_id\":\"7\",\"class_id\":2,\"cx\":0.5,\"cy\":0.5,\"w\":0.1,\"h\":0.2,\"score\":0.75}\n");
}

TEST(Jsonl, IntegerImageIdsAndBlankLines) {
  const auto d = read_detections_jsonl("{\"image_id\":3,\"class_id\":0,\"cx\":1,\"cy\":1,\"w\":1,\"h\":1,\"score\":0.5}\n\n");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].image_id, "3");
}

TEST(Jsonl, MalformedLines) {
  const std::string good = "{\"image_id\":\"a\",\"class_id\":0,\"cx\":1,\"cy\":1,\"w\":1,\"h\":1,\"score\":0.5}\n";
  for (const std::string bad : {std::string("{not json}"), std::string("{\"image_id\":\"a\"}"),
                                good.substr(0, good.size() - 1).replace(good.find("\"w\":1"), 5, "\"w\":0"),
                                good.substr(0, good.size() - 1).replace(good.find("0.5"), 3, "1.5")}) {
    try {
      read_detections_jsonl(good + bad + "\n");
      FAIL() << bad;
    } catch (const MalformedLineError& e) {
      EXPECT_EQ(e.line_no(), 2u) << bad;
    }
  }
}

TEST(Tensor, ManifestBlobRoundTrip) {
  const FilterBank fb = random_gaussian_bank({4, 3, 3, 3}, 5);
  const fs::path manifest = scratch("bank.json");
  write_tensor(manifest, fb);
  EXPECT_TRUE(fs::exists(blob_path_for(manifest)));
  EXPECT_EQ(fs::file_size(blob_path_for(manifest)), 4u * fb.size());
  const auto j = nlohmann::json::parse(read_text_file(manifest));
  EXPECT_EQ(j.at("dtype"), "f32le");
  EXPECT_EQ(j.at("shape"), nlohmann::json({4, 3, 3, 3}));
  const FilterBank back = read_tensor(manifest);
  ASSERT_EQ(back.shape(), fb.shape());
  for (std::size_t i = 0; i < fb.size(); ++i)
    EXPECT_EQ(back.storage()[i], static_cast<double>(static_cast<float>(fb.storage()[i])));
  // f32 values survive a second trip bit-exactly
  write_tensor(manifest, back);
  EXPECT_EQ(read_tensor(manifest), back);
}

TEST(Tensor, LittleEndianLayout) {
  const fs::path manifest = scratch("one.json");
  write_tensor(manifest, Tensor4<double>({1, 1, 1, 2}, std::vector<double>{1.0, -2.0}));
  const std::string blob = read_text_file(blob_path_for(manifest));
  ASSERT_EQ(blob.size(), 8u);
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000
  EXPECT_EQ(static_cast<unsigned char>(blob[3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(blob[2]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(blob[7]), 0xc0);
}

TEST(Tensor, Errors) {
  const fs::path manifest = scratch("short.json");
  write_tensor(manifest, Tensor4<double>({1, 1, 2, 2}, 1.0));
  write_text_file(blob_path_for(manifest), "abc");
  try {
    read_tensor(manifest);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  try {
    read_tensor(scratch("missing.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoFailure);
  }
}
