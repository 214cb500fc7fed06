#include "htsk/calibration.hpp"
#include "htsk/cli.hpp"
#include "htsk/json_io.hpp"
#include "htsk/report.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace htsk;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "htsk_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

}  // namespace

TEST(Csv, FieldQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(csv_field(""), "");
}

TEST(Csv, WriterUsesCrlfAndChecksWidth) {
  CsvWriter w({"x", "y,z"});
  w.row(std::vector<double>{0.5, 1.0 / 3.0});
  EXPECT_EQ(w.str(), "x,\"y,z\"\r\n0.5,0.33333333333333331\r\n");
  EXPECT_THROW(w.row(std::vector<std::string>{"only one"}), std::invalid_argument);
}

TEST(Csv, TailCurveHeader) {
  TailCurve c;
  c.thresholds = {1.0};
  c.survival = {0.25};
  c.ci_low = {0.2};
  c.ci_high = {0.3};
  EXPECT_EQ(tail_curve_csv(c).substr(0, 36), "threshold,survival,ci_low,ci_high\r\n1");
  EXPECT_EQ(tail_curve_csv(c, {0.5}).substr(0, 44), "threshold,survival,ci_low,ci_high,envelope\r\n");
}

TEST(Json, SeventeenDigitsSortedKeys) {
  const json j{{"zeta", 0.1}, {"alpha", 1}, {"mid", {{"b", true}, {"a", nullptr}}}, {"list", {1.5, 2}}};
  EXPECT_EQ(dump_json(j, -1), R"({"alpha":1,"list":[1.5,2],"mid":{"a":null,"b":true},"zeta":0.10000000000000001})");
  EXPECT_EQ(dump_json(json{{"k", 2.0}}), "{\n  \"k\": 2\n}\n");
  EXPECT_EQ(dump_json(json::object(), -1), "{}");
  EXPECT_EQ(dump_json(json(std::nan("")), -1), "null");
}

TEST(Json, DoubleRoundTripIsExact) {
  for (double x : {0.1, 1.0 / 3.0, 6.02214076e23, -2.2250738585072014e-308, 5e-324}) {
    const json back = json::parse(dump_json(json{{"x", x}}, -1));
    EXPECT_EQ(back.at("x").get<double>(), x);
  }
}

TEST(Json, LawRoundTrip) {
  for (const auto& law : {TailLaw::symmetric_weibull(0.5, 2.0), TailLaw::gaussian(1.5), TailLaw::rademacher(),
                          TailLaw::uniform(3.0), TailLaw::custom_empirical({1.0, 2.5}, 1.0, 0.5)}) {
    const auto back = tail_law_from_json(json::parse(dump_json(to_json(law))));
    EXPECT_EQ(back.family(), law.family());
    EXPECT_EQ(back.alpha(), law.alpha());
    EXPECT_EQ(back.scale(), law.scale());
    EXPECT_EQ(std::vector<double>(back.support().begin(), back.support().end()),
              std::vector<double>(law.support().begin(), law.support().end()));
  }
  EXPECT_THROW(tail_law_from_json(json{{"family", "gaussian"}, {"colour", 1}}), SchemaError);
  EXPECT_THROW(tail_law_from_json(json{{"family", "gaussian"}, {"samples", {1.0}}}), SchemaError);
  EXPECT_THROW(tail_law_from_json(json{{"family", "gaussian"}, {"scale", "big"}}), SchemaError);
}

TEST(Json, SetRoundTrip) {
  Matrix pts(2, 3);
  pts << 0, 1, 0.1, 0, 0, 2;
  for (const auto& t : {SetDescriptor::finite(pts), SetDescriptor::unit_sphere(5), SetDescriptor::sparse_sphere(9, 2),
                        SetDescriptor::ball(3, 0.5)}) {
    const auto back = set_from_json(json::parse(dump_json(to_json(t))));
    EXPECT_EQ(back.kind, t.kind);
    EXPECT_EQ(back.n, t.n);
    EXPECT_EQ(back.s, t.s);
    EXPECT_EQ(back.r, t.r);
    EXPECT_EQ(back.points, t.points);
  }
  EXPECT_THROW(set_from_json(json{{"kind", "sphere"}, {"n", 3}, {"extra", 1}}), SchemaError);
  EXPECT_THROW(set_from_json(json{{"kind", "finite"}, {"points", {{1.0, 2.0}, {1.0}}}}), SchemaError);
  EXPECT_THROW(set_from_json(json{{"kind", "finite"}, {"n", 3}, {"points", {{1.0, 2.0}}}}), SchemaError);
}

TEST(CalibrationFile, ShippedFileLoads) {
  const auto c = load_calibration();
  EXPECT_EQ(c.version, 1);
  EXPECT_EQ(c.seed, kCalibrationSeed);
  for (const char* name : {"hanson_wright", "bx_norm", "lemma41", "increment", "column_expectation", "jl_row", "jl_column",
                           "normalization", "rip_row", "rip_column"})
    for (double a : {1.0, 2.0}) EXPECT_GT(c.get(name, a), 0.0) << name << " " << a;
  EXPECT_THROW(c.get("hanson_wright", 0.7), std::invalid_argument);
}

TEST(CalibrationFile, EnvironmentOverridesPath) {
  Calibration c;
  c.set("thing", 1.0, 0.25);
  const auto p = scratch("cal_env.json");
  save_calibration(c, p.string());
  ASSERT_EQ(setenv("HTSK_CALIBRATION", p.c_str(), 1), 0);
  EXPECT_EQ(default_calibration_path(), p.string());
  EXPECT_EQ(load_calibration().get("thing", 1.0), 0.25);
  unsetenv("HTSK_CALIBRATION");
  EXPECT_NE(default_calibration_path(), p.string());
}

TEST(CalibrationFile, Errors) {
  EXPECT_THROW(load_calibration("/nonexistent/cal.json"), IoError);
  const auto bad_version = scratch("cal_v2.json");
  write(bad_version, R"({"version":2,"seed":1,"protocol":"x","constants":{}})");
  EXPECT_THROW(load_calibration(bad_version.string()), SchemaError);
  const auto not_json = scratch("cal_bad.json");
  write(not_json, "{ nope");
  EXPECT_THROW(load_calibration(not_json.string()), SchemaError);
  const auto extra = scratch("cal_extra.json");
  write(extra, R"({"version":1,"seed":1,"protocol":"x","constants":{},"more":0})");
  EXPECT_THROW(load_calibration(extra.string()), SchemaError);
}

TEST(CalibrationFile, SaveLoadRoundTrip) {
  Calibration c;
  c.seed = 77;
  c.set("a", 0.5, 1.0 / 3.0);
  c.set("a", 2.0, 7.0);
  const auto p = scratch("cal_rt.json");
  save_calibration(c, p.string());
  const auto back = load_calibration(p.string());
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.constants, c.constants);
}

TEST(CalibrationFile, FreezeRule) {
  EXPECT_EQ(quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0.0, 10.0}, 0.99), 9.9);
  std::vector<double> v;
  for (int i = 0; i <= 100; ++i) v.push_back(i);
  EXPECT_DOUBLE_EQ(freeze_constant(v), 1.5 * 99.0);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Hash, Fnv1aReferenceVectors) {
  EXPECT_EQ(cli::fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(cli::fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(cli::fnv1a_hex("foobar"), "85944171f73967e8");
  EXPECT_EQ(cli::config_hash(json{{"b", 1}, {"a", 2}}), cli::fnv1a_hex(R"({"a":2,"b":1})"));
}

TEST(Svg, ContainsCurveAndEscapesTitle) {
  TailCurve c;
  c.trials = 1000;
  c.thresholds = {0.5, 1.0, 1.5, 2.0, 2.5};
  c.survival = {0.5, 0.3, 0.1, 0.03, 0.0};
  c.ci_low = c.ci_high = c.survival;
  c.fit = fit_tail_exponent(c);
  const auto svg = tail_curve_svg(c, 1.0, "a < b & c");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("a _ b _ c"), std::string::npos);
  EXPECT_NE(svg.find("steelblue"), std::string::npos);
  EXPECT_NE(svg.find("stroke-dasharray"), std::string::npos);
  EXPECT_EQ(svg.substr(svg.size() - 7), "</svg>\n");
  TailCurve empty;
  EXPECT_NE(tail_curve_svg(empty, 2.0, "").find("</svg>"), std::string::npos);
}
