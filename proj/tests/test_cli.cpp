#include <gtest/gtest.h>
#include <sys/wait.h>

#include "bsgap/bsgap.hpp"

using namespace bsgap;

namespace {

const std::string src = BSGAP_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "bsgap_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(BSGAP_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path write_manifest(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "m.yaml";
  std::ofstream(p) << text;
  return p;
}

struct CsvData {
  std::vector<std::string> header;
  std::string columns;
  std::vector<std::vector<double>> rows;
};

CsvData read_csv(const fs::path& p) {
  CsvData out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      out.header.push_back(line.substr(2));
    } else if (out.columns.empty()) {
      out.columns = line;
    } else {
      std::vector<double> r;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        r.push_back(end != cell.c_str() && *end == '\0' ? v : std::nan(""));  // text cells become NaN
      }
      out.rows.push_back(r);
    }
  }
  return out;
}

const char* flat = R"(
name: flat
parameters: {d: 2, h: 0.3, eps: 0, tau: 1}
lattice: {cubic: 6.283185307179586}
symbol: {model: power, m: 2}
bands: {window: [0.8, 1.2]}
seeds: {xisearch: 3, certify: 4, measure: 5}
)";

const char* wavy = R"(
name: wavy
parameters: {d: 2, h: 0.3, eps: "h^1.5", tau: 1}
lattice: {cubic: 6.283185307179586}
symbol: {model: power, m: 2}
perturbation:
  cosine: {thetas: [[1, 0], [0, 1]], amplitude: 1}
seeds: {xisearch: 1, certify: 1, measure: 1}
)";

}  // namespace

TEST(Cli, BandsRowCountMatchesEnumeration) {
  const fs::path dir = scratch("rows");
  const fs::path m = write_manifest(dir, flat);
  ASSERT_EQ(run("bands --manifest " + m.string() + " --out " + dir.string() + " --grid 64x64", dir / "err"), 0)
      << slurp(dir / "err");
  const CsvData csv = read_csv(dir / "bands.csv");
  EXPECT_EQ(csv.columns, "xi1,xi2,band_index,value");
  // eps = 0: the fibre spectrum is {|h (gamma + k/64)|^2}, counted directly
  std::size_t expect = 0;
  const double h = 0.3;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      for (int a = -10; a <= 10; ++a)
        for (int b = -10; b <= 10; ++b) {
          const double x = h * (a + i / 64.0), y = h * (b + j / 64.0);
          const double v = x * x + y * y;
          if (v >= 0.8 && v <= 1.2) ++expect;
        }
  EXPECT_EQ(csv.rows.size(), expect);
  const json s = read_json(dir / "bands.json");
  EXPECT_EQ(s["rows"].get<std::size_t>(), expect);
  EXPECT_EQ(s["points"].get<int>(), 64 * 64);
}

TEST(Cli, RerunIsByteIdentical) {
  const fs::path dir = scratch("rerun");
  const fs::path m = write_manifest(dir, wavy);
  const std::string args = "bands --manifest " + m.string() + " --grid 12x12 --workers 2 --out ";
  ASSERT_EQ(run(args + (dir / "a").string(), dir / "err"), 0) << slurp(dir / "err");
  ASSERT_EQ(run(args + (dir / "b").string(), dir / "err"), 0) << slurp(dir / "err");
  const std::string a = slurp(dir / "a" / "bands.csv");
  EXPECT_GT(a.size(), 1000u);
  EXPECT_EQ(a, slurp(dir / "b" / "bands.csv"));
  EXPECT_EQ(slurp(dir / "a" / "bands.json"), slurp(dir / "b" / "bands.json"));
}

TEST(Cli, HeadersCarryHashSeedsVersion) {
  const fs::path dir = scratch("headers");
  const fs::path m = write_manifest(dir, flat);
  ASSERT_EQ(run("bands --manifest " + m.string() + " --out " + dir.string() + " --grid 4x4", dir / "err"), 0);
  const std::string hash = load_manifest(m.string()).hash;
  const CsvData csv = read_csv(dir / "bands.csv");
  ASSERT_GE(csv.header.size(), 3u);
  EXPECT_EQ(csv.header[0], std::string("tool: bsgap ") + tool_version);
  EXPECT_EQ(csv.header[1], "manifest_hash: " + hash);
  EXPECT_EQ(csv.header[2], "seeds: certify=4 measure=5 xisearch=3");
  const json j = read_json(dir / "bands.json");
  EXPECT_EQ(j.begin().key(), "_header");
  EXPECT_EQ(j["_header"]["manifest_hash"], hash);
  EXPECT_EQ(j["_header"]["eps"].get<double>(), 0.0);

  // run log: one JSON line per invocation, appended
  ASSERT_EQ(run("bands --manifest " + m.string() + " --out " + dir.string() + " --grid 4x4 --seed-override 9",
                dir / "err"),
            0);
  std::ifstream log(dir / "runs.log");
  std::vector<json> recs;
  for (std::string line; std::getline(log, line);) recs.push_back(json::parse(line));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1]["manifest_hash"], hash);
  EXPECT_EQ(recs[1]["outputs"], json({"bands.csv", "bands.json"}));
  EXPECT_EQ(read_csv(dir / "bands.csv").header[2], "seeds: certify=9 measure=9 xisearch=9");
}

TEST(Cli, MissingSymbolExitsTwoWithField) {
  const fs::path dir = scratch("nosym");
  std::string text = flat;
  text.erase(text.find("symbol:"), std::string("symbol: {model: power, m: 2}\n").size());
  const fs::path m = write_manifest(dir, text);
  EXPECT_EQ(run("bands --manifest " + m.string() + " --out " + dir.string(), dir / "err"), 2);
  const json e = json::parse(slurp(dir / "err"));
  EXPECT_EQ(e["error"]["field"], "symbol");
  EXPECT_EQ(e["error"]["code"], "validation");
  EXPECT_EQ(read_json(dir / "error.json"), e);
}

TEST(Cli, BadArgumentsExitTwo) {
  const fs::path dir = scratch("args");
  const fs::path m = write_manifest(dir, flat);
  EXPECT_EQ(run("bands --manifest " + m.string() + " --grid 4y4 --out " + dir.string(), dir / "err"), 2);
  EXPECT_EQ(json::parse(slurp(dir / "err"))["error"]["field"], "grid");
  EXPECT_EQ(run("wobble --manifest " + m.string(), dir / "err"), 2);
  EXPECT_EQ(run("bands", dir / "err"), 2);
  EXPECT_EQ(run("bands --manifest " + (dir / "absent.yaml").string(), dir / "err"), 2);
}

TEST(Cli, ZeroHalfWidthGivesEmptyReport) {
  const fs::path dir = scratch("hw0");
  const fs::path m = write_manifest(dir, wavy);
  ASSERT_EQ(run("gaps --manifest " + m.string() + " --half-width 0 --out " + dir.string(), dir / "err"), 0);
  const json g = read_json(dir / "gaps.json");
  EXPECT_TRUE(g["gaps"].empty());
  EXPECT_EQ(g["window"]["lo"], g["window"]["hi"]);
}

TEST(Cli, DimensionOneGapReport) {
  const fs::path dir = scratch("d1");
  ASSERT_EQ(run("gaps --manifest " + src + "/manifests/d1_gap.yaml --out " + dir.string(), dir / "err"), 0);
  const json g = read_json(dir / "gaps.json");
  const double eps = 0.01, tau = 0.01;
  int around_tau = 0;
  for (const auto& r : g["gaps"]) {
    const double lo = r["gap_start"], hi = r["gap_end"];
    if (lo <= tau && tau <= hi) {
      ++around_tau;
      EXPECT_NEAR(hi - lo, 2 * eps, 0.2 * eps);
    }
  }
  EXPECT_EQ(around_tau, 1);
  EXPECT_EQ(g["grid"], json({400}));
}

TEST(Cli, ResonanceMapAllNonresonant) {
  const fs::path dir = scratch("nonres");
  ASSERT_EQ(run("resonance-map --manifest " + src + "/manifests/d2_nonresonant.yaml --out " + dir.string(),
                dir / "err"),
            0)
      << slurp(dir / "err");
  const CsvData csv = read_csv(dir / "resonance_map.csv");
  EXPECT_EQ(csv.columns, "gamma1,gamma2,stratum,class_id,subspace_id");
  ASSERT_GT(csv.rows.size(), 50u);
  for (const auto& r : csv.rows) {
    EXPECT_EQ(r[2], 0);
    EXPECT_EQ(r[4], -1);
  }
  EXPECT_TRUE(read_json(dir / "resonance.json")["check"]["ok"].get<bool>());
}

TEST(Cli, GaugeCheckUnperturbedHasZeroResidual) {
  const fs::path dir = scratch("gauge0");
  std::string text = flat;
  text += "resonance: {xi_frac: [0.11, 0.37]}\n";
  const fs::path m = write_manifest(dir, text);
  ASSERT_EQ(run("gauge-check --manifest " + m.string() + " --out " + dir.string(), dir / "err"), 0)
      << slurp(dir / "err");
  const json g = read_json(dir / "gauge.json");
  for (const auto& r : g["residuals"]) EXPECT_EQ(r.get<double>(), 0.0);
  EXPECT_EQ(g["spectral_defect"].get<double>(), 0.0);
}

TEST(Cli, CountMatchesShellCount) {
  const fs::path dir = scratch("count");
  std::string text = flat;
  text += "count: {h: [0.2, 0.1, 0.05], w: \"0.5*h\", xi_frac: [0.25, 0.5]}\n";
  const fs::path m = write_manifest(dir, text);
  ASSERT_EQ(run("count --manifest " + m.string() + " --out " + dir.string(), dir / "err"), 0) << slurp(dir / "err");
  const CsvData csv = read_csv(dir / "count.csv");
  EXPECT_EQ(csv.columns, "h,w,count");
  ASSERT_EQ(csv.rows.size(), 3u);
  for (const auto& r : csv.rows) {
    const double h = r[0], w = r[1];
    EXPECT_DOUBLE_EQ(w, 0.5 * h);
    // brute force over a box of labels
    const int R = static_cast<int>(std::ceil(2.0 / h)) + 2;
    std::size_t n = 0;
    for (int a = -R; a <= R; ++a)
      for (int b = -R; b <= R; ++b) {
        const double x = h * (a + 0.25), y = h * (b + 0.5);
        if (std::abs(x * x + y * y - 1.0) <= w) ++n;
      }
    EXPECT_EQ(static_cast<std::size_t>(r[2]), n) << "h " << h;
  }
}

TEST(Cli, FindXiCertifiesAndNegativeControlFails) {
  const fs::path dir = scratch("findxi");
  std::string text = wavy;
  text.replace(text.find("h: 0.3"), 6, "h: 0.2");
  const fs::path m = write_manifest(dir, text);
  ASSERT_EQ(run("find-xi --manifest " + m.string() + " --out " + (dir / "pos").string(), dir / "err"), 0)
      << slurp(dir / "err");
  const json pos = read_json(dir / "pos" / "xi_search.json");
  EXPECT_TRUE(pos["result"]["success"].get<bool>());
  EXPECT_TRUE(pos["certification"]["pass"].get<bool>());
  EXPECT_LE(std::abs(pos["certification"]["lambda"].get<double>() - 1.0), 1e-9);
  EXPECT_FALSE(read_csv(dir / "pos" / "xi_steps.csv").rows.empty());

  text.insert(text.find("seeds:"), "xisearch: {certify_scale: 10}\n");
  const fs::path neg = write_manifest(dir, text);
  EXPECT_EQ(run("find-xi --manifest " + neg.string() + " --out " + (dir / "neg").string(), dir / "err"), 3);
  const json n = read_json(dir / "neg" / "xi_search.json");
  EXPECT_FALSE(n["certification"]["pass"].get<bool>());
  EXPECT_EQ(n["certification"]["witness"].size(), 2u);
  EXPECT_EQ(n["result"]["xi_frac_star"], pos["result"]["xi_frac_star"]);
}

TEST(Cli, FindXiUnperturbedCertifies) {
  const fs::path dir = scratch("findxi0");
  std::string text = flat;
  text.replace(text.find("h: 0.3"), 6, "h: 0.2");
  const fs::path m = write_manifest(dir, text);
  EXPECT_EQ(run("find-xi --manifest " + m.string() + " --out " + dir.string(), dir / "err"), 0) << slurp(dir / "err");
  EXPECT_TRUE(read_json(dir / "xi_search.json")["certification"]["pass"].get<bool>());
}
