#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("embedflow_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// runs the binary inside `dir`, capturing exit code and both streams
CliResult run_in(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const fs::path out = dir / "_stdout.txt";
  const fs::path err = dir / "_stderr.txt";
  std::string cmd = "cd '" + dir.string() + "' && ";
  if (!env.empty()) cmd += env + " ";
  cmd += "'" EMBEDFLOW_BIN "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int rc = std::system(cmd.c_str());
  CliResult res;
  if (rc != -1 && WIFEXITED(rc)) res.code = WEXITSTATUS(rc);
  res.out = slurp(out);
  res.err = slurp(err);
  return res;
}

json parse_out(const CliResult& r) {
  REQUIRE(!r.out.empty());
  return json::parse(r.out);
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("help lists every subcommand and exits cleanly") {
  const fs::path dir = fresh_dir("help");
  const CliResult r = run_in(dir, "--help");
  CHECK(r.code == 0);
  for (const char* name : {"sample", "stationary", "flow", "eigen", "escape", "train-lnn",
                           "train-relu", "stability", "bound", "sweep", "fit-beta", "portrait"})
    CHECK(r.out.find(name) != std::string::npos);
  CHECK(r.out.find("--seed") != std::string::npos);
  CHECK(r.out.find("--out") != std::string::npos);
}

TEST_CASE("usage mistakes exit with code 1 and a machine-readable error") {
  const fs::path dir = fresh_dir("usage");
  const CliResult unknown = run_in(dir, "frobnicate");
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("\"kind\":\"usage\"") != std::string::npos);

  const CliResult flag = run_in(dir, "sample --bogus 3");
  CHECK(flag.code == 1);
  CHECK(flag.err.find("\"kind\":\"usage\"") != std::string::npos);

  const CliResult none = run_in(dir, "");
  CHECK(none.code == 1);
}

TEST_CASE("closed-form pilot recovers the near-linear slope") {
  const fs::path dir = fresh_dir("pilot");
  const CliResult r = run_in(
      dir, "--json --seed 6 stationary --dx 1 --dy 1 --sigma 0.1 --n 10000 "
           "--g 'x1 + 0.1*sin(pi*x1)'");
  REQUIRE(r.code == 0);
  const json j = parse_out(r);
  CHECK(j.at("config").at("seed") == 6);
  const double wx = j.at("result").at("wx_star")[0].get<double>();
  const double wy = j.at("result").at("wy_star")[0].get<double>();
  CHECK(wx > 0.95);
  CHECK(wx < 1.05);
  CHECK(std::abs(wy) <= 0.1);
  CHECK(j.at("result").at("loss").get<double>() >= 0.0);
  CHECK(j.at("result").at("alpha_star").size() == 1);
}

TEST_CASE("degenerate noise level is a numeric failure, not a crash") {
  const fs::path dir = fresh_dir("sigma0");
  const CliResult r = run_in(dir, "--json stationary --dx 1 --dy 1 --sigma 0 --n 100");
  CHECK(r.code == 2);
  CHECK(r.err.find("\"kind\":\"numeric\"") != std::string::npos);
  CHECK(r.err.find("\"code\":2") != std::string::npos);
}

TEST_CASE("identical seeds give identical stdout and files") {
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  const std::string args =
      "--json --seed 9 sample --dx 1 --dy 1 --sigma 0.5 --n 50 --format csv --name d.csv";
  const CliResult ra = run_in(a, args);
  const CliResult rb = run_in(b, args);
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(ra.out == rb.out);
  const std::string csv = slurp(a / "d.csv");
  CHECK(csv == slurp(b / "d.csv"));
  CHECK(csv.rfind("x_1,y_1,g", 0) == 0);
  CHECK(line_count(csv) == 51);

  // the environment variable is an alias for --seed
  const fs::path c = fresh_dir("det_c");
  const CliResult rc = run_in(
      c, "--json sample --dx 1 --dy 1 --sigma 0.5 --n 50 --format csv --name d.csv",
      "EMBEDFLOW_SEED=9");
  REQUIRE(rc.code == 0);
  CHECK(slurp(c / "d.csv") == csv);

  const fs::path d = fresh_dir("det_d");
  const CliResult rd = run_in(
      d, "--json --seed 10 sample --dx 1 --dy 1 --sigma 0.5 --n 50 --format csv --name d.csv");
  REQUIRE(rd.code == 0);
  CHECK(slurp(d / "d.csv") != csv);
}

TEST_CASE("unwritable output directories exit with the i/o code") {
  const fs::path dir = fresh_dir("io");
  {
    std::ofstream blocker(dir / "wall");
    blocker << "x";
  }
  const CliResult r =
      run_in(dir, "--json --out wall/sub sample --dx 1 --dy 1 --n 10");
  CHECK(r.code == 3);
  CHECK(r.err.find("\"kind\":\"io\"") != std::string::npos);
}

TEST_CASE("config file and flag spellings of a sweep agree byte for byte") {
  const fs::path dir = fresh_dir("sweep");
  {
    json cfg;
    cfg["recipe"] = "phase_portrait";
    cfg["grid"] = {{"sigma", {0.25}}, {"depth", {3}},     {"n", {400}},
                   {"nx", {3}},       {"ny", {3}},        {"t_short", {0.5}}};
    cfg["seeds"] = {11};
    cfg["output_dir"] = (dir / "runout").string();
    std::ofstream out(dir / "cfg.json");
    out << cfg.dump(2);
  }
  const CliResult rc = run_in(dir, "--json sweep --config cfg.json");
  REQUIRE(rc.code == 0);
  const json jc = parse_out(rc);
  CHECK(jc.at("result").at("scalars").at("segments") == 9.0);
  CHECK(fs::exists(dir / "runout" / "portrait.csv"));
  CHECK(fs::exists(dir / "runout" / "manifest.json"));

  const CliResult rf = run_in(
      dir, "--json --seed 11 --out flagout portrait --nx 3 --ny 3 --n 400 --t-short 0.5 "
           "--depth 3");
  REQUIRE(rf.code == 0);
  CHECK(parse_out(rf).at("result").at("scalars").at("segments") == 9.0);
  CHECK(slurp(dir / "flagout" / "portrait.csv") == slurp(dir / "runout" / "portrait.csv"));
  CHECK(slurp(dir / "flagout" / "manifest.json") == slurp(dir / "runout" / "manifest.json"));

  const CliResult bad = run_in(dir, "--json sweep --recipe phase_portrait --grid nx");
  CHECK(bad.code == 1);
}

TEST_CASE("scaling exponents are fitted straight from a sweep file") {
  const fs::path dir = fresh_dir("beta");
  {
    std::ofstream out(dir / "sweep.csv");
    out << "depth,dy,sigma,n,seed,metric\n";
    int seed = 1;
    for (int depth : {2, 6})
      for (double n : {512.0, 1024.0, 2048.0, 4096.0})
        out << depth << ",1,0.5," << static_cast<int>(n) << ',' << seed++ << ','
            << (depth == 2 ? 3.7 : 1.85) / std::pow(n, 0.4) << '\n';
  }
  const CliResult r =
      run_in(dir, "--json fit-beta --csv sweep.csv --sigma 0.5 --name beta.csv");
  REQUIRE(r.code == 0);
  const json j = parse_out(r);
  REQUIRE(j.at("result").at("cells").size() == 2);
  for (const auto& cell : j.at("result").at("cells")) {
    CHECK(std::abs(cell.at("beta").get<double>() - 0.4) < 1e-6);
    CHECK(cell.at("r_squared").get<double>() > 0.999);
  }
  const std::string table = slurp(dir / "beta.csv");
  CHECK(table.rfind("depth,dy,beta,r_squared", 0) == 0);
  CHECK(line_count(table) == 3);

  {
    std::ofstream out(dir / "wrong.csv");
    out << "a,b,c\n1,2,3\n";
  }
  CHECK(run_in(dir, "fit-beta --csv wrong.csv").code == 1);
  CHECK(run_in(dir, "fit-beta --csv missing.csv").code == 3);
}

TEST_CASE("trained relu weights feed the stability and bound commands") {
  const fs::path dir = fresh_dir("chain");
  const CliResult train = run_in(
      dir, "--json --seed 4 --out work train-relu --dx 1 --dy 1 --sigma 0 --n 400 "
           "--hidden 12 --epochs 10 --batch 40 --save net.json");
  REQUIRE(train.code == 0);
  const json jt = parse_out(train);
  CHECK(std::isfinite(jt.at("result").at("final_loss").get<double>()));
  CHECK(jt.at("result").at("final_w1y_norm").get<double>() > 0.0);
  const std::string hist = slurp(dir / "work" / "relu_history.csv");
  CHECK(hist.rfind("epoch,loss,w1y_norm", 0) == 0);
  CHECK(line_count(hist) == 12);
  REQUIRE(fs::exists(dir / "work" / "net.json"));

  const CliResult stab = run_in(
      dir, "--json --seed 4 --threads 2 stability --params work/net.json --gamma 0.5 --m 2000");
  REQUIRE(stab.code == 0);
  const json js = parse_out(stab);
  CHECK(js.at("result").at("estimate").get<double>() > 0.0);
  CHECK(js.at("result").at("samples") == 2000);

  const CliResult bound = run_in(
      dir, "--json --seed 4 bound --params work/net.json --y 0.2 --nu 0.1");
  REQUIRE(bound.code == 0);
  const json jb = parse_out(bound);
  CHECK(jb.at("result").at("bound_deep").get<double>() > 0.0);
  CHECK(jb.at("result").at("bound_shallow").get<double>() ==
        jb.at("result").at("bound_deep").get<double>());
  CHECK(jb.at("result").at("mc_estimate").get<double>() >= 0.0);
  CHECK(jb.at("result").at("recursion_ok").get<bool>());
  CHECK(jb.at("result").at("corollary").at("bound").get<double>() > 0.0);

  CHECK(run_in(dir, "bound --params work/net.json --y 0.1,0.2").code == 1);
  CHECK(run_in(dir, "stability --params work/missing.json").code == 3);
}

TEST_CASE("flow runs label the endpoint and write the trajectory") {
  const fs::path dir = fresh_dir("flow");
  const CliResult r = run_in(
      dir, "--json --seed 3 --out fdir flow --dx 1 --dy 1 --sigma 0.3 --n 2000 --depth 3 "
           "--t-end 20 --w0 1.5,0.8");
  REQUIRE(r.code == 0);
  const json j = parse_out(r);
  CHECK(j.at("result").at("status") == "completed");
  CHECK(j.at("result").at("final_state").size() == 2);
  CHECK(j.at("result").at("final_region").is_string());
  const std::string traj = slurp(dir / "fdir" / "trajectory.csv");
  CHECK(traj.rfind("t,w_1,w_2,region_label,ellipsoid_value,hyperplane_value", 0) == 0);
  CHECK(line_count(traj) > 2);

  CHECK(run_in(dir, "flow --dx 1 --dy 1 --w0 1.5").code == 1);
}

TEST_CASE("eigen scan reports the gap fit and the flat-direction count") {
  const fs::path dir = fresh_dir("eigen");
  const CliResult r = run_in(
      dir, "--json --seed 2 --out edir eigen --dx 1 --dy 1 --n 4000 --depth 3 "
           "--sigmas 0,0.5,0.25");
  REQUIRE(r.code == 0);
  const json j = parse_out(r);
  CHECK(j.at("result").at("rows") == 3);
  CHECK(j.at("result").at("zero_count_at_sigma0") == 1);
  CHECK(j.at("result").contains("slope"));
  const std::string csv = slurp(dir / "edir" / "eigen_gap.csv");
  CHECK(csv.rfind("sigma,seed,min_abs,zero_count", 0) == 0);
  CHECK(line_count(csv) == 4);
}

TEST_CASE("linear stack training reports the closed-form reference") {
  const fs::path dir = fresh_dir("lnn");
  const CliResult r = run_in(
      dir, "--json --seed 5 --out ldir train-lnn --dx 1 --dy 1 --sigma 0.3 --n 500 --depth 3 "
           "--width 4 --epochs 50 --lr 1e-3 --init balanced --norm0 0.5");
  REQUIRE(r.code == 0);
  const json j = parse_out(r);
  CHECK(j.at("result").at("w_star").size() == 2);
  CHECK(j.at("result").at("end_to_end").size() == 2);
  CHECK(std::isfinite(j.at("result").at("final_loss").get<double>()));
  const std::string hist = slurp(dir / "ldir" / "lnn_history.csv");
  CHECK(hist.rfind("epoch,loss,wx_err,wy_err,w_norm", 0) == 0);
  CHECK(line_count(hist) == 52);

  const CliResult zero = run_in(
      dir, "--json --seed 5 --out zdir train-lnn --dx 1 --dy 1 --sigma 0.3 --n 200 --depth 2 "
           "--width 3 --epochs 0");
  REQUIRE(zero.code == 0);
  const json jz = parse_out(zero);
  CHECK(!jz.at("result").contains("final_loss"));
  CHECK(line_count(slurp(dir / "zdir" / "lnn_history.csv")) == 1);
}

TEST_CASE("escape timing reports the certified floor") {
  const fs::path dir = fresh_dir("escape");
  const CliResult r = run_in(
      dir, "--json --seed 7 escape --dx 1 --dy 1 --sigma 0.25 --n 1000 --depth 2 "
           "--epsilon 0.01 --t-budget 1e5 --direction 1,1");
  REQUIRE(r.code == 0);
  const json j = parse_out(r);
  CHECK(j.at("result").at("reached").get<bool>());
  const double floor = j.at("result").at("floor").get<double>();
  const double t = j.at("result").at("escape_time").get<double>();
  CHECK(floor > 0.0);
  CHECK(t >= floor);
}
