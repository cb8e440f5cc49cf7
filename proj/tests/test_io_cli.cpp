#include <charconv>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include "mfcov/covsmooth.hpp"
#include "mfcov/io.hpp"
#include "mfcov/predict.hpp"
#include "mfcov/simulation.hpp"
#include "support/oracles.hpp"

using namespace mfcov;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    fs::path dir = fs::temp_directory_path() /
                   ("mfcov_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(MFCOV_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, io::read_text(out), io::read_text(err)};
}

std::vector<std::vector<std::string>> read_rows(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        rows.push_back(fields);
    }
    return rows;
}

double parse(const std::string& s) {
    double v = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), v);
    return v;
}

std::string expect_throw_message(const std::string& csv) {
    std::istringstream in(csv);
    try {
        io::read_csv(in);
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

// Small three-response dataset on [0,1] where response "c" is missing for odd subjects.
SparseFunctionalDataset toy(int n, std::uint64_t seed, bool drop) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    SparseFunctionalDataset d({"a", "b", "c"});
    for (int i = 0; i < n; ++i) {
        const double xi = z(rng);
        for (int k = 0; k < 3; ++k) {
            if (drop && k == 2 && i % 2 == 1) continue;
            for (int j = 0; j < 6; ++j) {
                const double t = u(rng);
                d.add("s" + std::to_string(i), k, t, std::sin(3 * t + k) + xi * (1 + t) + 0.2 * z(rng));
            }
        }
    }
    return d;
}

} // namespace

TEST(Csv, ParsesAndPreservesOrder) {
    std::istringstream in("subject,response,time,value\nA,y,0.5,1\n\nA,x,0.1,2\nB,y,0.25,-3e-1\nA,y,0.2,4\n");
    const auto d = io::read_csv(in);
    ASSERT_EQ(d.response_labels(), (std::vector<std::string>{"y", "x"}));
    ASSERT_EQ(d.n_subjects(), 2);
    EXPECT_EQ(d.subject(0).times[0], (std::vector<double>{0.5, 0.2}));
    EXPECT_EQ(d.subject(0).values[0], (std::vector<double>{1.0, 4.0}));
    EXPECT_EQ(d.subject(1).values[0], (std::vector<double>{-0.3}));

    std::ostringstream out;
    io::write_csv(out, d);
    std::istringstream back(out.str());
    const auto e = io::read_csv(back);
    EXPECT_EQ(e.subject(0).times, d.subject(0).times);
    EXPECT_EQ(e.subject(1).values, d.subject(1).values);
}

TEST(Csv, ErrorsCarryLineNumbers) {
    EXPECT_NE(expect_throw_message("id,response,time,value\n").find("line 1"), std::string::npos);
    EXPECT_NE(expect_throw_message("subject,response,time,value\nA,y,0.5,1\nA,y,abc,1\n").find("line 3"),
              std::string::npos);
    EXPECT_NE(expect_throw_message("subject,response,time,value\nA,y,0.5\n").find("line 2"), std::string::npos);
    EXPECT_NE(expect_throw_message("subject,response,time,value\nA,y,0.5,1\nA,y,nan,1\n").find("line 3"),
              std::string::npos);
    EXPECT_NE(expect_throw_message("subject,response,time,value\nA,y,0.5,inf\n").find("line 2"),
              std::string::npos);

    std::istringstream in("subject,response,time,value\nA,y,0.5,1\nA,z,0.5,1\n");
    try {
        io::read_csv(in, std::vector<std::string>{"y"});
        FAIL() << "unknown label accepted";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(Serialization, Base64RoundTripIsExact) {
    std::vector<double> v{0.0, -0.0, 1.0 / 3.0, 1e-308, 5e-324, -1e300, std::nextafter(1.0, 2.0)};
    for (std::size_t n = 0; n <= v.size(); ++n) {
        const auto back = io::decode_doubles(io::encode_doubles(v.data(), n));
        ASSERT_EQ(back.size(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(std::memcmp(&back[i], &v[i], sizeof(double)), 0);
    }
    EXPECT_EQ(io::format_double(0.1), "0.1");
    EXPECT_EQ(parse(io::format_double(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Cli, ToyModelRoundTripsByteIdentical) {
    const fs::path dir = scratch();
    io::write_csv(dir / "toy.csv", toy(3, 1, false));
    const CliResult r = cli("fit --data " + (dir / "toy.csv").string() + " --out " + (dir / "fit").string() +
                          " --n-interior 1 --mean-n-interior 1",
                      dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string text = io::read_text(dir / "fit" / "model.json");
    const io::ModelFile m = io::load_model(dir / "fit" / "model.json");
    io::save_model(dir / "resaved.json", m);
    EXPECT_EQ(io::read_text(dir / "resaved.json"), text);
    EXPECT_TRUE(fs::exists(dir / "fit" / "eigenfunctions.csv"));
    EXPECT_TRUE(fs::exists(dir / "fit" / "surfaces.csv"));
    EXPECT_TRUE(fs::exists(dir / "fit" / "report.json"));
}

TEST(Cli, MissingResponseForSomeSubjects) {
    const SparseFunctionalDataset data = toy(30, 2, true);
    FitOptions opt;
    opt.n_interior = 3;
    opt.mean_n_interior = 3;
    const FittedModel fm = fit(data, opt);
    EXPECT_TRUE(fm.refined.stacked().allFinite());
    EXPECT_GT(fm.eigen.values(0), 0.0);
    const AuxBlock cross = build_aux(data, fm.raw.means, *fm.raw.ws, 0, 2);
    std::size_t expected = 0;
    for (const auto& s : data.subjects()) expected += s.count(0) * s.count(2);
    EXPECT_EQ(static_cast<std::size_t>(cross.response.size()), expected);
}

TEST(Cli, DemoConfigReportsFifteenEigenvalues) {
    const fs::path dir = scratch();
    ASSERT_EQ(cli("simulate --n 100 --rho 0.9 --replicates 1 --seed 3 --n-test 5 --out " + (dir / "sim").string(),
                  dir).code,
              0);
    const fs::path train = dir / "sim" / "n100_rho0.9_rep0_train.csv";
    ASSERT_TRUE(fs::exists(train));
    const CliResult r = cli("fit --data " + train.string() + " --out " + (dir / "fit").string() + " --n-interior 1", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const json report = json::parse(io::read_text(dir / "fit" / "report.json"));
    EXPECT_EQ(report["eigenvalues"].size(), 15u);
    EXPECT_EQ(io::load_model(dir / "fit" / "model.json").fit.eigen.size(), 15);
}

TEST(Cli, PredictMatchesLibraryExactly) {
    const fs::path dir = scratch();
    const SparseFunctionalDataset data = toy(25, 3, true);
    io::write_csv(dir / "train.csv", data);
    ASSERT_EQ(cli("fit --data " + (dir / "train.csv").string() + " --out " + (dir / "fit").string() +
                      " --n-interior 3 --mean-n-interior 3",
                  dir)
                  .code,
              0);
    SparseFunctionalDataset query(data.response_labels());
    for (int i = 0; i < 3; ++i) {
        const auto& s = data.subject(i);
        for (int k = 0; k < 3; ++k)
            for (std::size_t j = 0; j < s.count(k); ++j) query.add(s.id, k, s.times[k][j], s.values[k][j]);
    }
    io::write_csv(dir / "query.csv", query);
    const CliResult r = cli("predict --model " + (dir / "fit" / "model.json").string() + " --query " +
                          (dir / "query.csv").string() + " --grid 7 --n-scores 2 --out " +
                          (dir / "pred.csv").string() + " --scores " + (dir / "scores.csv").string(),
                      dir);
    ASSERT_EQ(r.code, 0) << r.err;

    const io::ModelFile m = io::load_model(dir / "fit" / "model.json");
    const Interval dom = m.fit.refined.ws->domain();
    std::vector<double> grid(7);
    for (int a = 0; a < 7; ++a) grid[a] = dom.lower + dom.length() * a / 6;
    const auto rows = read_rows(dir / "pred.csv");
    ASSERT_EQ(rows[0], (std::vector<std::string>{"subject", "response", "time", "xhat", "var", "lower95",
                                                 "upper95", "status"}));
    ASSERT_EQ(rows.size(), 1u + 3 * 3 * 7);
    const auto scores = read_rows(dir / "scores.csv");
    ASSERT_EQ(scores.size(), 1u + 3 * 2);
    std::size_t row = 1;
    for (int i = 0; i < 3; ++i) {
        const auto res = predict_subject(m.fit.refined, m.fit.eigen, query.subject(i), grid, {.n_scores = 2});
        for (int k = 0; k < 3; ++k)
            for (int a = 0; a < 7; ++a, ++row) {
                const auto& f = rows[row];
                EXPECT_EQ(f[0], query.subject(i).id);
                EXPECT_EQ(f[1], query.response_labels()[k]);
                EXPECT_EQ(parse(f[2]), grid[a]);
                EXPECT_EQ(parse(f[3]), res.xhat(k, a));
                EXPECT_EQ(parse(f[4]), res.cov(k * 7 + a, k * 7 + a));
                EXPECT_EQ(parse(f[5]), res.lower(k, a));
                EXPECT_EQ(parse(f[6]), res.upper(k, a));
                EXPECT_EQ(f[7], "ok");
            }
        for (int l = 0; l < 2; ++l) EXPECT_EQ(parse(scores[1 + i * 2 + l][2]), res.scores(l));
    }
}

TEST(Cli, ZeroCovarianceModelPredictsTheMean) {
    const fs::path dir = scratch();
    const SparseFunctionalDataset data = toy(20, 4, false);
    FitOptions opt;
    opt.n_interior = 3;
    opt.mean_n_interior = 3;
    io::ModelFile m = io::make_model_file(data, opt, fit(data, opt));
    const int pc = static_cast<int>(m.fit.refined.stacked().rows());
    m.fit.refined.set_stacked(Eigen::MatrixXd::Zero(pc, pc));
    io::save_model(dir / "zero.json", m);
    SparseFunctionalDataset query(data.response_labels());
    std::ofstream times(dir / "times.csv");
    times << "subject,time\n";
    const auto& s = data.subject(0);
    for (int k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < s.count(k); ++j) {
            query.add(s.id, k, s.times[k][j], s.values[k][j]);
            if (k == 0) times << s.id << ',' << io::format_double(s.times[k][j]) << '\n';
        }
    times.close();
    io::write_csv(dir / "query.csv", query);
    const CliResult r = cli("predict --model " + (dir / "zero.json").string() + " --query " + (dir / "query.csv").string() +
                          " --times " + (dir / "times.csv").string() + " --out " + (dir / "pred.csv").string(),
                      dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_rows(dir / "pred.csv");
    ASSERT_EQ(rows.size(), 1u + 3 * s.count(0));
    const io::ModelFile back = io::load_model(dir / "zero.json");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const int k = query.response_index(rows[i][1]);
        EXPECT_EQ(parse(rows[i][3]), back.fit.refined.means[k](parse(rows[i][2])));
        EXPECT_EQ(parse(rows[i][4]), 0.0);
    }
}

TEST(Cli, EmptyGridAndOutOfDomainRows) {
    const fs::path dir = scratch();
    const SparseFunctionalDataset data = toy(20, 5, false);
    io::write_csv(dir / "train.csv", data);
    ASSERT_EQ(cli("fit --data " + (dir / "train.csv").string() + " --out " + (dir / "fit").string() +
                      " --n-interior 3 --mean-n-interior 3",
                  dir)
                  .code,
              0);
    const std::string model = (dir / "fit" / "model.json").string();
    const std::string query = (dir / "train.csv").string();

    ASSERT_EQ(cli("predict --model " + model + " --query " + query + " --grid 0 --out " + (dir / "empty.csv").string(),
                  dir)
                  .code,
              0);
    EXPECT_EQ(io::read_text(dir / "empty.csv"), "subject,response,time,xhat,var,lower95,upper95,status\n");

    const Interval dom = io::load_model(model).fit.refined.ws->domain();
    std::ofstream times(dir / "times.csv");
    times << "subject,time\ns0," << io::format_double(dom.lower) << "\ns0," << io::format_double(dom.upper + 1.0)
          << "\n";
    times.close();
    const CliResult r = cli("predict --model " + model + " --query " + query + " --times " + (dir / "times.csv").string() +
                          " --out " + (dir / "pred.csv").string(),
                      dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_rows(dir / "pred.csv");
    ASSERT_EQ(rows.size(), 1u + 3 * 2);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (i % 2 == 1) {
            EXPECT_EQ(rows[i][7], "ok");
        } else {
            EXPECT_EQ(rows[i][3], "");
            EXPECT_EQ(rows[i][7], "error: time outside fitted domain");
        }
    }
}

TEST(Cli, ErrorsAreMachineReadable) {
    const fs::path dir = scratch();
    const CliResult missing = cli("fit --data " + (dir / "nope.csv").string() + " --out " + (dir / "o").string(), dir);
    EXPECT_NE(missing.code, 0);
    const json err = json::parse(missing.err);
    EXPECT_TRUE(err.contains("error"));
    EXPECT_EQ(err["command"], "fit");

    std::ofstream bad(dir / "bad.csv");
    bad << "subject,response,time,value\nA,y,0.1,1\nA,y,oops,2\n";
    bad.close();
    const CliResult malformed = cli("fit --data " + (dir / "bad.csv").string() + " --out " + (dir / "o").string(), dir);
    EXPECT_NE(malformed.code, 0);
    EXPECT_NE(json::parse(malformed.err)["error"].get<std::string>().find("line 3"), std::string::npos);

    const CliResult usage = cli("fit --bogus", dir);
    EXPECT_EQ(usage.code, 2);
    EXPECT_TRUE(json::parse(usage.err).contains("error"));
}

TEST(Cli, IndependentResponsesGiveSmallFittedCrossCorrelation) {
    const fs::path dir = scratch();
    const CliResult r = cli("evaluate --n 100 --rho 0 --replicates 3 --seed 11 --n-test 20 --out " + (dir / "eval").string(),
                      dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const json doc = json::parse(io::read_text(dir / "eval" / "metrics.json"));
    const json& cond = doc["conditions"][0];
    EXPECT_EQ(cond["summary"]["cross_corr_median"]["count"], 3);
    for (const auto& rep : cond["replicates"]) EXPECT_LT(rep["cross_corr_median"].get<double>(), 0.15);
}
