#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "doctest.h"
#include "liwhiz/checkpoint.hpp"
#include "liwhiz/synth.hpp"
#include "test_support.hpp"

using namespace liwhiz;
using liwhiz::testing::TempDir;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args) {
    args.insert(args.begin(), "liwhiz");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliResult r;
    r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::optional<double> aggregate(const std::string& report, const std::string& key) {
    const auto pos = report.find("# " + key + "=");
    REQUIRE(pos != std::string::npos);
    const auto start = pos + key.size() + 3;
    const auto text = report.substr(start, report.find('\n', start) - start);
    if (text == "absent" || text == "undefined") return std::nullopt;
    return std::stod(text);
}

std::vector<std::string> small_train(const TempDir& dir, const std::string& run) {
    return {"train", "--manifest", (dir / "data/manifest.tsv").string(), "--out",
            (dir / run).string(), "--hidden-dim", "4", "--k-folds", "3", "--max-epochs", "3",
            "--seed", "11"};
}

} // namespace

TEST_CASE("usage and config errors map to documented exit codes") {
    auto help = run({"--help"});
    CHECK(help.code == cli::kExitOk);
    CHECK(help.out.find("3  config") != std::string::npos);

    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"train", "--bogus"}).code == cli::kExitUsage);

    TempDir dir;
    REQUIRE(run({"synth", "--out", (dir / "data").string(), "--num-excerpts", "6"}).code == 0);
    const auto k1 = run({"train", "--manifest", (dir / "data/manifest.tsv").string(), "--out",
                         (dir / "run").string(), "--k-folds", "1"});
    CHECK(k1.code == cli::kExitConfig);
    CHECK(k1.err.rfind("error: config: ", 0) == 0);
    CHECK(std::count(k1.err.begin(), k1.err.end(), '\n') == 1);

    auto too_many = small_train(dir, "run");
    too_many[8] = "7"; // more folds than excerpts
    CHECK(run(too_many).code == cli::kExitConfig);

    const auto missing = run({"predict", "--manifest", (dir / "none.tsv").string(),
                              "--checkpoints", (dir / "data").string()});
    CHECK(missing.code == cli::kExitIo);
    CHECK(missing.err.rfind("error: io: ", 0) == 0);

    std::ofstream(dir / "data/bad.lwpz") << "not a checkpoint";
    CHECK(run({"weights", "--checkpoints", (dir / "data").string()}).code == cli::kExitFormat);

    CHECK(run({"evaluate", "--manifest", "m", "--checkpoints", "c", "--no-labels",
               "--require-labels"})
              .code == cli::kExitUsage);
}

TEST_CASE("evaluate on an unlabeled manifest reports absent aggregates") {
    TempDir dir;
    REQUIRE(run({"synth", "--out", (dir / "data").string(), "--num-excerpts", "6"}).code == 0);
    REQUIRE(run(small_train(dir, "run")).code == 0);

    auto manifest = read_manifest(dir / "data/manifest.tsv");
    for (auto& r : manifest.records) r.label.reset();
    write_manifest(manifest, dir / "data/unlabeled.tsv");

    const auto report_path = (dir / "report.csv").string();
    const auto res = run({"evaluate", "--manifest", (dir / "data/unlabeled.tsv").string(),
                          "--checkpoints", (dir / "run").string(), "--out", report_path});
    CHECK(res.code == 0);
    const auto report = slurp(report_path);
    CHECK(report.rfind("excerpt_id,prediction,label\n", 0) == 0);
    CHECK(std::count(report.begin(), report.end(), '\n') == 1 + 6 + 4);
    CHECK_FALSE(aggregate(report, "rmse_percent").has_value());
    CHECK(report.find("# rmse_percent=absent") != std::string::npos);

    const auto strict = run({"evaluate", "--manifest", (dir / "data/unlabeled.tsv").string(),
                             "--checkpoints", (dir / "run").string(), "--require-labels"});
    CHECK(strict.code == cli::kExitData);

    const auto preds = run({"predict", "--manifest", (dir / "data/unlabeled.tsv").string(),
                            "--checkpoints", (dir / "run").string()});
    CHECK(preds.code == 0);
    CHECK(preds.out.rfind("excerpt_id,prediction\nex0000,", 0) == 0);

    const auto wrong_mode = run({"predict", "--manifest", (dir / "data/manifest.tsv").string(),
                                 "--checkpoints", (dir / "run").string(), "--mode", "y-only"});
    CHECK(wrong_mode.code == cli::kExitConfig);
}

TEST_CASE("run record replays to bit-identical checkpoints") {
    TempDir dir;
    REQUIRE(run({"synth", "--out", (dir / "data").string(), "--num-excerpts", "6"}).code == 0);
    auto args = small_train(dir, "run");
    args.insert(args.end(), {"--lr", "0.0037", "--weight-decay", "0.1", "--parallel-folds", "2"});
    REQUIRE(run(args).code == 0);

    const auto record = nlohmann::json::parse(slurp(dir / "run/run.json"));
    CHECK(record["train"]["k_folds"] == 3);
    CHECK(record["train"]["learning_rate"] == 0.0037);
    CHECK(record["model"]["hidden_dim"] == 4);

    std::istringstream replay(record["replay"].get<std::string>());
    std::vector<std::string> tokens;
    for (std::string t; replay >> t;) tokens.push_back(t);
    REQUIRE(tokens.front() == "liwhiz");
    tokens.erase(tokens.begin());
    const auto out = std::find(tokens.begin(), tokens.end(), "--out");
    REQUIRE(out != tokens.end());
    *(out + 1) = (dir / "replay").string();
    REQUIRE(run(tokens).code == 0);

    const auto a = load_checkpoints(dir / "run");
    const auto b = load_checkpoints(dir / "replay");
    REQUIRE(a.size() == 3);
    REQUIRE(b.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(bit_equal(a[i], b[i]));
    CHECK(slurp(dir / "run/history.csv") == slurp(dir / "replay/history.csv"));
}

TEST_CASE("synth, train, evaluate and weights pipeline") {
    TempDir dir;
    REQUIRE(run({"synth", "--out", (dir / "data").string(), "--num-excerpts", "32", "--seed",
                 "0"})
                .code == 0);
    const auto trained = run({"train", "--manifest", (dir / "data/manifest.tsv").string(),
                              "--out", (dir / "run").string(), "--hidden-dim", "8",
                              "--max-epochs", "200", "--patience", "200", "--seed", "0"});
    REQUIRE(trained.code == 0);
    for (int f = 0; f < 10; ++f) {
        char name[16];
        std::snprintf(name, sizeof(name), "fold%02d.lwpz", f);
        CHECK(std::filesystem::exists(dir / "run" / name));
    }
    CHECK(std::filesystem::exists(dir / "run/history.csv"));

    const auto eval = run({"evaluate", "--manifest", (dir / "data/manifest.tsv").string(),
                           "--checkpoints", (dir / "run").string(), "--require-labels"});
    REQUIRE(eval.code == 0);
    const auto rmse = aggregate(eval.out, "rmse_percent");
    REQUIRE(rmse.has_value());
    CHECK(*rmse < 10.0);
    CHECK(aggregate(eval.out, "ncc").value_or(0.0) > 0.5);

    const auto weights = run({"weights", "--checkpoints", (dir / "run").string(), "--per-fold"});
    REQUIRE(weights.code == 0);
    CHECK(weights.out.find("enc_y_ensemble,1,") != std::string::npos);
    CHECK(weights.out.find("dec_y_fold09,2,") != std::string::npos);
    // header + (4 ensemble + 40 per-fold profiles) x 3 layers
    CHECK(std::count(weights.out.begin(), weights.out.end(), '\n') == 1 + 44 * 3);
}
