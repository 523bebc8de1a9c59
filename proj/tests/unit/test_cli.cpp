#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "kgalign_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Result run(const std::string& command, const std::string& env = "") {
  const fs::path out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string line = env + " " + command + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(line.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

Result cli(const std::string& args, const std::string& env = "") {
  return run(std::string(KGALIGN_CLI) + " " + args, env);
}

std::string data_args(const fs::path& d) {
  return "--kg-a " + (d / "a.tsv").string() + " --kg-b " + (d / "b.tsv").string() + " --seed " +
         (d / "gold.tsv").string();
}

// A small trained checkpoint shared by the subcommand tests.
const fs::path& trained() {
  static const fs::path ckpt = [] {
    const fs::path data = work_dir() / "small";
    REQUIRE(cli("gen-synthetic --n 40 --rel-density 0.08 --out " + data.string()).code == 0);
    const fs::path c = work_dir() / "ckpt";
    const Result r = cli("train " + data_args(data) + " --out " + c.string() +
                         " --epochs 2 --dim 8 --heads 2 --layers 1 --parts 2 --negatives 2");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return c;
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(cli("").code == 2);
  CHECK(cli("--help").code == 0);
  CHECK(cli("eval --kg-a a --kg-b b --seed s").code == 2);
  CHECK(cli("train --bogus").code == 2);
  CHECK(cli("frobnicate").code == 2);
  const Result missing = cli("eval --ckpt " + (work_dir() / "nope").string() + " --kg-a a --kg-b b --seed s");
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("error: ", 0) == 0);
}

TEST_CASE("gen-synthetic and the measurement script") {
  const fs::path out = work_dir() / "default";
  const Result r = cli("gen-synthetic --n 300 --seed-rng 7 --out " + out.string());
  REQUIRE(r.code == 0);
  for (const char* f : {"a.tsv", "b.tsv", "gold.tsv"}) CHECK(fs::exists(out / f));
  const Result m = run(std::string("python3 ") + KGALIGN_MEASURE_SCRIPT + " " + out.string());
  REQUIRE_MESSAGE(m.code == 0, m.err);
  CHECK(m.out == "pairs 300\nmean_literal_edit_distance 0.985833\nmean_degree_difference 1.280000\n");
}

TEST_CASE("data root from the environment") {
  const Result r = cli("gen-synthetic --n 20 --out rooted", "IALIGN_DATA_DIR=" + work_dir().string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(work_dir() / "rooted" / "gold.tsv"));
}

TEST_CASE("train, eval, explain, removal, partition") {
  const fs::path& ckpt = trained();
  const fs::path data = work_dir() / "small";
  CHECK(fs::exists(ckpt / "manifest.json"));
  CHECK(fs::exists(ckpt / "tensors.bin"));
  const std::string csv = slurp(ckpt / "loss.csv");
  CHECK(csv.rfind("epoch,l_align,l_he1,l_he2,l_reg\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  SUBCASE("eval") {
    const Result r = cli("eval --ckpt " + ckpt.string() + " " + data_args(data));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(std::regex_match(r.out, std::regex("Hits@1\t\\d+\\.\\d\\d\nHits@10\t\\d+\\.\\d\\d\n")));
    CHECK(cli("eval --ckpt " + ckpt.string() + " " + data_args(data) + " --metric l2").code == 0);
    CHECK(cli("eval --ckpt " + ckpt.string() + " " + data_args(data) + " --metric dot").code == 2);
  }
  SUBCASE("eval against other data fails the hash check") {
    const fs::path other = work_dir() / "other";
    REQUIRE(cli("gen-synthetic --n 41 --out " + other.string()).code == 0);
    const Result r = cli("eval --ckpt " + ckpt.string() + " " + data_args(other));
    CHECK(r.code == 1);
    CHECK(r.err.find("hash") != std::string::npos);
  }
  SUBCASE("explain") {
    const fs::path out = work_dir() / "explain.jsonl";
    const Result r = cli("explain --ckpt " + ckpt.string() + " " + data_args(data) + " --top-n 2 --out " + out.string());
    REQUIRE_MESSAGE(r.code == 0, r.err);
    std::istringstream lines(slurp(out));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.at("pair_id") == n);
      CHECK(j.at("a").at("attributes").size() <= 2);
      CHECK(j.at("b").at("neighbors").size() <= 2);
      ++n;
    }
    CHECK(n == 28);  // 70% of 40 pairs are test pairs
  }
  SUBCASE("removal") {
    const Result r = cli("removal --ckpt " + ckpt.string() + " " + data_args(data) + " --runs 3");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "run,hits1,attr_jaccard,neighbor_jaccard,attr_triples_a,attr_triples_b,rel_triples_a,rel_triples_b");
    std::size_t rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 3);
  }
  SUBCASE("partition") {
    const Result r = cli("partition --kg-a " + (data / "a.tsv").string() + " --parts 3");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.at("num_parts") == 3);
    std::size_t total = 0;
    for (const auto& part : j.at("parts")) total += part.size();
    CHECK(total == 40);
  }
}
