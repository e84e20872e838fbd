#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fixtures.hpp"
#include "promptkit/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "promptkit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = promptkit::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("promptkit_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("tau of a file against itself is one") {
    const fs::path d = scratch("tau");
    const auto f = write(d / "id.csv", "0.3\n1.5\n-2\n4\n");
    const Outcome o = run({"tau", "--a", f.string(), "--b", f.string()});
    CHECK(o.code == 0);
    const json j = json::parse(o.out);
    CHECK(j["tau"] == 1.0);
    CHECK(j["concordant"] == 6);
    CHECK(j["soft_tau"].get<double>() > 0.999);
  }

  TEST_CASE("tau reports null soft tau on ties") {
    const fs::path d = scratch("tau_ties");
    const auto a = write(d / "a.csv", "1,1,2");
    const auto b = write(d / "b.csv", "1 2 3");
    const Outcome o = run({"tau", "--a", a.string(), "--b", b.string()});
    CHECK(o.code == 0);
    CHECK(json::parse(o.out)["soft_tau"].is_null());
  }

  TEST_CASE("gradcheck on the order loss passes") {
    const Outcome o = run({"gradcheck", "--loss", "order", "--n", "16", "--seed", "42", "--tol", "1e-4"});
    CHECK(o.code == 0);
    const json j = json::parse(o.out);
    CHECK(j["pass"] == true);
    CHECK(j["max_rel_err"].get<double>() < 1e-4);
  }

  TEST_CASE("gradcheck fails honestly under an impossible tolerance") {
    const Outcome o = run({"gradcheck", "--loss", "giou", "--n", "2", "--seed", "1", "--tol", "1e-300", "--trials", "3"});
    CHECK(o.code == 1);
    CHECK(json::parse(o.out)["pass"] == false);
  }

  TEST_CASE("seed falls back to the environment") {
    setenv(promptkit::cli::kSeedEnv, "42", 1);
    const Outcome env = run({"gradcheck", "--loss", "l1", "--n", "3", "--trials", "5"});
    unsetenv(promptkit::cli::kSeedEnv);
    const Outcome flag = run({"gradcheck", "--loss", "l1", "--n", "3", "--trials", "5", "--seed", "42"});
    CHECK(env.code == 0);
    CHECK(env.out == flag.out);
    setenv(promptkit::cli::kSeedEnv, "nope", 1);
    CHECK(run({"gradcheck", "--loss", "l1"}).code != 0);
    unsetenv(promptkit::cli::kSeedEnv);
  }

  TEST_CASE("unknown flags print usage and exit 2") {
    const Outcome o = run({"tau", "--bogus"});
    CHECK(o.code == 2);
    CHECK(o.out.empty());
    CHECK(o.err.find("Usage") != std::string::npos);
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
  }

  TEST_CASE("every subcommand has help") {
    for (const char* sub : {"tau", "select", "gradcheck", "fuse-demo", "sample", "verify"}) {
      const Outcome o = run({sub, "--help"});
      CHECK(o.code == 0);
      CHECK(o.out.find("Usage") != std::string::npos);
    }
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("select") {
    const fs::path d = scratch("select");
    const auto f = write(d / "s.json", R"({"text": [1, 0, 0], "visual": [0, 0, 1]})");
    const Outcome o = run({"select", "--scores", f.string(), "--k", "2"});
    CHECK(o.code == 0);
    CHECK(json::parse(o.out)["indices"] == json::array({0, 2}));
    CHECK(run({"select", "--scores", f.string(), "--k", "4"}).code == 1);
  }

  TEST_CASE("fuse-demo reports per-pathway background usage") {
    const fs::path d = scratch("fuse");
    const auto f = write(d / "c.json", R"({"dim": 8, "layers": 2, "features": 10, "text": 3, "visual": 0, "seed": 5})");
    const Outcome o = run({"fuse-demo", "--config", f.string()});
    CHECK(o.code == 0);
    const json j = json::parse(o.out);
    CHECK(j["per_layer"].size() == 2);
    CHECK(j["tokens_preserved"] == true);
    CHECK(j["zero_params_identity"] == true);
    CHECK(j["per_layer"][0]["pathways"][0]["active"] == true);
    CHECK(j["per_layer"][0]["pathways"][2]["active"] == false);
    CHECK(run({"fuse-demo", "--config", f.string()}).out == o.out);
    CHECK(run({"fuse-demo", "--config", f.string(), "--seed", "6"}).out != o.out);
  }

  TEST_CASE("sample prints one pure batch per line") {
    const fs::path d = scratch("sample");
    const auto f = write(d / "m.json", R"({"batch_size": 2, "seed": 1, "samples": [
      {"id": "a0", "dataset": "A"}, {"id": "a1", "dataset": "A"}, {"id": "a2", "dataset": "A"},
      {"id": "b0", "dataset": "B"}, {"id": "b1", "dataset": "B"}, {"id": "b2", "dataset": "B"}]})");
    const Outcome o = run({"sample", "--manifest", f.string(), "--epochs", "2"});
    CHECK(o.code == 0);
    std::istringstream lines(o.out);
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
      const json j = json::parse(line);
      for (const auto& id : j["ids"]) CHECK(id.get<std::string>()[0] == (j["dataset"] == "A" ? 'a' : 'b'));
      ++count;
    }
    CHECK(count == 8);
    CHECK(run({"sample", "--manifest", f.string(), "--epochs", "2"}).out == o.out);
  }

  TEST_CASE("verify with empty instance lists retains nothing") {
    const fs::path d = scratch("verify_empty");
    fs::create_directories(d / "a");
    fs::create_directories(d / "b");
    write(d / "a" / "x.json", R"({"image_id": "x", "width": 4, "height": 4, "source": "top_down", "instances": []})");
    write(d / "b" / "x.json", R"({"image_id": "x", "width": 4, "height": 4, "source": "bottom_up", "instances": []})");
    const Outcome o = run({"verify", "--a", (d / "a").string(), "--b", (d / "b").string(), "--hash-fallback", "--out",
                           (d / "out").string(), "--report", (d / "report.json").string()});
    CHECK(o.code == 0);
    const json j = json::parse(o.out);
    CHECK(j["aggregate"]["retained"] == 0);
    CHECK(fs::exists(d / "out" / "x.json"));
    CHECK(json::parse(std::ifstream(d / "report.json")) == j);
  }

  TEST_CASE("verify is byte-stable, parallel-safe and reports bad files") {
    const fs::path d = scratch("verify");
    fs::create_directories(d / "a");
    fs::create_directories(d / "b");
    const auto images = fixture::images(15, 3);
    json table = json::object();
    for (const auto& tag : fixture::vocabulary()) table[tag] = fixture::embeddings().lookup(tag);
    const auto emb = write(d / "emb.json", table.dump());
    for (const auto& img : images) {
      write(d / "a" / (img.top_down.image_id + ".json"), promptkit::dump_annotation_set(img.top_down));
      write(d / "b" / (img.bottom_up.image_id + ".json"), promptkit::dump_annotation_set(img.bottom_up));
    }
    const auto args = [&](const std::string& out, const std::string& jobs) {
      return std::vector<std::string>{"verify", "--a", (d / "a").string(), "--b", (d / "b").string(), "--emb",
                                      emb.string(), "--iou-gate", "0.4", "--sim-thresh", "0.6", "--out",
                                      (d / out).string(), "--report", (d / (out + ".json")).string(), "--jobs", jobs};
    };
    const Outcome first = run(args("o1", "1"));
    const Outcome second = run(args("o2", "4"));
    CHECK(first.code == 0);
    CHECK(first.out == second.out);
    for (const auto& img : images) {
      const std::string name = img.top_down.image_id + ".json";
      std::stringstream x, y;
      x << std::ifstream(d / "o1" / name).rdbuf();
      y << std::ifstream(d / "o2" / name).rdbuf();
      CHECK(x.str() == y.str());
    }

    write(d / "a" / "zz_broken.json", "[1, 2");
    const Outcome bad = run(args("o3", "2"));
    CHECK(bad.code == 1);
    CHECK(json::parse(bad.out)["errors"].size() == 1);
    CHECK(json::parse(bad.out)["aggregate"] == json::parse(first.out)["aggregate"]);
  }

  TEST_CASE("verify needs an embedding source") {
    const fs::path d = scratch("verify_noemb");
    fs::create_directories(d / "a");
    fs::create_directories(d / "b");
    const Outcome o = run({"verify", "--a", (d / "a").string(), "--b", (d / "b").string(), "--out", (d / "o").string(),
                           "--report", (d / "r.json").string()});
    CHECK(o.code == 2);
  }

  TEST_CASE("image ids become safe file names") {
    CHECK(promptkit::cli::safe_file_stem("a/b c.jpg") == "a_b_c.jpg");
    CHECK(promptkit::cli::safe_file_stem("..") == "_..");
  }
}
