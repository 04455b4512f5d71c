#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tgls/config.hpp"
#include "tgls/pipeline.hpp"

using namespace tgls;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::map<std::string, std::string> parse_kv_lines(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        size_t eq = line.find('=');
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

#ifdef TGLS_BIN
std::string run_capture(const std::string& cmd, int* exit_code) {
    FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (size_t n = fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
    int status = pclose(pipe);
    *exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}
#endif

}  // namespace

TEST_CASE("key=value text parses with comments, trimming, and overwrites") {
    KeyValueConfig cfg = KeyValueConfig::from_string(
        "# leading comment\n"
        "\n"
        "  alpha = 0.5  \n"
        "name=first\n"
        "name = second\n"
        "empty_value =\n");
    CHECK(cfg.entries().size() == 3);
    CHECK(cfg.get_double("alpha", 0.0) == doctest::Approx(0.5));
    CHECK(cfg.get_string("name", "") == "second");
    CHECK(cfg.get_string("empty_value", "x").empty());
    CHECK(cfg.has("alpha"));
    CHECK_FALSE(cfg.has("beta"));
}

TEST_CASE("malformed lines report their line number") {
    CHECK_THROWS_WITH(KeyValueConfig::from_string("a=1\n# note\nbroken line\n"),
                      "config line 3 has no '=' separator");
    CHECK_THROWS_WITH(KeyValueConfig::from_string("=value\n"),
                      "config line 1 has an empty key");
}

TEST_CASE("typed getters fall back when absent and reject bad text") {
    KeyValueConfig cfg = KeyValueConfig::from_string(
        "count=12\nrate=2.5e-3\nneg=-4\nbad_int=3x\nbad_num=1.2.3\n"
        "yes1=true\nyes2=1\nyes3=yes\nyes4=on\nno1=false\nno2=0\nno3=no\nno4=off\nbad_bool=maybe\n");
    CHECK(cfg.get_int("count", 0) == 12);
    CHECK(cfg.get_int("neg", 0) == -4);
    CHECK(cfg.get_int("missing", 7) == 7);
    CHECK(cfg.get_double("rate", 0.0) == doctest::Approx(2.5e-3));
    CHECK(cfg.get_double("missing", 1.5) == doctest::Approx(1.5));
    for (const char* k : {"yes1", "yes2", "yes3", "yes4"}) CHECK(cfg.get_bool(k, false));
    for (const char* k : {"no1", "no2", "no3", "no4"}) CHECK_FALSE(cfg.get_bool(k, true));
    CHECK(cfg.get_bool("missing", true));
    CHECK_THROWS_WITH(cfg.get_int("bad_int", 0), "config key 'bad_int' is not an integer: 3x");
    CHECK_THROWS_WITH(cfg.get_double("bad_num", 0.0),
                      "config key 'bad_num' is not a number: 1.2.3");
    CHECK_THROWS_WITH(cfg.get_bool("bad_bool", false),
                      "config key 'bad_bool' is not a boolean: maybe");
    // Integers double as numbers, but floats are not integers.
    CHECK(cfg.get_double("count", 0.0) == doctest::Approx(12.0));
    CHECK_THROWS_AS(cfg.get_int("rate", 0), std::runtime_error);
}

TEST_CASE("loading a missing file names the path") {
    CHECK_THROWS_WITH(KeyValueConfig::load("/nonexistent/nowhere.cfg"),
                      "cannot open config file /nonexistent/nowhere.cfg");
}

TEST_CASE("load reports the offending file on parse errors") {
    TempDir dir("tgls_test_cfg_load");
    std::string path = (dir.path / "bad.cfg").string();
    std::ofstream(path) << "fine=1\nnot a pair\n";
    CHECK_THROWS_WITH(KeyValueConfig::load(path),
                      ("config line 2 has no '=' separator in " + path).c_str());
}

TEST_CASE("an empty config resolves to the paraphrase defaults") {
    PipelineConfig cfg = make_pipeline_config(KeyValueConfig{}, "");
    CHECK(cfg.task == Task::kParaphrase);
    CHECK(cfg.out_dir == "tgls-out");
    CHECK(cfg.weights.alpha == doctest::Approx(0.8));
    CHECK(cfg.weights.beta == doctest::Approx(1.0));
    CHECK(cfg.weights.gamma == doctest::Approx(0.6));
    CHECK(cfg.weights.delta == doctest::Approx(0.125));
    CHECK(cfg.schedule_s1.max_steps == 50);
    CHECK(cfg.schedule_s1.t_init == doctest::Approx(1e-2));
    CHECK(cfg.schedule_s1.c == doctest::Approx(2e-4));
    CHECK(cfg.schedule_s2.max_steps == 50);
    CHECK(cfg.proposal.top_k == 50);
    CHECK_FALSE(cfg.proposal.argmax_selection);
    CHECK(cfg.proposal.max_len == 35);
    CHECK(cfg.gen.width == 128);
    CHECK(cfg.gen.layers == 2);
    CHECK(cfg.gen.heads == 4);
    CHECK(cfg.gen.ffw == 256);
    CHECK(cfg.gen.max_seq == 72);
    CHECK(cfg.gen.beam == 5);
    CHECK(cfg.gen.dropout == doctest::Approx(0.1));
    CHECK(cfg.train.lr == doctest::Approx(1e-3));
    CHECK(cfg.train.batch_size == 32);
    CHECK(cfg.train.ce_epochs == 10);
    CHECK(cfg.train.margin == doctest::Approx(1.0));
    CHECK(cfg.stage2_epochs == 6);
    CHECK(cfg.lm_order == 3);
    CHECK(cfg.emb_dim == 64);
    CHECK(cfg.ablation == Ablation::kFull);
    CHECK(cfg.valid_fraction == doctest::Approx(0.05));
    CHECK_FALSE(cfg.mm_as_printed);
    CHECK_FALSE(cfg.mm_cold_start);
    CHECK_FALSE(cfg.save_traces);
}

TEST_CASE("the formalize task swaps in its own weights and schedules") {
    PipelineConfig cfg =
        make_pipeline_config(KeyValueConfig::from_string("task=formalize\n"), "");
    CHECK(cfg.task == Task::kFormalize);
    CHECK(cfg.weights.beta == doctest::Approx(2.0));
    CHECK(cfg.weights.gamma == doctest::Approx(1.25));
    CHECK(cfg.weights.delta == doctest::Approx(0.26));
    CHECK(cfg.schedule_s1.max_steps == 100);
    CHECK(cfg.schedule_s1.c == doctest::Approx(1e-4));
    CHECK(cfg.schedule_s2.max_steps == 100);
}

TEST_CASE("schedule keys set both stages and s2_ keys override the second") {
    PipelineConfig cfg = make_pipeline_config(
        KeyValueConfig::from_string("steps=40\nt_init=0.02\ncooling=0.001\ns2_steps=15\n"), "");
    CHECK(cfg.schedule_s1.max_steps == 40);
    CHECK(cfg.schedule_s1.t_init == doctest::Approx(0.02));
    CHECK(cfg.schedule_s1.c == doctest::Approx(0.001));
    CHECK(cfg.schedule_s2.max_steps == 15);
    CHECK(cfg.schedule_s2.t_init == doctest::Approx(0.02));
    CHECK(cfg.schedule_s2.c == doctest::Approx(0.001));
}

TEST_CASE("relative corpus paths resolve against the config directory") {
    KeyValueConfig kv = KeyValueConfig::from_string(
        "train=corpora/train.txt\nvalid=/abs/valid.txt\nout=runout\n");
    PipelineConfig cfg = make_pipeline_config(kv, "/data/exp");
    CHECK(cfg.train_path == "/data/exp/corpora/train.txt");
    CHECK(cfg.valid_path == "/abs/valid.txt");
    CHECK(cfg.out_dir == "/data/exp/runout");
    CHECK(cfg.test_path.empty());

    PipelineConfig bare = make_pipeline_config(kv, "");
    CHECK(bare.train_path == "corpora/train.txt");
}

TEST_CASE("unknown keys and invalid values are rejected") {
    CHECK_THROWS_WITH(make_pipeline_config(KeyValueConfig::from_string("stepz=3\n"), ""),
                      "unknown config key 'stepz'");
    CHECK_THROWS_WITH(make_pipeline_config(KeyValueConfig::from_string("task=casual\n"), ""),
                      "unknown task 'casual' (expected paraphrase or formalize)");
    CHECK_THROWS_AS(make_pipeline_config(KeyValueConfig::from_string("ablation=sa-ce-sa-ce-sa\n"),
                                         ""),
                    std::runtime_error);
    auto rejects = [](const std::string& line, const char* message) {
        CHECK_THROWS_WITH(make_pipeline_config(KeyValueConfig::from_string(line), ""), message);
    };
    rejects("threads=0\n", "config key 'threads' must be at least 1");
    rejects("steps=-1\n", "config key 'steps' must be non-negative");
    rejects("s2_steps=-1\n", "config key 'steps' must be non-negative");
    rejects("top_k=0\n", "config key 'top_k' must be at least 1");
    rejects("max_len=0\n", "config key 'max_len' must be at least 1");
    rejects("beam=0\n", "config key 'beam' must be at least 1");
    rejects("batch=0\n", "config key 'batch' must be at least 1");
    rejects("ce_epochs=-1\n", "config key 'ce_epochs' must be non-negative");
    rejects("epochs_s2=-1\n", "config key 'epochs_s2' must be non-negative");
    rejects("valid_fraction=1\n", "config key 'valid_fraction' must lie in [0, 1)");
    rejects("valid_fraction=-0.1\n", "config key 'valid_fraction' must lie in [0, 1)");
}

TEST_CASE("ablation names round trip through parse and print") {
    for (const char* name : {"sa", "sa-ce", "sa-ce-sa", "sa-ce-sa-ce", "full"}) {
        CHECK(std::string(ablation_name(parse_ablation(name))) == name);
    }
    CHECK(parse_ablation("sa") < parse_ablation("sa-ce"));
    CHECK(parse_ablation("sa-ce") < parse_ablation("sa-ce-sa"));
    CHECK(parse_ablation("sa-ce-sa") < parse_ablation("sa-ce-sa-ce"));
    CHECK(parse_ablation("sa-ce-sa-ce") < parse_ablation("full"));
}

TEST_CASE("an explicit setter overrides a loaded file which overrides defaults") {
    // Same precedence chain the command line uses: defaults, then the config
    // file, then set() calls layered on top.
    KeyValueConfig kv;
    CHECK(make_pipeline_config(kv, "").schedule_s1.max_steps == 50);

    kv = KeyValueConfig::from_string("steps=20\nbeam=4\n");
    PipelineConfig from_file = make_pipeline_config(kv, "");
    CHECK(from_file.schedule_s1.max_steps == 20);
    CHECK(from_file.gen.beam == 4);

    kv.set("steps", "77");
    PipelineConfig overlaid = make_pipeline_config(kv, "");
    CHECK(overlaid.schedule_s1.max_steps == 77);
    CHECK(overlaid.gen.beam == 4);
}

#ifdef TGLS_BIN
TEST_CASE("the command line resolves flags over config values over defaults") {
    TempDir dir("tgls_test_cfg_cli");
    std::string cfg_path = (dir.path / "run.cfg").string();
    std::ofstream(cfg_path) << "task=formalize\nsteps=20\nbeam=4\nout=myout\n";

    int code = -1;
    std::string out = run_capture(std::string(TGLS_BIN) + " run-all --config " + cfg_path +
                                      " --steps 77 --print-config",
                                  &code);
    REQUIRE(code == 0);
    auto kv = parse_kv_lines(out);
    CHECK(kv["task"] == "formalize");
    CHECK(kv["steps"] == "77");      // flag beats the file
    CHECK(kv["s2_steps"] == "77");   // steps feeds both stages
    CHECK(kv["beam"] == "4");        // file beats the default
    CHECK(kv["top_k"] == "50");      // untouched default
    CHECK(kv["cooling"] == "0.0001");  // formalize default survives
    CHECK(kv["out"] == (dir.path / "myout").string());
    CHECK(kv["ablation"] == "full");

    // Without the flag the file value stands.
    out = run_capture(std::string(TGLS_BIN) + " run-all --config " + cfg_path + " --print-config",
                      &code);
    REQUIRE(code == 0);
    CHECK(parse_kv_lines(out)["steps"] == "20");

    // Unknown config keys surface as a nonzero exit.
    std::string bad_path = (dir.path / "bad.cfg").string();
    std::ofstream(bad_path) << "stepz=3\n";
    run_capture(std::string(TGLS_BIN) + " run-all --config " + bad_path + " --print-config",
                &code);
    CHECK(code == 1);
}
#endif
