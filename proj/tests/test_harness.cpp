#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include "roivqa/harness.hpp"
#include "roivqa/roiqa.hpp"
#include "test_support.hpp"

using namespace roivqa;
using testsupport::TempDir;

namespace {

ojson report_json_no_timestamp(const EvalReport& r) {
    auto j = report_json(r);
    j["run_meta"]["timestamp"] = "T";
    return j;
}

std::filesystem::path write_script(const TempDir& tmp, const std::string& name,
                                   const std::string& body) {
    const auto path = tmp / name;
    std::ofstream out(path, std::ios::binary);
    out << body;
    return path;
}

/// Adapter wrapper that records every request it relays.
class RecordingAdapter : public ModelAdapter {
public:
    explicit RecordingAdapter(ModelAdapter& inner) : inner_(inner) {}
    std::string model_id() const override { return inner_.model_id(); }
    void preflight() override { inner_.preflight(); }
    std::string answer(const InferenceRequest& request) override {
        {
            std::lock_guard lock(mutex_);
            images[request.qa_id] = request.image;
        }
        return inner_.answer(request);
    }
    std::map<std::string, std::vector<std::uint8_t>> images;

private:
    ModelAdapter& inner_;
    std::mutex mutex_;
};

class ConstantAdapter : public ModelAdapter {
public:
    explicit ConstantAdapter(std::string reply) : reply_(std::move(reply)) {}
    std::string model_id() const override { return "const"; }
    std::string answer(const InferenceRequest&) override { return reply_; }

private:
    std::string reply_;
};

class FailingAdapter : public ModelAdapter {
public:
    std::string model_id() const override { return "failing"; }
    std::string answer(const InferenceRequest&) override {
        throw Error("synthetic failure");
    }
};

/// Small evaluation corpus carrying all four question types, produced by a
/// real reconstruction so composites and meta are authentic.
struct EvalFixture {
    TempDir tmp{"harness"};
    Dataset dataset;

    EvalFixture() {
        auto manifest = testsupport::write_corpus(
            tmp.path(), {.n_images = 3, .width = 96, .height = 96,
                         .regions_per_image = 1, .closed_qa_per_image = 1});
        auto d = load_dataset(manifest);
        GenerationConfig cfg;
        cfg.seed = 5;
        write_reconstruction(d, cfg, tmp / "recon", 1);
        dataset = load_dataset(tmp.path() / "recon" / "manifest.jsonl");
    }
};

}  // namespace

TEST_CASE("base64 matches the reference vectors and round-trips",
          "[harness]") {
    auto enc = [](const std::string& s) {
        return detail::b64_encode(
            std::vector<std::uint8_t>(s.begin(), s.end()));
    };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foo") == "Zm9v");
    CHECK(enc("foob") == "Zm9vYg==");
    CHECK(enc("fooba") == "Zm9vYmE=");
    CHECK(enc("foobar") == "Zm9vYmFy");

    SplitMix64 rng(1);
    std::vector<std::uint8_t> blob(257);
    for (auto& b : blob) b = std::uint8_t(rng.next_below(256));
    CHECK(detail::b64_decode(detail::b64_encode(blob)) == blob);
    CHECK_THROWS_AS(detail::b64_decode("not!base64"), Error);
}

TEST_CASE("mock adapter answers by id with empty-string fallback",
          "[harness]") {
    TempDir tmp("harness");
    write_script(tmp, "fix.jsonl",
                 R"({"qa_id":"q1","answer":"B"})"
                 "\n"
                 R"({"qa_id":"q2","answer":"yes"})"
                 "\n");
    MockAdapter mock(tmp / "fix.jsonl");
    CHECK(mock.model_id() == "mock:fix.jsonl");
    CHECK(mock.answer({"q1", "", {}}) == "B");
    CHECK(mock.answer({"q2", "", {}}) == "yes");
    CHECK(mock.answer({"q3", "", {}}) == "");
    CHECK(mock.answer({"q1", "", {}}) == "B");  // stable
}

TEST_CASE("mock adapter rejects bad fixtures", "[harness]") {
    TempDir tmp("harness");
    write_script(tmp, "dup.jsonl",
                 R"({"qa_id":"q1","answer":"a"})"
                 "\n"
                 R"({"qa_id":"q1","answer":"b"})"
                 "\n");
    CHECK_THROWS_WITH(MockAdapter(tmp / "dup.jsonl"),
                      Catch::Matchers::ContainsSubstring(
                          "duplicate fixture id"));

    write_script(tmp, "garbage.jsonl", "not json\n");
    CHECK_THROWS_AS(MockAdapter(tmp / "garbage.jsonl"), Error);

    write_script(tmp, "shape.jsonl", R"({"qa_id":"q1"})"
                                     "\n");
    CHECK_THROWS_AS(MockAdapter(tmp / "shape.jsonl"), Error);
    CHECK_THROWS_AS(MockAdapter(tmp / "missing.jsonl"), Error);
}

TEST_CASE("per-type scoring rules", "[harness]") {
    QAPair closed;
    closed.qtype = QType::closed;
    closed.answer = "Yes";
    CHECK(score_answer(closed, "yes.") == 1.0);
    CHECK(score_answer(closed, "no") == 0.0);

    QAPair mc;
    mc.qa_id = "m";
    mc.qtype = QType::multichoice;
    mc.answer = "C";
    mc.meta = {{"correct", "C"},    {"color_A", "Yellow"},
               {"color_B", "Purple"}, {"color_C", "Green"},
               {"color_D", "Red"}};
    CHECK(score_answer(mc, "C") == 1.0);
    CHECK(score_answer(mc, "c. green") == 1.0);
    CHECK(score_answer(mc, "the green box") == 1.0);
    CHECK(score_answer(mc, "B") == 0.0);
    CHECK(score_answer(mc, "unintelligible") == 0.0);
    QAPair broken = mc;
    broken.meta.erase("correct");
    CHECK_THROWS_AS(score_answer(broken, "C"), Error);

    QAPair open;
    open.qtype = QType::open;
    open.answer = "brain enhancing tumor";
    CHECK(score_answer(open, "tumor enhancing brain") == 1.0);
    CHECK(score_answer(open, "brain") == Catch::Approx(1.0 / 3.0));
    QAPair empty_gold;
    empty_gold.qtype = QType::open;
    empty_gold.answer = "the";
    CHECK(score_answer(empty_gold, "anything") == std::nullopt);

    QAPair loc;
    loc.qa_id = "l";
    loc.qtype = QType::localization;
    loc.answer = "[10, 10, 50, 50]";
    CHECK(score_answer(loc, "[10, 10, 50, 50]") == 1.0);
    CHECK(score_answer(loc, "[11, 10, 51, 50]") == 1.0);  // IoU well over 0.5
    CHECK(score_answer(loc, "[100, 100, 140, 140]") == 0.0);
    CHECK(score_answer(loc, "no box") == 0.0);
    QAPair loc_bad = loc;
    loc_bad.answer = "not a box";
    CHECK_THROWS_AS(score_answer(loc_bad, "[1,1,2,2]"), Error);
}

TEST_CASE("gold-echo mock scores 1.0 on every metric", "[harness]") {
    EvalFixture fx;
    auto fixture =
        testsupport::write_gold_fixture(fx.dataset, fx.tmp / "gold.jsonl");
    MockAdapter mock(fixture);
    auto result = run_eval(fx.dataset, mock, {.max_in_flight = 4});

    CHECK_FALSE(result.aborted);
    CHECK(result.items.size() == fx.dataset.qa.size());
    REQUIRE(result.report.per_type.size() == 4);
    for (const auto& [type, st] : result.report.per_type) {
        CAPTURE(type);
        CHECK(st.value == 1.0);
    }
    CHECK(result.report.run_meta.failed == 0);
    CHECK(result.report.evaluated ==
          static_cast<long long>(fx.dataset.qa.size()));
}

TEST_CASE("constant-yes mock on a 3-1 closed split scores 0.75",
          "[harness]") {
    TempDir tmp("harness");
    std::filesystem::create_directories(tmp / "images");
    write_rgb8(tmp.path() / "images" / "im.png",
               testsupport::gradient_image(32, 32));
    std::ofstream out(tmp / "m.jsonl", std::ios::binary);
    out << R"({"kind":"image","image_id":"im","file":"images/im.png","width":32,"height":32})"
        << "\n";
    const char* answers[] = {"yes", "yes", "yes", "no"};
    for (int i = 0; i < 4; ++i) {
        ojson qa;
        qa["kind"] = "qa";
        qa["qa_id"] = "q" + std::to_string(i);
        qa["image_id"] = "im";
        qa["qtype"] = "closed";
        qa["question"] = "Is it?";
        qa["answer"] = answers[i];
        qa["provenance"] = "original";
        qa["meta"] = ojson::object();
        out << qa.dump() << "\n";
    }
    out.close();
    auto d = load_dataset(tmp / "m.jsonl");

    ConstantAdapter yes("yes");
    auto result = run_eval(d, yes, {});
    CHECK(result.report.per_type.at("closed").value == 0.75);
    CHECK(result.report.per_type.at("closed").n == 4);
}

TEST_CASE("reruns and concurrency do not change the report", "[harness]") {
    EvalFixture fx;
    auto fixture =
        testsupport::write_gold_fixture(fx.dataset, fx.tmp / "gold.jsonl");
    MockAdapter mock(fixture);

    auto r1 = run_eval(fx.dataset, mock, {.max_in_flight = 1});
    auto r2 = run_eval(fx.dataset, mock, {.max_in_flight = 16});
    CHECK(report_json_no_timestamp(r1.report).dump() ==
          report_json_no_timestamp(r2.report).dump());

    REQUIRE(r1.items.size() == r2.items.size());
    std::set<std::string> seen;
    for (std::size_t i = 0; i < r1.items.size(); ++i) {
        CHECK(r1.items[i].qa_id == r2.items[i].qa_id);
        CHECK(r1.items[i].answer == r2.items[i].answer);
        CHECK(r1.items[i].score == r2.items[i].score);
        CHECK(seen.insert(r1.items[i].qa_id).second);  // exactly once
    }
}

TEST_CASE("items with composites send composited bytes", "[harness]") {
    EvalFixture fx;
    auto fixture =
        testsupport::write_gold_fixture(fx.dataset, fx.tmp / "gold.jsonl");
    MockAdapter mock(fixture);
    RecordingAdapter recorder(mock);
    run_eval(fx.dataset, recorder, {.max_in_flight = 2});

    int composited = 0, plain = 0;
    for (const auto& qa : fx.dataset.qa) {
        REQUIRE(recorder.images.count(qa.qa_id));
        const auto& sent = recorder.images.at(qa.qa_id);
        if (qa.composite_ref) {
            ++composited;
            auto expect = read_file_bytes(fx.tmp.path() / "recon" /
                                          qa.meta.at("composite_file"));
            CHECK(sent == expect);
        } else {
            ++plain;
            const auto* img = fx.dataset.find_image(qa.image_id);
            auto expect = read_file_bytes(fx.tmp.path() / "recon" /
                                          img->source_path);
            CHECK(sent == expect);
        }
    }
    CHECK(composited > 0);
    CHECK(plain > 0);
}

TEST_CASE("majority failure aborts with a partial result", "[harness]") {
    EvalFixture fx;
    FailingAdapter bad;
    auto result = run_eval(fx.dataset, bad, {.max_in_flight = 1});
    CHECK(result.aborted);
    CHECK(result.items.size() < fx.dataset.qa.size());
    CHECK(result.report.run_meta.failed ==
          static_cast<long long>(result.items.size()));
    for (const auto& item : result.items) {
        CHECK(item.failed);
        CHECK(item.score == 0.0);
    }
}

TEST_CASE("run artifacts land in the output directory", "[harness]") {
    EvalFixture fx;

    // Add one unscorable open item: its gold normalizes to nothing.
    QAPair skip;
    skip.qa_id = "zz.skip";
    skip.image_id = fx.dataset.images[0].image_id;
    skip.qtype = QType::open;
    skip.question = "Describe the region";
    skip.answer = "the";
    fx.dataset.qa.push_back(skip);
    sort_dataset(fx.dataset);

    auto fixture =
        testsupport::write_gold_fixture(fx.dataset, fx.tmp / "gold.jsonl");
    MockAdapter mock(fixture);
    auto result = run_eval(fx.dataset, mock,
                           {.max_in_flight = 2, .seed = 9,
                            .out_dir = fx.tmp / "run"});

    CHECK(result.report.run_meta.skipped == 1);

    namespace fs = std::filesystem;
    REQUIRE(fs::exists(fx.tmp / "run" / "items.jsonl"));
    REQUIRE(fs::exists(fx.tmp / "run" / "report.json"));
    REQUIRE(fs::exists(fx.tmp / "run" / "report.md"));

    std::ifstream items(fx.tmp / "run" / "items.jsonl");
    std::string line;
    std::size_t lines = 0;
    bool saw_null_score = false;
    while (std::getline(items, line)) {
        auto j = json::parse(line);
        CHECK(j.contains("qa_id"));
        CHECK(j.contains("qtype"));
        CHECK(j.contains("prompt"));
        CHECK(j.contains("answer"));
        REQUIRE(j.contains("score"));
        if (j["score"].is_null()) saw_null_score = true;
        ++lines;
    }
    CHECK(lines == fx.dataset.qa.size());
    CHECK(saw_null_score);

    const auto rb = testsupport::slurp(fx.tmp / "run" / "report.json");
    auto rj = json::parse(std::string(rb.begin(), rb.end()));
    CHECK(rj["run_meta"]["seed"] == 9);
    CHECK(rj["overall"]["skipped"] == 1);

    const auto mb = testsupport::slurp(fx.tmp / "run" / "report.md");
    const std::string md(mb.begin(), mb.end());
    CHECK(md.find("| Model | Open | Closed | Multi | Localization |") !=
          std::string::npos);
}

TEST_CASE("subprocess adapter scores an echo model", "[harness]") {
    TempDir tmp("harness");
    auto script = write_script(tmp, "echo_last.py", R"PY(
import sys, json
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    req = json.loads(line)
    words = req["prompt"].split()
    reply = {"qa_id": req["qa_id"], "answer": words[-1] if words else ""}
    print(json.dumps(reply), flush=True)
)PY");

    std::filesystem::create_directories(tmp / "images");
    write_rgb8(tmp.path() / "images" / "im.png",
               testsupport::gradient_image(16, 16));
    std::ofstream out(tmp / "m.jsonl", std::ios::binary);
    out << R"({"kind":"image","image_id":"im","file":"images/im.png","width":16,"height":16})"
        << "\n"
        << R"({"kind":"qa","qa_id":"q1","image_id":"im","qtype":"open","question":"Name this organ: liver","answer":"liver","provenance":"original","meta":{}})"
        << "\n"
        << R"({"kind":"qa","qa_id":"q2","image_id":"im","qtype":"open","question":"Name this organ: spleen","answer":"left spleen","provenance":"original","meta":{}})"
        << "\n";
    out.close();
    auto d = load_dataset(tmp / "m.jsonl");

    SubprocessAdapter adapter("python3 " + script.string(), 10);
    CHECK(adapter.model_id() == "subprocess:python3");
    auto result = run_eval(d, adapter, {});
    CHECK_FALSE(result.aborted);
    // q1: "liver" covers 1/1 gold tokens; q2: "spleen" covers 1/2.
    CHECK(result.report.per_type.at("open").value == Catch::Approx(0.75));
}

TEST_CASE("subprocess spawn failure is reported at preflight", "[harness]") {
    SubprocessAdapter adapter("/nonexistent-model-binary-xyz", 5);
    CHECK_THROWS_WITH(adapter.preflight(),
                      Catch::Matchers::ContainsSubstring("cannot spawn"));
    CHECK_THROWS_AS(SubprocessAdapter("   ", 5), Error);
}

TEST_CASE("subprocess death mid-run fails remaining items only", "[harness]") {
    TempDir tmp("harness");
    auto script = write_script(tmp, "die_after_3.py", R"PY(
import sys, json
n = 0
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    req = json.loads(line)
    print(json.dumps({"qa_id": req["qa_id"], "answer": "yes"}), flush=True)
    n += 1
    if n == 3:
        sys.exit(0)
)PY");

    std::filesystem::create_directories(tmp / "images");
    write_rgb8(tmp.path() / "images" / "im.png",
               testsupport::gradient_image(16, 16));
    std::ofstream out(tmp / "m.jsonl", std::ios::binary);
    out << R"({"kind":"image","image_id":"im","file":"images/im.png","width":16,"height":16})"
        << "\n";
    for (int i = 0; i < 5; ++i) {
        ojson qa;
        qa["kind"] = "qa";
        qa["qa_id"] = "q" + std::to_string(i);
        qa["image_id"] = "im";
        qa["qtype"] = "closed";
        qa["question"] = "Anything?";
        qa["answer"] = "yes";
        qa["provenance"] = "original";
        qa["meta"] = ojson::object();
        out << qa.dump() << "\n";
    }
    out.close();
    auto d = load_dataset(tmp / "m.jsonl");

    SubprocessAdapter adapter("python3 " + script.string(), 5);
    auto result = run_eval(d, adapter, {});
    CHECK_FALSE(result.aborted);  // 2 of 5 failed, below the majority bar
    CHECK(result.report.run_meta.failed == 2);
    CHECK(result.items.size() == 5);
    CHECK(result.report.per_type.at("closed").value == Catch::Approx(0.6));
}

TEST_CASE("subprocess protocol violations fail single items", "[harness]") {
    TempDir tmp("harness");
    auto script = write_script(tmp, "garbler.py", R"PY(
import sys, json
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    req = json.loads(line)
    if "bad" in req["qa_id"]:
        print("this is not json", flush=True)
    else:
        print(json.dumps({"qa_id": req["qa_id"], "answer": "ok"}), flush=True)
)PY");

    SubprocessAdapter adapter("python3 " + script.string(), 5);
    adapter.preflight();
    CHECK_THROWS_WITH(adapter.answer({"bad1", "p", {}}),
                      Catch::Matchers::ContainsSubstring("protocol error"));
    CHECK(adapter.answer({"good1", "p", {}}) == "ok");
}

TEST_CASE("subprocess timeouts discard stale replies", "[harness]") {
    TempDir tmp("harness");
    auto script = write_script(tmp, "slowpoke.py", R"PY(
import sys, json, time
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    req = json.loads(line)
    if "slow" in req["qa_id"]:
        time.sleep(1.0)
    print(json.dumps({"qa_id": req["qa_id"], "answer": "A:" + req["qa_id"]}),
          flush=True)
)PY");

    SubprocessAdapter adapter("python3 " + script.string(), 0.25);
    adapter.preflight();
    CHECK_THROWS_WITH(adapter.answer({"slow1", "p", {}}),
                      Catch::Matchers::ContainsSubstring("timeout"));

    // Let the child finish its nap and emit the now-stale slow1 reply, then
    // ask for a fast item. The stale line must be skipped by qa_id.
    std::this_thread::sleep_for(std::chrono::milliseconds(1300));
    CHECK(adapter.answer({"fast1", "p", {}}) == "A:fast1");
}

TEST_CASE("http adapter round trip with retries", "[harness]") {
    httplib::Server server;
    std::atomic<int> post_count{0};
    std::atomic<int> flaky_count{0};
    server.Get("/answer",
               [](const httplib::Request&, httplib::Response& res) {
                   res.set_content("ready", "text/plain");
               });
    server.Post("/answer", [&](const httplib::Request& req,
                               httplib::Response& res) {
        ++post_count;
        auto j = json::parse(req.body);
        ojson reply;
        reply["answer"] = "echo:" + j["qa_id"].get<std::string>();
        res.set_content(reply.dump(), "application/json");
    });
    server.Post("/flaky", [&](const httplib::Request&,
                              httplib::Response& res) {
        if (++flaky_count <= 2) {
            res.status = 503;
            return;
        }
        res.set_content(R"({"answer":"finally"})", "application/json");
    });
    server.Get("/flaky", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ready", "text/plain");
    });
    server.Post("/reject", [](const httplib::Request&,
                              httplib::Response& res) { res.status = 400; });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    {
        HttpAdapter adapter("http://127.0.0.1:" + std::to_string(port) +
                            "/answer");
        CHECK(adapter.model_id() ==
              "http:http://127.0.0.1:" + std::to_string(port) + "/answer");
        adapter.preflight();
        CHECK(adapter.answer({"q7", "prompt", {1, 2, 3}}) == "echo:q7");
        CHECK(post_count == 1);
    }
    {
        HttpAdapter adapter("http://127.0.0.1:" + std::to_string(port) +
                                "/flaky",
                            5, 3, 10);
        CHECK(adapter.answer({"q1", "p", {}}) == "finally");
        CHECK(flaky_count == 3);
    }
    {
        HttpAdapter adapter("http://127.0.0.1:" + std::to_string(port) +
                                "/reject",
                            5, 3, 10);
        CHECK_THROWS_WITH(adapter.answer({"q1", "p", {}}),
                          Catch::Matchers::ContainsSubstring("status 400"));
    }

    server.stop();
    server_thread.join();
}

TEST_CASE("http adapter rejects bad endpoints and dead hosts", "[harness]") {
    CHECK_THROWS_AS(HttpAdapter("ftp://example.com"), Error);
    CHECK_THROWS_AS(HttpAdapter("http:///nopath"), Error);

    HttpAdapter unreachable("http://127.0.0.1:1/answer", 0.5, 0, 10);
    CHECK_THROWS_WITH(unreachable.preflight(),
                      Catch::Matchers::ContainsSubstring("unreachable"));
}
