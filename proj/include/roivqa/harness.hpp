#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "roivqa/corpus.hpp"
#include "roivqa/error.hpp"
#include "roivqa/log.hpp"
#include "roivqa/metrics.hpp"

namespace roivqa {

namespace detail {

inline std::string b64_encode(const std::vector<std::uint8_t>& bytes) {
    static const char table[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const std::uint32_t v =
            (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back(table[v & 63]);
    }
    if (i + 1 == bytes.size()) {
        const std::uint32_t v = bytes[i] << 16;
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::vector<std::uint8_t> b64_decode(std::string_view s) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    int acc = 0, bits = 0;
    for (char c : s) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = value(c);
        if (v < 0) throw Error("invalid base64 input");
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

inline std::string timestamp_utc_now() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

struct InferenceRequest {
    std::string qa_id;
    std::string prompt;
    std::vector<std::uint8_t> image;  // PNG bytes
};

class ModelAdapter {
public:
    virtual ~ModelAdapter() = default;
    virtual std::string model_id() const = 0;
    /// Throws when the model is unreachable; called once before a run.
    virtual void preflight() {}
    /// Returns the model's answer, throwing on failure (the runner scores
    /// the item 0). Must be safe to call from several threads at once.
    virtual std::string answer(const InferenceRequest& request) = 0;
};

/// Scripted model: a JSONL fixture of {qa_id, answer} lines. Unknown ids
/// answer with the empty string so grading stays total.
class MockAdapter : public ModelAdapter {
public:
    explicit MockAdapter(const std::filesystem::path& fixture) {
        std::ifstream in(fixture, std::ios::binary);
        if (!in) throw Error("cannot open mock fixture: " + fixture.string());
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw Error("mock fixture line " + std::to_string(line_no) +
                            ": " + e.what());
            }
            if (!j.contains("qa_id") || !j["qa_id"].is_string() ||
                !j.contains("answer") || !j["answer"].is_string())
                throw Error("mock fixture line " + std::to_string(line_no) +
                            ": expected {qa_id, answer} strings");
            const std::string id = j["qa_id"].get<std::string>();
            if (!answers_.emplace(id, j["answer"].get<std::string>()).second)
                throw Error("duplicate fixture id: " + id);
        }
        name_ = "mock:" + fixture.filename().string();
    }

    std::string model_id() const override { return name_; }

    std::string answer(const InferenceRequest& request) override {
        auto it = answers_.find(request.qa_id);
        return it == answers_.end() ? std::string() : it->second;
    }

private:
    std::map<std::string, std::string> answers_;
    std::string name_;
};

/// Talks line-delimited JSON to a child process: one {qa_id, prompt,
/// image_b64} request per line on its stdin, one {qa_id, answer} reply per
/// line on its stdout. The command is split on whitespace and executed
/// directly, not through a shell. Requests are serialized; stale replies
/// (from items that previously timed out) are discarded by qa_id.
class SubprocessAdapter : public ModelAdapter {
public:
    explicit SubprocessAdapter(std::string command, double timeout_seconds = 30)
        : command_(std::move(command)), timeout_seconds_(timeout_seconds) {
        ::signal(SIGPIPE, SIG_IGN);
        std::string word;
        for (std::size_t i = 0; i <= command_.size(); ++i) {
            if (i == command_.size() || std::isspace(static_cast<unsigned char>(
                                            command_[i]))) {
                if (!word.empty()) argv_.push_back(word);
                word.clear();
            } else {
                word.push_back(command_[i]);
            }
        }
        if (argv_.empty()) throw Error("subprocess adapter: empty command");
    }

    ~SubprocessAdapter() override { shutdown(); }

    std::string model_id() const override { return "subprocess:" + argv_[0]; }

    void preflight() override {
        std::lock_guard lock(mutex_);
        ensure_spawned();
    }

    std::string answer(const InferenceRequest& request) override {
        std::lock_guard lock(mutex_);
        ensure_spawned();
        if (dead_) throw Error("model process is no longer running");

        ojson j;
        j["qa_id"] = request.qa_id;
        j["prompt"] = request.prompt;
        j["image_b64"] = detail::b64_encode(request.image);
        std::string line = j.dump();
        line.push_back('\n');
        write_all(line);

        const auto deadline =
            std::chrono::steady_clock::now() +
            std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                std::chrono::duration<double>(timeout_seconds_));
        for (;;) {
            if (auto reply = next_line(deadline)) {
                json r;
                try {
                    r = json::parse(*reply);
                } catch (const json::parse_error& e) {
                    throw Error(std::string("protocol error from model: ") +
                                e.what());
                }
                if (!r.contains("qa_id") || !r.contains("answer") ||
                    !r["answer"].is_string())
                    throw Error("protocol error from model: bad reply shape");
                if (r["qa_id"] != request.qa_id) continue;  // stale reply
                return r["answer"].get<std::string>();
            }
            throw Error("timeout waiting for model answer");
        }
    }

private:
    void ensure_spawned() {
        if (pid_ > 0 || dead_) return;
        int to_child[2], from_child[2], status[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
            throw Error("cannot create pipes");
        if (::pipe2(status, O_CLOEXEC) != 0) throw Error("cannot create pipes");

        const pid_t pid = ::fork();
        if (pid < 0) throw Error("fork failed");
        if (pid == 0) {
            ::dup2(to_child[0], 0);
            ::dup2(from_child[1], 1);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            std::vector<char*> argv;
            for (auto& a : argv_) argv.push_back(a.data());
            argv.push_back(nullptr);
            ::execvp(argv[0], argv.data());
            const int err = errno;
            [[maybe_unused]] ssize_t n = ::write(status[1], &err, sizeof err);
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        ::close(status[1]);
        int err = 0;
        const ssize_t n = ::read(status[0], &err, sizeof err);
        ::close(status[0]);
        if (n == sizeof err) {
            ::close(to_child[1]);
            ::close(from_child[0]);
            int wstatus = 0;
            ::waitpid(pid, &wstatus, 0);
            dead_ = true;
            throw Error("cannot spawn model command \"" + argv_[0] +
                        "\": " + std::strerror(err));
        }
        pid_ = pid;
        to_child_ = to_child[1];
        from_child_ = from_child[0];
    }

    void write_all(const std::string& data) {
        std::size_t off = 0;
        while (off < data.size()) {
            const ssize_t n =
                ::write(to_child_, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                dead_ = true;
                throw Error("model process closed its input");
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::optional<std::string> next_line(
        std::chrono::steady_clock::time_point deadline) {
        for (;;) {
            if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
                std::string line = buffer_.substr(0, pos);
                buffer_.erase(0, pos + 1);
                return line;
            }
            const auto remaining = deadline - std::chrono::steady_clock::now();
            const int ms = static_cast<int>(
                std::chrono::duration_cast<std::chrono::milliseconds>(remaining)
                    .count());
            if (ms <= 0) return std::nullopt;
            pollfd pfd{from_child_, POLLIN, 0};
            const int rc = ::poll(&pfd, 1, ms);
            if (rc == 0) return std::nullopt;
            if (rc < 0) {
                if (errno == EINTR) continue;
                throw Error("poll failed while reading model output");
            }
            char chunk[4096];
            const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR) continue;
                dead_ = true;
                throw Error("read from model process failed");
            }
            if (n == 0) {
                dead_ = true;
                throw Error("model process closed its output");
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    void shutdown() {
        if (to_child_ >= 0) ::close(to_child_);
        if (from_child_ >= 0) ::close(from_child_);
        to_child_ = from_child_ = -1;
        if (pid_ > 0) {
            int wstatus = 0;
            for (int i = 0; i < 200; ++i) {
                if (::waitpid(pid_, &wstatus, WNOHANG) == pid_) {
                    pid_ = -1;
                    return;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, &wstatus, 0);
            pid_ = -1;
        }
    }

    std::string command_;
    std::vector<std::string> argv_;
    double timeout_seconds_;
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
    bool dead_ = false;
    std::mutex mutex_;
};

/// POSTs {qa_id, prompt, image_b64} to an HTTP endpoint and expects
/// {answer}. Connection errors and 5xx responses are retried with
/// exponential backoff; 4xx fails immediately.
class HttpAdapter : public ModelAdapter {
public:
    explicit HttpAdapter(const std::string& endpoint,
                         double timeout_seconds = 30, int max_retries = 3,
                         int backoff_ms = 250)
        : endpoint_(endpoint),
          timeout_seconds_(timeout_seconds),
          max_retries_(max_retries),
          backoff_ms_(backoff_ms) {
        std::string rest = endpoint;
        const std::string scheme = "http://";
        if (rest.rfind(scheme, 0) != 0)
            throw Error("http adapter: endpoint must start with http://");
        rest = rest.substr(scheme.size());
        const auto slash = rest.find('/');
        std::string hostport = rest.substr(0, slash);
        path_ = slash == std::string::npos ? "/" : rest.substr(slash);
        const auto colon = hostport.find(':');
        host_ = hostport.substr(0, colon);
        port_ = 80;
        if (colon != std::string::npos)
            port_ = std::stoi(hostport.substr(colon + 1));
        if (host_.empty()) throw Error("http adapter: endpoint has no host");
    }

    std::string model_id() const override { return "http:" + endpoint_; }

    void preflight() override {
        auto client = make_client();
        auto res = client->Get(path_);
        if (!res)
            throw Error("endpoint unreachable: " + endpoint_);
    }

    std::string answer(const InferenceRequest& request) override {
        ojson j;
        j["qa_id"] = request.qa_id;
        j["prompt"] = request.prompt;
        j["image_b64"] = detail::b64_encode(request.image);
        const std::string body = j.dump();

        for (int attempt = 0; attempt <= max_retries_; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(
                    backoff_ms_ * (1 << (attempt - 1))));
            auto client = make_client();
            auto res = client->Post(path_, body, "application/json");
            if (!res) continue;  // connection-level failure, retry
            if (res->status >= 200 && res->status < 300) {
                json r;
                try {
                    r = json::parse(res->body);
                } catch (const json::parse_error& e) {
                    throw Error(std::string("protocol error from endpoint: ") +
                                e.what());
                }
                if (!r.contains("answer") || !r["answer"].is_string())
                    throw Error("protocol error from endpoint: no answer field");
                return r["answer"].get<std::string>();
            }
            if (res->status >= 400 && res->status < 500)
                throw Error("endpoint rejected request with status " +
                            std::to_string(res->status));
            // 5xx falls through to retry
        }
        throw Error("endpoint failed after " +
                    std::to_string(max_retries_ + 1) + " attempts");
    }

private:
    std::unique_ptr<httplib::Client> make_client() const {
        auto client = std::make_unique<httplib::Client>(host_, port_);
        const int sec = static_cast<int>(timeout_seconds_);
        const int usec = static_cast<int>((timeout_seconds_ - sec) * 1e6);
        client->set_connection_timeout(sec, usec);
        client->set_read_timeout(sec, usec);
        return client;
    }

    std::string endpoint_, host_, path_;
    int port_;
    double timeout_seconds_;
    int max_retries_;
    int backoff_ms_;
};

struct RunOptions {
    int max_in_flight = 1;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;  // when set: items.jsonl, report.json/.md
};

struct ItemOutcome {
    std::string qa_id;
    QType qtype = QType::closed;
    std::string prompt;
    std::string answer;
    std::optional<double> score;  // nullopt = skipped
    bool failed = false;
};

struct RunResult {
    EvalReport report;
    std::vector<ItemOutcome> items;
    bool aborted = false;
};

/// Grades one answer according to its question type. nullopt marks an item
/// the metric cannot score (open question with an empty gold).
inline std::optional<double> score_answer(const QAPair& qa,
                                          const std::string& answer) {
    switch (qa.qtype) {
        case QType::closed:
            return normalize(answer).tokens == normalize(qa.answer).tokens
                       ? 1.0
                       : 0.0;
        case QType::multichoice: {
            const auto choice =
                extract_choice(answer, option_colors_from_meta(qa.meta));
            const auto correct = qa.meta.find("correct");
            if (correct == qa.meta.end() || correct->second.size() != 1)
                throw Error("multichoice item lacks a correct letter: " +
                            qa.qa_id);
            return choice && *choice == correct->second[0] ? 1.0 : 0.0;
        }
        case QType::open:
            return token_recall(answer, qa.answer);
        case QType::localization: {
            const auto gold = parse_bbox(qa.answer);
            if (!gold)
                throw Error("localization gold has no bbox: " + qa.qa_id);
            const auto pred = parse_bbox(answer);
            if (!pred || pred->degenerate()) return 0.0;
            return iou(*pred, *gold) >= 0.5 ? 1.0 : 0.0;
        }
    }
    return 0.0;
}

inline RunResult run_eval(const Dataset& d, ModelAdapter& adapter,
                          const RunOptions& opts) {
    adapter.preflight();

    const std::size_t total = d.qa.size();
    std::vector<ItemOutcome> outcomes(total);
    std::vector<char> attempted(total, 0);
    std::atomic<std::size_t> next{0};
    std::atomic<long long> failed{0};
    std::atomic<bool> abort_flag{false};
    const long long abort_threshold = static_cast<long long>(total) / 2;

    auto worker = [&] {
        for (;;) {
            if (abort_flag.load()) return;
            const std::size_t i = next.fetch_add(1);
            if (i >= total) return;
            const QAPair& qa = d.qa[i];
            ItemOutcome& out = outcomes[i];
            attempted[i] = 1;
            out.qa_id = qa.qa_id;
            out.qtype = qa.qtype;
            out.prompt = qa.question;
            try {
                if (trim(qa.question).empty())
                    throw Error("empty prompt for " + qa.qa_id);
                std::vector<std::uint8_t> image;
                if (auto it = qa.meta.find("composite_file");
                    qa.composite_ref && it != qa.meta.end()) {
                    image = read_file_bytes(
                        detail::resolve_path(d.root, it->second));
                } else {
                    const ImageRecord* img = d.find_image(qa.image_id);
                    if (!img)
                        throw Error("no image record for " + qa.image_id);
                    image = read_file_bytes(
                        detail::resolve_path(d.root, img->source_path));
                }
                out.answer =
                    adapter.answer({qa.qa_id, qa.question, std::move(image)});
                out.score = score_answer(qa, out.answer);
            } catch (const std::exception& e) {
                out.failed = true;
                out.score = 0.0;
                log_warn("item " + qa.qa_id + " failed: " + e.what());
                const long long f = failed.fetch_add(1) + 1;
                if (f > abort_threshold) abort_flag.store(true);
            }
        }
    };

    const int n_threads = std::max(
        1, std::min<int>(opts.max_in_flight, static_cast<int>(total)));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    RunResult result;
    result.aborted = abort_flag.load();
    for (std::size_t i = 0; i < total; ++i)
        if (attempted[i]) result.items.push_back(std::move(outcomes[i]));

    std::vector<ScoredItem> scored;
    scored.reserve(result.items.size());
    for (const auto& item : result.items)
        scored.push_back({item.qa_id, item.qtype, item.score});

    RunMeta meta;
    meta.model_id = adapter.model_id();
    meta.split = d.name;
    meta.seed = opts.seed;
    meta.timestamp = detail::timestamp_utc_now();
    meta.failed = failed.load();
    result.report = aggregate(scored, std::move(meta));

    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        std::ofstream items_out(opts.out_dir / "items.jsonl",
                                std::ios::binary);
        for (const auto& item : result.items) {
            ojson j;
            j["qa_id"] = item.qa_id;
            j["qtype"] = to_string(item.qtype);
            j["prompt"] = item.prompt;
            j["answer"] = item.answer;
            if (item.score)
                j["score"] = *item.score;
            else
                j["score"] = nullptr;
            items_out << j.dump() << '\n';
        }
        std::ofstream report_out(opts.out_dir / "report.json",
                                 std::ios::binary);
        report_out << report_json(result.report).dump(2) << '\n';
        std::ofstream md_out(opts.out_dir / "report.md", std::ios::binary);
        md_out << report_markdown(result.report);
    }
    return result;
}

}  // namespace roivqa
