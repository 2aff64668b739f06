#include "mars/corpus.hpp"

#include "mars/vocab.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <stdexcept>

namespace mars {

namespace {

const char* kWords[] = {
    "apple", "bridge", "candle", "dragon", "ember",   "falcon", "garnet", "harbor",
    "island", "jigsaw", "kettle", "lantern", "marble", "nectar", "orchid", "pepper",
    "quartz", "river",  "saddle", "timber", "umbrella", "velvet", "walnut", "zephyr",
};
constexpr int kNumWords = static_cast<int>(sizeof(kWords) / sizeof(kWords[0]));

int rand_range(std::mt19937_64& rng, int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng() % static_cast<uint64_t>(hi - lo + 1));
}

CorpusRecord make_arith(std::mt19937_64& rng, const CorpusSpec& spec) {
    const bool is_add = rand_range(rng, 0, 1) == 0;
    int a = rand_range(rng, spec.min_operand, spec.max_operand);
    int b = rand_range(rng, spec.min_operand, spec.max_operand);
    CorpusRecord r;
    if (is_add) {
        const int c = a + b;
        r.prompt = "Q: add " + std::to_string(a) + " and " + std::to_string(b) + ". A:";
        r.response = " " + std::to_string(a) + " plus " + std::to_string(b) + " is " +
                     std::to_string(c) + ".";
        if (spec.restate_answer) r.response += " the answer is " + std::to_string(c) + ".";
    } else {
        if (a < b) std::swap(a, b);
        const int c = a - b;
        r.prompt = "Q: subtract " + std::to_string(b) + " from " + std::to_string(a) + ". A:";
        r.response = " " + std::to_string(a) + " minus " + std::to_string(b) + " is " +
                     std::to_string(c) + ".";
        if (spec.restate_answer) r.response += " the answer is " + std::to_string(c) + ".";
    }
    return r;
}

CorpusRecord make_copy(std::mt19937_64& rng, const CorpusSpec& spec) {
    const std::string w = kWords[rand_range(rng, 0, kNumWords - 1)];
    CorpusRecord r;
    r.prompt = "Q: echo the word " + w + ". A:";
    r.response = " the echo is " + w + ".";
    if (spec.restate_answer) r.response += " the answer is " + w + ".";
    return r;
}

CorpusRecord make_seq(std::mt19937_64& rng, const CorpusSpec& spec) {
    const int start = rand_range(rng, 1, 5);
    const int step = rand_range(rng, 2, 4);
    const int x1 = start, x2 = start + step, x3 = start + 2 * step, x4 = start + 3 * step;
    CorpusRecord r;
    r.prompt = "Q: continue " + std::to_string(x1) + " " + std::to_string(x2) + " " +
               std::to_string(x3) + ". A:";
    r.response = " the next is " + std::to_string(x4) + ".";
    if (spec.restate_answer) r.response += " the answer is " + std::to_string(x4) + ".";
    return r;
}

void check_encodable(const CorpusRecord& r) {
    for (char c : r.prompt) CharVocab::char_to_id(c);
    for (char c : r.response) CharVocab::char_to_id(c);
}

} // namespace

TaskKind parse_task(const std::string& name) {
    if (name == "arith") return TaskKind::arith;
    if (name == "copy") return TaskKind::copy_word;
    if (name == "seq") return TaskKind::seq;
    if (name == "mix") return TaskKind::mix;
    throw std::runtime_error("corpus: unknown task '" + name + "'");
}

std::string task_name(TaskKind task) {
    switch (task) {
        case TaskKind::arith: return "arith";
        case TaskKind::copy_word: return "copy";
        case TaskKind::seq: return "seq";
        case TaskKind::mix: return "mix";
    }
    return "?";
}

Corpus gen_corpus(const CorpusSpec& spec) {
    if (spec.n < 1) throw std::runtime_error("corpus: record count must be >= 1");
    if (spec.min_operand < 0 || spec.max_operand < spec.min_operand) {
        throw std::runtime_error("corpus: bad operand range");
    }
    std::mt19937_64 rng(spec.seed);
    Corpus corpus;
    corpus.records.reserve(static_cast<std::size_t>(spec.n));
    for (int i = 0; i < spec.n; ++i) {
        TaskKind t = spec.task;
        if (t == TaskKind::mix) {
            const int pick = rand_range(rng, 0, 2);
            t = pick == 0 ? TaskKind::arith : (pick == 1 ? TaskKind::copy_word : TaskKind::seq);
        }
        CorpusRecord r;
        switch (t) {
            case TaskKind::arith: r = make_arith(rng, spec); break;
            case TaskKind::copy_word: r = make_copy(rng, spec); break;
            case TaskKind::seq: r = make_seq(rng, spec); break;
            case TaskKind::mix: break;  // unreachable
        }
        check_encodable(r);
        corpus.records.push_back(std::move(r));
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("corpus: cannot open for write: " + path);
    for (const auto& r : corpus.records) {
        nlohmann::ordered_json j;
        j["prompt"] = r.prompt;
        j["response"] = r.response;
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("corpus: write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("corpus: cannot open: " + path);
    Corpus corpus;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("corpus: malformed record at line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        if (!j.is_object() || !j.contains("prompt") || !j.contains("response") || j.size() != 2 ||
            !j["prompt"].is_string() || !j["response"].is_string()) {
            throw std::runtime_error("corpus: malformed record at line " + std::to_string(line_no));
        }
        CorpusRecord r;
        r.prompt = j["prompt"].get<std::string>();
        r.response = j["response"].get<std::string>();
        check_encodable(r);  // throws on unknown character
        corpus.records.push_back(std::move(r));
    }
    return corpus;
}

CorpusStats corpus_stats(const Corpus& corpus) {
    CorpusStats s;
    s.records = static_cast<int>(corpus.records.size());
    for (const auto& r : corpus.records) {
        const int pl = static_cast<int>(r.prompt.size());
        const int rl = static_cast<int>(r.response.size());
        s.response_length_histogram[rl] += 1;
        s.max_prompt_len = std::max(s.max_prompt_len, pl);
        s.max_response_len = std::max(s.max_response_len, rl);
    }
    return s;
}

std::string extract_answer(const std::string& text) {
    const std::string marker = " is ";
    const auto pos = text.rfind(marker);
    if (pos == std::string::npos) return "";
    std::string tail = text.substr(pos + marker.size());
    const auto dot = tail.find('.');
    if (dot != std::string::npos) tail = tail.substr(0, dot);
    // trim spaces
    const auto b = tail.find_first_not_of(' ');
    if (b == std::string::npos) return "";
    const auto e = tail.find_last_not_of(' ');
    return tail.substr(b, e - b + 1);
}

} // namespace mars
