#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mars {

struct CorpusRecord {
    std::string prompt;
    std::string response;
};

struct Corpus {
    std::vector<CorpusRecord> records;
};

enum class TaskKind { arith, copy_word, seq, mix };

TaskKind parse_task(const std::string& name);  // throws on unknown name
std::string task_name(TaskKind task);

// Synthetic instruction data with a fixed phrasing and variable content:
// templated arithmetic, word echo, and next-in-sequence tasks. Every record
// ends with "... is <answer>." so one extractor serves all tasks.
struct CorpusSpec {
    TaskKind task = TaskKind::mix;
    int n = 256;
    uint64_t seed = 7;
    int min_operand = 2;
    int max_operand = 9;
    bool restate_answer = false;  // appends a second "the answer is X." clause
};

Corpus gen_corpus(const CorpusSpec& spec);

// Line-delimited records; each line is a flat object with exactly the fields
// "prompt" and "response". Unknown fields or characters are rejected.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

struct CorpusStats {
    int records = 0;
    std::map<int, int> response_length_histogram;
    int max_prompt_len = 0;
    int max_response_len = 0;
};

CorpusStats corpus_stats(const Corpus& corpus);

// Deterministic answer span: the text after the last " is ", up to the first
// following '.', trimmed. Empty string when the pattern is absent.
std::string extract_answer(const std::string& text);

} // namespace mars
