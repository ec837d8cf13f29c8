#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heta/lm.h"

namespace heta::corpus {

// Planted-evidence instance: the answer is the segment-2 token right after the
// "key" marker; segment 1 is filler the answer never depends on.
struct CorpusSpec {
    int64_t n_records = 2000;
    int64_t seg1_len = 4;
    int64_t seg2_len = 5;
    int64_t n_answers = 32;
    int64_t n_questions = 8;
    bool random_labels = false;  // break the evidence->answer link (control corpus)
};

struct CorpusRecord {
    std::string id;
    std::vector<std::string> seg1, seg2, question;
    std::vector<std::string> answers;      // first entry is the target
    std::vector<int64_t> support;          // indices into seg2
    std::map<std::string, int64_t> meta;   // ordered so serialization is stable
};

// Reserved ids 0..2, then "key", n answer tokens, n question tokens, fillers.
lm::Vocab build_default_vocab(int64_t size = 512, int64_t n_answers = 32,
                              int64_t n_questions = 8);

std::vector<CorpusRecord> generate_planted_corpus(const CorpusSpec& spec, const lm::Vocab& vocab,
                                                  uint64_t seed);

void save_corpus(const std::vector<CorpusRecord>& records, const std::string& path);
std::vector<CorpusRecord> load_corpus(const std::string& path);

// Model input layout: seg1 <s> seg2 <s> question; the answer is the next-token
// target at the last input position.
struct InstanceTokens {
    std::vector<int64_t> input;
    int64_t target = -1;
    int64_t seg1_begin = 0, seg1_end = 0;  // [begin, end) input positions
    int64_t seg2_begin = 0, seg2_end = 0;
    std::vector<int64_t> support_global;   // support mapped to input positions
};

// Strict encoding: any token missing from the vocab is an error, never <unk>.
InstanceTokens instance_tokens(const CorpusRecord& rec, const lm::Vocab& vocab);

// Training pairs (input tokens -> answer token) for the whole corpus.
std::vector<lm::TrainExample> to_train_examples(const std::vector<CorpusRecord>& records,
                                                const lm::Vocab& vocab);

}  // namespace heta::corpus
