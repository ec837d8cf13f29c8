#include "heta/corpus.h"

#include <cstdio>

#include "heta/jsonl.h"
#include "heta/rng.h"

namespace heta::corpus {

namespace {

using nlohmann::json;

constexpr int kCorpusVersion = 1;

std::string numbered(const char* stem, int64_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%0*lld", stem, width, static_cast<long long>(i));
    return buf;
}

}  // namespace

lm::Vocab build_default_vocab(int64_t size, int64_t n_answers, int64_t n_questions) {
    int64_t reserved = 3 + 1 + n_answers + n_questions;  // specials + "key"
    if (size < reserved + 8)
        throw ConfigError("vocab spec: size " + std::to_string(size) +
                          " too small for answers/questions plus fillers");
    std::vector<std::string> toks = {"<unk>", "<sentinel>", "<s>", "key"};
    for (int64_t i = 0; i < n_answers; ++i) toks.push_back(numbered("a", i, 2));
    for (int64_t i = 0; i < n_questions; ++i) toks.push_back(numbered("q", i, 1));
    int64_t fillers = size - static_cast<int64_t>(toks.size());
    for (int64_t i = 0; i < fillers; ++i) toks.push_back(numbered("w", i, 4));
    return lm::Vocab(std::move(toks));
}

std::vector<CorpusRecord> generate_planted_corpus(const CorpusSpec& spec, const lm::Vocab& vocab,
                                                  uint64_t seed) {
    if (spec.seg1_len < 1 || spec.seg2_len < 2)
        throw ConfigError("corpus spec: segment lengths too small");
    if (spec.n_records < 1) throw ConfigError("corpus spec: need at least one record");

    // Collect the token pools from the vocab itself so any compatible vocab works.
    std::vector<std::string> answers, questions, fillers;
    for (int64_t i = 3; i < vocab.size(); ++i) {
        const std::string& t = vocab.token(i);
        if (t[0] == 'a')
            answers.push_back(t);
        else if (t[0] == 'q')
            questions.push_back(t);
        else if (t[0] == 'w')
            fillers.push_back(t);
    }
    if (static_cast<int64_t>(answers.size()) < spec.n_answers ||
        static_cast<int64_t>(questions.size()) < spec.n_questions ||
        fillers.size() < 8)
        throw ConfigError("corpus spec: vocab too small for requested answer/question pools");
    answers.resize(static_cast<size_t>(spec.n_answers));
    questions.resize(static_cast<size_t>(spec.n_questions));

    Rng rng(derive_seed(seed, seed_tag::kCorpus));
    auto pick = [&rng](const std::vector<std::string>& pool) {
        return pool[rng.next_below(pool.size())];
    };

    std::vector<CorpusRecord> out;
    out.reserve(static_cast<size_t>(spec.n_records));
    for (int64_t r = 0; r < spec.n_records; ++r) {
        CorpusRecord rec;
        rec.id = numbered("inst-", r, 6);
        for (int64_t i = 0; i < spec.seg1_len; ++i) rec.seg1.push_back(pick(fillers));
        int64_t key_pos = static_cast<int64_t>(rng.next_below(
            static_cast<uint64_t>(spec.seg2_len - 1)));
        std::string evidence = pick(answers);
        for (int64_t i = 0; i < spec.seg2_len; ++i) {
            if (i == key_pos)
                rec.seg2.push_back("key");
            else if (i == key_pos + 1)
                rec.seg2.push_back(evidence);
            else
                rec.seg2.push_back(pick(fillers));
        }
        rec.question.push_back(pick(questions));
        rec.answers.push_back(spec.random_labels ? pick(answers) : evidence);
        rec.support.push_back(key_pos + 1);
        rec.meta["key_pos"] = key_pos;
        if (spec.random_labels) rec.meta["random_labels"] = 1;
        out.push_back(std::move(rec));
    }
    return out;
}

void save_corpus(const std::vector<CorpusRecord>& records, const std::string& path) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const CorpusRecord& r : records) {
        json j;
        j["schema_version"] = kCorpusVersion;
        j["id"] = r.id;
        j["seg1"] = r.seg1;
        j["seg2"] = r.seg2;
        j["question"] = r.question;
        j["answers"] = r.answers;
        j["support"] = r.support;
        j["meta"] = r.meta;
        rows.push_back(std::move(j));
    }
    write_jsonl(path, rows);
}

std::vector<CorpusRecord> load_corpus(const std::string& path) {
    std::vector<json> rows = read_jsonl(path, kCorpusVersion);
    std::vector<CorpusRecord> out;
    out.reserve(rows.size());
    size_t lineno = 0;
    for (const json& j : rows) {
        ++lineno;
        auto fail = [&](const std::string& why) {
            throw IoError(path + ":" + std::to_string(lineno) + ": " + why);
        };
        CorpusRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.seg1 = j.at("seg1").get<std::vector<std::string>>();
            r.seg2 = j.at("seg2").get<std::vector<std::string>>();
            r.question = j.at("question").get<std::vector<std::string>>();
            r.answers = j.at("answers").get<std::vector<std::string>>();
            r.support = j.at("support").get<std::vector<int64_t>>();
            r.meta = j.value("meta", std::map<std::string, int64_t>{});
        } catch (const json::exception& e) {
            fail(std::string("missing or mistyped field: ") + e.what());
        }
        if (r.answers.empty()) fail("record has no answer");
        if (r.support.empty()) fail("record has empty support");
        for (int64_t s : r.support)
            if (s < 0 || s >= static_cast<int64_t>(r.seg2.size()))
                fail("support index " + std::to_string(s) + " outside segment 2");
        out.push_back(std::move(r));
    }
    return out;
}

InstanceTokens instance_tokens(const CorpusRecord& rec, const lm::Vocab& vocab) {
    auto strict = [&vocab, &rec](const std::string& t) {
        if (!vocab.contains(t))
            throw IncompatibleError("record " + rec.id + ": token '" + t + "' not in vocab");
        return vocab.id(t);
    };
    InstanceTokens it;
    it.seg1_begin = 0;
    for (const std::string& t : rec.seg1) it.input.push_back(strict(t));
    it.seg1_end = static_cast<int64_t>(it.input.size());
    it.input.push_back(lm::Vocab::kSep);
    it.seg2_begin = static_cast<int64_t>(it.input.size());
    for (const std::string& t : rec.seg2) it.input.push_back(strict(t));
    it.seg2_end = static_cast<int64_t>(it.input.size());
    it.input.push_back(lm::Vocab::kSep);
    for (const std::string& t : rec.question) it.input.push_back(strict(t));
    it.target = strict(rec.answers[0]);
    for (int64_t s : rec.support) it.support_global.push_back(it.seg2_begin + s);
    return it;
}

std::vector<lm::TrainExample> to_train_examples(const std::vector<CorpusRecord>& records,
                                                const lm::Vocab& vocab) {
    std::vector<lm::TrainExample> out;
    out.reserve(records.size());
    for (const CorpusRecord& r : records) {
        InstanceTokens it = instance_tokens(r, vocab);
        out.push_back({std::move(it.input), it.target});
    }
    return out;
}

}  // namespace heta::corpus
