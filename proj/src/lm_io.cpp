#include <json.hpp>

#include <cstring>
#include <fstream>

#include "heta/lm.h"

namespace heta::lm {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'H', 'E', 'T', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;
constexpr int kVocabVersion = 1;

json config_to_json(const ModelConfig& c) {
    return json{{"layers", c.layers}, {"heads", c.heads},   {"d", c.d},
                {"vocab", c.vocab},   {"maxlen", c.maxlen}, {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.d = j.at("d").get<int64_t>();
    c.vocab = j.at("vocab").get<int64_t>();
    c.maxlen = j.at("maxlen").get<int64_t>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

void Vocab::save(const std::string& path) const {
    json j;
    j["schema_version"] = kVocabVersion;
    j["tokens"] = tokens_;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("vocab save: cannot open " + path);
    f << j.dump(1, ' ') << "\n";
    if (!f) throw IoError("vocab save: write failed for " + path);
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("vocab load: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("vocab load: malformed JSON in " + path + ": " + e.what());
    }
    int ver = j.value("schema_version", -1);
    if (ver != kVocabVersion)
        throw IoError("vocab load: unsupported schema_version " + std::to_string(ver) +
                      " in " + path + " (expected " + std::to_string(kVocabVersion) + ")");
    return Vocab(j.at("tokens").get<std::vector<std::string>>());
}

void Model::save(const std::string& path) const {
    json params = json::array();
    int64_t total = 0;
    for_each_param([&](const std::string& n, const Tensor& t) {
        params.push_back(json{
            {"name", n}, {"rows", t.rows()}, {"cols", t.cols()}, {"rank", t.rank()}});
        total += t.numel();
    });
    json header;
    header["format_version"] = kCheckpointVersion;
    header["config"] = config_to_json(cfg_);
    header["vocab_hash"] = vocab_hash_;
    header["param_count"] = total;
    header["params"] = params;
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint save: cannot open " + path);
    f.write(kMagic, 8);
    uint32_t ver = kCheckpointVersion;
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&ver), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for_each_param([&](const std::string&, const Tensor& t) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * 8));
    });
    if (!f) throw IoError("checkpoint save: write failed for " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint load: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("checkpoint load: " + path + " is not a checkpoint file");
    uint32_t ver = 0, hlen = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (!f) throw IoError("checkpoint load: truncated header in " + path);
    if (ver != kCheckpointVersion)
        throw IoError("checkpoint load: unsupported format_version " + std::to_string(ver) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw IoError("checkpoint load: truncated header in " + path);
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw IoError("checkpoint load: malformed header in " + path + ": " + e.what());
    }

    ModelConfig cfg = config_from_json(header.at("config"));

    // Allocate in canonical order, then verify the recorded layout matches.
    Model fresh(cfg, header.at("vocab_hash").get<uint64_t>());
    fresh.wte = Tensor::mat(cfg.vocab, cfg.d);
    fresh.wpe = Tensor::mat(cfg.maxlen, cfg.d);
    fresh.layers.resize(static_cast<size_t>(cfg.layers));
    for (LayerParams& lp : fresh.layers) {
        lp.ln1_g = Tensor::vec(cfg.d);
        lp.ln1_b = Tensor::vec(cfg.d);
        lp.wq = Tensor::mat(cfg.d, cfg.d);
        lp.bq = Tensor::vec(cfg.d);
        lp.wk = Tensor::mat(cfg.d, cfg.d);
        lp.bk = Tensor::vec(cfg.d);
        lp.wv = Tensor::mat(cfg.d, cfg.d);
        lp.bv = Tensor::vec(cfg.d);
        lp.wo = Tensor::mat(cfg.d, cfg.d);
        lp.bo = Tensor::vec(cfg.d);
        lp.ln2_g = Tensor::vec(cfg.d);
        lp.ln2_b = Tensor::vec(cfg.d);
        lp.w1 = Tensor::mat(cfg.d, 4 * cfg.d);
        lp.b1 = Tensor::vec(4 * cfg.d);
        lp.w2 = Tensor::mat(4 * cfg.d, cfg.d);
        lp.b2 = Tensor::vec(cfg.d);
    }
    fresh.lnf_g = Tensor::vec(cfg.d);
    fresh.lnf_b = Tensor::vec(cfg.d);
    fresh.wu = Tensor::mat(cfg.d, cfg.vocab);

    const json& params = header.at("params");
    size_t pi = 0;
    fresh.for_each_param([&](const std::string& n, Tensor& t) {
        if (pi >= params.size())
            throw IoError("checkpoint load: header lists too few params in " + path);
        const json& pj = params[pi++];
        if (pj.at("name").get<std::string>() != n || pj.at("rows").get<int64_t>() != t.rows() ||
            pj.at("cols").get<int64_t>() != t.cols() || pj.at("rank").get<int>() != t.rank())
            throw IoError("checkpoint load: parameter layout mismatch at '" + n + "' in " + path);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * 8));
        if (!f) throw IoError("checkpoint load: truncated blob at '" + n + "' in " + path);
        if (!t.all_finite())
            throw IoError("checkpoint load: non-finite values in '" + n + "' in " + path);
    });
    if (pi != params.size())
        throw IoError("checkpoint load: header lists extra params in " + path);
    // No trailing bytes allowed.
    char extra;
    f.read(&extra, 1);
    if (!f.eof()) throw IoError("checkpoint load: trailing bytes in " + path);
    return fresh;
}

}  // namespace heta::lm
