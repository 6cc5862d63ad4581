#include "riskrank/config.hpp"

#include <fstream>
#include <sstream>

#include "riskrank/errors.hpp"

namespace riskrank::config {

const char* to_string(Aggregator a) {
    switch (a) {
        case Aggregator::Hierarchical: return "hierarchical";
        case Aggregator::MeanPool: return "mean_pool";
        case Aggregator::MaxPool: return "max_pool";
    }
    return "hierarchical";
}

Aggregator aggregator_from_string(const std::string& name) {
    if (name == "hierarchical") return Aggregator::Hierarchical;
    if (name == "mean_pool") return Aggregator::MeanPool;
    if (name == "max_pool") return Aggregator::MaxPool;
    throw Error(ErrorKind::ConfigError, "unknown aggregator '" + name + "'");
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorKind::ConfigError, key + ": expected an integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorKind::ConfigError, key + ": expected a number, got '" + value + "'");
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& value) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            seeds.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw Error(ErrorKind::ConfigError, key + ": bad seed '" + item + "'");
        }
    }
    if (seeds.empty()) throw Error(ErrorKind::ConfigError, key + ": seed list is empty");
    return seeds;
}

} // namespace

RunConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream stream(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(stream, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::ConfigError,
                        "line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": empty key");
        }
        if (!kv.emplace(key, value).second) {
            throw Error(ErrorKind::ConfigError, "duplicate key '" + key + "'");
        }
    }

    auto version_it = kv.find("config_version");
    if (version_it == kv.end() || version_it->second != "1") {
        throw Error(ErrorKind::ConfigError, "config_version = 1 is required");
    }

    RunConfig cfg;
    cfg.snapshot = kv;
    for (const auto& [key, value] : kv) {
        if (key == "config_version") continue;
        else if (key == "corpus_jsonl") cfg.corpus_jsonl = value;
        else if (key == "returns_csv") cfg.returns_csv = value;
        else if (key == "output_dir") cfg.output_dir = value;
        else if (key == "labels_csv") cfg.labels_csv = value;
        else if (key == "split_file") cfg.split_file = value;
        else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
        else if (key == "measure") cfg.measure = riskmeasures::risk_measure_from_string(value);
        else if (key == "loss") cfg.loss = losses::loss_kind_from_string(value);
        else if (key == "aggregator") cfg.aggregator = aggregator_from_string(value);
        else if (key == "sortino_degenerate") {
            if (value == "exclude") cfg.sortino_degenerate = SortinoDegeneratePolicy::Exclude;
            else if (value == "top_bin") cfg.sortino_degenerate = SortinoDegeneratePolicy::TopBin;
            else throw Error(ErrorKind::ConfigError, "sortino_degenerate must be exclude or top_bin");
        }
        else if (key == "max_sentences") cfg.max_sentences = parse_int(key, value);
        else if (key == "max_tokens") cfg.max_tokens = parse_int(key, value);
        else if (key == "embed_dim") cfg.embed_dim = parse_int(key, value);
        else if (key == "attn_dim") cfg.attn_dim = parse_int(key, value);
        else if (key == "heads") cfg.heads = parse_int(key, value);
        else if (key == "ffn_width") cfg.ffn_width = parse_int(key, value);
        else if (key == "vocab_min_count") cfg.vocab_min_count = static_cast<std::size_t>(parse_int(key, value));
        else if (key == "epochs") cfg.epochs = parse_int(key, value);
        else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
        else if (key == "encoder_lr") cfg.encoder_lr = parse_double(key, value);
        else if (key == "head_lr") cfg.head_lr = parse_double(key, value);
        else if (key == "margin") cfg.margin = parse_double(key, value);
        else if (key == "k_fraction") cfg.k_fraction = parse_double(key, value);
        else if (key == "window_years") cfg.window_years = parse_int(key, value);
        else if (key == "seeds") cfg.seeds = parse_seed_list(key, value);
        else throw Error(ErrorKind::ConfigError, "unknown key '" + key + "'");
    }

    if (cfg.batch_size < 3) {
        throw Error(ErrorKind::ConfigError, "batch_size must be at least 3 for stratified batches");
    }
    if (cfg.epochs < 1) throw Error(ErrorKind::ConfigError, "epochs must be positive");
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    for (const auto& [key, value] : snapshot) {
        mix(key);
        mix(value);
    }
    return h;
}

netcore::ModelConfig RunConfig::model_config(int vocab_size, std::uint64_t seed) const {
    netcore::ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.embed_dim = embed_dim;
    mc.attn_dim = attn_dim;
    mc.heads = heads;
    mc.max_sentences = max_sentences;
    mc.max_tokens = max_tokens;
    mc.ffn_width = ffn_width;
    mc.seed = seed;
    mc.validate();
    return mc;
}

} // namespace riskrank::config
