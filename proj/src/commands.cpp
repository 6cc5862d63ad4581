#include "riskrank/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "riskrank/errors.hpp"
#include "riskrank/trainer.hpp"

namespace riskrank::commands {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp);
        out << content;
    }
    fs::rename(tmp, path);
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) {
        throw Error(ErrorKind::ConfigError, "config does not set " + what);
    }
    if (!fs::exists(path)) {
        throw Error(ErrorKind::IoError, what + " does not exist: " + path);
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

int year_of_date(const std::string& iso_date) {
    if (iso_date.size() < 4) throw Error(ErrorKind::IoError, "bad ISO date '" + iso_date + "'");
    return std::stoi(iso_date.substr(0, 4));
}

// Returns CSV rows grouped into per-company-year panels, sorted by date.
std::map<std::pair<int, std::string>, riskmeasures::ReturnPanel> read_return_panels(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open returns CSV " + path);

    std::string header;
    if (!std::getline(in, header)) throw Error(ErrorKind::IoError, "empty returns CSV " + path);
    const auto columns = split_csv_line(header);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < columns.size(); ++i) index[columns[i]] = i;
    for (const char* required : {"date", "company_id", "ret", "rf", "mkt_rf", "smb", "hml"}) {
        if (!index.count(required)) {
            throw Error(ErrorKind::IoError, std::string("returns CSV lacks column ") + required);
        }
    }

    struct Row {
        std::string date;
        double ret, rf, mkt, smb, hml;
    };
    std::map<std::pair<int, std::string>, std::vector<Row>> grouped;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() < columns.size()) {
            throw Error(ErrorKind::IoError,
                        path + ":" + std::to_string(lineno) + ": short row");
        }
        Row row;
        row.date = fields[index["date"]];
        try {
            row.ret = std::stod(fields[index["ret"]]);
            row.rf = std::stod(fields[index["rf"]]);
            row.mkt = std::stod(fields[index["mkt_rf"]]);
            row.smb = std::stod(fields[index["smb"]]);
            row.hml = std::stod(fields[index["hml"]]);
        } catch (const std::exception&) {
            throw Error(ErrorKind::IoError, path + ":" + std::to_string(lineno) + ": bad number");
        }
        grouped[{year_of_date(row.date), fields[index["company_id"]]}].push_back(std::move(row));
    }

    std::map<std::pair<int, std::string>, riskmeasures::ReturnPanel> panels;
    for (auto& [key, rows] : grouped) {
        std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
        riskmeasures::ReturnPanel panel;
        panel.company_id = key.second;
        for (const Row& row : rows) {
            panel.dates.push_back(row.date);
            panel.returns.push_back(row.ret);
            panel.risk_free.push_back(row.rf);
            panel.mkt_rf.push_back(row.mkt);
            panel.smb.push_back(row.smb);
            panel.hml.push_back(row.hml);
        }
        panels.emplace(key, std::move(panel));
    }
    return panels;
}

constexpr riskmeasures::RiskMeasure kAllMeasures[] = {
    riskmeasures::RiskMeasure::Std,
    riskmeasures::RiskMeasure::Skew,
    riskmeasures::RiskMeasure::Kurt,
    riskmeasures::RiskMeasure::Sortino,
};

double measure_value(const riskmeasures::RiskProfile& p, riskmeasures::RiskMeasure m) {
    switch (m) {
        case riskmeasures::RiskMeasure::Std: return p.sigma;
        case riskmeasures::RiskMeasure::Skew: return p.skew;
        case riskmeasures::RiskMeasure::Kurt: return p.kurt;
        case riskmeasures::RiskMeasure::Sortino: return p.sortino;
    }
    return p.sigma;
}

struct LabelKey {
    std::string company_id;
    int year;
    riskmeasures::RiskMeasure measure;
    bool operator<(const LabelKey& o) const {
        if (company_id != o.company_id) return company_id < o.company_id;
        if (year != o.year) return year < o.year;
        return static_cast<int>(measure) < static_cast<int>(o.measure);
    }
};

std::map<LabelKey, LabelRow> label_index(const std::vector<LabelRow>& rows) {
    std::map<LabelKey, LabelRow> index;
    for (const LabelRow& row : rows) index[{row.company_id, row.year, row.measure}] = row;
    return index;
}

std::string run_key(int year, std::uint64_t seed) {
    return std::to_string(year) + ":" + std::to_string(seed);
}

std::vector<std::uint64_t> effective_seeds(const config::RunConfig& cfg, const CommandOptions& opts) {
    if (opts.seed) return {*opts.seed};
    return cfg.seeds;
}

riskmeasures::RiskMeasure effective_measure(const config::RunConfig& cfg, const CommandOptions& opts) {
    return opts.measure.value_or(cfg.measure);
}

losses::LossKind effective_loss(const config::RunConfig& cfg, const CommandOptions& opts) {
    return opts.loss.value_or(cfg.loss);
}

struct LoadedSplitData {
    std::vector<corpus::RawDocument> raw_docs;
    std::vector<LabelRow> labels;
    std::vector<SplitEntry> splits;
};

LoadedSplitData load_pipeline_inputs(const config::RunConfig& cfg) {
    require_file(cfg.corpus_jsonl, "corpus_jsonl");
    require_file(cfg.labels_csv, "labels_csv");
    require_file(cfg.split_file, "split_file");
    LoadedSplitData data;
    data.raw_docs = corpus::load_jsonl(cfg.corpus_jsonl);
    data.labels = read_labels_csv(cfg.labels_csv);
    data.splits = read_split_file(cfg.split_file);
    return data;
}

// Documents of the given years that carry a label for the measure, paired
// with their bins, in corpus order.
struct LabeledDocs {
    std::vector<corpus::RawDocument> docs;
    std::vector<int> bins;
    std::size_t unlabeled = 0;
};

LabeledDocs select_labeled(const std::vector<corpus::RawDocument>& raw,
                           const std::set<int>& years,
                           const std::map<LabelKey, LabelRow>& labels,
                           riskmeasures::RiskMeasure measure) {
    LabeledDocs out;
    for (const auto& doc : raw) {
        if (!years.count(doc.year)) continue;
        auto it = labels.find({doc.doc_id, doc.year, measure});
        if (it == labels.end()) {
            ++out.unlabeled;
            continue;
        }
        out.docs.push_back(doc);
        out.bins.push_back(it->second.bin);
    }
    return out;
}

std::vector<corpus::EncodedDocument> encode_all(const std::vector<corpus::RawDocument>& raw,
                                                const corpus::Vocabulary& vocab,
                                                const config::RunConfig& cfg) {
    std::vector<corpus::EncodedDocument> encoded;
    encoded.reserve(raw.size());
    for (const auto& doc : raw) {
        corpus::EncodedDocument enc =
            corpus::encode_document(doc.text, vocab, cfg.max_sentences, cfg.max_tokens);
        enc.doc_id = doc.doc_id;
        enc.year = doc.year;
        encoded.push_back(std::move(enc));
    }
    return encoded;
}

std::string vocab_path(const std::string& dir, int year) {
    return dir + "/vocab_" + std::to_string(year) + ".txt";
}

std::string checkpoint_path(const std::string& dir, int year, std::uint64_t seed) {
    return dir + "/checkpoint_" + std::to_string(year) + "_seed" + std::to_string(seed) + ".bin";
}

} // namespace

std::string make_run_dir(const config::RunConfig& cfg, const std::string& run_name_override) {
    if (cfg.output_dir.empty()) {
        throw Error(ErrorKind::ConfigError, "config does not set output_dir");
    }
    std::string name = run_name_override;
    if (name.empty()) {
        char hex[24];
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(cfg.hash()));
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        const auto stamp = std::chrono::duration_cast<std::chrono::seconds>(now).count();
        name = std::string(hex) + "-" + std::to_string(stamp);
    }
    const fs::path dir = fs::path(cfg.output_dir) / name;
    fs::create_directories(dir);
    return dir.string();
}

std::vector<LabelRow> read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open labels CSV " + path);
    std::string line;
    if (!std::getline(in, line) || line != "company_id,year,measure,value,bin") {
        throw Error(ErrorKind::IoError, "unrecognized labels CSV header in " + path);
    }
    std::vector<LabelRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw Error(ErrorKind::IoError, path + ":" + std::to_string(lineno) + ": expected 5 fields");
        }
        LabelRow row;
        row.company_id = fields[0];
        row.year = std::stoi(fields[1]);
        row.measure = riskmeasures::risk_measure_from_string(fields[2]);
        row.value = std::stod(fields[3]);
        row.bin = std::stoi(fields[4]);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_labels_csv(const std::vector<LabelRow>& rows, const std::string& path) {
    std::string out = "company_id,year,measure,value,bin\n";
    for (const LabelRow& row : rows) {
        out += row.company_id + "," + std::to_string(row.year) + "," +
               riskmeasures::to_string(row.measure) + "," + format_double(row.value) + "," +
               std::to_string(row.bin) + "\n";
    }
    atomic_write(path, out);
}

std::vector<SplitEntry> read_split_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open split file " + path);
    json j;
    in >> j;
    std::vector<SplitEntry> splits;
    for (const auto& js : j.at("splits")) {
        SplitEntry entry;
        entry.test_year = js.at("test_year").get<int>();
        entry.train_years = js.at("train_years").get<std::vector<int>>();
        entry.train_docs = js.at("train_docs").get<std::vector<std::string>>();
        entry.test_docs = js.at("test_docs").get<std::vector<std::string>>();
        splits.push_back(std::move(entry));
    }
    return splits;
}

void write_split_file(const std::vector<SplitEntry>& splits, const std::string& path) {
    json j;
    j["splits"] = json::array();
    for (const SplitEntry& entry : splits) {
        json js;
        js["test_year"] = entry.test_year;
        js["train_years"] = entry.train_years;
        js["train_docs"] = entry.train_docs;
        js["test_docs"] = entry.test_docs;
        j["splits"].push_back(std::move(js));
    }
    atomic_write(path, j.dump(2) + "\n");
}

void RunManifest::save(const std::string& path) const {
    json j;
    j["tool_version"] = tool_version;
    j["config"] = config_snapshot;
    json hashes = json::object();
    for (const auto& [year, hash] : vocab_hash_by_year) hashes[std::to_string(year)] = hash;
    j["vocab_hash_by_year"] = hashes;
    j["checkpoints"] = checkpoints;
    j["eval_reports"] = eval_reports;
    j["trained_doc_ids"] = trained_doc_ids;
    atomic_write(path, j.dump(2) + "\n");
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open manifest " + path);
    json j;
    in >> j;
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_snapshot = j.at("config").get<std::map<std::string, std::string>>();
    for (const auto& [year, hash] : j.at("vocab_hash_by_year").items()) {
        m.vocab_hash_by_year[std::stoi(year)] = hash.get<std::uint64_t>();
    }
    m.checkpoints = j.at("checkpoints").get<std::map<std::string, std::string>>();
    m.eval_reports = j.at("eval_reports").get<std::map<std::string, std::string>>();
    m.trained_doc_ids =
        j.at("trained_doc_ids").get<std::map<std::string, std::vector<std::string>>>();
    return m;
}

std::string cmd_label(const config::RunConfig& cfg, const CommandOptions& opts) {
    require_file(cfg.returns_csv, "returns_csv");
    const std::string run_dir = make_run_dir(cfg, opts.run_name);

    const auto panels = read_return_panels(cfg.returns_csv);

    struct CompanyProfile {
        std::string company_id;
        riskmeasures::RiskProfile profile;
    };
    std::map<int, std::vector<CompanyProfile>> by_year;
    std::size_t skipped = 0;
    for (const auto& [key, panel] : panels) {
        if (panel.size() < 60) {
            std::cerr << "riskrank label: skipping " << panel.company_id << " year " << key.first
                      << " (" << panel.size() << " observations, need 60)\n";
            ++skipped;
            continue;
        }
        const auto fit = riskmeasures::fit_ff3m(panel);
        by_year[key.first].push_back({panel.company_id, riskmeasures::risk_profile(fit)});
    }

    std::vector<LabelRow> rows;
    for (const auto& [year, companies] : by_year) {
        for (riskmeasures::RiskMeasure measure : kAllMeasures) {
            std::vector<std::size_t> pool; // indices entering the percentile ranking
            std::vector<double> values;
            std::vector<LabelRow> extra; // top-bin policy rows, outside the pool
            for (std::size_t i = 0; i < companies.size(); ++i) {
                const auto& cp = companies[i];
                if (measure == riskmeasures::RiskMeasure::Sortino && !cp.profile.sortino_defined) {
                    if (cfg.sortino_degenerate == config::SortinoDegeneratePolicy::TopBin) {
                        extra.push_back({cp.company_id, year, measure,
                                         std::numeric_limits<double>::infinity(), 2});
                    } else {
                        std::cerr << "riskrank label: " << cp.company_id << " year " << year
                                  << " has no downside residuals; excluded from sortino labels\n";
                    }
                    continue;
                }
                pool.push_back(i);
                values.push_back(measure_value(cp.profile, measure));
            }
            if (values.size() < 3) {
                std::cerr << "riskrank label: year " << year << " measure " << to_string(measure)
                          << " has fewer than 3 companies; skipped\n";
                continue;
            }
            const std::vector<int> bins = riskmeasures::bin_by_percentile(values);
            for (std::size_t i = 0; i < pool.size(); ++i) {
                rows.push_back({companies[pool[i]].company_id, year, measure, values[i], bins[i]});
            }
            for (const LabelRow& row : extra) rows.push_back(row);
        }
    }
    if (rows.empty()) {
        throw Error(ErrorKind::EmptyOutput, "no company-year produced a label (" +
                                                std::to_string(skipped) + " skipped)");
    }

    std::sort(rows.begin(), rows.end(), [](const LabelRow& a, const LabelRow& b) {
        if (a.year != b.year) return a.year < b.year;
        if (a.company_id != b.company_id) return a.company_id < b.company_id;
        return static_cast<int>(a.measure) < static_cast<int>(b.measure);
    });
    write_labels_csv(rows, run_dir + "/labels.csv");
    return run_dir;
}

std::string cmd_split(const config::RunConfig& cfg, const CommandOptions& opts) {
    require_file(cfg.corpus_jsonl, "corpus_jsonl");
    require_file(cfg.labels_csv, "labels_csv");
    const std::string run_dir = make_run_dir(cfg, opts.run_name);

    const auto docs = corpus::load_jsonl(cfg.corpus_jsonl);
    const auto labels = read_labels_csv(cfg.labels_csv);

    std::set<int> year_set;
    for (const LabelRow& row : labels) year_set.insert(row.year);
    const std::vector<int> years(year_set.begin(), year_set.end());
    const auto splits = riskmeasures::rolling_origin_splits(years, cfg.window_years);

    std::vector<SplitEntry> entries;
    for (const auto& split : splits) {
        SplitEntry entry;
        entry.test_year = split.test_year;
        entry.train_years = split.train_years;
        const std::set<int> train_years(split.train_years.begin(), split.train_years.end());
        // Companies recur across years, so document references carry the
        // year: the two sides stay disjoint as plain strings.
        for (const auto& doc : docs) {
            const std::string ref = doc.doc_id + ":" + std::to_string(doc.year);
            if (doc.year == split.test_year) entry.test_docs.push_back(ref);
            else if (train_years.count(doc.year)) entry.train_docs.push_back(ref);
        }
        entries.push_back(std::move(entry));
    }
    write_split_file(entries, run_dir + "/splits.json");
    return run_dir;
}

std::string cmd_train(const config::RunConfig& cfg, const CommandOptions& opts) {
    const std::string run_dir = make_run_dir(cfg, opts.run_name);
    const auto data = load_pipeline_inputs(cfg);
    const auto labels = label_index(data.labels);
    const auto measure = effective_measure(cfg, opts);
    const auto loss = effective_loss(cfg, opts);
    const auto seeds = effective_seeds(cfg, opts);

    RunManifest manifest;
    manifest.config_snapshot = cfg.snapshot;

    for (const SplitEntry& split : data.splits) {
        const std::set<int> train_years(split.train_years.begin(), split.train_years.end());
        const LabeledDocs train = select_labeled(data.raw_docs, train_years, labels, measure);
        if (train.unlabeled > 0) {
            std::cerr << "riskrank train: " << train.unlabeled << " training documents without a "
                      << to_string(measure) << " label for test year " << split.test_year << "\n";
        }
        if (train.docs.empty()) {
            throw Error(ErrorKind::EmptyCorpus,
                        "no labeled training documents for test year " +
                            std::to_string(split.test_year));
        }

        std::vector<std::string> texts;
        texts.reserve(train.docs.size());
        for (const auto& doc : train.docs) texts.push_back(doc.text);
        const corpus::Vocabulary vocab = corpus::Vocabulary::build(texts, cfg.vocab_min_count);
        vocab.save(vocab_path(run_dir, split.test_year));
        manifest.vocab_hash_by_year[split.test_year] = vocab.hash();

        const auto encoded = encode_all(train.docs, vocab, cfg);

        trainer::TrainOptions topts;
        topts.model = cfg.model_config(static_cast<int>(vocab.size()), 0);
        topts.loss = loss;
        topts.aggregator = cfg.aggregator;
        topts.margin = cfg.margin;
        topts.epochs = cfg.epochs;
        topts.batch_size = cfg.batch_size;
        topts.encoder_lr = cfg.encoder_lr;
        topts.head_lr = cfg.head_lr;

        for (std::uint64_t seed : seeds) {
            const trainer::TrainResult result = trainer::train_model(encoded, train.bins, topts, seed);

            const std::string ckpt = checkpoint_path(run_dir, split.test_year, seed);
            const std::string tmp = ckpt + ".tmp";
            netcore::save_checkpoint(result.state, tmp);
            fs::rename(tmp, ckpt);
            manifest.checkpoints[run_key(split.test_year, seed)] = ckpt;

            std::string log = "epoch,batch,loss\n";
            std::size_t batch_index = 0;
            const std::size_t per_epoch = result.batch_losses.size() / result.epoch_losses.size();
            for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
                for (std::size_t b = 0; b < per_epoch; ++b, ++batch_index) {
                    log += std::to_string(e) + "," + std::to_string(b) + "," +
                           format_double(result.batch_losses[batch_index]) + "\n";
                }
            }
            atomic_write(run_dir + "/loss_" + std::to_string(split.test_year) + "_seed" +
                             std::to_string(seed) + ".csv",
                         log);

            std::vector<std::string> ids;
            ids.reserve(train.docs.size());
            for (const auto& doc : train.docs) {
                ids.push_back(doc.doc_id + ":" + std::to_string(doc.year));
            }
            manifest.trained_doc_ids[run_key(split.test_year, seed)] = std::move(ids);
        }
    }
    manifest.save(run_dir + "/manifest.json");
    return run_dir;
}

namespace {

struct EvalCell {
    int year;
    std::uint64_t seed;
    metrics::EvalReport report;
};

// Reads report_<year>_seed<seed>.json files from a run directory.
std::map<std::string, metrics::EvalReport> collect_reports(const std::string& run_dir) {
    const RunManifest manifest = RunManifest::load(run_dir + "/manifest.json");
    std::map<std::string, metrics::EvalReport> reports;
    for (const auto& [key, path] : manifest.eval_reports) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::IoError, "missing eval report " + path);
        std::stringstream buffer;
        buffer << in.rdbuf();
        reports[key] = metrics::EvalReport::from_json(buffer.str());
    }
    return reports;
}

json cohens_d_json(const std::map<std::string, metrics::EvalReport>& a,
                   const std::map<std::string, metrics::EvalReport>& b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::PairingError, "compared runs cover different (year, seed) grids");
    }
    std::vector<double> f1_a, f1_b, rho_a, rho_b, tau_a, tau_b;
    for (const auto& [key, report] : a) {
        auto it = b.find(key);
        if (it == b.end()) {
            throw Error(ErrorKind::PairingError, "run B lacks cell " + key);
        }
        f1_a.push_back(report.macro_f1);
        rho_a.push_back(report.spearman_rho);
        tau_a.push_back(report.kendall_tau_b);
        f1_b.push_back(it->second.macro_f1);
        rho_b.push_back(it->second.spearman_rho);
        tau_b.push_back(it->second.kendall_tau_b);
    }
    auto d_or_null = [](const std::vector<double>& x, const std::vector<double>& y) -> json {
        try {
            return metrics::paired_cohens_d(x, y);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::DegenerateDifferences) return nullptr; // undefined
            throw;
        }
    };
    json j;
    j["cells"] = a.size();
    j["macro_f1"] = d_or_null(f1_a, f1_b);
    j["spearman_rho"] = d_or_null(rho_a, rho_b);
    j["kendall_tau_b"] = d_or_null(tau_a, tau_b);
    return j;
}

struct CheckpointBundle {
    netcore::ModelState state;
    corpus::Vocabulary vocab;
};

CheckpointBundle load_split_checkpoint(const config::RunConfig& cfg, int year, std::uint64_t seed) {
    require_file(cfg.checkpoint_dir, "checkpoint_dir");
    const RunManifest manifest = RunManifest::load(cfg.checkpoint_dir + "/manifest.json");
    auto it = manifest.checkpoints.find(run_key(year, seed));
    if (it == manifest.checkpoints.end()) {
        throw Error(ErrorKind::NotFound, "no checkpoint for test year " + std::to_string(year) +
                                             " seed " + std::to_string(seed));
    }
    CheckpointBundle bundle{netcore::load_checkpoint(it->second),
                            corpus::Vocabulary::load(vocab_path(cfg.checkpoint_dir, year))};
    const auto hash_it = manifest.vocab_hash_by_year.find(year);
    if (hash_it == manifest.vocab_hash_by_year.end() || hash_it->second != bundle.vocab.hash()) {
        throw Error(ErrorKind::IoError, "vocabulary hash mismatch for test year " +
                                            std::to_string(year));
    }
    return bundle;
}

} // namespace

std::string cmd_eval(const config::RunConfig& cfg, const CommandOptions& opts) {
    const std::string run_dir = make_run_dir(cfg, opts.run_name);

    if (!opts.compare_a.empty() || !opts.compare_b.empty()) {
        if (opts.compare_a.empty() || opts.compare_b.empty()) {
            throw Error(ErrorKind::ConfigError, "comparison needs both run directories");
        }
        const auto a = collect_reports(opts.compare_a);
        const auto b = collect_reports(opts.compare_b);
        atomic_write(run_dir + "/cohens_d.json", cohens_d_json(a, b).dump(2) + "\n");
        return run_dir;
    }

    const auto data = load_pipeline_inputs(cfg);
    const auto labels = label_index(data.labels);
    const auto measure = effective_measure(cfg, opts);
    const auto loss = effective_loss(cfg, opts);
    const auto seeds = effective_seeds(cfg, opts);
    const auto kind = trainer::score_kind_for(loss);

    RunManifest manifest;
    manifest.config_snapshot = cfg.snapshot;

    json summary = json::object();
    for (const SplitEntry& split : data.splits) {
        const LabeledDocs test = select_labeled(data.raw_docs, {split.test_year}, labels, measure);
        if (test.docs.empty()) {
            throw Error(ErrorKind::EmptyCorpus,
                        "no labeled test documents for year " + std::to_string(split.test_year));
        }

        std::vector<double> f1s, rhos, taus;
        for (std::uint64_t seed : seeds) {
            const CheckpointBundle bundle = load_split_checkpoint(cfg, split.test_year, seed);
            const auto encoded = encode_all(test.docs, bundle.vocab, cfg);
            const auto scores =
                trainer::score_documents(bundle.state, encoded, cfg.aggregator, kind);
            const metrics::EvalReport report = metrics::evaluate(scores, test.bins);

            const std::string path = run_dir + "/report_" + std::to_string(split.test_year) +
                                     "_seed" + std::to_string(seed) + ".json";
            atomic_write(path, report.to_json() + "\n");
            manifest.eval_reports[run_key(split.test_year, seed)] = path;
            manifest.vocab_hash_by_year[split.test_year] = bundle.vocab.hash();
            f1s.push_back(report.macro_f1);
            rhos.push_back(report.spearman_rho);
            taus.push_back(report.kendall_tau_b);
        }

        auto mean_std = [](const std::vector<double>& xs) {
            const double mean =
                std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
            double ss = 0.0;
            for (double x : xs) ss += (x - mean) * (x - mean);
            const double sd =
                xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
            return json{{"mean", mean}, {"std", sd}};
        };
        summary[std::to_string(split.test_year)] = {
            {"macro_f1", mean_std(f1s)}, {"spearman_rho", mean_std(rhos)},
            {"kendall_tau_b", mean_std(taus)}, {"seeds", seeds.size()},
        };
    }
    atomic_write(run_dir + "/summary.json", summary.dump(2) + "\n");
    manifest.save(run_dir + "/manifest.json");
    return run_dir;
}

std::string cmd_explain(const config::RunConfig& cfg, const CommandOptions& opts) {
    if (cfg.aggregator != config::Aggregator::Hierarchical) {
        throw Error(ErrorKind::ConfigError, "explanations need the hierarchical aggregator");
    }
    const std::string run_dir = make_run_dir(cfg, opts.run_name);
    const auto data = load_pipeline_inputs(cfg);
    const auto labels = label_index(data.labels);
    const auto measure = effective_measure(cfg, opts);
    const auto loss = effective_loss(cfg, opts);
    const auto kind = trainer::score_kind_for(loss);
    const std::uint64_t seed = opts.seed.value_or(cfg.seeds.front());

    std::set<std::string> remaining(opts.doc_ids.begin(), opts.doc_ids.end());
    for (const SplitEntry& split : data.splits) {
        const LabeledDocs test = select_labeled(data.raw_docs, {split.test_year}, labels, measure);
        if (test.docs.empty()) continue;
        const CheckpointBundle bundle = load_split_checkpoint(cfg, split.test_year, seed);
        const auto encoded = encode_all(test.docs, bundle.vocab, cfg);

        std::vector<netcore::ForwardTrace> traces;
        std::vector<double> scores;
        traces.reserve(encoded.size());
        for (const auto& doc : encoded) {
            traces.push_back(netcore::forward(doc, bundle.state));
            scores.push_back(netcore::document_score(traces.back(), kind));
        }
        const std::vector<int> groups = metrics::discretize_scores(scores);

        const auto raw_tables =
            explain::group_word_frequencies(encoded, traces, groups, bundle.vocab, cfg.k_fraction);
        const auto clouds = explain::distinctive_adjust(raw_tables);
        json jc = json::object();
        for (const auto& cloud : clouds) {
            jc[std::to_string(cloud.group)] = cloud.adjusted_frequency;
        }
        atomic_write(run_dir + "/clouds_" + std::to_string(split.test_year) + "_seed" +
                         std::to_string(seed) + ".json",
                     jc.dump(2) + "\n");

        for (std::size_t i = 0; i < encoded.size(); ++i) {
            if (!remaining.count(encoded[i].doc_id)) continue;
            remaining.erase(encoded[i].doc_id);
            const auto rows = explain::top_sentence_report(traces[i], encoded[i], bundle.vocab, 5);
            json jr = json::array();
            for (const auto& row : rows) {
                json tokens = json::array();
                for (std::size_t t = 0; t < row.tokens.size(); ++t) {
                    tokens.push_back({{"token", row.tokens[t]}, {"alpha_w", row.alpha_w[t]}});
                }
                jr.push_back({{"sentence_idx", row.sentence_index},
                              {"alpha_s", row.alpha_s},
                              {"tokens", tokens}});
            }
            atomic_write(run_dir + "/heatmap_" + encoded[i].doc_id + ".json", jr.dump(2) + "\n");
        }
    }
    if (!remaining.empty()) {
        throw Error(ErrorKind::NotFound,
                    "document id " + *remaining.begin() + " is not in any labeled test set");
    }
    return run_dir;
}

std::string cmd_ablate(const config::RunConfig& cfg, const CommandOptions& opts) {
    if (cfg.aggregator != config::Aggregator::Hierarchical) {
        throw Error(ErrorKind::ConfigError, "ablation needs the hierarchical aggregator");
    }
    const std::string run_dir = make_run_dir(cfg, opts.run_name);
    const auto data = load_pipeline_inputs(cfg);
    const auto labels = label_index(data.labels);
    const auto measure = effective_measure(cfg, opts);
    const auto loss = effective_loss(cfg, opts);
    const auto kind = trainer::score_kind_for(loss);
    const auto seeds = effective_seeds(cfg, opts);
    const char* mode_name = opts.ablation_mode == explain::AblationMode::Words ? "words" : "sentences";

    for (const SplitEntry& split : data.splits) {
        const LabeledDocs test = select_labeled(data.raw_docs, {split.test_year}, labels, measure);
        if (test.docs.empty()) continue;

        std::string csv = "k,variant,macro_f1,spearman_rho,kendall_tau_b,mode,seed\n";
        for (std::uint64_t seed : seeds) {
            const CheckpointBundle bundle = load_split_checkpoint(cfg, split.test_year, seed);
            const auto encoded = encode_all(test.docs, bundle.vocab, cfg);
            const auto points = explain::ablation_curve(bundle.state, encoded, test.bins,
                                                        opts.k_grid, opts.ablation_mode, true,
                                                        seed ^ 0xab1a7e5eedULL, kind);
            for (const auto& point : points) {
                if (point.excluded_documents > 0) {
                    std::cerr << "riskrank ablate: year " << split.test_year << " seed " << seed
                              << " k=" << point.k << ": " << point.excluded_documents
                              << " documents failed forward and were excluded\n";
                }
                csv += format_double(point.k);
                csv += point.variant == explain::AblationVariant::Attention ? ",attention," : ",random,";
                if (point.defined) {
                    csv += format_double(point.report.macro_f1);
                    csv += ",";
                    csv += format_double(point.report.spearman_rho);
                    csv += ",";
                    csv += format_double(point.report.kendall_tau_b);
                } else {
                    csv += "nan,nan,nan";
                }
                csv += ",";
                csv += mode_name;
                csv += "," + std::to_string(seed) + "\n";
            }
        }
        atomic_write(run_dir + "/ablation_" + std::to_string(split.test_year) + ".csv", csv);
    }
    return run_dir;
}

} // namespace riskrank::commands
