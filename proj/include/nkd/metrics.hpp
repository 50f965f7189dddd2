#pragma once
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nkd/errors.hpp"

// Metrics rows and CSV plumbing. The column set is fixed:
//   epoch,recipe,seed,train_loss,l_ori,l_target,l_non,l_weak,test_top1,wall_seconds

namespace nkd {

inline constexpr const char* kMetricsHeader =
    "epoch,recipe,seed,train_loss,l_ori,l_target,l_non,l_weak,test_top1,wall_seconds";

struct MetricsRow {
    int epoch = 0;
    std::string recipe;
    std::uint64_t seed = 0;
    double train_loss = 0.0;
    double l_ori = 0.0, l_target = 0.0, l_non = 0.0, l_weak = 0.0;
    double test_top1 = 0.0;    // percent
    double wall_seconds = 0.0; // per-epoch wall time; not reproducible
};

inline std::string to_csv(const MetricsRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%d,%s,%llu,%.10f,%.10f,%.10f,%.10f,%.10f,%.6f,%.3f",
                  r.epoch, r.recipe.c_str(), static_cast<unsigned long long>(r.seed), r.train_loss,
                  r.l_ori, r.l_target, r.l_non, r.l_weak, r.test_top1, r.wall_seconds);
    return buf;
}

inline bool parse_csv_row(const std::string& line, MetricsRow& out) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 10) return false;
    try {
        out.epoch = std::stoi(fields[0]);
        out.recipe = fields[1];
        out.seed = std::stoull(fields[2]);
        out.train_loss = std::stod(fields[3]);
        out.l_ori = std::stod(fields[4]);
        out.l_target = std::stod(fields[5]);
        out.l_non = std::stod(fields[6]);
        out.l_weak = std::stod(fields[7]);
        out.test_top1 = std::stod(fields[8]);
        out.wall_seconds = std::stod(fields[9]);
    } catch (const std::exception&) {
        return false;
    }
    if (out.test_top1 < 0.0 || out.test_top1 > 100.0) return false;
    return true;
}

struct MetricsFile {
    std::vector<MetricsRow> rows;
    int skipped = 0; // malformed lines
};

inline MetricsFile read_metrics_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open metrics file " + path);
    MetricsFile mf;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line == kMetricsHeader) continue; // header
        }
        MetricsRow row;
        if (parse_csv_row(line, row)) mf.rows.push_back(row);
        else ++mf.skipped;
    }
    return mf;
}

// strips the wall_seconds column; used by the determinism comparison since
// wall-clock time is the one non-reproducible field
inline std::string strip_wall_column(const std::string& csv_text) {
    std::stringstream ss(csv_text);
    std::string line, out;
    while (std::getline(ss, line)) {
        auto pos = line.rfind(',');
        out += (pos == std::string::npos) ? line : line.substr(0, pos);
        out += '\n';
    }
    return out;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

struct ExportResult {
    int files = 0;
    int rows = 0;
    int skipped = 0;
    std::string merged_path, summary_path;
};

// Merge every metrics.csv under run_dir into all_runs.csv and write a
// per-recipe summary (mean/stddev of the final-epoch top-1 across seeds,
// plus the per-seed values).
inline ExportResult export_metrics(const std::string& run_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(run_dir)) throw UsageError("export_metrics: not a directory: " + run_dir);

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir))
        if (entry.is_regular_file() && entry.path().filename() == "metrics.csv")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("export_metrics: no metrics.csv under " + run_dir);

    ExportResult result;
    result.files = static_cast<int>(files.size());
    std::vector<MetricsRow> all;
    // final row of each run, keyed by recipe
    std::map<std::string, std::vector<MetricsRow>> finals;
    for (const auto& f : files) {
        MetricsFile mf = read_metrics_file(f.string());
        result.skipped += mf.skipped;
        if (mf.rows.empty()) continue;
        all.insert(all.end(), mf.rows.begin(), mf.rows.end());
        finals[mf.rows.back().recipe].push_back(mf.rows.back());
    }
    result.rows = static_cast<int>(all.size());

    fs::path merged = fs::path(run_dir) / "all_runs.csv";
    {
        std::ofstream os(merged);
        os << kMetricsHeader << "\n";
        for (const auto& r : all) os << to_csv(r) << "\n";
    }
    fs::path summary = fs::path(run_dir) / "summary.csv";
    {
        std::ofstream os(summary);
        os << "recipe,runs,mean_final_top1,stddev_final_top1,per_seed_top1\n";
        for (const auto& [recipe, rows] : finals) {
            double mean = 0.0;
            for (const auto& r : rows) mean += r.test_top1;
            mean /= static_cast<double>(rows.size());
            double var = 0.0;
            for (const auto& r : rows) var += (r.test_top1 - mean) * (r.test_top1 - mean);
            double stddev = rows.size() > 1 ? std::sqrt(var / (rows.size() - 1)) : 0.0;
            os << recipe << "," << rows.size() << ",";
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f,", mean, stddev);
            os << buf;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "%s%llu:%.4f", i ? ";" : "",
                              static_cast<unsigned long long>(rows[i].seed), rows[i].test_top1);
                os << buf;
            }
            os << "\n";
        }
    }
    result.merged_path = merged.string();
    result.summary_path = summary.string();
    return result;
}

} // namespace nkd
