#ifndef XFL_RUNLAB_HPP
#define XFL_RUNLAB_HPP

/// @file runlab.hpp Experiment orchestration: typed result tables with CSV,
/// JSON and SVG emission, a strict key-value config format, the master-seed
/// stream scheme, a bounded worker pool, and the experiment drivers.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "xfl/attrib.hpp"
#include "xfl/dataforge.hpp"
#include "xfl/error.hpp"
#include "xfl/glmlab.hpp"
#include "xfl/nncore.hpp"
#include "xfl/numkit.hpp"

namespace xfl::runlab {

inline constexpr const char *kCodeVersion = "0.1.0";

/* Result tables
 * -------------
 */

struct Cell {
    enum class Type { Num, Int, Text };
    Type type = Type::Num;
    double num = 0.0;
    std::int64_t integer = 0;
    std::string text;

    static Cell of(double v) {
        Cell c;
        c.type = Type::Num;
        c.num = v;
        return c;
    }
    static Cell of(std::int64_t v) {
        Cell c;
        c.type = Type::Int;
        c.integer = v;
        return c;
    }
    static Cell of(std::size_t v) { return of(static_cast<std::int64_t>(v)); }
    static Cell of(std::string v) {
        Cell c;
        c.type = Type::Text;
        c.text = std::move(v);
        return c;
    }
};

/// Floats print with 6 significant digits everywhere, so emitted tables are
/// byte-stable across identical runs.
inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    // provenance lives beside the table, never inside the CSV cells
    std::string config_hash;
    std::string code_version = kCodeVersion;
    double wall_seconds = 0.0;

    std::size_t column_index(const std::string &name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw data_error("ColumnMissing", "table has no column '" + name + "'");
    }

    void add_row(std::vector<Cell> row) {
        if (row.size() != columns.size())
            throw numeric_error("ShapeMismatch", "row width does not match header");
        rows.push_back(std::move(row));
    }

    double number_at(std::size_t row, std::size_t col) const {
        const Cell &c = rows[row][col];
        switch (c.type) {
        case Cell::Type::Num: return c.num;
        case Cell::Type::Int: return static_cast<double>(c.integer);
        case Cell::Type::Text:
            throw data_error("ColumnMissing",
                             "column '" + columns[col] + "' is not numeric");
        }
        return 0.0;
    }
};

/* CSV / JSON emission
 * -------------------
 */

namespace detail {

inline std::string csv_quote(const std::string &s) {
    bool needs = s.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

inline std::string cell_to_string(const Cell &c) {
    switch (c.type) {
    case Cell::Type::Num: return format_number(c.num);
    case Cell::Type::Int: return std::to_string(c.integer);
    case Cell::Type::Text: return c.text;
    }
    return {};
}

inline std::string json_escape(const std::string &s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace detail

enum class EmitFormat { CSV, JSON };

inline void emit(const ResultTable &table, EmitFormat format, std::ostream &out) {
    if (format == EmitFormat::CSV) {
        for (std::size_t i = 0; i < table.columns.size(); ++i)
            out << (i ? "," : "") << detail::csv_quote(table.columns[i]);
        out << "\r\n";
        for (const auto &row : table.rows) {
            for (std::size_t i = 0; i < row.size(); ++i)
                out << (i ? "," : "") << detail::csv_quote(detail::cell_to_string(row[i]));
            out << "\r\n";
        }
    } else {
        out << "[";
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            out << (r ? ",\n " : "\n ") << "{";
            for (std::size_t i = 0; i < table.columns.size(); ++i) {
                const Cell &c = table.rows[r][i];
                out << (i ? ", " : "") << "\"" << detail::json_escape(table.columns[i])
                    << "\": ";
                if (c.type == Cell::Type::Text)
                    out << "\"" << detail::json_escape(c.text) << "\"";
                else
                    out << detail::cell_to_string(c);
            }
            out << "}";
        }
        out << "\n]\n";
    }
    if (!out) throw data_error("IoError", "emit failed");
}

inline void emit_file(const ResultTable &table, EmitFormat format, const std::string &path) {
    std::ofstream out(path, std::ios::binary); // binary keeps CRLF stable cross-platform
    if (!out) throw data_error("IoError", "cannot write " + path);
    emit(table, format, out);
}

/// RFC-4180 reader used by --resume and the round-trip tests.
inline std::vector<std::vector<std::string>> parse_csv(std::istream &in) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    int ch;
    while ((ch = in.get()) != EOF) {
        char c = static_cast<char>(ch);
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field += '"';
                    in.get();
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && in.peek() == '\n') in.get();
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                field.clear();
                rows.push_back(std::move(row));
                row.clear();
                any = false;
            }
        } else {
            field += c;
            any = true;
        }
    }
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<std::vector<std::string>> parse_csv_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("IoError", "cannot open " + path);
    return parse_csv(in);
}

/* Config documents
 * ----------------
 *
 * Plain `key = value` lines with '#' comments; dots in keys give the
 * hierarchy. Unknown keys are hard errors, not warnings.
 */

class ConfigDoc {
public:
    static ConfigDoc parse(std::istream &in, const std::string &origin) {
        ConfigDoc doc;
        doc.origin_ = origin;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            doc.raw_text_ += line + "\n";
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw config_error("ConfigInvalid", origin + ":" + std::to_string(lineno) +
                                                        ": expected 'key = value'");
            std::string key = strip(s.substr(0, eq));
            std::string value = strip(s.substr(eq + 1));
            if (key.empty())
                throw config_error("ConfigInvalid",
                                   origin + ":" + std::to_string(lineno) + ": empty key");
            if (doc.kv_.count(key))
                throw config_error("ConfigInvalid", origin + ": duplicate key '" + key + "'");
            doc.kv_[key] = value;
            doc.order_.push_back(key);
        }
        return doc;
    }

    static ConfigDoc parse_file(const std::string &path) {
        std::ifstream in(path);
        if (!in) throw config_error("ConfigInvalid", "cannot open config " + path);
        return parse(in, path);
    }

    static ConfigDoc parse_string(const std::string &text, const std::string &origin = "<inline>") {
        std::istringstream in(text);
        return parse(in, origin);
    }

    bool has(const std::string &key) const { return kv_.count(key) > 0; }

    void set(const std::string &key, const std::string &value) {
        if (!kv_.count(key)) order_.push_back(key);
        kv_[key] = value;
    }

    std::string get(const std::string &key, const std::string &fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    double get_double(const std::string &key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception &) {
            throw config_error("ConfigInvalid",
                               "field " + key + ": '" + it->second + "' is not a number");
        }
    }

    std::int64_t get_int(const std::string &key, std::int64_t fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t pos = 0;
            long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception &) {
            throw config_error("ConfigInvalid",
                               "field " + key + ": '" + it->second + "' is not an integer");
        }
    }

    std::vector<double> get_double_list(const std::string &key,
                                        const std::vector<double> &fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<double> out;
        for (const std::string &tok : split(it->second, ',')) {
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception &) {
                throw config_error("ConfigInvalid",
                                   "field " + key + ": '" + tok + "' is not a number");
            }
        }
        if (out.empty())
            throw config_error("ConfigInvalid", "field " + key + ": empty list");
        return out;
    }

    std::vector<std::size_t> get_size_list(const std::string &key,
                                           const std::vector<std::size_t> &fallback) const {
        auto doubles = get_double_list(key, {});
        if (doubles.empty()) return fallback;
        std::vector<std::size_t> out;
        for (double d : doubles) {
            if (d < 0 || d != std::floor(d))
                throw config_error("ConfigInvalid", "field " + key + ": expected counts");
            out.push_back(static_cast<std::size_t>(d));
        }
        return out;
    }

    /// Reject any key outside the allowed set, naming the field.
    void validate_keys(const std::set<std::string> &allowed) const {
        for (const auto &key : order_)
            if (!allowed.count(key))
                throw config_error("ConfigInvalid",
                                   "unknown field '" + key + "' in " + origin_);
    }

    /// Canonical text form (sorted keys), hashed into the provenance record.
    std::string canonical_text() const {
        std::string out;
        for (const auto &[k, v] : kv_) out += k + " = " + v + "\n";
        return out;
    }

    /// The file's original text, for verbatim archiving. Empty when the doc
    /// was assembled from overrides only.
    const std::string &raw_text() const { return raw_text_; }

    std::uint64_t hash() const { return numkit::detail::fnv1a64(canonical_text()); }

    static std::string strip(const std::string &s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static std::vector<std::string> split(const std::string &s, char sep) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == sep) {
                out.push_back(strip(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!strip(cur).empty() || !out.empty()) out.push_back(strip(cur));
        return out;
    }

private:
    std::map<std::string, std::string> kv_;
    std::vector<std::string> order_;
    std::string origin_ = "<none>";
    std::string raw_text_;
};

/* SVG plotting
 * ------------
 */

/// Standalone SVG line chart: one polyline+markers per y column, labeled
/// axes, legend on the right.
inline void plot_svg(const ResultTable &table, const std::string &x_col,
                     const std::vector<std::string> &y_cols, const std::string &path) {
    const std::size_t xi = table.column_index(x_col);
    std::vector<std::size_t> yis;
    for (const auto &y : y_cols) yis.push_back(table.column_index(y));
    if (table.rows.empty()) throw data_error("EmptyDataset", "nothing to plot");

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        double x = table.number_at(r, xi);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        for (std::size_t yi : yis) {
            double y = table.number_at(r, yi);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    const double W = 720, H = 480, ml = 70, mr = 170, mt = 30, mb = 55;
    const double pw = W - ml - mr, ph = H - mt - mb;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    static const char *palette[] = {"#1776b6", "#ff7f00", "#24a222", "#d8241f",
                                    "#9564bf", "#8d5649", "#e177c0", "#7f7f7f"};

    std::ofstream out(path);
    if (!out) throw data_error("IoError", "cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // axes + ticks
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        double fx = xmin + (xmax - xmin) * t / 5.0;
        double fy = ymin + (ymax - ymin) * t / 5.0;
        out << "<line x1=\"" << px(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(fx)
            << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << px(fx) << "\" y=\"" << mt + ph + 20
            << "\" font-size=\"11\" text-anchor=\"middle\">" << format_number(fx)
            << "</text>\n";
        out << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(fy) << "\" x2=\"" << ml << "\" y2=\""
            << py(fy) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
            << "\" font-size=\"11\" text-anchor=\"end\">" << format_number(fy) << "</text>\n";
    }
    out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
        << "\" font-size=\"13\" text-anchor=\"middle\">" << detail::json_escape(x_col)
        << "</text>\n";

    for (std::size_t s = 0; s < yis.size(); ++s) {
        const char *color = palette[s % 8];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (std::size_t r = 0; r < table.rows.size(); ++r)
            out << px(table.number_at(r, xi)) << "," << py(table.number_at(r, yis[s])) << " ";
        out << "\"/>\n";
        for (std::size_t r = 0; r < table.rows.size(); ++r)
            out << "<circle cx=\"" << px(table.number_at(r, xi)) << "\" cy=\""
                << py(table.number_at(r, yis[s])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        // legend entry
        double ly = mt + 14 + 18.0 * static_cast<double>(s);
        out << "<rect x=\"" << ml + pw + 14 << "\" y=\"" << ly - 9
            << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << ml + pw + 31 << "\" y=\"" << ly + 1 << "\" font-size=\"12\">"
            << detail::json_escape(y_cols[s]) << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw data_error("IoError", "write failed for " + path);
}

/* Worker pool
 * -----------
 */

/// Run fn(0..n-1) on up to `jobs` threads. Cells must be independent; with
/// jobs = 1 this is a plain in-order loop (the canonical deterministic mode).
inline void parallel_for_cells(std::size_t n, std::size_t jobs,
                               const std::function<void(std::size_t)> &fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error = nullptr;
    std::mutex err_mutex;
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < std::min(jobs, n); ++t) threads.emplace_back(worker);
    for (auto &t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/* Scale profiles
 * --------------
 */

/// Desk scale shrinks widths and image sizes so every trend fits in minutes
/// on one core; paper scale restores the published setup.
struct ScaleProfile {
    std::string name = "desk";
    nncore::ArchScale arch = nncore::ArchScale::desk();
    std::size_t half_h = 16, half_w = 16, channels = 3; // one domain image
    std::size_t pool_per_class = 400;                   // glyph pool size
    std::size_t n_train = 4096;                         // per epoch
    std::size_t n_test = 2048;
    double alice_lr = 0.02;
    std::size_t alice_epochs = 6;
    std::size_t bob_epochs = 4;
    std::size_t batch_size = 128;

    static ScaleProfile desk() { return {}; }

    static ScaleProfile paper() {
        ScaleProfile p;
        p.name = "paper";
        p.arch = nncore::ArchScale::paper();
        p.half_h = 32;
        p.half_w = 32;
        p.channels = 3;
        p.pool_per_class = 1000;
        p.n_train = 60000;
        p.n_test = 60000;
        p.alice_lr = 0.001;
        p.alice_epochs = 15;
        p.bob_epochs = 10;
        p.batch_size = 256;
        return p;
    }

    static ScaleProfile named(const std::string &name) {
        if (name == "desk") return desk();
        if (name == "paper") return paper();
        throw config_error("ConfigInvalid", "scale must be desk or paper, got '" + name + "'");
    }

    nncore::Shape input_shape() const { return {0, half_h, 2 * half_w, channels}; }

    nncore::OptimizerConfig alice_optimizer() const {
        nncore::OptimizerConfig opt;
        opt.lr = alice_lr;
        opt.momentum = 0.9;
        opt.weight_decay = 5e-4;
        opt.batch_size = batch_size;
        opt.epochs = alice_epochs;
        opt.schedule = nncore::Schedule::Constant;
        return opt;
    }

    nncore::OptimizerConfig bob_optimizer() const {
        nncore::OptimizerConfig opt = alice_optimizer();
        opt.epochs = bob_epochs;
        opt.schedule = nncore::Schedule::Cosine;
        opt.cosine_start = 0.3;
        opt.cosine_end = 0.0;
        return opt;
    }
};

/* Domain resolution
 * -----------------
 *
 * data.left / data.right accept "glyphA", "glyphB" (procedural domains) or
 * "idx:<images>:<labels>" (MNIST-format files, rescaled to profile size).
 */

inline dataforge::Domain resolve_domain(const std::string &spec, const ScaleProfile &profile,
                                        const numkit::RngStream &domain_root) {
    if (spec.rfind("idx:", 0) == 0) {
        auto rest = spec.substr(4);
        auto sep = rest.find(':');
        if (sep == std::string::npos)
            throw config_error("ConfigInvalid",
                               "idx domain spec needs idx:<images>:<labels>, got " + spec);
        dataforge::Domain d = dataforge::load_idx(rest.substr(0, sep), rest.substr(sep + 1));
        return dataforge::rescale_domain(d, profile.half_h, profile.half_w, profile.channels);
    }
    if (spec == "glyphA" || spec == "glyphB") {
        dataforge::Domain d = dataforge::synth_glyph_domain(
            profile.pool_per_class, profile.half_h, profile.half_w, profile.channels,
            domain_root.derive(spec));
        d.name = spec;
        d.finalize();
        return d;
    }
    throw config_error("ConfigInvalid",
                       "domain must be glyphA, glyphB or idx:<images>:<labels>, got '" + spec +
                           "'");
}

/* Experiment harness
 * ------------------
 */

enum class ExperimentKind { GlmSweep, TaskSweep, LayerSweep, OracleInit, Attribution, CorrCheck };

inline const char *experiment_name(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::GlmSweep: return "glm-sweep";
    case ExperimentKind::TaskSweep: return "task-sweep";
    case ExperimentKind::LayerSweep: return "layer-sweep";
    case ExperimentKind::OracleInit: return "oracle-init";
    case ExperimentKind::Attribution: return "attribute";
    case ExperimentKind::CorrCheck: return "corr-check";
    }
    return "?";
}

inline ExperimentKind experiment_from_name(const std::string &name) {
    for (ExperimentKind k :
         {ExperimentKind::GlmSweep, ExperimentKind::TaskSweep, ExperimentKind::LayerSweep,
          ExperimentKind::OracleInit, ExperimentKind::Attribution, ExperimentKind::CorrCheck})
        if (name == experiment_name(k)) return k;
    throw config_error("ConfigInvalid", "unknown experiment '" + name + "'");
}

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::GlmSweep;
    ConfigDoc doc;
    std::uint64_t master_seed = 0;
    std::size_t jobs = 1;
    std::string out_dir = "out";
    ScaleProfile scale = ScaleProfile::desk();
    bool resume = false;

    numkit::RngStream root_stream() const {
        return numkit::RngStream(master_seed, 0).derive(experiment_name(kind));
    }
};

namespace detail {

inline const std::set<std::string> kGlobalKeys = {"experiment", "seed", "jobs", "out", "scale",
                                                  "resume"};

inline std::set<std::string> with_globals(std::set<std::string> keys) {
    keys.insert(kGlobalKeys.begin(), kGlobalKeys.end());
    return keys;
}

/// Per-cell partial results for crash safety / --resume. A cell file holds
/// the finished rows of one cell with the experiment's own header.
class CellStore {
public:
    CellStore(const ExperimentConfig &cfg, const std::vector<std::string> &columns)
        : columns_(columns), enabled_(!cfg.out_dir.empty()) {
        if (!enabled_) return;
        dir_ = std::filesystem::path(cfg.out_dir) / "cells";
        std::filesystem::create_directories(dir_);
        resume_ = cfg.resume;
    }

    bool load(std::size_t cell, std::vector<std::vector<Cell>> &rows,
              const std::vector<Cell::Type> &types) const {
        if (!enabled_ || !resume_) return false;
        auto path = cell_path(cell);
        if (!std::filesystem::exists(path)) return false;
        auto raw = parse_csv_file(path.string());
        if (raw.empty() || raw[0] != columns_) return false;
        rows.clear();
        for (std::size_t r = 1; r < raw.size(); ++r) {
            std::vector<Cell> row;
            for (std::size_t i = 0; i < raw[r].size(); ++i) {
                switch (types[i]) {
                case Cell::Type::Num: row.push_back(Cell::of(std::stod(raw[r][i]))); break;
                case Cell::Type::Int:
                    row.push_back(Cell::of(static_cast<std::int64_t>(std::stoll(raw[r][i]))));
                    break;
                case Cell::Type::Text: row.push_back(Cell::of(raw[r][i])); break;
                }
            }
            rows.push_back(std::move(row));
        }
        return true;
    }

    void store(std::size_t cell, const std::vector<std::vector<Cell>> &rows) const {
        if (!enabled_) return;
        ResultTable t;
        t.columns = columns_;
        for (const auto &r : rows) t.rows.push_back(r);
        emit_file(t, EmitFormat::CSV, cell_path(cell).string());
    }

private:
    std::filesystem::path cell_path(std::size_t cell) const {
        return dir_ / ("cell_" + std::to_string(cell) + ".csv");
    }
    std::vector<std::string> columns_;
    std::filesystem::path dir_;
    bool enabled_ = false;
    bool resume_ = false;
};

struct MeanStderr {
    double mean = 0.0, stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double> &xs) {
    MeanStderr out;
    const double n = static_cast<double>(xs.size());
    for (double x : xs) out.mean += x;
    out.mean /= n;
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    }
    return out;
}

} // namespace detail

/* GLM sweep (feature-correlation study)
 * -------------------------------------
 */

inline ResultTable run_glm_sweep(const ExperimentConfig &cfg) {
    cfg.doc.validate_keys(detail::with_globals({"glm.scenarios", "glm.alphas", "glm.alpha_count",
                                                "glm.ks", "glm.n_train", "glm.n_test",
                                                "glm.lambda", "glm.steps", "glm.finetune_steps",
                                                "seeds.count"}));

    std::vector<double> alphas;
    if (cfg.doc.has("glm.alphas")) {
        alphas = cfg.doc.get_double_list("glm.alphas", {});
    } else {
        auto count = static_cast<std::size_t>(cfg.doc.get_int("glm.alpha_count", 41));
        for (std::size_t i = 0; i < count; ++i)
            alphas.push_back(-1.0 + 2.0 * static_cast<double>(i) /
                                        static_cast<double>(count - 1));
    }
    auto ks = cfg.doc.get_size_list("glm.ks", {1, 2, 4, 8, 16, 32});

    std::vector<glmlab::Scenario> scenarios;
    std::string scen = cfg.doc.get("glm.scenarios", "both");
    if (scen == "pairwise" || scen == "both") scenarios.push_back(glmlab::Scenario::Pairwise);
    if (scen == "global" || scen == "both") scenarios.push_back(glmlab::Scenario::Global);
    if (scenarios.empty())
        throw config_error("ConfigInvalid", "glm.scenarios must be pairwise, global or both");

    glmlab::SweepConfig sweep;
    sweep.n_train = static_cast<std::size_t>(cfg.doc.get_int("glm.n_train", 50000));
    sweep.n_test = static_cast<std::size_t>(cfg.doc.get_int("glm.n_test", 50000));
    sweep.lambda = cfg.doc.get_double("glm.lambda", 1e-3);
    sweep.train_steps = static_cast<std::size_t>(cfg.doc.get_int("glm.steps", 1500));
    sweep.finetune_steps = static_cast<std::size_t>(cfg.doc.get_int("glm.finetune_steps", 2000));
    sweep.seeds = static_cast<std::size_t>(cfg.doc.get_int("seeds.count", 3));
    sweep.master_seed = cfg.master_seed;

    ResultTable table;
    table.columns = {"scenario",       "alpha",         "k",
                     "seed_count",     "acc_pretrained", "acc_finetuned",
                     "stderr_pretrained", "stderr_finetuned"};
    std::vector<Cell::Type> types = {Cell::Type::Text, Cell::Type::Num, Cell::Type::Int,
                                     Cell::Type::Int,  Cell::Type::Num, Cell::Type::Num,
                                     Cell::Type::Num,  Cell::Type::Num};
    detail::CellStore store(cfg, table.columns);

    struct CellId {
        glmlab::Scenario scenario;
        std::size_t ki, ai;
    };
    std::vector<CellId> cells;
    for (auto s : scenarios)
        for (std::size_t ki = 0; ki < ks.size(); ++ki)
            for (std::size_t ai = 0; ai < alphas.size(); ++ai) cells.push_back({s, ki, ai});

    std::vector<std::vector<std::vector<Cell>>> results(cells.size());
    parallel_for_cells(cells.size(), cfg.jobs, [&](std::size_t idx) {
        if (store.load(idx, results[idx], types)) return;
        const CellId &id = cells[idx];
        glmlab::CorrelationSpec spec{alphas[id.ai], ks[id.ki], id.scenario};

        // the same stream chain glmlab::sweep_alpha uses, so tables agree
        numkit::RngStream root(cfg.master_seed, 0);
        numkit::RngStream cell_rng = root.derive("glm-sweep")
                                         .derive(id.scenario == glmlab::Scenario::Pairwise ? 1 : 2)
                                         .derive(id.ki * 4096 + id.ai);
        std::vector<double> pre, fin;
        for (std::size_t s = 0; s < sweep.seeds; ++s) {
            auto [a, f] = glmlab::run_glm_cell(spec, sweep, cell_rng.derive(s));
            pre.push_back(a);
            fin.push_back(f);
        }
        auto mp = detail::mean_stderr(pre);
        auto mf = detail::mean_stderr(fin);
        results[idx] = {{Cell::of(std::string(glmlab::scenario_name(id.scenario))),
                         Cell::of(alphas[id.ai]), Cell::of(ks[id.ki]), Cell::of(sweep.seeds),
                         Cell::of(mp.mean), Cell::of(mf.mean), Cell::of(mp.stderr_),
                         Cell::of(mf.stderr_)}};
        store.store(idx, results[idx]);
    });

    for (auto &rows : results)
        for (auto &r : rows) table.add_row(std::move(r));
    return table;
}

/* Shared deep-net cell machinery
 * ------------------------------
 */

namespace detail {

struct NetCellSetup {
    numkit::RngStream cell_rng = numkit::RngStream(0, 0);
    nncore::Arch arch = nncore::Arch::FullyConnected;
};

inline nncore::Arch arch_from_string(const std::string &s) {
    if (s == "fc") return nncore::Arch::FullyConnected;
    if (s == "conv") return nncore::Arch::Convolutional;
    throw config_error("ConfigInvalid", "model.arch must be fc or conv, got '" + s + "'");
}

/// Epoch provider that resamples the pairing fresh every epoch from a
/// dedicated stream, as the training protocol prescribes.
inline std::function<dataforge::PairedDataset(std::size_t)>
resampling_source(double beta, const dataforge::Domain &left, const dataforge::Domain &right,
                  std::size_t n, numkit::RngStream base) {
    return [=, &left, &right](std::size_t epoch) {
        return dataforge::epoch_resample(beta, left, right, epoch, base, n);
    };
}

inline nncore::Network train_alice(const ExperimentConfig &cfg, const NetCellSetup &setup,
                                   double beta, nncore::InitScheme init,
                                   const dataforge::Domain &left,
                                   const dataforge::Domain &right) {
    numkit::RngStream init_rng = setup.cell_rng.derive("alice-init");
    nncore::Network net = nncore::build_network(setup.arch, cfg.scale.input_shape(), init_rng,
                                                init, cfg.scale.arch);
    auto source = resampling_source(beta, left, right, cfg.scale.n_train,
                                    setup.cell_rng.derive("alice-data"));
    nncore::train(net, source, nncore::Target::Alice, cfg.scale.alice_optimizer(), nullptr,
                  setup.cell_rng.derive("alice-train"));
    return net;
}

} // namespace detail

/* Task sweep (Bob's accuracy vs task correlation)
 * -----------------------------------------------
 */

inline ResultTable run_task_sweep(const ExperimentConfig &cfg) {
    cfg.doc.validate_keys(detail::with_globals({"data.betas", "data.left", "data.right",
                                                "model.arch", "seeds.count"}));

    auto betas = cfg.doc.get_double_list("data.betas",
                                         {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
    auto seeds = static_cast<std::size_t>(cfg.doc.get_int("seeds.count", 3));
    nncore::Arch arch = detail::arch_from_string(cfg.doc.get("model.arch", "fc"));

    numkit::RngStream root = cfg.root_stream();
    auto left = resolve_domain(cfg.doc.get("data.left", "glyphA"), cfg.scale,
                               root.derive("domains"));
    auto right = resolve_domain(cfg.doc.get("data.right", "glyphB"), cfg.scale,
                                root.derive("domains"));

    ResultTable table;
    table.columns = {"beta",      "arch",       "left",     "right",     "seed_count",
                     "acc_alice", "acc_bob",    "stderr_alice", "stderr_bob"};
    std::vector<Cell::Type> types = {Cell::Type::Num,  Cell::Type::Text, Cell::Type::Text,
                                     Cell::Type::Text, Cell::Type::Int,  Cell::Type::Num,
                                     Cell::Type::Num,  Cell::Type::Num,  Cell::Type::Num};
    detail::CellStore store(cfg, table.columns);

    std::vector<std::vector<std::vector<Cell>>> results(betas.size());
    parallel_for_cells(betas.size(), cfg.jobs, [&](std::size_t bi) {
        if (store.load(bi, results[bi], types)) return;
        double beta = betas[bi];

        std::vector<double> alice_accs, bob_accs;
        for (std::size_t seed = 0; seed < seeds; ++seed) {
            detail::NetCellSetup setup;
            setup.arch = arch;
            setup.cell_rng = root.derive(bi * 1024 + seed);
            numkit::RngStream test_rng = setup.cell_rng.derive("test-data");
            auto test_set =
                dataforge::sample_concat(beta, left, right, cfg.scale.n_test, test_rng);

            nncore::Network alice =
                detail::train_alice(cfg, setup, beta, nncore::InitScheme::Standard, left, right);
            alice_accs.push_back(nncore::evaluate(alice, test_set, nncore::Target::Alice));

            if (!cfg.out_dir.empty()) {
                std::filesystem::create_directories(cfg.out_dir);
                std::ostringstream name;
                name << "alice_beta" << format_number(beta) << "_seed" << seed << ".xfn";
                nncore::save_network(alice,
                                     (std::filesystem::path(cfg.out_dir) / name.str()).string());
            }

            nncore::Network bob = alice;
            nncore::FreezePlan plan{bob.num_trainable_groups()}; // output layer only
            auto source = detail::resampling_source(beta, left, right, cfg.scale.n_train,
                                                    setup.cell_rng.derive("bob-data"));
            nncore::train(bob, source, nncore::Target::Bob, cfg.scale.bob_optimizer(), &plan,
                          setup.cell_rng.derive("bob-train"));
            bob_accs.push_back(nncore::evaluate(bob, test_set, nncore::Target::Bob));
        }
        auto ma = detail::mean_stderr(alice_accs);
        auto mb = detail::mean_stderr(bob_accs);
        results[bi] = {{Cell::of(beta), Cell::of(std::string(arch == nncore::Arch::FullyConnected
                                                                 ? "fc"
                                                                 : "conv")),
                        Cell::of(left.name), Cell::of(right.name), Cell::of(seeds),
                        Cell::of(ma.mean), Cell::of(mb.mean), Cell::of(ma.stderr_),
                        Cell::of(mb.stderr_)}};
        store.store(bi, results[bi]);
    });

    for (auto &rows : results)
        for (auto &r : rows) table.add_row(std::move(r));
    return table;
}

/* Layer sweep (freeze depth vs accuracy)
 * --------------------------------------
 */

inline ResultTable run_layer_sweep(const ExperimentConfig &cfg) {
    cfg.doc.validate_keys(detail::with_globals({"data.betas", "data.left", "data.right",
                                                "model.arch", "sweep.ells", "seeds.count"}));

    auto betas = cfg.doc.get_double_list("data.betas", {0.0, 0.5, 1.0});
    auto seeds = static_cast<std::size_t>(cfg.doc.get_int("seeds.count", 2));
    nncore::Arch arch = detail::arch_from_string(cfg.doc.get("model.arch", "fc"));

    numkit::RngStream root = cfg.root_stream();
    auto left = resolve_domain(cfg.doc.get("data.left", "glyphA"), cfg.scale,
                               root.derive("domains"));
    auto right = resolve_domain(cfg.doc.get("data.right", "glyphB"), cfg.scale,
                                root.derive("domains"));

    ResultTable table;
    table.columns = {"beta", "ell", "seed_count", "acc_bob", "stderr_bob"};
    std::vector<Cell::Type> types = {Cell::Type::Num, Cell::Type::Int, Cell::Type::Int,
                                     Cell::Type::Num, Cell::Type::Num};
    detail::CellStore store(cfg, table.columns);

    // default ell grid spans every trainable layer of the chosen arch
    std::vector<std::size_t> default_ells =
        arch == nncore::Arch::FullyConnected ? std::vector<std::size_t>{1, 2, 3}
                                             : std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto ells = cfg.doc.get_size_list("sweep.ells", default_ells);

    std::vector<std::vector<std::vector<Cell>>> results(betas.size());
    parallel_for_cells(betas.size(), cfg.jobs, [&](std::size_t bi) {
        if (store.load(bi, results[bi], types)) return;
        double beta = betas[bi];

        std::map<std::size_t, std::vector<double>> acc_by_ell;
        for (std::size_t seed = 0; seed < seeds; ++seed) {
            detail::NetCellSetup setup;
            setup.arch = arch;
            setup.cell_rng = root.derive(bi * 1024 + seed);
            numkit::RngStream test_rng = setup.cell_rng.derive("test-data");
            auto test_set =
                dataforge::sample_concat(beta, left, right, cfg.scale.n_test, test_rng);

            nncore::Network alice =
                detail::train_alice(cfg, setup, beta, nncore::InitScheme::Standard, left, right);
            auto source = detail::resampling_source(beta, left, right, cfg.scale.n_train,
                                                    setup.cell_rng.derive("bob-data"));
            auto rows = nncore::layer_sweep(alice, source, test_set, ells,
                                            cfg.scale.bob_optimizer(),
                                            setup.cell_rng.derive("bob-train"));
            for (const auto &r : rows) acc_by_ell[r.ell].push_back(r.accuracy);
        }
        std::vector<std::vector<Cell>> rows;
        for (std::size_t ell : ells) {
            auto m = detail::mean_stderr(acc_by_ell[ell]);
            rows.push_back({Cell::of(beta), Cell::of(ell), Cell::of(seeds), Cell::of(m.mean),
                            Cell::of(m.stderr_)});
        }
        results[bi] = std::move(rows);
        store.store(bi, results[bi]);
    });

    for (auto &rows : results)
        for (auto &r : rows) table.add_row(std::move(r));
    return table;
}

/* Oracle initialization study
 * ---------------------------
 *
 * Same data and init stream per cell; only the first-layer zero mask
 * differs, so the random/zero comparison is matched sample-for-sample.
 */

inline ResultTable run_oracle_init(const ExperimentConfig &cfg) {
    cfg.doc.validate_keys(detail::with_globals({"data.betas", "data.left", "data.right",
                                                "attrib.samples", "attrib.steps",
                                                "seeds.count"}));

    auto betas = cfg.doc.get_double_list("data.betas", {0.0, 1.0});
    auto seeds = static_cast<std::size_t>(cfg.doc.get_int("seeds.count", 2));
    auto ig_samples = static_cast<std::size_t>(cfg.doc.get_int("attrib.samples", 200));
    auto ig_steps = static_cast<std::size_t>(cfg.doc.get_int("attrib.steps", 64));

    numkit::RngStream root = cfg.root_stream();
    auto left = resolve_domain(cfg.doc.get("data.left", "glyphA"), cfg.scale,
                               root.derive("domains"));
    auto right = resolve_domain(cfg.doc.get("data.right", "glyphB"), cfg.scale,
                                root.derive("domains"));

    ResultTable table;
    table.columns = {"beta",      "init",       "seed_count",   "acc_alice",
                     "stderr_alice", "ig_right_left_ratio"};
    std::vector<Cell::Type> types = {Cell::Type::Num, Cell::Type::Text, Cell::Type::Int,
                                     Cell::Type::Num, Cell::Type::Num,  Cell::Type::Num};
    detail::CellStore store(cfg, table.columns);

    std::vector<std::vector<std::vector<Cell>>> results(betas.size());
    parallel_for_cells(betas.size(), cfg.jobs, [&](std::size_t bi) {
        if (store.load(bi, results[bi], types)) return;
        double beta = betas[bi];

        std::vector<double> acc_random, acc_zero, ratio_random, ratio_zero;
        for (std::size_t seed = 0; seed < seeds; ++seed) {
            detail::NetCellSetup setup;
            setup.arch = nncore::Arch::FullyConnected; // the oracle mask is an FC construct
            setup.cell_rng = root.derive(bi * 1024 + seed);
            numkit::RngStream test_rng = setup.cell_rng.derive("test-data");
            auto test_set =
                dataforge::sample_concat(beta, left, right, cfg.scale.n_test, test_rng);
            nncore::Tensor test_x = nncore::to_tensor(test_set);

            for (auto init : {nncore::InitScheme::Standard, nncore::InitScheme::ZeroRightHalf}) {
                nncore::Network alice =
                    detail::train_alice(cfg, setup, beta, init, left, right);
                double acc = nncore::evaluate(alice, test_set, nncore::Target::Alice);

                std::size_t n_ig = std::min(ig_samples, test_set.size());
                nncore::Tensor subset({n_ig, test_x.shape.h, test_x.shape.w, test_x.shape.c});
                std::vector<std::uint8_t> sub_labels(test_set.y_alice.begin(),
                                                     test_set.y_alice.begin() + n_ig);
                std::copy(test_x.v.begin(), test_x.v.begin() + n_ig * test_x.shape.features(),
                          subset.v.begin());
                auto summaries =
                    attrib::side_means_for_samples(alice, subset, sub_labels, ig_steps, true);
                double lmean = 0.0, rmean = 0.0;
                for (const auto &s : summaries) {
                    lmean += s.left_mean;
                    rmean += s.right_mean;
                }
                double ratio = lmean > 0 ? rmean / lmean : 0.0;

                if (init == nncore::InitScheme::Standard) {
                    acc_random.push_back(acc);
                    ratio_random.push_back(ratio);
                } else {
                    acc_zero.push_back(acc);
                    ratio_zero.push_back(ratio);
                }
            }
        }
        auto mr = detail::mean_stderr(acc_random);
        auto mz = detail::mean_stderr(acc_zero);
        auto rr = detail::mean_stderr(ratio_random);
        auto rz = detail::mean_stderr(ratio_zero);
        results[bi] = {
            {Cell::of(beta), Cell::of(std::string("random")), Cell::of(seeds), Cell::of(mr.mean),
             Cell::of(mr.stderr_), Cell::of(rr.mean)},
            {Cell::of(beta), Cell::of(std::string("zero")), Cell::of(seeds), Cell::of(mz.mean),
             Cell::of(mz.stderr_), Cell::of(rz.mean)},
        };
        store.store(bi, results[bi]);
    });

    for (auto &rows : results)
        for (auto &r : rows) table.add_row(std::move(r));
    return table;
}

/* Attribution run
 * ---------------
 */

inline ResultTable run_attribution(const ExperimentConfig &cfg) {
    cfg.doc.validate_keys(detail::with_globals({"attrib.checkpoint", "attrib.dataset",
                                                "attrib.samples", "attrib.steps", "attrib.bins",
                                                "attrib.target"}));

    std::string ckpt = cfg.doc.get("attrib.checkpoint", "");
    std::string data_path = cfg.doc.get("attrib.dataset", "");
    if (ckpt.empty() || data_path.empty())
        throw config_error("ConfigInvalid",
                           "attribute needs attrib.checkpoint and attrib.dataset");
    auto n_samples = static_cast<std::size_t>(cfg.doc.get_int("attrib.samples", 1000));
    auto steps = static_cast<std::size_t>(cfg.doc.get_int("attrib.steps", 128));
    auto bins = static_cast<std::size_t>(cfg.doc.get_int("attrib.bins", 30));
    std::string target_name = cfg.doc.get("attrib.target", "alice");
    if (target_name != "alice" && target_name != "bob")
        throw config_error("ConfigInvalid", "attrib.target must be alice or bob");

    nncore::Network net = nncore::load_network(ckpt);
    dataforge::PairedDataset ds = dataforge::load_dataset(data_path);
    nncore::Tensor xs = nncore::to_tensor(ds);
    const auto &labels = target_name == "alice" ? ds.y_alice : ds.y_bob;

    std::size_t n = std::min(n_samples, ds.size());
    nncore::Tensor subset({n, xs.shape.h, xs.shape.w, xs.shape.c});
    std::copy(xs.v.begin(), xs.v.begin() + n * xs.shape.features(), subset.v.begin());
    std::vector<std::uint8_t> sub_labels(labels.begin(), labels.begin() + n);

    auto summaries = attrib::side_means_for_samples(net, subset, sub_labels, steps, true);

    ResultTable table;
    table.columns = {"sample", "label", "left_mean_abs_ig", "right_mean_abs_ig"};
    for (std::size_t i = 0; i < summaries.size(); ++i)
        table.add_row({Cell::of(i), Cell::of(static_cast<std::int64_t>(sub_labels[i])),
                       Cell::of(summaries[i].left_mean), Cell::of(summaries[i].right_mean)});

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        auto hist = attrib::side_histograms(summaries, bins);
        std::ofstream out(std::filesystem::path(cfg.out_dir) / "histograms.json");
        out << "{\n \"bin_edges\": [";
        for (std::size_t i = 0; i < hist.bin_edges.size(); ++i)
            out << (i ? ", " : "") << format_number(hist.bin_edges[i]);
        out << "],\n \"left_density\": [";
        for (std::size_t i = 0; i < hist.left_density.size(); ++i)
            out << (i ? ", " : "") << format_number(hist.left_density[i]);
        out << "],\n \"right_density\": [";
        for (std::size_t i = 0; i < hist.right_density.size(); ++i)
            out << (i ? ", " : "") << format_number(hist.right_density[i]);
        out << "]\n}\n";
    }
    return table;
}

/* Correlation check
 * -----------------
 */

inline ResultTable run_corr_check(const ExperimentConfig &cfg) {
    cfg.doc.validate_keys(detail::with_globals({"corr.in"}));
    std::string path = cfg.doc.get("corr.in", "");
    if (path.empty()) throw config_error("ConfigInvalid", "corr-check needs corr.in");

    dataforge::PairedDataset ds = dataforge::load_dataset(path);
    dataforge::CorrelationReport rep = dataforge::estimate_task_correlation(ds);

    ResultTable table;
    table.columns = {"class", "corr", "defined", "beta", "mean_corr", "sample_count"};
    for (std::size_t cls = 0; cls < dataforge::kNumClasses; ++cls)
        table.add_row({Cell::of(cls), Cell::of(rep.per_class_corr[cls]),
                       Cell::of(std::string(rep.defined[cls] ? "yes" : "no")),
                       Cell::of(ds.beta), Cell::of(rep.mean_corr), Cell::of(rep.sample_count)});
    return table;
}

inline std::string correlation_report_json(const dataforge::CorrelationReport &rep) {
    std::ostringstream out;
    out << "{\n \"per_class_corr\": [";
    for (std::size_t i = 0; i < dataforge::kNumClasses; ++i)
        out << (i ? ", " : "") << format_number(rep.per_class_corr[i]);
    out << "],\n \"defined\": [";
    for (std::size_t i = 0; i < dataforge::kNumClasses; ++i)
        out << (i ? ", " : "") << (rep.defined[i] ? "true" : "false");
    out << "],\n \"mean_corr\": " << format_number(rep.mean_corr)
        << ",\n \"sample_count\": " << rep.sample_count << "\n}\n";
    return out.str();
}

/* Dispatch
 * --------
 */

inline ResultTable run(const ExperimentConfig &cfg) {
    auto started = std::chrono::steady_clock::now();

    ResultTable table;
    switch (cfg.kind) {
    case ExperimentKind::GlmSweep: table = run_glm_sweep(cfg); break;
    case ExperimentKind::TaskSweep: table = run_task_sweep(cfg); break;
    case ExperimentKind::LayerSweep: table = run_layer_sweep(cfg); break;
    case ExperimentKind::OracleInit: table = run_oracle_init(cfg); break;
    case ExperimentKind::Attribution: table = run_attribution(cfg); break;
    case ExperimentKind::CorrCheck: table = run_corr_check(cfg); break;
    }

    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(cfg.doc.hash()));
    table.config_hash = hash;
    table.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        auto dir = std::filesystem::path(cfg.out_dir);
        emit_file(table, EmitFormat::CSV, (dir / "results.csv").string());

        std::ofstream cfg_copy(dir / "config.txt");
        cfg_copy << "experiment = " << experiment_name(cfg.kind) << "\n"
                 << "seed = " << cfg.master_seed << "\n"
                 << "scale = " << cfg.scale.name << "\n"
                 << cfg.doc.canonical_text();

        std::ofstream prov(dir / "provenance.json");
        prov << "{\n \"config_hash\": \"" << table.config_hash << "\",\n \"code_version\": \""
             << table.code_version << "\",\n \"wall_seconds\": " << format_number(table.wall_seconds)
             << "\n}\n";
    }
    return table;
}

} // namespace xfl::runlab

#endif // XFL_RUNLAB_HPP
