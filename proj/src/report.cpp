#include "ctxmix/report.hpp"

#include "ctxmix/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace ctxmix {

using ojson = nlohmann::ordered_json;

std::string format_number(double value)
{
    if (value == 0.0) return "0"; // folds -0
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    return buf;
}

namespace {

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    return fields;
}

double parse_double(const std::string& s, const std::string& what)
{
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) fail(ErrorKind::Input, "malformed number '" + s + "' in " + what);
    return v;
}

std::size_t parse_size(const std::string& s, const std::string& what)
{
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) fail(ErrorKind::Input, "malformed integer '" + s + "' in " + what);
    return v;
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string px(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

} // namespace

std::string scores_jsonl(const std::vector<ScoredUtterance>& scored)
{
    std::string out;
    for (const auto& u : scored) {
        for (const auto& m : u.maps) {
            ojson j;
            j["id"] = u.id;
            j["layer"] = m.layer + 1;
            j["method"] = to_string(m.method);
            j["scope"] = to_string(m.scope);
            j["normalized"] = m.normalized;
            j["rows"] = m.row_labels;
            j["cols"] = m.col_labels;
            j["row_words"] = m.row_words;
            j["col_words"] = m.col_words;
            ojson rows = ojson::array();
            for (std::size_t r = 0; r < m.scores.rows(); ++r) {
                const auto row = m.scores.row(r);
                rows.push_back(std::vector<double>(row.begin(), row.end()));
            }
            j["scores"] = std::move(rows);
            j["flagged"] = m.flagged;
            if (m.raw_cosine) {
                ojson cos = ojson::array();
                for (std::size_t r = 0; r < m.raw_cosine->rows(); ++r) {
                    const auto row = m.raw_cosine->row(r);
                    cos.push_back(std::vector<double>(row.begin(), row.end()));
                }
                j["raw_cosine"] = std::move(cos);
            }
            out += j.dump() + "\n";
        }
    }
    return out;
}

std::string scores_csv(const std::vector<ScoredUtterance>& scored)
{
    std::string out = "id,layer,method,scope,row_word,row_label,col_word,col_label,score,flagged\n";
    for (const auto& u : scored) {
        for (const auto& m : u.maps) {
            for (std::size_t r = 0; r < m.scores.rows(); ++r) {
                for (std::size_t c = 0; c < m.scores.cols(); ++c) {
                    out += csv_field(u.id) + "," + std::to_string(m.layer + 1) + "," + to_string(m.method) + "," +
                           to_string(m.scope) + "," + std::to_string(m.row_words[r]) + "," +
                           csv_field(m.row_labels[r]) + "," + std::to_string(m.col_words[c]) + "," +
                           csv_field(m.col_labels[c]) + "," + format_number(m.scores.at(r, c)) + "," +
                           (m.flagged[r] ? "1" : "0") + "\n";
                }
            }
        }
    }
    return out;
}

std::string profile_csv(const std::vector<CueContributionProfile>& profiles)
{
    std::string out = "model,layer,method,scope,mean,std,count\n";
    for (const auto& p : profiles) {
        for (const auto& e : p.entries) {
            out += csv_field(e.model_tag) + "," + std::to_string(e.layer + 1) + "," + to_string(e.method) + "," +
                   to_string(e.scope) + "," + format_number(e.mean) + "," + format_number(e.stddev) + "," +
                   std::to_string(e.count) + "\n";
        }
    }
    return out;
}

std::string probe_csv(const ProbeResult& result, const std::string& pooling)
{
    std::string out = "layer,fold,accuracy,lambda,pooling\n";
    for (const auto& l : result.levels) {
        for (std::size_t f = 0; f < l.fold_accuracies.size(); ++f) {
            out += std::to_string(l.level) + "," + std::to_string(f) + "," + format_number(l.fold_accuracies[f]) + "," +
                   format_number(l.lambda) + "," + pooling + "\n";
        }
        out += std::to_string(l.level) + ",mean," + format_number(l.mean_accuracy) + "," + format_number(l.lambda) +
               "," + pooling + "\n";
    }
    return out;
}

std::string ablation_csv(const AblationReport& report)
{
    std::string out = "# silence=" + report.silence + "\n";
    out += "id,condition,baseline,ablated,drop\n";
    for (const auto& r : report.rows) {
        out += csv_field(r.id) + "," + to_string(r.condition) + "," + format_number(r.baseline) + "," +
               format_number(r.ablated) + "," + format_number(r.drop) + "\n";
    }
    return out;
}

std::string ablation_summary_csv(const AblationReport& report)
{
    std::string out = "# silence=" + report.silence + "\n";
    out += "condition,count,mean_baseline,mean_ablated,mean_drop\n";
    for (const auto& s : report.summary) {
        out += std::string(to_string(s.condition)) + "," + std::to_string(s.count) + "," +
               format_number(s.mean_baseline) + "," + format_number(s.mean_ablated) + "," +
               format_number(s.mean_drop) + "\n";
    }
    return out;
}

std::vector<MapRecord> read_scores_jsonl(const std::filesystem::path& path)
{
    std::istringstream in(read_text(path));
    std::vector<MapRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        try {
            const auto j = ojson::parse(line);
            MapRecord r;
            r.id = j.at("id").get<std::string>();
            r.layer = j.at("layer").get<std::size_t>();
            r.method = j.at("method").get<std::string>();
            r.scope = j.at("scope").get<std::string>();
            r.row_labels = j.at("rows").get<std::vector<std::string>>();
            r.col_labels = j.at("cols").get<std::vector<std::string>>();
            r.scores = j.at("scores").get<std::vector<std::vector<double>>>();
            check(r.scores.size() == r.row_labels.size(), ErrorKind::Input, where + ": row count mismatch");
            for (const auto& row : r.scores) {
                check(row.size() == r.col_labels.size(), ErrorKind::Input, where + ": column count mismatch");
            }
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Input, where + ": " + e.what());
        }
    }
    return out;
}

std::vector<ProfileRow> read_profile_csv(const std::filesystem::path& path)
{
    std::istringstream in(read_text(path));
    std::string line;
    std::vector<ProfileRow> rows;
    bool header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (!header) {
            check(f.size() == 7 && f[0] == "model" && f[1] == "layer" && f[4] == "mean", ErrorKind::Input,
                  where + ": not a profile file");
            header = true;
            continue;
        }
        check(f.size() == 7, ErrorKind::Input, where + ": expected 7 fields");
        rows.push_back({f[0], parse_size(f[1], where), f[2], f[3], parse_double(f[4], where),
                        parse_double(f[5], where), parse_size(f[6], where)});
    }
    check(header, ErrorKind::Input, path.string() + ": empty profile file");
    return rows;
}

std::string palette_color(double value)
{
    const double t = std::isfinite(value) ? std::clamp(value, 0.0, 1.0) : 0.0;
    constexpr int lo[3] = {247, 251, 255};
    constexpr int hi[3] = {8, 48, 107};
    char buf[8];
    int c[3];
    for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(lo[i] + (hi[i] - lo[i]) * t));
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
    return buf;
}

std::string render_heatmap_svg(const MapRecord& map)
{
    check(!map.row_labels.empty() && !map.col_labels.empty(), ErrorKind::Input, "cannot render an empty map");
    constexpr double cell = 40.0, char_w = 7.0, pad = 12.0, title_h = 24.0;
    std::size_t max_row = 0, max_col = 0;
    for (const auto& l : map.row_labels) max_row = std::max(max_row, l.size());
    for (const auto& l : map.col_labels) max_col = std::max(max_col, l.size());
    const double left = pad + char_w * static_cast<double>(max_row) + 6.0;
    const double top = title_h + pad + char_w * static_cast<double>(max_col) + 6.0;
    const double width = left + cell * static_cast<double>(map.col_labels.size()) + pad;
    const double height = top + cell * static_cast<double>(map.row_labels.size()) + pad;

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(width) << "\" height=\"" << px(height)
      << "\" font-family=\"monospace\" font-size=\"11\">\n";
    s << "<text x=\"" << px(pad) << "\" y=\"16\">" << xml_escape(map.id) << " layer " << map.layer << " "
      << xml_escape(map.method) << " " << xml_escape(map.scope) << "</text>\n";
    for (std::size_t c = 0; c < map.col_labels.size(); ++c) {
        const double x = left + cell * (static_cast<double>(c) + 0.5);
        s << "<text class=\"col\" transform=\"translate(" << px(x) << "," << px(top - 6.0)
          << ") rotate(-90)\">" << xml_escape(map.col_labels[c]) << "</text>\n";
    }
    for (std::size_t r = 0; r < map.row_labels.size(); ++r) {
        const double y = top + cell * static_cast<double>(r);
        s << "<text class=\"row\" x=\"" << px(left - 6.0) << "\" y=\"" << px(y + cell / 2 + 4)
          << "\" text-anchor=\"end\">" << xml_escape(map.row_labels[r]) << "</text>\n";
        for (std::size_t c = 0; c < map.col_labels.size(); ++c) {
            const double v = map.scores[r][c];
            const double x = left + cell * static_cast<double>(c);
            s << "<rect class=\"cell\" x=\"" << px(x) << "\" y=\"" << px(y) << "\" width=\"" << px(cell)
              << "\" height=\"" << px(cell) << "\" fill=\"" << palette_color(v) << "\"/>";
            char label[16];
            std::snprintf(label, sizeof label, "%.2f", v);
            s << "<text x=\"" << px(x + cell / 2) << "\" y=\"" << px(y + cell / 2 + 4)
              << "\" text-anchor=\"middle\" fill=\"" << (v > 0.5 ? "#ffffff" : "#000000") << "\">" << label
              << "</text>\n";
        }
    }
    s << "</svg>\n";
    return s.str();
}

std::string render_profile_svg(const std::vector<ProfileRow>& rows)
{
    check(!rows.empty(), ErrorKind::Input, "cannot render an empty profile");
    // Series keep first-appearance order.
    std::vector<std::string> keys;
    std::map<std::string, std::vector<std::pair<std::size_t, double>>> series;
    std::size_t max_layer = 1;
    double y_max = 1.0;
    for (const auto& r : rows) {
        const std::string key = r.model + " " + r.method + " " + r.scope;
        if (!series.count(key)) keys.push_back(key);
        series[key].emplace_back(r.layer, r.mean);
        max_layer = std::max(max_layer, r.layer);
        if (std::isfinite(r.mean)) y_max = std::max(y_max, r.mean);
    }
    static constexpr const char* colors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                             "#66a61e", "#e6ab02", "#a6761d", "#666666"};
    constexpr double x0 = 60, x1 = 500, y0 = 30, y1 = 350;
    auto sx = [&](double layer) {
        return max_layer == 1 ? (x0 + x1) / 2 : x0 + (x1 - x0) * (layer - 1) / static_cast<double>(max_layer - 1);
    };
    auto sy = [&](double v) { return y1 - (y1 - y0) * std::clamp(v, 0.0, y_max) / y_max; };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"400\" font-family=\"monospace\" "
         "font-size=\"11\">\n";
    s << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y1) << "\" x2=\"" << px(x1) << "\" y2=\"" << px(y1)
      << "\" stroke=\"#000000\"/>\n";
    s << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y0) << "\" x2=\"" << px(x0) << "\" y2=\"" << px(y1)
      << "\" stroke=\"#000000\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = y_max * i / 4.0;
        s << "<text x=\"" << px(x0 - 6) << "\" y=\"" << px(sy(v) + 4) << "\" text-anchor=\"end\">"
          << format_number(v) << "</text>\n";
    }
    for (std::size_t l = 1; l <= max_layer; ++l) {
        s << "<text x=\"" << px(sx(static_cast<double>(l))) << "\" y=\"" << px(y1 + 16)
          << "\" text-anchor=\"middle\">" << l << "</text>\n";
    }
    s << "<text x=\"" << px((x0 + x1) / 2) << "\" y=\"390\" text-anchor=\"middle\">layer</text>\n";
    s << "<text x=\"14\" y=\"" << px((y0 + y1) / 2) << "\" transform=\"rotate(-90 14 " << px((y0 + y1) / 2)
      << ")\" text-anchor=\"middle\">cue contribution</text>\n";
    for (std::size_t k = 0; k < keys.size(); ++k) {
        auto points = series[keys[k]];
        std::sort(points.begin(), points.end());
        const char* color = colors[k % std::size(colors)];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < points.size(); ++i) {
            s << (i ? " " : "") << px(sx(static_cast<double>(points[i].first))) << "," << px(sy(points[i].second));
        }
        s << "\"/>\n";
        const double ly = y0 + 16.0 * static_cast<double>(k);
        s << "<rect x=\"520\" y=\"" << px(ly - 8) << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>";
        s << "<text x=\"536\" y=\"" << px(ly + 1) << "\">" << xml_escape(keys[k]) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace ctxmix
