#pragma once

#include "ctxmix/ablation.hpp"
#include "ctxmix/cue.hpp"
#include "ctxmix/mixing.hpp"
#include "ctxmix/probing.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ctxmix {

// Exports number layers from 1 (layer l = output of layer l); 0 is the input
// in probe reports.

// Shortest round-trippable-enough fixed format used by every text export.
std::string format_number(double value);

struct ScoredUtterance {
    std::string id;
    std::vector<MixingMap> maps;
};

std::string scores_jsonl(const std::vector<ScoredUtterance>& scored);
std::string scores_csv(const std::vector<ScoredUtterance>& scored);
std::string profile_csv(const std::vector<CueContributionProfile>& profiles);
std::string probe_csv(const ProbeResult& result, const std::string& pooling = "mean");
std::string ablation_csv(const AblationReport& report);
std::string ablation_summary_csv(const AblationReport& report);

// Parsed back for rendering.
struct MapRecord {
    std::string id;
    std::size_t layer = 1;
    std::string method, scope;
    std::vector<std::string> row_labels, col_labels;
    std::vector<std::vector<double>> scores;
};

std::vector<MapRecord> read_scores_jsonl(const std::filesystem::path& path);

struct ProfileRow {
    std::string model;
    std::size_t layer = 1;
    std::string method, scope;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

std::vector<ProfileRow> read_profile_csv(const std::filesystem::path& path);

// Sequential light-to-dark fill for a value clamped to [0, 1].
std::string palette_color(double value);

std::string render_heatmap_svg(const MapRecord& map);
// One polyline per (model, method, scope) series over layers.
std::string render_profile_svg(const std::vector<ProfileRow>& rows);

// Whole-file write; directories are created as needed.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

} // namespace ctxmix
