#include "ctxmix/error.hpp"
#include "ctxmix/report.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>

using namespace ctxmix;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle)
{
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

MixingMap two_by_two()
{
    MixingMap m;
    m.layer = 1;
    m.method = Method::ValueZeroing;
    m.scope = Scope::WithinEncoder;
    m.scores = Tensor::from_rows({{0.25f, 0.75f}, {0, 0}});
    m.row_words = {0, 1};
    m.col_words = {0, 1};
    m.row_labels = {"les", "livres"};
    m.col_labels = {"les", "livres"};
    m.flagged = {false, true};
    m.raw_cosine = Tensor::from_rows({{0.9f, 0.5f}, {1, 1}});
    m.normalized = true;
    return m;
}

std::filesystem::path scratch(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("ctxmix_report_" + name);
}

} // namespace

TEST_CASE("number formatting")
{
    CHECK(format_number(0.0) == "0");
    CHECK(format_number(-0.0) == "0");
    CHECK(format_number(0.25) == "0.25");
    CHECK(format_number(1.0 / 3) == "0.333333333");
}

TEST_CASE("score exports")
{
    const std::vector<ScoredUtterance> scored{{"u1", {two_by_two()}}};
    const std::string jsonl = scores_jsonl(scored);
    const auto rec = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
    CHECK(rec["id"] == "u1");
    CHECK(rec["layer"] == 2); // exports count layers from 1
    CHECK(rec["method"] == "vz");
    CHECK(rec["scores"][0][1].get<double>() == doctest::Approx(0.75));
    CHECK(rec["flagged"][1] == true);
    CHECK(rec.contains("raw_cosine"));

    const std::string csv = scores_csv(scored);
    CHECK(csv.rfind("id,layer,method,scope,row_word,row_label,col_word,col_label,score,flagged\n", 0) == 0);
    CHECK(count_of(csv, "\n") == 5);

    const auto path = scratch("scores.jsonl");
    write_text(path, jsonl);
    const auto maps = read_scores_jsonl(path);
    REQUIRE(maps.size() == 1);
    CHECK(maps[0].layer == 2);
    CHECK(maps[0].row_labels == std::vector<std::string>{"les", "livres"});
    CHECK(maps[0].scores[0][0] == doctest::Approx(0.25));
    std::filesystem::remove(path);
}

TEST_CASE("profile csv round trip")
{
    CueContributionProfile p;
    p.model_tag = "trained";
    p.entries.push_back({0, Method::Attn, Scope::WithinEncoder, 0.2, 0.01, 10, "trained"});
    p.entries.push_back({1, Method::Attn, Scope::WithinEncoder, 0.9, 0.0, 10, "trained"});
    const std::string csv = profile_csv({p});
    CHECK(csv == "model,layer,method,scope,mean,std,count\n"
                 "trained,1,attn,within-encoder,0.2,0.01,10\n"
                 "trained,2,attn,within-encoder,0.9,0,10\n");
    const auto path = scratch("profile.csv");
    write_text(path, csv);
    const auto rows = read_profile_csv(path);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].layer == 2);
    CHECK(rows[1].mean == 0.9);
    std::filesystem::remove(path);
}

TEST_CASE("probe and ablation exports")
{
    ProbeResult r;
    r.levels.push_back({0, 0.5, {0.4, 0.6}, 1.0});
    const std::string probe = probe_csv(r);
    CHECK(probe == "layer,fold,accuracy,lambda,pooling\n0,0,0.4,1,mean\n0,1,0.6,1,mean\n0,mean,0.5,1,mean\n");

    AblationReport a;
    a.rows.push_back({"u1", AblationCondition::SilenceCue, 0.9, 0.5, 0.4});
    a.summary.push_back({AblationCondition::SilenceCue, 0.4, 0.9, 0.5, 1});
    CHECK(ablation_csv(a) == "# silence=zeros\nid,condition,baseline,ablated,drop\nu1,SC,0.9,0.5,0.4\n");
    CHECK(ablation_summary_csv(a).find("SC,1,0.9,0.5,0.4") != std::string::npos);
}

TEST_CASE("heatmap rendering")
{
    MapRecord m;
    m.id = "u<1>";
    m.method = "vz";
    m.scope = "within-encoder";
    m.row_labels = {"les", "livres"};
    m.col_labels = {"les", "livres"};
    m.scores = {{0.1, 0.9}, {1.0, 0.0}};
    const std::string svg = render_heatmap_svg(m);
    CHECK(count_of(svg, "class=\"cell\"") == 4);
    CHECK(count_of(svg, ">livres</text>") == 2);
    CHECK(svg.find("u&lt;1&gt;") != std::string::npos);
    CHECK(render_heatmap_svg(m) == svg);
    CHECK(palette_color(0.0) == "#f7fbff");
    CHECK(palette_color(1.0) == "#08306b");
    CHECK(palette_color(-3.0) == palette_color(0.0));
}

TEST_CASE("profile rendering")
{
    std::vector<ProfileRow> rows;
    for (std::size_t l = 1; l <= 3; ++l) {
        rows.push_back({"trained", l, "vz", "within-encoder", 0.1 * static_cast<double>(l), 0, 5});
        rows.push_back({"random-init(1)", l, "vz", "within-encoder", 0.2, 0, 5});
    }
    const std::string svg = render_profile_svg(rows);
    CHECK(count_of(svg, "<polyline") == 2);
    CHECK_THROWS_AS(render_profile_svg({}), Error);
}

TEST_CASE("malformed inputs")
{
    const auto path = scratch("bad.jsonl");
    write_text(path, "{\"id\": 3\n");
    try {
        read_scores_jsonl(path);
        FAIL("expected an input error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Input);
    }
    write_text(path, "");
    CHECK_THROWS_AS(read_profile_csv(path), Error);
    std::filesystem::remove(path);
    try {
        read_text(scratch("missing.csv"));
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
}
