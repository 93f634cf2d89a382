// ctxmix: context-mixing analysis pipeline.
//
//   ctxmix synth --out data
//   ctxmix scores --model data/encoder-ctc/model --manifests data/encoder-ctc/manifest.jsonl --out run
//   ctxmix cue-contribution ... --out run
//   ctxmix probe ... --lambda 1 --k-folds 3 --out run
//   ctxmix ablate ... --conditions SC,ST --out run
//   ctxmix render run/profile.csv --out profile.svg
//
// Exit status: 0 ok, 2 usage/validation, 3 numeric failure, 4 I/O.

#include "ctxmix/ablation.hpp"
#include "ctxmix/cue.hpp"
#include "ctxmix/dataset.hpp"
#include "ctxmix/error.hpp"
#include "ctxmix/parallel.hpp"
#include "ctxmix/probing.hpp"
#include "ctxmix/report.hpp"
#include "ctxmix/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace ctxmix;
using ojson = nlohmann::ordered_json;

namespace {

struct RunConfig {
    std::string model;
    std::string manifests;
    std::string methods = "attn,an,vz";
    std::string scopes = "within-encoder";
    std::string layers;
    std::string out;
    std::uint64_t seed = 13;
    double lambda = 1.0;
    std::string conditions;
    std::size_t k_folds = 3;
    std::string input; // render
};

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream s(text);
    std::string item;
    while (std::getline(s, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<Method> parse_methods(const std::string& text)
{
    std::vector<Method> out;
    for (const auto& m : split_list(text)) out.push_back(parse_method(m));
    check(!out.empty(), ErrorKind::Usage, "--methods is empty");
    return out;
}

std::vector<Scope> parse_scopes(const std::string& text)
{
    std::vector<Scope> out;
    for (const auto& s : split_list(text)) out.push_back(parse_scope(s));
    check(!out.empty(), ErrorKind::Usage, "--scopes is empty");
    return out;
}

std::size_t parse_layer_number(const std::string& s)
{
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    check(pos == s.size() && v >= 1, ErrorKind::Usage, "bad layer '" + s + "' (layers are numbered from 1)");
    return v;
}

// "2", "1-3", "1,3-4" (1-based) -> sorted 0-based indices.
std::optional<std::vector<std::size_t>> parse_layers(const std::string& text)
{
    if (text.empty()) return std::nullopt;
    std::vector<std::size_t> out;
    for (const auto& part : split_list(text)) {
        const auto dash = part.find('-');
        const std::size_t lo = parse_layer_number(part.substr(0, dash));
        const std::size_t hi = dash == std::string::npos ? lo : parse_layer_number(part.substr(dash + 1));
        check(lo <= hi, ErrorKind::Usage, "bad layer range '" + part + "'");
        for (std::size_t l = lo; l <= hi; ++l) out.push_back(l - 1);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

struct Loaded {
    Model model;
    std::vector<Utterance> data;
};

Loaded load_inputs(const RunConfig& cfg)
{
    check(fs::exists(cfg.model), ErrorKind::Io, "model directory " + cfg.model + " does not exist");
    check(fs::exists(cfg.manifests), ErrorKind::Io, "manifest file " + cfg.manifests + " does not exist");
    Loaded l{load_model(cfg.model), {}};
    l.data = load_dataset(cfg.manifests, l.model.spec);
    check(!l.data.empty(), ErrorKind::Data, "empty dataset " + cfg.manifests);
    return l;
}

void print_summary(const ojson& j)
{
    std::cout << j.dump() << "\n";
}

int cmd_synth(const RunConfig& cfg)
{
    SynthTaskSpec spec;
    spec.seed = cfg.seed;
    const auto data = gen_dataset(spec);
    const fs::path out(cfg.out);
    const auto enc = build_cue_copy_encoder(spec);
    const auto encdec = build_cue_copy_encdec(spec);
    write_task(out / "encoder-ctc", enc.model, data);
    write_task(out / "encoder-decoder", encdec.model, data);
    ojson j;
    j["command"] = "synth";
    j["utterances"] = data.size();
    j["seed"] = cfg.seed;
    j["encoder_ctc"] = {{"dir", (out / "encoder-ctc").string()}, {"copy_layer", enc.copy_layer + 1}};
    j["encoder_decoder"] = {{"dir", (out / "encoder-decoder").string()}, {"copy_layer", encdec.copy_layer + 1}};
    print_summary(j);
    return 0;
}

int cmd_scores(const RunConfig& cfg)
{
    ScoreRequest req;
    req.methods = parse_methods(cfg.methods);
    req.scopes = parse_scopes(cfg.scopes);
    req.layers = parse_layers(cfg.layers);
    const Loaded in = load_inputs(cfg);
    for (auto s : req.scopes) check_scope(in.model.spec, s);
    if (req.layers) {
        for (auto l : *req.layers) {
            for (auto s : req.scopes) {
                check(l < layer_count(in.model.spec, s), ErrorKind::Usage,
                      "layer " + std::to_string(l + 1) + " outside the " + to_string(s) + " stack");
            }
        }
    }

    std::vector<ScoredUtterance> scored(in.data.size());
    std::vector<std::string> skipped(in.data.size());
    parallel_for(in.data.size(), [&](std::size_t i) {
        const auto& u = in.data[i];
        const UtteranceRun run = run_utterance(in.model, u.frames, u.manifest);
        if (in.model.spec.has_decoder() && !cue_and_target_correct(in.model, run, u.manifest)) {
            skipped[i] = "cue or target transcribed incorrectly";
            return;
        }
        scored[i] = {u.manifest.id, score_all(run, req)};
    });
    std::vector<ScoredUtterance> kept;
    ojson skip = ojson::array();
    for (std::size_t i = 0; i < scored.size(); ++i) {
        if (skipped[i].empty()) {
            kept.push_back(std::move(scored[i]));
        } else {
            skip.push_back(in.data[i].manifest.id + ": " + skipped[i]);
        }
    }
    const fs::path out(cfg.out);
    write_text(out / "scores.jsonl", scores_jsonl(kept));
    write_text(out / "scores.csv", scores_csv(kept));
    ojson j;
    j["command"] = "scores";
    j["utterances"] = kept.size();
    j["maps"] = kept.empty() ? 0 : kept.size() * kept.front().maps.size();
    j["skipped"] = std::move(skip);
    j["outputs"] = {(out / "scores.jsonl").string(), (out / "scores.csv").string()};
    print_summary(j);
    return 0;
}

int cmd_cue_contribution(const RunConfig& cfg)
{
    ProfileOptions opt;
    opt.methods = parse_methods(cfg.methods);
    opt.scopes = parse_scopes(cfg.scopes);
    const Loaded in = load_inputs(cfg);
    const std::uint64_t seeds[] = {cfg.seed, cfg.seed + 1, cfg.seed + 2};
    const TrainedVsRandom cmp = compare_trained_random(in.model, in.data, opt, seeds);
    check(!cmp.trained.used_ids.empty(), ErrorKind::Data, "no utterance has cue and target transcribed correctly");

    const fs::path out(cfg.out);
    write_text(out / "profile.csv", profile_csv({cmp.trained}));
    write_text(out / "profile_random.csv", profile_csv(cmp.random));
    ojson j;
    j["command"] = "cue-contribution";
    j["used"] = cmp.trained.used_ids.size();
    j["skipped"] = cmp.trained.skipped;
    j["random_seeds"] = seeds;
    j["profile_rows"] = cmp.trained.entries.size();
    j["outputs"] = {(out / "profile.csv").string(), (out / "profile_random.csv").string()};
    print_summary(j);
    return 0;
}

int cmd_probe(const RunConfig& cfg)
{
    const auto scopes = parse_scopes(cfg.scopes);
    check(scopes.size() == 1 && scopes[0] != Scope::Cross, ErrorKind::Usage,
          "probe takes one scope: within-encoder or within-decoder");
    check(cfg.lambda >= 0.0, ErrorKind::Usage, "--lambda must be non-negative");
    const Loaded in = load_inputs(cfg);
    check_scope(in.model.spec, scopes[0]);
    const ProbeSide side = scopes[0] == Scope::WithinEncoder ? ProbeSide::Encoder : ProbeSide::Decoder;

    // The probe only sees utterances whose cue and target are transcribed correctly.
    std::vector<char> keep(in.data.size(), 0);
    parallel_for(in.data.size(), [&](std::size_t i) {
        const auto& u = in.data[i];
        keep[i] = cue_and_target_correct(in.model, run_utterance(in.model, u.frames, u.manifest), u.manifest);
    });
    std::vector<Utterance> used;
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        if (keep[i]) used.push_back(in.data[i]);
    }
    check(!used.empty(), ErrorKind::Data, "no utterance has cue and target transcribed correctly");
    const ProbeDataset ds = build_probe_dataset(in.model, used, side);
    const ProbeResult res = kfold_probe(ds, cfg.k_folds, cfg.lambda, cfg.seed);

    const fs::path out(cfg.out);
    write_text(out / "probe.csv", probe_csv(res));
    ojson j;
    j["command"] = "probe";
    j["samples"] = used.size();
    j["k_folds"] = cfg.k_folds;
    j["lambda"] = cfg.lambda;
    j["pooling"] = "mean";
    ojson acc = ojson::array();
    for (const auto& l : res.levels) acc.push_back(format_number(l.mean_accuracy));
    j["mean_accuracy"] = std::move(acc);
    j["outputs"] = {(out / "probe.csv").string()};
    print_summary(j);
    return 0;
}

int cmd_ablate(const RunConfig& cfg)
{
    const Loaded in = load_inputs(cfg);
    std::string names = cfg.conditions;
    if (names.empty()) names = in.model.spec.has_decoder() ? "SC,BC,SBC,ST" : "SC,SD,ST";
    std::vector<AblationCondition> conditions;
    for (const auto& c : split_list(names)) conditions.push_back(parse_condition(c));
    const AblationReport report = run_ablation(in.model, in.data, conditions);

    const fs::path out(cfg.out);
    write_text(out / "ablation.csv", ablation_csv(report));
    write_text(out / "ablation_summary.csv", ablation_summary_csv(report));
    ojson j;
    j["command"] = "ablate";
    j["silence"] = report.silence;
    ojson means = ojson::object();
    for (const auto& s : report.summary) means[to_string(s.condition)] = format_number(s.mean_drop);
    j["mean_drop"] = std::move(means);
    j["skipped"] = report.skipped;
    j["outputs"] = {(out / "ablation.csv").string(), (out / "ablation_summary.csv").string()};
    print_summary(j);
    return 0;
}

int cmd_render(const RunConfig& cfg, bool methods_set, bool scopes_set)
{
    const fs::path input(cfg.input);
    check(fs::exists(input), ErrorKind::Io, "input " + cfg.input + " does not exist");
    std::string svg;
    std::string kind;
    if (input.extension() == ".jsonl") {
        const auto records = read_scores_jsonl(input);
        const auto methods = methods_set ? split_list(cfg.methods) : std::vector<std::string>{};
        const auto scopes = scopes_set ? split_list(cfg.scopes) : std::vector<std::string>{};
        const auto layers = parse_layers(cfg.layers);
        auto wanted = [&](const MapRecord& r) {
            auto in = [](const auto& list, const auto& v) {
                return list.empty() || std::find(list.begin(), list.end(), v) != list.end();
            };
            return in(methods, r.method) && in(scopes, r.scope) &&
                   (!layers || in(*layers, r.layer - 1));
        };
        const auto it = std::find_if(records.begin(), records.end(), wanted);
        check(it != records.end(), ErrorKind::Input, "no score map in " + cfg.input + " matches the filters");
        svg = render_heatmap_svg(*it);
        kind = "heatmap";
    } else {
        svg = render_profile_svg(read_profile_csv(input));
        kind = "profile";
    }
    write_text(cfg.out, svg);
    ojson j;
    j["command"] = "render";
    j["kind"] = kind;
    j["outputs"] = {cfg.out};
    print_summary(j);
    return 0;
}

int exit_code(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::Numeric: return 3;
    case ErrorKind::Io: return 4;
    default: return 2;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Context-mixing analysis for speech transformers"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--model", cfg.model, "Model directory")->required();
        sub->add_option("--manifests", cfg.manifests, "Manifest file (JSON lines)")->required();
    };

    auto* synth = app.add_subcommand("synth", "Write the toy cue-copy models and dataset");
    synth->add_option("--out", cfg.out, "Output directory")->required();
    synth->add_option("--seed", cfg.seed, "Dataset seed")->capture_default_str();

    auto* scores = app.add_subcommand("scores", "Word-level context-mixing maps");
    add_data(scores);
    scores->add_option("--methods", cfg.methods, "attn,an,vz")->capture_default_str();
    scores->add_option("--scopes", cfg.scopes, "within-encoder,within-decoder,cross")->capture_default_str();
    scores->add_option("--layers", cfg.layers, "Layers, 1-based (e.g. 2 or 1-3)");
    scores->add_option("--out", cfg.out, "Output directory")->required();

    auto* cue = app.add_subcommand("cue-contribution", "Layer-wise cue contribution, trained vs random-init");
    add_data(cue);
    cue->add_option("--methods", cfg.methods, "attn,an,vz")->capture_default_str();
    cue->add_option("--scopes", cfg.scopes, "within-encoder,within-decoder,cross")->capture_default_str();
    cue->add_option("--seed", cfg.seed, "First random-init seed (three are used)")->capture_default_str();
    cue->add_option("--out", cfg.out, "Output directory")->required();

    auto* probe = app.add_subcommand("probe", "Layer-wise number probing");
    add_data(probe);
    probe->add_option("--scopes", cfg.scopes, "within-encoder or within-decoder")->capture_default_str();
    probe->add_option("--lambda", cfg.lambda, "L2 strength")->capture_default_str();
    probe->add_option("--k-folds", cfg.k_folds, "Cross-validation folds")->capture_default_str()->check(
        CLI::Range(2, 100));
    probe->add_option("--seed", cfg.seed, "Fold shuffle seed")->capture_default_str();
    probe->add_option("--out", cfg.out, "Output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "Input ablation confidence drops");
    add_data(ablate);
    ablate->add_option("--conditions", cfg.conditions, "SC,BC,SBC,ST,SD");
    ablate->add_option("--out", cfg.out, "Output directory")->required();

    auto* render = app.add_subcommand("render", "SVG heatmap (scores.jsonl) or line plot (profile csv)");
    render->add_option("input", cfg.input, "scores.jsonl or profile csv")->required();
    auto* render_methods = render->add_option("--methods", cfg.methods, "Map filter");
    auto* render_scopes = render->add_option("--scopes", cfg.scopes, "Map filter");
    render->add_option("--layers", cfg.layers, "Map filter, 1-based");
    render->add_option("--out", cfg.out, "Output SVG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(cfg);
        if (*scores) return cmd_scores(cfg);
        if (*cue) return cmd_cue_contribution(cfg);
        if (*probe) return cmd_probe(cfg);
        if (*ablate) return cmd_ablate(cfg);
        if (*render) return cmd_render(cfg, render_methods->count() > 0, render_scopes->count() > 0);
    } catch (const Error& e) {
        std::cerr << "ctxmix: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "ctxmix: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
