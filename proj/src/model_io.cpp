#include "ctxmix/error.hpp"
#include "ctxmix/model.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace ctxmix {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> read_key_values(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::Input, path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

struct SpecReader {
    const std::map<std::string, std::string>& kv;

    const std::string& raw(const std::string& key) const
    {
        auto it = kv.find(key);
        if (it == kv.end()) fail(ErrorKind::Input, "model manifest is missing '" + key + "'");
        return it->second;
    }

    std::size_t size(const std::string& key) const
    {
        const auto& v = raw(key);
        std::size_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size()) fail(ErrorKind::Input, "bad integer for " + key);
        return out;
    }

    TokenId id(const std::string& key) const { return static_cast<TokenId>(size(key)); }

    double real(const std::string& key) const
    {
        try {
            return std::stod(raw(key));
        } catch (const std::exception&) {
            fail(ErrorKind::Input, "bad number for " + key);
        }
    }
};

} // namespace

void save_model(const fs::path& dir, const Model& model)
{
    const auto& s = model.spec;
    check_weight_shapes(s, model.weights);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

    std::ostringstream os;
    os << "# ctxmix model manifest\n";
    os << "kind = " << to_string(s.kind) << '\n';
    os << "encoder_layers = " << s.encoder_layers << '\n';
    os << "decoder_layers = " << s.decoder_layers << '\n';
    os << "d_model = " << s.d_model << '\n';
    os << "n_heads = " << s.n_heads << '\n';
    os << "d_ff = " << s.d_ff << '\n';
    os << "vocab_size = " << s.vocab_size << '\n';
    os << "blank_id = " << s.blank_id << '\n';
    os << "bos_id = " << s.bos_id << '\n';
    os << "eos_id = " << s.eos_id << '\n';
    os << "unk_id = " << s.unk_id << '\n';
    os << "max_frames = " << s.max_frames << '\n';
    os << "max_tokens = " << s.max_tokens << '\n';
    os << "frame_seconds = " << format_double(s.frame_seconds) << '\n';
    os << "final_norm = " << (s.final_norm ? 1 : 0) << '\n';
    if (s.fixed_duration) {
        os << "fixed_duration_seconds = " << format_double(s.fixed_duration->seconds) << '\n';
        os << "fixed_duration_frames = " << s.fixed_duration->frames << '\n';
    }
    {
        std::ofstream out(dir / "model.txt", std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "model.txt").string());
        out << os.str();
    }
    {
        std::ofstream out(dir / "vocab.txt", std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "vocab.txt").string());
        for (const auto& t : model.vocab.tokens()) out << t << '\n';
    }
    for (const auto& [name, tensor] : model.weights.named(s)) write_tensor(dir / (name + ".ctxt"), *tensor);
}

Model load_model(const fs::path& dir)
{
    const auto kv = read_key_values(dir / "model.txt");
    const SpecReader r{kv};
    Model m;
    auto& s = m.spec;
    s.kind = parse_model_kind(r.raw("kind"));
    s.encoder_layers = r.size("encoder_layers");
    s.decoder_layers = r.size("decoder_layers");
    s.d_model = r.size("d_model");
    s.n_heads = r.size("n_heads");
    s.d_ff = r.size("d_ff");
    s.vocab_size = r.size("vocab_size");
    s.blank_id = r.id("blank_id");
    s.bos_id = r.id("bos_id");
    s.eos_id = r.id("eos_id");
    s.unk_id = r.id("unk_id");
    s.max_frames = r.size("max_frames");
    s.max_tokens = r.size("max_tokens");
    s.frame_seconds = r.real("frame_seconds");
    s.final_norm = r.size("final_norm") != 0;
    if (kv.count("fixed_duration_seconds") || kv.count("fixed_duration_frames")) {
        s.fixed_duration = FixedDuration{r.real("fixed_duration_seconds"), r.size("fixed_duration_frames")};
    }
    s.validate();

    std::ifstream vin(dir / "vocab.txt");
    if (!vin) fail(ErrorKind::Io, "cannot open " + (dir / "vocab.txt").string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(vin, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    check(tokens.size() == s.vocab_size, ErrorKind::Input,
          "vocab.txt has " + std::to_string(tokens.size()) + " entries, model declares " +
              std::to_string(s.vocab_size));
    m.vocab = Vocabulary(std::move(tokens));

    m.weights = zero_weights(s);
    for (auto& [name, tensor] : m.weights.named_mut(s)) {
        const auto path = dir / (name + ".ctxt");
        if (!fs::exists(path)) fail(ErrorKind::Io, "missing parameter file " + path.string());
        *tensor = read_tensor(path);
    }
    check_weight_shapes(s, m.weights);
    return m;
}

} // namespace ctxmix
