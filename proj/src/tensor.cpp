#include "ctxmix/tensor.hpp"

#include "ctxmix/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ctxmix {

namespace {

void ensure_finite(const Tensor& t, const char* op)
{
    if (!t.all_finite()) fail(ErrorKind::Numeric, std::string(op) + " produced a non-finite value");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op)
{
    if (t.rank() != rank) {
        fail(ErrorKind::Dimension, std::string(op) + ": expected rank " + std::to_string(rank) +
                                       ", got shape " + shape_string(t.shape()));
    }
}

} // namespace

std::size_t shape_product(const Shape& shape) noexcept
{
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_product(shape_) != data_.size()) {
        fail(ErrorKind::Dimension, "shape " + shape_string(shape_) + " does not match " +
                                       std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::filled(Shape shape, float value)
{
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<float> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) fail(ErrorKind::Dimension, "ragged rows in from_rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<float> values)
{
    return Tensor({values.size()}, std::vector<float>(values));
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size()) {
        fail(ErrorKind::Dimension, "axis " + std::to_string(axis) + " out of range for shape " +
                                       shape_string(shape_));
    }
    return shape_[axis];
}

std::span<float> Tensor::row(std::size_t r)
{
    return std::span<float>(data_).subspan(r * shape_[1], shape_[1]);
}

std::span<const float> Tensor::row(std::size_t r) const
{
    return std::span<const float>(data_).subspan(r * shape_[1], shape_[1]);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const
{
    require_rank(*this, 2, "slice_rows");
    if (begin > end || end > shape_[0]) fail(ErrorKind::Range, "slice_rows out of range");
    const std::size_t c = shape_[1];
    return Tensor({end - begin, c},
                  std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                     data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
}

Tensor Tensor::slice_cols(std::size_t begin, std::size_t end) const
{
    require_rank(*this, 2, "slice_cols");
    if (begin > end || end > shape_[1]) fail(ErrorKind::Range, "slice_cols out of range");
    Tensor out({shape_[0], end - begin});
    for (std::size_t r = 0; r < shape_[0]; ++r) {
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * shape_[1] + begin), end - begin,
                    out.row(r).begin());
    }
    return out;
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        fail(ErrorKind::Dimension, "matmul inner dimensions disagree: " + shape_string(a.shape()) +
                                       " x " + shape_string(b.shape()));
    }
    Tensor out({m, n});
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            const auto brow = b.row(p);
            for (std::size_t j = 0; j < n; ++j) acc[j] += aip * static_cast<double>(brow[j]);
        }
        auto orow = out.row(i);
        for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
    }
    ensure_finite(out, "matmul");
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias)
{
    require_rank(bias, 1, "linear bias");
    if (bias.size() != w.cols()) fail(ErrorKind::Dimension, "linear bias does not match output width");
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    if (w.rows() != k) {
        fail(ErrorKind::Dimension, "linear inner dimensions disagree: " + shape_string(x.shape()) +
                                       " x " + shape_string(w.shape()));
    }
    Tensor out({m, n});
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) acc[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double xip = x.at(i, p);
            const auto wrow = w.row(p);
            for (std::size_t j = 0; j < n; ++j) acc[j] += xip * static_cast<double>(wrow[j]);
        }
        auto orow = out.row(i);
        for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j] + bias[j]);
    }
    ensure_finite(out, "linear");
    return out;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        fail(ErrorKind::Dimension, "add shape mismatch: " + shape_string(a.shape()) + " vs " +
                                       shape_string(b.shape()));
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    ensure_finite(out, "add");
    return out;
}

Tensor add_row(const Tensor& a, const Tensor& row)
{
    require_rank(a, 2, "add_row");
    if (row.size() != a.cols()) fail(ErrorKind::Dimension, "add_row width mismatch");
    Tensor out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto orow = out.row(r);
        for (std::size_t c = 0; c < orow.size(); ++c) orow[c] += row[c];
    }
    ensure_finite(out, "add_row");
    return out;
}

Tensor transpose(const Tensor& a)
{
    require_rank(a, 2, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis)
{
    if (axis >= x.rank()) fail(ErrorKind::Dimension, "softmax axis out of range");
    const std::size_t n = x.shape()[axis];
    if (n == 0) fail(ErrorKind::Dimension, "softmax over an empty axis");
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
    const std::size_t outer = x.size() / (n * inner);

    Tensor out(x.shape());
    std::vector<double> e(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            float mx = x[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                e[i] = std::exp(static_cast<double>(x[base + i * inner]) - static_cast<double>(mx));
                total += e[i];
            }
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] = static_cast<float>(e[i] / total);
        }
    }
    ensure_finite(out, "softmax");
    return out;
}

Tensor softmax_last(const Tensor& x)
{
    return softmax(x, x.rank() - 1);
}

namespace {

void layer_norm_into(std::span<const float> x, const Tensor& gain, const Tensor& bias, std::span<float> out)
{
    const std::size_t d = x.size();
    double mean = 0.0;
    for (float v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps));
    for (std::size_t i = 0; i < d; ++i) {
        out[i] = static_cast<float>((x[i] - mean) * inv * gain[i] + bias[i]);
    }
}

void check_norm_params(std::size_t d, const Tensor& gain, const Tensor& bias)
{
    if (d < 2) fail(ErrorKind::Dimension, "layer_norm needs at least 2 features");
    if (gain.size() != d || bias.size() != d) fail(ErrorKind::Dimension, "layer_norm parameter width mismatch");
}

} // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias)
{
    require_rank(x, 1, "layer_norm");
    check_norm_params(x.size(), gain, bias);
    Tensor out(x.shape());
    layer_norm_into(x.data(), gain, bias, out.data());
    ensure_finite(out, "layer_norm");
    return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias)
{
    require_rank(x, 2, "layer_norm_rows");
    check_norm_params(x.cols(), gain, bias);
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) layer_norm_into(x.row(r), gain, bias, out.row(r));
    ensure_finite(out, "layer_norm");
    return out;
}

float gelu(float x)
{
    const double v = x;
    return static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
}

Tensor gelu(const Tensor& x)
{
    Tensor out = x;
    for (auto& v : out.data()) v = gelu(v);
    ensure_finite(out, "gelu");
    return out;
}

double dot(std::span<const float> a, std::span<const float> b)
{
    if (a.size() != b.size()) fail(ErrorKind::Dimension, "dot length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double euclidean_norm(std::span<const float> a)
{
    double s = 0.0;
    for (float v : a) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

Cosine cosine_similarity(std::span<const float> a, std::span<const float> b)
{
    if (a.empty()) fail(ErrorKind::Dimension, "cosine of empty vectors");
    const double na = euclidean_norm(a);
    const double nb = euclidean_norm(b);
    if (na == 0.0 || nb == 0.0) return {0.0, true};
    const double c = dot(a, b) / (na * nb);
    return {std::clamp(c, -1.0, 1.0), false};
}

double cosine_distance(std::span<const float> a, std::span<const float> b)
{
    check(a.size() == b.size() && !a.empty(), ErrorKind::Dimension, "cosine distance needs equal, non-empty vectors");
    const double na = euclidean_norm(a);
    const double nb = euclidean_norm(b);
    if (na == 0.0 || nb == 0.0) return 1.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] / na - b[i] / nb;
        sq += d * d;
    }
    return std::clamp(0.5 * sq, 0.0, 2.0);
}

namespace {

constexpr char kMagic[4] = {'C', 'T', 'X', 'T'};

template <typename T>
void put_le(std::vector<char>& out, T value)
{
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::span<const char> bytes, std::size_t& pos)
{
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
    if (pos + sizeof(T) > bytes.size()) fail(ErrorKind::Io, "truncated tensor data");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bits |= static_cast<U>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += sizeof(T);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

} // namespace

std::vector<char> encode_tensor(const Tensor& tensor)
{
    std::vector<char> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint16_t>(out, kTensorFileVersion);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(tensor.rank()));
    for (auto d : tensor.shape()) put_le<std::uint64_t>(out, d);
    out.reserve(out.size() + 4 * tensor.size());
    for (float v : tensor.data()) put_le<float>(out, v);
    return out;
}

Tensor decode_tensor(std::span<const char> bytes)
{
    if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
        fail(ErrorKind::Io, "not a CTXT tensor file");
    }
    std::size_t pos = 4;
    const auto version = get_le<std::uint16_t>(bytes, pos);
    if (version != kTensorFileVersion) fail(ErrorKind::Io, "unsupported tensor file version " + std::to_string(version));
    const auto rank = get_le<std::uint16_t>(bytes, pos);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, pos));
    const std::size_t n = shape_product(shape);
    if (bytes.size() - pos != 4 * n) fail(ErrorKind::Io, "tensor payload size does not match shape");
    std::vector<float> data(n);
    for (auto& v : data) v = get_le<float>(bytes, pos);
    return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor)
{
    const auto bytes = encode_tensor(tensor);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_tensor(bytes);
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.what());
    }
}

} // namespace ctxmix
