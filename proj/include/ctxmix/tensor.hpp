#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ctxmix {

using Shape = std::vector<std::size_t>;

// Dense row-major float32 array. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, float value);
    static Tensor identity(std::size_t n);
    static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
    static Tensor vector(std::initializer_list<float> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // Rank-2 accessors.
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }
    float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    std::span<float> row(std::size_t r);
    std::span<const float> row(std::size_t r) const;

    Tensor slice_rows(std::size_t begin, std::size_t end) const;
    Tensor slice_cols(std::size_t begin, std::size_t end) const;
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

std::size_t shape_product(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Matrix product with float64 accumulation, summing left-to-right over k.
Tensor matmul(const Tensor& a, const Tensor& b);
// x * w + bias, where bias is broadcast across rows. x is [m x k], w is [k x n].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
// Adds a rank-1 tensor to every row of a rank-2 tensor.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor transpose(const Tensor& a);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_last(const Tensor& x);

inline constexpr float kLayerNormEps = 1e-5f;

// x is rank-1 of size d, gain and bias likewise.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// Applies layer_norm independently to each row of a [T x d] tensor.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias);

float gelu(float x);
Tensor gelu(const Tensor& x);

struct Cosine {
    double value = 0.0;
    bool degenerate = false; // one of the inputs was the zero vector
};

Cosine cosine_similarity(std::span<const float> a, std::span<const float> b);
// 1 - cos(a, b) evaluated as ||a/|a| - b/|b|||^2 / 2, exactly 0 for identical
// inputs (1 when either input is the zero vector).
double cosine_distance(std::span<const float> a, std::span<const float> b);
double euclidean_norm(std::span<const float> a);
double dot(std::span<const float> a, std::span<const float> b);

// Binary tensor file: "CTXT", u16 version, u16 rank, u64 dims, f32 data (all little-endian).
inline constexpr std::uint16_t kTensorFileVersion = 1;

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);
std::vector<char> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const char> bytes);

} // namespace ctxmix
