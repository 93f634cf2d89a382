#pragma once

// Reference forward pass written with plain double loops, straight from the
// layer equations; shares nothing with the engine beyond the weight structs.

#include "ctxmix/model.hpp"

#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const ctxmix::Tensor& t);

struct NaiveLayer {
    Mat input;
    Mat output;
    std::vector<Mat> self_alpha;  // per head
    std::vector<Mat> cross_alpha; // per head, decoder only
};

struct NaiveForward {
    std::vector<NaiveLayer> layers;
    Mat output;
    Mat logits;
};

NaiveForward encoder(const ctxmix::Model& model, const Mat& frames);
NaiveForward decoder(const ctxmix::Model& model, const std::vector<int>& tokens, const Mat& enc_out);

// Value zeroing of one layer by re-running the naive layer with the values at
// `zeroed` key positions set to 0; returns the layer output.
Mat encoder_layer_zeroed(const ctxmix::Model& model, std::size_t layer, const Mat& input,
                         const std::vector<bool>& zeroed);

// ||a - b|| / max(||b||, floor) over a whole matrix, row by row maximum.
double max_row_relative_error(const ctxmix::Tensor& engine, const Mat& reference);

} // namespace oracle
