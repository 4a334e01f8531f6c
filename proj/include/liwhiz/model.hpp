#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "liwhiz/config.hpp"
#include "liwhiz/feature_store.hpp"

namespace liwhiz {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// One LSTM direction. Gate blocks are stacked in the order
/// input, forget, cell candidate, output (rows [0,H), [H,2H), [2H,3H), [3H,4H)).
template <typename T>
struct LstmDirection {
    RowMat<T> w_ih; // 4H x input_dim
    RowMat<T> w_hh; // 4H x H
    Vec<T> bias;    // 4H
};

template <typename T>
struct LstmParams {
    LstmDirection<T> fwd;
    LstmDirection<T> bwd;

    Eigen::Index input_dim() const { return fwd.w_ih.cols(); }
    Eigen::Index hidden_dim() const { return fwd.w_hh.cols(); }
};

/// Every trainable quantity of the back-end. In y_only mode the x-side
/// mixing vectors are empty and both LSTMs take F-dimensional input.
template <typename T>
struct BasicParams {
    ModelConfig config;
    Mode mode = Mode::full;
    Vec<T> lml_enc_x;
    Vec<T> lml_enc_y;
    Vec<T> lml_dec_x;
    Vec<T> lml_dec_y;
    LstmParams<T> lstm_enc;
    LstmParams<T> lstm_dec;
    Vec<T> head_weight; // 4H
    T head_bias = T(0);
};

using BackendParams = BasicParams<float>;
/// Gradients share the parameter tree's shape.
template <typename T>
using BasicGradients = BasicParams<T>;
using Gradients = BasicGradients<float>;

template <typename T>
struct TensorRef {
    std::string name;
    std::span<T> data;
};

/// Flat views of every tensor in a fixed order; this order is also the
/// checkpoint order.
template <typename T>
std::vector<TensorRef<T>> tensors(BasicParams<T>& params);
template <typename T>
std::vector<TensorRef<const T>> tensors(const BasicParams<T>& params);

template <typename T>
BasicParams<T> zeros_like(const BasicParams<T>& params);

template <typename To, typename From>
BasicParams<To> cast_params(const BasicParams<From>& params);

/// Throws Error{config} if shapes disagree with config/mode, or
/// Error{numeric} naming the first non-finite tensor.
template <typename T>
void validate_params(const BasicParams<T>& params);

/// LML weights 1/(L+1); LSTM matrices and head weights uniform in
/// [-1/sqrt(H), 1/sqrt(H)]; biases zero except the forget gate (1).
BackendParams init_params(const ModelConfig& config, Mode mode, std::uint64_t seed);

/// output(f, t) = sum_l weights[l] * stack(l, f, t)
template <typename T>
Mat<T> lml_fuse(const FeatureStack& stack, const Vec<T>& weights);

/// Final states [h_fwd at last frame ; h_bwd at first frame], length 2H.
/// `sequence` is input_dim x seq_len.
template <typename T>
Vec<T> bilstm_encode(const Mat<T>& sequence, const LstmParams<T>& params);

/// Runs one LSTM direction over the columns of `sequence` in order and
/// returns the final hidden state.
template <typename T>
Vec<T> lstm_run(const Mat<T>& sequence, const LstmDirection<T>& dir);

/// Branch input: [fuse(x) ; fuse(y)] in full mode (the shorter sequence is
/// zero-padded at the end), fuse(y) alone in y_only mode.
template <typename T>
Mat<T> branch_input(const FeatureStack& x, const FeatureStack& y, const Vec<T>& w_x,
                    const Vec<T>& w_y, Mode mode);

/// Intelligibility score, strictly inside (0, 1).
template <typename T>
double forward(const ExcerptFeatures& excerpt, const BasicParams<T>& params, Mode mode);

template <typename T>
struct BackwardResult {
    double loss = 0.0;
    std::vector<double> predictions;
    BasicGradients<T> grads;
};

inline constexpr double kLossEpsilon = 1e-12;

/// loss = sqrt(mean_i (I_i - label_i)^2 + eps) over the batch and its exact
/// gradient with respect to every parameter.
template <typename T>
BackwardResult<T> backward(std::span<const ExcerptFeatures* const> batch,
                           const BasicParams<T>& params, Mode mode);
template <typename T>
BackwardResult<T> backward(std::span<const ExcerptFeatures> batch, const BasicParams<T>& params,
                           Mode mode);

} // namespace liwhiz
