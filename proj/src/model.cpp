#include "liwhiz/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "liwhiz/error.hpp"

namespace liwhiz {

namespace {

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename Derived>
auto sigmoid_of(const Eigen::MatrixBase<Derived>& x) {
    using T = typename Derived::Scalar;
    return x.unaryExpr([](T v) { return sigmoid(v); });
}

template <typename D, typename Fn>
void visit_direction(const std::string& prefix, D& d, Fn&& fn) {
    fn(prefix + ".w_ih", d.w_ih.data(), d.w_ih.size());
    fn(prefix + ".w_hh", d.w_hh.data(), d.w_hh.size());
    fn(prefix + ".bias", d.bias.data(), d.bias.size());
}

template <typename P, typename Fn>
void visit_all(P& p, Fn&& fn) {
    fn(std::string("lml_enc_x"), p.lml_enc_x.data(), p.lml_enc_x.size());
    fn(std::string("lml_enc_y"), p.lml_enc_y.data(), p.lml_enc_y.size());
    fn(std::string("lml_dec_x"), p.lml_dec_x.data(), p.lml_dec_x.size());
    fn(std::string("lml_dec_y"), p.lml_dec_y.data(), p.lml_dec_y.size());
    visit_direction("lstm_enc.fwd", p.lstm_enc.fwd, fn);
    visit_direction("lstm_enc.bwd", p.lstm_enc.bwd, fn);
    visit_direction("lstm_dec.fwd", p.lstm_dec.fwd, fn);
    visit_direction("lstm_dec.bwd", p.lstm_dec.bwd, fn);
    fn(std::string("head_weight"), p.head_weight.data(), p.head_weight.size());
    fn(std::string("head_bias"), &p.head_bias, Eigen::Index{1});
}

// Per-direction activations kept for backpropagation through time.
template <typename T>
struct DirectionTape {
    bool reversed = false;
    Mat<T> gates;   // 4H x S, activated (i, f, g, o)
    Mat<T> cells;   // H x (S+1), column 0 is the zero initial state
    Mat<T> hiddens; // H x (S+1)
    Mat<T> tanh_c;  // H x S
};

template <typename T>
DirectionTape<T> run_direction(const Mat<T>& seq, const LstmDirection<T>& dir, bool reversed) {
    const Eigen::Index hidden = dir.w_hh.cols();
    const Eigen::Index steps = seq.cols();
    DirectionTape<T> tape;
    tape.reversed = reversed;
    tape.gates.resize(4 * hidden, steps);
    tape.cells = Mat<T>::Zero(hidden, steps + 1);
    tape.hiddens = Mat<T>::Zero(hidden, steps + 1);
    tape.tanh_c.resize(hidden, steps);

    // Input projections for every frame at once.
    const Mat<T> projected = (dir.w_ih * seq).colwise() + dir.bias;
    Vec<T> z(4 * hidden);
    for (Eigen::Index s = 0; s < steps; ++s) {
        const Eigen::Index col = reversed ? steps - 1 - s : s;
        z.noalias() = projected.col(col) + dir.w_hh * tape.hiddens.col(s);
        auto gates = tape.gates.col(s);
        gates.segment(0, hidden) = sigmoid_of(z.segment(0, hidden));
        gates.segment(hidden, hidden) = sigmoid_of(z.segment(hidden, hidden));
        gates.segment(2 * hidden, hidden) = z.segment(2 * hidden, hidden).array().tanh().matrix();
        gates.segment(3 * hidden, hidden) = sigmoid_of(z.segment(3 * hidden, hidden));
        tape.cells.col(s + 1) =
            gates.segment(hidden, hidden).cwiseProduct(tape.cells.col(s)) +
            gates.segment(0, hidden).cwiseProduct(gates.segment(2 * hidden, hidden));
        tape.tanh_c.col(s) = tape.cells.col(s + 1).array().tanh().matrix();
        tape.hiddens.col(s + 1) = gates.segment(3 * hidden, hidden).cwiseProduct(tape.tanh_c.col(s));
    }
    return tape;
}

// Accumulates parameter gradients into `grad` and input gradients into `d_seq`.
template <typename T>
void backprop_direction(const DirectionTape<T>& tape, const Mat<T>& seq,
                        const LstmDirection<T>& dir, const Vec<T>& dh_final,
                        LstmDirection<T>& grad, Mat<T>& d_seq) {
    const Eigen::Index hidden = dir.w_hh.cols();
    const Eigen::Index steps = seq.cols();
    Vec<T> dh = dh_final;
    Vec<T> dc = Vec<T>::Zero(hidden);
    Vec<T> dz(4 * hidden);
    for (Eigen::Index s = steps - 1; s >= 0; --s) {
        const Eigen::Index col = tape.reversed ? steps - 1 - s : s;
        const auto gates = tape.gates.col(s);
        const auto i = gates.segment(0, hidden).array();
        const auto f = gates.segment(hidden, hidden).array();
        const auto g = gates.segment(2 * hidden, hidden).array();
        const auto o = gates.segment(3 * hidden, hidden).array();
        const auto tc = tape.tanh_c.col(s).array();
        const auto c_prev = tape.cells.col(s).array();

        dc.array() += dh.array() * o * (T(1) - tc * tc);
        dz.segment(0, hidden).array() = dc.array() * g * i * (T(1) - i);
        dz.segment(hidden, hidden).array() = dc.array() * c_prev * f * (T(1) - f);
        dz.segment(2 * hidden, hidden).array() = dc.array() * i * (T(1) - g * g);
        dz.segment(3 * hidden, hidden).array() = dh.array() * tc * o * (T(1) - o);

        grad.w_ih.noalias() += dz * seq.col(col).transpose();
        grad.w_hh.noalias() += dz * tape.hiddens.col(s).transpose();
        grad.bias += dz;
        d_seq.col(col).noalias() += dir.w_ih.transpose() * dz;

        dh.noalias() = dir.w_hh.transpose() * dz;
        dc.array() = dc.array() * f;
    }
}

template <typename T>
struct BranchTape {
    Mat<T> input;
    DirectionTape<T> fwd;
    DirectionTape<T> bwd;
    Vec<T> output; // 2H
};

template <typename T>
void check_branch_dims(const Mat<T>& input, const LstmParams<T>& params, const char* branch) {
    if (input.cols() == 0) fail(ErrorKind::data, std::string(branch) + ": seq_len is zero");
    if (input.rows() != params.input_dim() || params.bwd.w_ih.cols() != params.input_dim()) {
        fail(ErrorKind::config, std::string(branch) + ": input has " +
                                    std::to_string(input.rows()) + " rows, LSTM expects " +
                                    std::to_string(params.input_dim()) +
                                    " (mode/params mismatch?)");
    }
}

template <typename T>
BranchTape<T> run_branch(Mat<T> input, const LstmParams<T>& params, const char* branch) {
    check_branch_dims(input, params, branch);
    BranchTape<T> tape;
    tape.input = std::move(input);
    tape.fwd = run_direction(tape.input, params.fwd, false);
    tape.bwd = run_direction(tape.input, params.bwd, true);
    const Eigen::Index hidden = params.hidden_dim();
    tape.output.resize(2 * hidden);
    tape.output.head(hidden) = tape.fwd.hiddens.col(tape.input.cols());
    tape.output.tail(hidden) = tape.bwd.hiddens.col(tape.input.cols());
    return tape;
}

template <typename T>
void accumulate_lml_grad(const FeatureStack& stack, const Mat<T>& d_fused, Vec<T>& grad) {
    for (std::size_t l = 0; l < stack.layer_count(); ++l) {
        grad[static_cast<Eigen::Index>(l)] += (stack.layer(l).cast<T>().cwiseProduct(d_fused)).sum();
    }
}

template <typename T>
void backprop_branch(const BranchTape<T>& tape, const Vec<T>& d_out, const LstmParams<T>& params,
                     const FeatureStack& x, const FeatureStack& y, Mode mode,
                     LstmParams<T>& lstm_grad, Vec<T>& lml_x_grad, Vec<T>& lml_y_grad) {
    const Eigen::Index hidden = params.hidden_dim();
    Mat<T> d_input = Mat<T>::Zero(tape.input.rows(), tape.input.cols());
    backprop_direction(tape.fwd, tape.input, params.fwd, Vec<T>(d_out.head(hidden)),
                       lstm_grad.fwd, d_input);
    backprop_direction(tape.bwd, tape.input, params.bwd, Vec<T>(d_out.tail(hidden)),
                       lstm_grad.bwd, d_input);
    if (mode == Mode::y_only) {
        accumulate_lml_grad(y, d_input, lml_y_grad);
        return;
    }
    const auto feat = static_cast<Eigen::Index>(x.feature_dim());
    const auto sx = static_cast<Eigen::Index>(x.seq_len());
    const auto sy = static_cast<Eigen::Index>(y.seq_len());
    accumulate_lml_grad(x, Mat<T>(d_input.topLeftCorner(feat, sx)), lml_x_grad);
    accumulate_lml_grad(y, Mat<T>(d_input.bottomLeftCorner(feat, sy)), lml_y_grad);
}

template <typename T>
struct ExcerptTape {
    BranchTape<T> enc;
    BranchTape<T> dec;
    double score = 0.0;
};

double squash(double logit) {
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    const double hi = std::nextafter(1.0, 0.0);
    return std::clamp(1.0 / (1.0 + std::exp(-logit)), lo, hi);
}

template <typename T>
void check_excerpt(const ExcerptFeatures& e, const BasicParams<T>& p) {
    const auto layers = p.config.layer_count();
    for (const FeatureStack* s : {&e.enc_x, &e.enc_y, &e.dec_x, &e.dec_y}) {
        if (s->layer_count() != layers || s->feature_dim() != p.config.feature_dim) {
            fail(ErrorKind::data, "excerpt '" + e.excerpt_id +
                                      "': stack shape does not match model config");
        }
    }
}

template <typename T>
ExcerptTape<T> run_excerpt(const ExcerptFeatures& e, const BasicParams<T>& p, Mode mode) {
    check_excerpt(e, p);
    if (mode != p.mode) {
        fail(ErrorKind::config, "requested mode '" + std::string(to_string(mode)) +
                                    "' but parameters were built for '" +
                                    std::string(to_string(p.mode)) + "'");
    }
    ExcerptTape<T> tape;
    tape.enc = run_branch(branch_input(e.enc_x, e.enc_y, p.lml_enc_x, p.lml_enc_y, mode),
                          p.lstm_enc, "encoder branch");
    tape.dec = run_branch(branch_input(e.dec_x, e.dec_y, p.lml_dec_x, p.lml_dec_y, mode),
                          p.lstm_dec, "decoder branch");
    const double logit = static_cast<double>(p.head_weight.head(tape.enc.output.size()).dot(tape.enc.output)) +
                         static_cast<double>(p.head_weight.tail(tape.dec.output.size()).dot(tape.dec.output)) +
                         static_cast<double>(p.head_bias);
    if (!std::isfinite(logit)) {
        validate_params(p); // names the offending tensor if the parameters are to blame
        fail(ErrorKind::numeric, "excerpt '" + e.excerpt_id + "': non-finite logit");
    }
    tape.score = squash(logit);
    return tape;
}

} // namespace

template <typename T>
std::vector<TensorRef<T>> tensors(BasicParams<T>& params) {
    std::vector<TensorRef<T>> out;
    visit_all(params, [&](std::string name, T* data, Eigen::Index n) {
        out.push_back({std::move(name), std::span<T>(data, static_cast<std::size_t>(n))});
    });
    return out;
}

template <typename T>
std::vector<TensorRef<const T>> tensors(const BasicParams<T>& params) {
    std::vector<TensorRef<const T>> out;
    visit_all(params, [&](std::string name, const T* data, Eigen::Index n) {
        out.push_back({std::move(name), std::span<const T>(data, static_cast<std::size_t>(n))});
    });
    return out;
}

template <typename T>
BasicParams<T> zeros_like(const BasicParams<T>& params) {
    BasicParams<T> z = params;
    for (auto& t : tensors(z)) std::fill(t.data.begin(), t.data.end(), T(0));
    return z;
}

template <typename To, typename From>
BasicParams<To> cast_params(const BasicParams<From>& p) {
    auto dir = [](const LstmDirection<From>& d) {
        return LstmDirection<To>{d.w_ih.template cast<To>(), d.w_hh.template cast<To>(),
                                 d.bias.template cast<To>()};
    };
    BasicParams<To> out;
    out.config = p.config;
    out.mode = p.mode;
    out.lml_enc_x = p.lml_enc_x.template cast<To>();
    out.lml_enc_y = p.lml_enc_y.template cast<To>();
    out.lml_dec_x = p.lml_dec_x.template cast<To>();
    out.lml_dec_y = p.lml_dec_y.template cast<To>();
    out.lstm_enc = {dir(p.lstm_enc.fwd), dir(p.lstm_enc.bwd)};
    out.lstm_dec = {dir(p.lstm_dec.fwd), dir(p.lstm_dec.bwd)};
    out.head_weight = p.head_weight.template cast<To>();
    out.head_bias = static_cast<To>(p.head_bias);
    return out;
}

template <typename T>
void validate_params(const BasicParams<T>& p) {
    p.config.validate();
    const auto layers = static_cast<Eigen::Index>(p.config.layer_count());
    const auto feat = static_cast<Eigen::Index>(p.config.feature_dim);
    const auto hidden = static_cast<Eigen::Index>(p.config.hidden_dim);
    const Eigen::Index x_len = p.mode == Mode::full ? layers : 0;
    const Eigen::Index in_dim = p.mode == Mode::full ? 2 * feat : feat;

    auto require = [](bool ok, const std::string& what) {
        if (!ok) fail(ErrorKind::config, "parameter shape mismatch: " + what);
    };
    require(p.lml_enc_x.size() == x_len && p.lml_dec_x.size() == x_len, "x-side LML length");
    require(p.lml_enc_y.size() == layers && p.lml_dec_y.size() == layers, "y-side LML length");
    for (const auto* lstm : {&p.lstm_enc, &p.lstm_dec}) {
        for (const auto* d : {&lstm->fwd, &lstm->bwd}) {
            require(d->w_ih.rows() == 4 * hidden && d->w_ih.cols() == in_dim, "LSTM w_ih");
            require(d->w_hh.rows() == 4 * hidden && d->w_hh.cols() == hidden, "LSTM w_hh");
            require(d->bias.size() == 4 * hidden, "LSTM bias");
        }
    }
    require(p.head_weight.size() == 4 * hidden, "head_weight");
    for (const auto& t : tensors(p)) {
        for (T v : t.data) {
            if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite value in " + t.name);
        }
    }
}

BackendParams init_params(const ModelConfig& config, Mode mode, std::uint64_t seed) {
    config.validate();
    const auto layers = static_cast<Eigen::Index>(config.layer_count());
    const auto feat = static_cast<Eigen::Index>(config.feature_dim);
    const auto hidden = static_cast<Eigen::Index>(config.hidden_dim);
    const Eigen::Index in_dim = mode == Mode::full ? 2 * feat : feat;
    const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-bound, bound);
    auto sample = [&](RowMat<float>& m, Eigen::Index rows, Eigen::Index cols) {
        m.resize(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    };
    auto direction = [&] {
        LstmDirection<float> d;
        sample(d.w_ih, 4 * hidden, in_dim);
        sample(d.w_hh, 4 * hidden, hidden);
        d.bias = Vec<float>::Zero(4 * hidden);
        d.bias.segment(hidden, hidden).setOnes();
        return d;
    };

    BackendParams p;
    p.config = config;
    p.mode = mode;
    const float uniform = 1.0f / static_cast<float>(layers);
    const Eigen::Index x_len = mode == Mode::full ? layers : 0;
    p.lml_enc_x = Vec<float>::Constant(x_len, uniform);
    p.lml_enc_y = Vec<float>::Constant(layers, uniform);
    p.lml_dec_x = Vec<float>::Constant(x_len, uniform);
    p.lml_dec_y = Vec<float>::Constant(layers, uniform);
    p.lstm_enc.fwd = direction();
    p.lstm_enc.bwd = direction();
    p.lstm_dec.fwd = direction();
    p.lstm_dec.bwd = direction();
    p.head_weight.resize(4 * hidden);
    for (Eigen::Index i = 0; i < p.head_weight.size(); ++i) p.head_weight[i] = dist(rng);
    p.head_bias = 0.0f;
    return p;
}

template <typename T>
Mat<T> lml_fuse(const FeatureStack& stack, const Vec<T>& weights) {
    if (static_cast<std::size_t>(weights.size()) != stack.layer_count()) {
        fail(ErrorKind::config, "LML has " + std::to_string(weights.size()) +
                                    " weights for a stack of " +
                                    std::to_string(stack.layer_count()) + " layers");
    }
    Mat<T> out = Mat<T>::Zero(static_cast<Eigen::Index>(stack.feature_dim()),
                              static_cast<Eigen::Index>(stack.seq_len()));
    for (std::size_t l = 0; l < stack.layer_count(); ++l) {
        out.noalias() += weights[static_cast<Eigen::Index>(l)] * stack.layer(l).cast<T>();
    }
    return out;
}

template <typename T>
Mat<T> branch_input(const FeatureStack& x, const FeatureStack& y, const Vec<T>& w_x,
                    const Vec<T>& w_y, Mode mode) {
    if (mode == Mode::y_only) return lml_fuse(y, w_y);
    if (x.feature_dim() != y.feature_dim()) {
        fail(ErrorKind::data, "x and y stacks disagree on feature_dim");
    }
    const auto feat = static_cast<Eigen::Index>(x.feature_dim());
    const auto sx = static_cast<Eigen::Index>(x.seq_len());
    const auto sy = static_cast<Eigen::Index>(y.seq_len());
    Mat<T> out = Mat<T>::Zero(2 * feat, std::max(sx, sy));
    out.topLeftCorner(feat, sx) = lml_fuse(x, w_x);
    out.bottomLeftCorner(feat, sy) = lml_fuse(y, w_y);
    return out;
}

template <typename T>
Vec<T> lstm_run(const Mat<T>& sequence, const LstmDirection<T>& dir) {
    if (sequence.cols() == 0) fail(ErrorKind::data, "LSTM input has zero frames");
    if (sequence.rows() != dir.w_ih.cols()) {
        fail(ErrorKind::config, "LSTM input_dim mismatch");
    }
    return run_direction(sequence, dir, false).hiddens.col(sequence.cols());
}

template <typename T>
Vec<T> bilstm_encode(const Mat<T>& sequence, const LstmParams<T>& params) {
    return run_branch(sequence, params, "bilstm").output;
}

template <typename T>
double forward(const ExcerptFeatures& excerpt, const BasicParams<T>& params, Mode mode) {
    return run_excerpt(excerpt, params, mode).score;
}

template <typename T>
BackwardResult<T> backward(std::span<const ExcerptFeatures* const> batch,
                           const BasicParams<T>& params, Mode mode) {
    if (batch.empty()) fail(ErrorKind::data, "backward called with an empty batch");
    for (const auto* e : batch) {
        if (!e->label) fail(ErrorKind::data, "excerpt '" + e->excerpt_id + "' has no label");
    }

    std::vector<ExcerptTape<T>> tapes;
    tapes.reserve(batch.size());
    BackwardResult<T> result;
    double sq_sum = 0.0;
    for (const auto* e : batch) {
        tapes.push_back(run_excerpt(*e, params, mode));
        const double err = tapes.back().score - *e->label;
        sq_sum += err * err;
        result.predictions.push_back(tapes.back().score);
    }
    const double n = static_cast<double>(batch.size());
    result.loss = std::sqrt(sq_sum / n + kLossEpsilon);
    result.grads = zeros_like(params);
    auto& g = result.grads;

    const Eigen::Index enc_out = tapes.front().enc.output.size();
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto& e = *batch[k];
        const auto& tape = tapes[k];
        const double err = tape.score - *e.label;
        const double d_logit = err / (n * result.loss) * tape.score * (1.0 - tape.score);
        const T dl = static_cast<T>(d_logit);

        g.head_bias += dl;
        g.head_weight.head(enc_out) += dl * tape.enc.output;
        g.head_weight.tail(tape.dec.output.size()) += dl * tape.dec.output;

        const Vec<T> d_enc = dl * params.head_weight.head(enc_out);
        const Vec<T> d_dec = dl * params.head_weight.tail(tape.dec.output.size());
        backprop_branch(tape.enc, d_enc, params.lstm_enc, e.enc_x, e.enc_y, mode, g.lstm_enc,
                        g.lml_enc_x, g.lml_enc_y);
        backprop_branch(tape.dec, d_dec, params.lstm_dec, e.dec_x, e.dec_y, mode, g.lstm_dec,
                        g.lml_dec_x, g.lml_dec_y);
    }

    for (const auto& t : tensors(std::as_const(g))) {
        for (T v : t.data) {
            if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite gradient in " + t.name);
        }
    }
    return result;
}

template <typename T>
BackwardResult<T> backward(std::span<const ExcerptFeatures> batch, const BasicParams<T>& params,
                           Mode mode) {
    std::vector<const ExcerptFeatures*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& e : batch) ptrs.push_back(&e);
    return backward<T>(std::span<const ExcerptFeatures* const>(ptrs), params, mode);
}

#define LIWHIZ_INSTANTIATE(T)                                                                   \
    template std::vector<TensorRef<T>> tensors(BasicParams<T>&);                                \
    template std::vector<TensorRef<const T>> tensors(const BasicParams<T>&);                    \
    template BasicParams<T> zeros_like(const BasicParams<T>&);                                  \
    template void validate_params(const BasicParams<T>&);                                      \
    template Mat<T> lml_fuse(const FeatureStack&, const Vec<T>&);                               \
    template Mat<T> branch_input(const FeatureStack&, const FeatureStack&, const Vec<T>&,       \
                                 const Vec<T>&, Mode);                                          \
    template Vec<T> lstm_run(const Mat<T>&, const LstmDirection<T>&);                           \
    template Vec<T> bilstm_encode(const Mat<T>&, const LstmParams<T>&);                         \
    template double forward(const ExcerptFeatures&, const BasicParams<T>&, Mode);                    \
    template BackwardResult<T> backward(std::span<const ExcerptFeatures* const>,                \
                                        const BasicParams<T>&, Mode);                           \
    template BackwardResult<T> backward(std::span<const ExcerptFeatures>, const BasicParams<T>&, \
                                        Mode);

LIWHIZ_INSTANTIATE(float)
LIWHIZ_INSTANTIATE(double)
#undef LIWHIZ_INSTANTIATE

template BasicParams<double> cast_params(const BasicParams<float>&);
template BasicParams<float> cast_params(const BasicParams<double>&);
template BasicParams<float> cast_params(const BasicParams<float>&);
template BasicParams<double> cast_params(const BasicParams<double>&);

} // namespace liwhiz
