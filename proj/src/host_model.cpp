#include "longheads/host_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace longheads {

namespace {

// Uniform weights with standard deviation 1/sqrt(d_model).
class WeightSource {
public:
    WeightSource(std::uint64_t seed, std::size_t d_model)
        : engine_(seed), half_width_(std::sqrt(3.0 / static_cast<double>(d_model))) {}

    Matrix matrix(std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (double& x : m.data()) {
            x = next();
        }
        return m;
    }

private:
    double next() {
        // 53 random mantissa bits from the (fully specified) mt19937_64 stream.
        const double unit = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return (2.0 * unit - 1.0) * half_width_;
    }

    std::mt19937_64 engine_;
    double half_width_;
};

// out = x * W + b, x: rows x in, W: in x out.
Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
    Matrix out(x.rows(), w.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto dst = out.row(r);
        std::copy(b.begin(), b.end(), dst.begin());
        const auto src = x.row(r);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const double xi = src[i];
            const auto wrow = w.row(i);
            for (std::size_t j = 0; j < w.cols(); ++j) {
                dst[j] += xi * wrow[j];
            }
        }
    }
    return out;
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

}  // namespace

void TokenSequence::validate(std::size_t vocab_size) const {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= vocab_size) {
            throw std::invalid_argument("token " + std::to_string(tokens[i]) + " at index " + std::to_string(i) +
                                        " is outside the vocabulary");
        }
    }
}

Rotary::Rotary(std::size_t max_positions, std::size_t dim, double base)
    : max_positions_(max_positions), dim_(dim) {
    if (dim % 2 != 0) {
        throw std::invalid_argument("Rotary: dimension must be even");
    }
    const std::size_t half = dim / 2;
    cos_.resize(max_positions * half);
    sin_.resize(max_positions * half);
    for (std::size_t p = 0; p < max_positions; ++p) {
        for (std::size_t i = 0; i < half; ++i) {
            const double inv_freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
            const double angle = static_cast<double>(p) * inv_freq;
            cos_[p * half + i] = std::cos(angle);
            sin_[p * half + i] = std::sin(angle);
        }
    }
}

void Rotary::apply_row(std::span<double> row, std::size_t position) const {
    if (position >= max_positions_) {
        throw std::out_of_range("rotary position " + std::to_string(position) + " is outside the pre-training length " +
                                std::to_string(max_positions_));
    }
    if (row.size() != dim_) {
        throw std::invalid_argument("Rotary: row width mismatch");
    }
    const std::size_t half = dim_ / 2;
    const double* c = cos_.data() + position * half;
    const double* s = sin_.data() + position * half;
    for (std::size_t i = 0; i < half; ++i) {
        const double a = row[i];
        const double b = row[i + half];
        row[i] = a * c[i] - b * s[i];
        row[i + half] = a * s[i] + b * c[i];
    }
}

Matrix Rotary::apply(const Matrix& states, std::span<const std::size_t> positions) const {
    if (positions.size() != states.rows()) {
        throw std::invalid_argument("Rotary: one position per row required");
    }
    Matrix out = states;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        apply_row(out.row(r), positions[r]);
    }
    return out;
}

HostModel::HostModel(const ModelConfig& config)
    : config_((config.validate(), config)), rotary_(config.pretrain_length, config.d_head) {
    const std::size_t d = config_.d_model;
    WeightSource src(config_.seed, d);
    embedding_ = src.matrix(config_.vocab_size, d);
    layers_.reserve(config_.n_layers);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        LayerWeights w;
        w.wq = src.matrix(d, d);
        w.wk = src.matrix(d, d);
        w.wv = src.matrix(d, d);
        w.wo = src.matrix(d, d);
        w.bq = w.bk = w.bv = w.bo = Vector(d, 0.0);
        w.w_up = src.matrix(d, 4 * d);
        w.b_up = Vector(4 * d, 0.0);
        w.w_down = src.matrix(4 * d, d);
        w.b_down = Vector(d, 0.0);
        layers_.push_back(std::move(w));
    }
    w_out_ = src.matrix(d, config_.vocab_size);
}

Matrix HostModel::embed(std::span<const Token> tokens) const {
    Matrix out(tokens.size(), config_.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= config_.vocab_size) {
            throw std::invalid_argument("token outside the vocabulary");
        }
        const auto src = embedding_.row(tokens[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix HostModel::norm(const Matrix& hidden) const {
    Matrix out = hidden;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double ms = dot(row, row) / static_cast<double>(row.size());
        const double scale = 1.0 / std::sqrt(ms + 1e-6);
        for (double& x : row) {
            x *= scale;
        }
    }
    return out;
}

std::vector<HeadStates> HostModel::project_qkv(std::size_t layer, const Matrix& normed) const {
    if (normed.cols() != config_.d_model) {
        throw std::invalid_argument("project_qkv: hidden width " + std::to_string(normed.cols()) +
                                    " does not match d_model " + std::to_string(config_.d_model));
    }
    const LayerWeights& w = layers_.at(layer);
    const Matrix q = affine(normed, w.wq, w.bq);
    const Matrix k = affine(normed, w.wk, w.bk);
    const Matrix v = affine(normed, w.wv, w.bv);
    const std::size_t dh = config_.d_head;
    std::vector<HeadStates> heads(config_.n_heads);
    for (std::size_t h = 0; h < config_.n_heads; ++h) {
        HeadStates& hs = heads[h];
        hs.layer = layer;
        hs.head = h;
        hs.q = Matrix(normed.rows(), dh);
        hs.k = Matrix(normed.rows(), dh);
        hs.v = Matrix(normed.rows(), dh);
        for (std::size_t r = 0; r < normed.rows(); ++r) {
            for (std::size_t c = 0; c < dh; ++c) {
                hs.q(r, c) = q(r, h * dh + c);
                hs.k(r, c) = k(r, h * dh + c);
                hs.v(r, c) = v(r, h * dh + c);
            }
        }
    }
    return heads;
}

void HostModel::add_attention_output(std::size_t layer, std::span<const Matrix> head_outputs, Matrix& hidden) const {
    if (head_outputs.size() != config_.n_heads) {
        throw std::invalid_argument("add_attention_output: one output per head required");
    }
    const std::size_t dh = config_.d_head;
    Matrix concat(hidden.rows(), config_.d_model);
    for (std::size_t h = 0; h < config_.n_heads; ++h) {
        for (std::size_t r = 0; r < hidden.rows(); ++r) {
            for (std::size_t c = 0; c < dh; ++c) {
                concat(r, h * dh + c) = head_outputs[h](r, c);
            }
        }
    }
    const LayerWeights& w = layers_.at(layer);
    const Matrix proj = affine(concat, w.wo, w.bo);
    for (std::size_t i = 0; i < hidden.data().size(); ++i) {
        hidden.data()[i] += proj.data()[i];
    }
}

void HostModel::add_mlp(std::size_t layer, Matrix& hidden) const {
    const LayerWeights& w = layers_.at(layer);
    Matrix up = affine(norm(hidden), w.w_up, w.b_up);
    for (double& x : up.data()) {
        x = gelu(x);
    }
    const Matrix down = affine(up, w.w_down, w.b_down);
    for (std::size_t i = 0; i < hidden.data().size(); ++i) {
        hidden.data()[i] += down.data()[i];
    }
}

Matrix HostModel::logits(const Matrix& hidden) const {
    return affine(norm(hidden), w_out_, Vector(config_.vocab_size, 0.0));
}

std::uint64_t HostModel::weight_checksum() const {
    std::uint64_t h = checksum(embedding_.data());
    for (const LayerWeights& w : layers_) {
        for (const Matrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w_up, &w.w_down}) {
            h = checksum(m->data(), h);
        }
        for (const Vector* b : {&w.bq, &w.bk, &w.bv, &w.bo, &w.b_up, &w.b_down}) {
            h = checksum(*b, h);
        }
    }
    return checksum(w_out_.data(), h);
}

HostModel build_model(const ModelConfig& config) {
    return HostModel(config);
}

std::vector<HeadStates> project_qkv(const HostModel& model, std::size_t layer, const Matrix& hidden) {
    return model.project_qkv(layer, hidden);
}

Matrix apply_rotary(const HostModel& model, const Matrix& states, std::span<const std::size_t> positions) {
    return model.rotary().apply(states, positions);
}

Matrix full_attention_forward(const HostModel& model, const TokenSequence& seq) {
    const ModelConfig& cfg = model.config();
    const std::size_t n = seq.size();
    if (n == 0) {
        throw std::invalid_argument("full_attention_forward: empty sequence");
    }
    if (n > cfg.pretrain_length) {
        throw CapacityError("full_attention_forward: sequence length " + std::to_string(n) +
                            " exceeds the pre-training length " + std::to_string(cfg.pretrain_length));
    }
    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) {
        positions[i] = i;
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));

    Matrix hidden = model.embed(seq.tokens);
    for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
        const auto heads = model.project_qkv(layer, model.norm(hidden));
        std::vector<Matrix> outputs;
        outputs.reserve(cfg.n_heads);
        for (const HeadStates& hs : heads) {
            const Matrix q = model.rotary().apply(hs.q, positions);
            const Matrix k = model.rotary().apply(hs.k, positions);
            Matrix out(n, cfg.d_head);
            std::vector<double> scores(n);
            for (std::size_t i = 0; i < n; ++i) {
                double max_score = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    scores[j] = dot(q.row(i), k.row(j)) * scale;
                    max_score = std::max(max_score, scores[j]);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    scores[j] = std::exp(scores[j] - max_score);
                    denom += scores[j];
                }
                auto dst = out.row(i);
                for (std::size_t j = 0; j <= i; ++j) {
                    const double w = scores[j] / denom;
                    const auto v = hs.v.row(j);
                    for (std::size_t c = 0; c < cfg.d_head; ++c) {
                        dst[c] += w * v[c];
                    }
                }
            }
            outputs.push_back(std::move(out));
        }
        model.add_attention_output(layer, outputs, hidden);
        model.add_mlp(layer, hidden);
    }
    return model.logits(hidden);
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("argmax of an empty range");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace longheads
