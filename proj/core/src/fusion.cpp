#include "gazedistill/fusion.hpp"

#include <cmath>

namespace gazedistill {

using Eigen::MatrixXd;

FusionParams FusionParams::create(nn::ParamStore& store, const std::string& name, int channels, int height, int width,
                                  int text_width, int heads, FusionVariant variant, double scale_init, nn::Rng& rng) {
    if (heads < 1 || channels % heads != 0) {
        throw StructuralError(name + ": heads (" + std::to_string(heads) + ") must divide channels (" +
                              std::to_string(channels) + ")");
    }
    FusionParams p;
    p.channels = channels;
    p.text_width = text_width;
    p.positions = height * width;
    p.heads = heads;
    p.variant = variant;
    const double vis_std = 1.0 / std::sqrt(static_cast<double>(channels));
    const double txt_std = 1.0 / std::sqrt(static_cast<double>(text_width));
    p.query_proj = store.add(name + ".query_proj", nn::normal_matrix(channels, channels, vis_std, rng));
    p.key_proj = store.add(name + ".key_proj", nn::normal_matrix(channels, text_width, txt_std, rng));
    p.value_proj = store.add(name + ".value_proj", nn::normal_matrix(channels, text_width, txt_std, rng));
    p.output_proj = store.add(name + ".output_proj", nn::normal_matrix(channels, channels, vis_std, rng));
    p.positional = store.add(name + ".positional", nn::normal_matrix(p.positions, channels, 0.02, rng));
    p.scale = store.add(name + ".scale", MatrixXd::Constant(1, 1, scale_init));
    p.ln_gamma = store.add(name + ".ln_gamma", MatrixXd::Ones(1, channels));
    p.ln_beta = store.add(name + ".ln_beta", MatrixXd::Zero(1, channels));
    if (variant == FusionVariant::concat) {
        MatrixXd proj(channels, 2 * channels);
        proj << MatrixXd::Identity(channels, channels), MatrixXd::Identity(channels, channels);
        p.concat_proj = store.add(name + ".concat_proj", proj);
    }
    return p;
}

MatrixXd flatten_positions(const nn::Tensor& x) { return x.values.transpose(); }

nn::Tensor unflatten_positions(const MatrixXd& rows, int height, int width) {
    if (rows.rows() != static_cast<Eigen::Index>(height) * width) {
        throw StructuralError("unflatten_positions: " + std::to_string(rows.rows()) + " rows for a " +
                              std::to_string(height) + "x" + std::to_string(width) + " grid");
    }
    nn::Tensor t(static_cast<int>(rows.cols()), height, width);
    t.values = rows.transpose();
    return t;
}

nn::Tensor fuse_stage(const nn::Tensor& x, const TextEmbedding& text, const nn::ParamStore& store,
                      const FusionParams& params, FusionCache* cache) {
    if (x.channels != params.channels) {
        throw StructuralError("fuse_stage: channels " + std::to_string(x.channels) + " != " +
                              std::to_string(params.channels));
    }
    if (x.pixels() != params.positions) {
        throw StructuralError("fuse_stage: positions " + std::to_string(x.pixels()) + " != " +
                              std::to_string(params.positions));
    }
    if (text.width() != params.text_width) {
        throw StructuralError("fuse_stage: text width " + std::to_string(text.width()) + " != " +
                              std::to_string(params.text_width));
    }
    if (text.token_count() < 1) throw StructuralError("fuse_stage: text embedding has no tokens");

    FusionCache local;
    FusionCache& c = cache != nullptr ? *cache : local;
    const int d = params.head_width();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    c.x = flatten_positions(x);
    c.queries = c.x * store[params.query_proj].value.transpose() + store[params.positional].value;
    c.keys = text.vectors * store[params.key_proj].value.transpose();
    c.values = text.vectors * store[params.value_proj].value.transpose();

    c.attention.resize(static_cast<std::size_t>(params.heads));
    c.heads_concat.resize(c.x.rows(), params.channels);
    for (int h = 0; h < params.heads; ++h) {
        MatrixXd scores = c.queries.middleCols(h * d, d) * c.keys.middleCols(h * d, d).transpose() * inv_sqrt_d;
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            const double m = scores.row(i).maxCoeff();
            scores.row(i) = (scores.row(i).array() - m).exp();
            scores.row(i) /= scores.row(i).sum();
        }
        c.heads_concat.middleCols(h * d, d) = scores * c.values.middleCols(h * d, d);
        c.attention[static_cast<std::size_t>(h)] = std::move(scores);
    }
    c.attended = c.heads_concat * store[params.output_proj].value.transpose();

    const double lambda = store[params.scale].value(0, 0);
    if (params.variant == FusionVariant::sum) {
        c.residual = c.x + lambda * c.attended;
    } else {
        const MatrixXd& w = store[params.concat_proj].value;
        c.residual = c.x * w.leftCols(params.channels).transpose() +
                     (lambda * c.attended) * w.rightCols(params.channels).transpose();
    }
    const Eigen::RowVectorXd gamma = store[params.ln_gamma].value.row(0);
    const Eigen::RowVectorXd beta = store[params.ln_beta].value.row(0);
    MatrixXd out = nn::row_layer_norm(c.residual, gamma, beta, kFusionNormEps, &c.norm);
    return unflatten_positions(out, x.height, x.width);
}

nn::Tensor fuse_stage_backward(const nn::Tensor& dy, const TextEmbedding& text, nn::ParamStore& store,
                               const FusionParams& params, const FusionCache& c, int height, int width) {
    const int d = params.head_width();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double lambda = store[params.scale].value(0, 0);

    Eigen::RowVectorXd dgamma = Eigen::RowVectorXd::Zero(params.channels);
    Eigen::RowVectorXd dbeta = Eigen::RowVectorXd::Zero(params.channels);
    const Eigen::RowVectorXd gamma = store[params.ln_gamma].value.row(0);
    const MatrixXd dresidual = nn::row_layer_norm_backward(c.norm, gamma, flatten_positions(dy), dgamma, dbeta);
    store[params.ln_gamma].grad.row(0) += dgamma;
    store[params.ln_beta].grad.row(0) += dbeta;

    MatrixXd dx;
    MatrixXd dattended;
    if (params.variant == FusionVariant::sum) {
        dx = dresidual;
        store[params.scale].grad(0, 0) += (dresidual.array() * c.attended.array()).sum();
        dattended = lambda * dresidual;
    } else {
        const MatrixXd& w = store[params.concat_proj].value;
        const MatrixXd scaled = lambda * c.attended;
        store[params.concat_proj].grad.leftCols(params.channels) += dresidual.transpose() * c.x;
        store[params.concat_proj].grad.rightCols(params.channels) += dresidual.transpose() * scaled;
        dx = dresidual * w.leftCols(params.channels);
        const MatrixXd dscaled = dresidual * w.rightCols(params.channels);
        store[params.scale].grad(0, 0) += (dscaled.array() * c.attended.array()).sum();
        dattended = lambda * dscaled;
    }

    store[params.output_proj].grad += dattended.transpose() * c.heads_concat;
    const MatrixXd dheads = dattended * store[params.output_proj].value;

    MatrixXd dqueries(c.queries.rows(), c.queries.cols());
    MatrixXd dkeys(c.keys.rows(), c.keys.cols());
    MatrixXd dvalues(c.values.rows(), c.values.cols());
    for (int h = 0; h < params.heads; ++h) {
        const MatrixXd& a = c.attention[static_cast<std::size_t>(h)];
        const MatrixXd dh = dheads.middleCols(h * d, d);
        dvalues.middleCols(h * d, d) = a.transpose() * dh;
        const MatrixXd da = dh * c.values.middleCols(h * d, d).transpose();
        const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
        const MatrixXd dscores = (a.array() * (da.array().colwise() - row_dot.array())).matrix() * inv_sqrt_d;
        dqueries.middleCols(h * d, d) = dscores * c.keys.middleCols(h * d, d);
        dkeys.middleCols(h * d, d) = dscores.transpose() * c.queries.middleCols(h * d, d);
    }

    store[params.positional].grad += dqueries;
    store[params.query_proj].grad += dqueries.transpose() * c.x;
    dx += dqueries * store[params.query_proj].value;
    store[params.key_proj].grad += dkeys.transpose() * text.vectors;
    store[params.value_proj].grad += dvalues.transpose() * text.vectors;

    return unflatten_positions(dx, height, width);
}

}  // namespace gazedistill
