#pragma once

// Representation adaptation between a source and a target domain.
//
// Matrices hold one sample per column. The marginalized variants corrupt by
// feature dropout with probability p; the bias row (constant 1) is never
// dropped, so its retention probability is 1.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "domsel/error.hpp"
#include "domsel/util.hpp"

namespace domsel {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class AdaptVariant { none, sda, msda, msdar };

inline std::string variant_name(AdaptVariant v) {
  switch (v) {
    case AdaptVariant::none: return "dt";
    case AdaptVariant::sda: return "sda";
    case AdaptVariant::msda: return "msda";
    case AdaptVariant::msdar: return "msdar";
  }
  return "?";
}

inline AdaptVariant parse_variant(std::string_view s) {
  if (s == "dt" || s == "none") return AdaptVariant::none;
  if (s == "sda") return AdaptVariant::sda;
  if (s == "msda") return AdaptVariant::msda;
  if (s == "msdar") return AdaptVariant::msdar;
  throw ValidationError("unknown adaptation variant '" + std::string(s) + "' (dt, sda, msda, msdar)");
}

struct AdaptConfig {
  AdaptVariant variant = AdaptVariant::msdar;
  int layers = 5;
  double dropout = 0.6;
  double lambda = 1.0;
  double reg_target = 1.0;  // R
  // SDA only
  double noise_scale = 1.0;
  int epochs = 30;
  int batch = 32;
  double step = 1e-3;

  void validate() const {
    if (variant == AdaptVariant::none) return;
    if (layers < 1) throw ValidationError("adapt: layers must be >= 1");
    if (variant == AdaptVariant::msda || variant == AdaptVariant::msdar) {
      if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("adapt: dropout must lie in [0, 1)");
      if (!(lambda >= 0.0)) throw ValidationError("adapt: lambda must be >= 0");
      if (!std::isfinite(reg_target)) throw ValidationError("adapt: R must be finite");
    }
    if (variant == AdaptVariant::sda) {
      if (!(noise_scale >= 0.0)) throw ValidationError("adapt: noise_scale must be >= 0");
      if (epochs < 1 || batch < 1 || !(step > 0.0)) throw ValidationError("adapt: epochs, batch and step must be positive");
    }
  }

  static AdaptConfig msdar_defaults() { return AdaptConfig{}; }
  static AdaptConfig sda_defaults() {
    AdaptConfig c;
    c.variant = AdaptVariant::sda;
    c.layers = 3;
    return c;
  }
};

namespace detail {

inline MatrixXd with_bias(const MatrixXd& X) {
  MatrixXd out(X.rows() + 1, X.cols());
  out.topRows(X.rows()) = X;
  out.row(X.rows()).setOnes();
  return out;
}

inline VectorXd retention(Eigen::Index d, double dropout) {
  VectorXd q = VectorXd::Constant(d + 1, 1.0 - dropout);
  q(d) = 1.0;
  return q;
}

/// E[x~ x~^T] summed over columns, from the uncorrupted scatter S.
inline MatrixXd corrupted_scatter(const MatrixXd& S, const VectorXd& q) {
  MatrixXd Q = S.cwiseProduct(q * q.transpose());
  Q.diagonal() = S.diagonal().cwiseProduct(q);
  return Q;
}

/// Solves W A = B for symmetric positive semi-definite A. Well-conditioned
/// systems are solved exactly; near-singular ones get ridge jitter
/// 1e-8 * trace(A) / dim.
inline MatrixXd solve_right_spd(const MatrixXd& B, const MatrixXd& A, const char* what) {
  Eigen::LDLT<MatrixXd> exact(A);
  const double exact_rcond = exact.rcond();
  if (exact.info() == Eigen::Success && exact.isPositive() && std::isfinite(exact_rcond) && exact_rcond > 1e-10) {
    MatrixXd Wt = exact.solve(B.transpose());
    if (Wt.allFinite()) return Wt.transpose();
  }
  const auto n = A.rows();
  MatrixXd J = A;
  const double jitter = 1e-8 * A.trace() / static_cast<double>(n);
  J.diagonal().array() += jitter;
  Eigen::LDLT<MatrixXd> ldlt(J);
  const double rcond = ldlt.rcond();
  if (ldlt.info() != Eigen::Success || !(rcond > 1e-15) || !std::isfinite(rcond))
    throw ComputationError(std::string(what) + ": singular system after jitter (condition estimate " +
                           format_double(rcond) + ")");
  MatrixXd Wt = ldlt.solve(B.transpose());
  if (!Wt.allFinite()) throw ComputationError(std::string(what) + ": non-finite solution");
  return Wt.transpose();
}

struct MarginalizedMoments {
  MatrixXd Q;  // (d+1) x (d+1)
  MatrixXd P;  // d x (d+1)
};

inline MarginalizedMoments marginalized_moments(const MatrixXd& Xb, const VectorXd& q) {
  const auto d = Xb.rows() - 1;
  const MatrixXd S = Xb * Xb.transpose();
  MarginalizedMoments m;
  m.Q = corrupted_scatter(S, q);
  m.P = S.topRows(d) * q.asDiagonal();
  return m;
}

}  // namespace detail

/// Closed-form marginalized denoising layer: W = P Q^-1, d x (d+1).
inline MatrixXd msda_layer(const MatrixXd& X, double dropout) {
  if (X.cols() < 2) throw ValidationError("msda_layer: need at least 2 samples");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("msda_layer: dropout must lie in [0, 1)");
  const MatrixXd Xb = detail::with_bias(X);
  const auto m = detail::marginalized_moments(Xb, detail::retention(X.rows(), dropout));
  return detail::solve_right_spd(m.P, m.Q, "msda_layer");
}

struct MsdarLayer {
  MatrixXd W;  // d x (d+1)
  VectorXd u;  // linear domain classifier on reconstructed features, length d
};

/// Ridge-regression domain classifier (no intercept), source = 1, target = 0.
inline VectorXd domain_classifier(const MatrixXd& X_s, const MatrixXd& X_t, double ridge = 1e-3) {
  MatrixXd X(X_s.rows(), X_s.cols() + X_t.cols());
  X << X_s, X_t;
  VectorXd y = VectorXd::Zero(X.cols());
  y.head(X_s.cols()).setOnes();
  MatrixXd A = X * X.transpose();
  A.diagonal().array() += ridge;
  return A.ldlt().solve(X * y);
}

/// mSDA with a domain regularizer on target columns:
///   sum_all E||x - W x~||^2 + lambda * sum_target E(R - u^T W x~)^2
/// Stationarity W Q + lambda u u^T W Q_t = P + lambda R u m_t^T = C is solved
/// through z^T = u^T W, which satisfies z^T (Q + lambda |u|^2 Q_t) = u^T C.
inline MsdarLayer msdar_layer(const MatrixXd& X_s, const MatrixXd& X_t, double dropout, double lambda,
                              double reg_target) {
  if (X_s.rows() != X_t.rows()) throw ValidationError("msdar_layer: source and target dimensions differ");
  if (X_s.cols() < 1 || X_t.cols() < 1) throw ValidationError("msdar_layer: empty source or target");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("msdar_layer: dropout must lie in [0, 1)");
  const auto d = X_s.rows();
  MatrixXd X(d, X_s.cols() + X_t.cols());
  X << X_s, X_t;
  if (X.cols() < 2) throw ValidationError("msdar_layer: need at least 2 samples");
  const VectorXd q = detail::retention(d, dropout);
  const MatrixXd Xb = detail::with_bias(X);
  const auto m = detail::marginalized_moments(Xb, q);

  MsdarLayer out;
  out.u = domain_classifier(X_s, X_t);
  const MatrixXd Xtb = detail::with_bias(X_t);
  const MatrixXd Qt = detail::corrupted_scatter(Xtb * Xtb.transpose(), q);
  const VectorXd mt = Xtb.rowwise().sum().cwiseProduct(q);

  const MatrixXd C = m.P + (lambda * reg_target) * out.u * mt.transpose();
  const MatrixXd A = m.Q + (lambda * out.u.squaredNorm()) * Qt;
  const MatrixXd zt = detail::solve_right_spd(out.u.transpose() * C, A, "msdar_layer");
  out.W = detail::solve_right_spd(C - lambda * out.u * (zt * Qt), m.Q, "msdar_layer");
  return out;
}

struct SdaLayer {
  MatrixXd weights;    // hidden x in
  VectorXd bias;       // hidden
  VectorXd noise_std;  // in
};

struct AdaptModel {
  AdaptVariant variant = AdaptVariant::none;
  AdaptConfig config;
  int input_dim = 0;
  int output_dim = 0;
  std::vector<MatrixXd> mappings;  // msda / msdar: d x (d+1) per layer
  std::vector<SdaLayer> sda;       // sda: encoder layers
};

inline AdaptModel identity_model(int dim) {
  AdaptModel m;
  m.variant = AdaptVariant::none;
  m.config.variant = AdaptVariant::none;
  m.input_dim = dim;
  m.output_dim = dim;
  return m;
}

/// Stacks closed-form layers. Layer k reads tanh of layer k-1's output (raw
/// input for k = 1); the encoding concatenates the raw input with every layer's
/// pre-tanh output, so output_dim = d * (layers + 1).
inline AdaptModel stack_marginalized(const MatrixXd& X_s, const MatrixXd& X_t, const AdaptConfig& cfg) {
  cfg.validate();
  if (cfg.variant != AdaptVariant::msda && cfg.variant != AdaptVariant::msdar)
    throw ValidationError("stack_marginalized: variant must be msda or msdar");
  if (X_s.rows() != X_t.rows()) throw ValidationError("stack_marginalized: source and target dimensions differ");
  const auto d = X_s.rows();
  AdaptModel model;
  model.variant = cfg.variant;
  model.config = cfg;
  model.input_dim = static_cast<int>(d);
  model.output_dim = static_cast<int>(d * (cfg.layers + 1));
  MatrixXd hs = X_s, ht = X_t;
  for (int k = 0; k < cfg.layers; ++k) {
    MatrixXd W;
    if (cfg.variant == AdaptVariant::msda) {
      MatrixXd pooled(d, hs.cols() + ht.cols());
      pooled << hs, ht;
      W = msda_layer(pooled, cfg.dropout);
    } else {
      W = msdar_layer(hs, ht, cfg.dropout, cfg.lambda, cfg.reg_target).W;
    }
    hs = (W * detail::with_bias(hs)).array().tanh().matrix();
    ht = (W * detail::with_bias(ht)).array().tanh().matrix();
    model.mappings.push_back(std::move(W));
  }
  return model;
}

namespace detail {

struct Adam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long t = 0;
  void step(MatrixXd& p, MatrixXd& m, MatrixXd& v, const MatrixXd& g, double c1, double c2) const {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

inline MatrixXd sample_std_rows(const MatrixXd& H) {
  const VectorXd mean = H.rowwise().mean();
  const double denom = H.cols() > 1 ? static_cast<double>(H.cols() - 1) : 1.0;
  return ((H.colwise() - mean).rowwise().squaredNorm() / denom).cwiseSqrt();
}

}  // namespace detail

/// Greedy layer-wise denoising autoencoders on the pooled source+target
/// samples. Each layer adds zero-mean Gaussian noise with per-dimension std
/// noise_scale * (sample std of its input), encodes with tanh (hidden width =
/// input width), decodes linearly, and minimizes squared error with Adam.
/// `curves`, when given, receives per layer the denoising loss on a fixed
/// corruption draw before training and after every epoch.
inline AdaptModel train_sda(const MatrixXd& X_s, const MatrixXd& X_t, const AdaptConfig& cfg, std::uint64_t seed,
                            std::vector<std::vector<double>>* curves = nullptr) {
  cfg.validate();
  if (cfg.variant != AdaptVariant::sda) throw ValidationError("train_sda: variant must be sda");
  if (X_s.rows() != X_t.rows()) throw ValidationError("train_sda: source and target dimensions differ");
  const auto d = X_s.rows();
  MatrixXd H(d, X_s.cols() + X_t.cols());
  H << X_s, X_t;
  const auto n = H.cols();
  if (n < 2) throw ValidationError("train_sda: need at least 2 samples");

  AdaptModel model;
  model.variant = AdaptVariant::sda;
  model.config = cfg;
  model.input_dim = static_cast<int>(d);
  model.output_dim = static_cast<int>(d);
  Rng rng(seed);
  if (curves) curves->clear();

  for (int layer = 0; layer < cfg.layers; ++layer) {
    const auto in = H.rows();
    const auto hid = in;
    const VectorXd noise_std = cfg.noise_scale * detail::sample_std_rows(H);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + hid));
    auto init = [&](Eigen::Index r, Eigen::Index c) {
      MatrixXd m(r, c);
      for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
      return m;
    };
    MatrixXd W1 = init(hid, in), W2 = init(in, hid);
    MatrixXd b1 = MatrixXd::Zero(hid, 1), b2 = MatrixXd::Zero(in, 1);
    MatrixXd mW1 = MatrixXd::Zero(hid, in), vW1 = mW1, mW2 = MatrixXd::Zero(in, hid), vW2 = mW2;
    MatrixXd mb1 = MatrixXd::Zero(hid, 1), vb1 = mb1, mb2 = MatrixXd::Zero(in, 1), vb2 = mb2;
    detail::Adam adam{cfg.step};

    auto noise = [&](Eigen::Index cols, Rng& r) {
      MatrixXd z(in, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < in; ++i) z(i, j) = noise_std(i) * standard_normal(r);
      return z;
    };
    Rng eval_rng(derive_seed(seed, "sda-eval-" + std::to_string(layer)));
    const MatrixXd eval_noisy = H + noise(n, eval_rng);
    auto eval_loss = [&] {
      const MatrixXd hidden = ((W1 * eval_noisy).colwise() + b1.col(0)).array().tanh().matrix();
      const MatrixXd recon = (W2 * hidden).colwise() + b2.col(0);
      return (recon - H).colwise().squaredNorm().mean();
    };
    std::vector<double> curve{eval_loss()};

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle(order, rng);
      for (Eigen::Index start = 0; start < n; start += cfg.batch) {
        const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch, n - start);
        MatrixXd clean(in, bs);
        for (Eigen::Index j = 0; j < bs; ++j) clean.col(j) = H.col(order[static_cast<std::size_t>(start + j)]);
        const MatrixXd noisy = clean + noise(bs, rng);
        const MatrixXd hidden = ((W1 * noisy).colwise() + b1.col(0)).array().tanh().matrix();
        const MatrixXd recon = (W2 * hidden).colwise() + b2.col(0);
        const MatrixXd dr = 2.0 * (recon - clean) / static_cast<double>(bs);
        const MatrixXd gW2 = dr * hidden.transpose();
        const MatrixXd gb2 = dr.rowwise().sum();
        const MatrixXd dh = (W2.transpose() * dr).cwiseProduct((1.0 - hidden.array().square()).matrix());
        const MatrixXd gW1 = dh * noisy.transpose();
        const MatrixXd gb1 = dh.rowwise().sum();
        ++adam.t;
        const double c1 = 1.0 - std::pow(adam.b1, static_cast<double>(adam.t));
        const double c2 = 1.0 - std::pow(adam.b2, static_cast<double>(adam.t));
        adam.step(W1, mW1, vW1, gW1, c1, c2);
        adam.step(b1, mb1, vb1, gb1, c1, c2);
        adam.step(W2, mW2, vW2, gW2, c1, c2);
        adam.step(b2, mb2, vb2, gb2, c1, c2);
      }
      const double loss = eval_loss();
      if (!std::isfinite(loss))
        throw ComputationError("train_sda: loss diverged in layer " + std::to_string(layer + 1) +
                               " (try a smaller step size)");
      curve.push_back(loss);
    }
    if (curves) curves->push_back(std::move(curve));
    H = ((W1 * H).colwise() + b1.col(0)).array().tanh().matrix();
    model.sda.push_back(SdaLayer{std::move(W1), b1.col(0), noise_std});
  }
  return model;
}

/// Applies the model's encoder to the columns of X. The DT model is the identity.
inline MatrixXd encode(const AdaptModel& model, const MatrixXd& X) {
  if (X.rows() != model.input_dim)
    throw ValidationError("encode: input has " + std::to_string(X.rows()) + " rows, model expects " +
                          std::to_string(model.input_dim));
  switch (model.variant) {
    case AdaptVariant::none: return X;
    case AdaptVariant::sda: {
      MatrixXd h = X;
      for (const auto& l : model.sda) h = ((l.weights * h).colwise() + l.bias).array().tanh().matrix();
      return h;
    }
    case AdaptVariant::msda:
    case AdaptVariant::msdar: {
      const auto d = X.rows();
      MatrixXd out(model.output_dim, X.cols());
      out.topRows(d) = X;
      MatrixXd h = X;
      for (std::size_t k = 0; k < model.mappings.size(); ++k) {
        const MatrixXd o = model.mappings[k] * detail::with_bias(h);
        out.middleRows(static_cast<Eigen::Index>(k + 1) * d, d) = o;
        h = o.array().tanh().matrix();
      }
      return out;
    }
  }
  throw ValidationError("encode: unknown variant");
}

namespace detail {

inline nlohmann::ordered_json matrix_to_json(const MatrixXd& m) {
  nlohmann::ordered_json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
  j["data"] = data;
  return j;
}

inline MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != r * c) throw ValidationError("matrix JSON: size mismatch");
  MatrixXd m(r, c);
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[idx++].get<double>();
  return m;
}

}  // namespace detail

inline nlohmann::ordered_json adapt_config_to_json(const AdaptConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(c.variant);
  j["layers"] = c.layers;
  j["dropout"] = c.dropout;
  j["lambda"] = c.lambda;
  j["R"] = c.reg_target;
  j["noise_scale"] = c.noise_scale;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["step"] = c.step;
  return j;
}

inline AdaptConfig adapt_config_from_json(const nlohmann::json& j) {
  AdaptConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.layers = j.at("layers").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.reg_target = j.at("R").get<double>();
  c.noise_scale = j.at("noise_scale").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch = j.at("batch").get<int>();
  c.step = j.at("step").get<double>();
  return c;
}

inline void save_adapt_model(const AdaptModel& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(m.variant);
  j["config"] = adapt_config_to_json(m.config);
  j["input_dim"] = m.input_dim;
  j["output_dim"] = m.output_dim;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& W : m.mappings) layers.push_back({{"W", detail::matrix_to_json(W)}});
  for (const auto& l : m.sda) {
    layers.push_back({{"weights", detail::matrix_to_json(l.weights)},
                      {"bias", detail::matrix_to_json(l.bias)},
                      {"noise_std", detail::matrix_to_json(l.noise_std)}});
  }
  j["layers"] = layers;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

inline AdaptModel load_adapt_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    AdaptModel m;
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.config = adapt_config_from_json(j.at("config"));
    m.input_dim = j.at("input_dim").get<int>();
    m.output_dim = j.at("output_dim").get<int>();
    for (const auto& l : j.at("layers")) {
      if (m.variant == AdaptVariant::sda) {
        m.sda.push_back(SdaLayer{detail::matrix_from_json(l.at("weights")), detail::matrix_from_json(l.at("bias")).col(0),
                                 detail::matrix_from_json(l.at("noise_std")).col(0)});
      } else {
        m.mappings.push_back(detail::matrix_from_json(l.at("W")));
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace domsel
