#include "docgen/net.hpp"

#include <Eigen/Core>
#include <cmath>

#include "docgen/rng.hpp"

namespace docgen {

namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapM = Eigen::Map<Mat<Real>>;
template <typename Real>
using CMapM = Eigen::Map<const Mat<Real>>;
template <typename Real>
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

constexpr double kLnEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

template <typename Real>
Real gelu_val(Real x) {
  const Real u = static_cast<Real>(kGeluK) * (x + static_cast<Real>(kGeluC) * x * x * x);
  return Real(0.5) * x * (Real(1) + std::tanh(u));
}

template <typename Real>
Real gelu_grad(Real x) {
  const Real u = static_cast<Real>(kGeluK) * (x + static_cast<Real>(kGeluC) * x * x * x);
  const Real t = std::tanh(u);
  return Real(0.5) * (Real(1) + t) +
         Real(0.5) * x * (Real(1) - t * t) * static_cast<Real>(kGeluK) *
             (Real(1) + Real(3) * static_cast<Real>(kGeluC) * x * x);
}

// y = x*W + b over row-major maps
template <typename Real>
void linear(const Tensor<Real>& x, int64_t rows, const Tensor<Real>& w, const Tensor<Real>& b,
            Tensor<Real>& y) {
  const int64_t in = w.shape[0], out = w.shape[1];
  CMapM<Real> xm(x.ptr(), rows, in);
  CMapM<Real> wm(w.ptr(), in, out);
  MapM<Real> ym(y.ptr(), rows, out);
  ym.noalias() = xm * wm;
  Eigen::Map<const RowVec<Real>> bm(b.ptr(), out);
  ym.rowwise() += bm;
}

// x grad, W grad, b grad from upstream dy
template <typename Real>
void linear_backward(const Tensor<Real>& x, int64_t rows, const Tensor<Real>& w,
                     const Tensor<Real>& dy, Tensor<Real>& dx, Tensor<Real>& dw,
                     Tensor<Real>& db) {
  const int64_t in = w.shape[0], out = w.shape[1];
  CMapM<Real> xm(x.ptr(), rows, in);
  CMapM<Real> wm(w.ptr(), in, out);
  CMapM<Real> dym(dy.ptr(), rows, out);
  MapM<Real> dxm(dx.ptr(), rows, in);
  dxm.noalias() = dym * wm.transpose();
  MapM<Real> dwm(dw.ptr(), in, out);
  dwm.noalias() += xm.transpose() * dym;
  // bias grad as a fixed-order row sweep; Eigen's partial redux may
  // reassociate depending on buffer alignment, breaking bitwise resume
  Real* dbp = db.ptr();
  const Real* dyp = dy.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const Real* row = dyp + r * out;
    for (int64_t j = 0; j < out; ++j) dbp[j] += row[j];
  }
}

template <typename Real>
void layernorm(const Tensor<Real>& x, int64_t rows, int d, const Tensor<Real>& g,
               const Tensor<Real>& b, Tensor<Real>& out, std::vector<Real>& mean,
               std::vector<Real>& rstd) {
  mean.resize(static_cast<size_t>(rows));
  rstd.resize(static_cast<size_t>(rows));
  const Real* gp = g.ptr();
  const Real* bp = b.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const Real* xp = x.ptr() + r * d;
    Real* op = out.ptr() + r * d;
    Real m = 0;
    for (int i = 0; i < d; ++i) m += xp[i];
    m /= static_cast<Real>(d);
    Real v = 0;
    for (int i = 0; i < d; ++i) {
      const Real c = xp[i] - m;
      v += c * c;
    }
    v /= static_cast<Real>(d);
    const Real rs = Real(1) / std::sqrt(v + static_cast<Real>(kLnEps));
    mean[static_cast<size_t>(r)] = m;
    rstd[static_cast<size_t>(r)] = rs;
    for (int i = 0; i < d; ++i) op[i] = (xp[i] - m) * rs * gp[i] + bp[i];
  }
}

template <typename Real>
void layernorm_backward(const Tensor<Real>& x, int64_t rows, int d, const Tensor<Real>& g,
                        const std::vector<Real>& mean, const std::vector<Real>& rstd,
                        const Tensor<Real>& dy, Tensor<Real>& dx, Tensor<Real>& dg,
                        Tensor<Real>& db) {
  const Real* gp = g.ptr();
  Real* dgp = dg.ptr();
  Real* dbp = db.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const Real* xp = x.ptr() + r * d;
    const Real* dyp = dy.ptr() + r * d;
    Real* dxp = dx.ptr() + r * d;
    const Real m = mean[static_cast<size_t>(r)];
    const Real rs = rstd[static_cast<size_t>(r)];
    Real sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (int i = 0; i < d; ++i) {
      const Real xhat = (xp[i] - m) * rs;
      const Real dxhat = dyp[i] * gp[i];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      dgp[i] += dyp[i] * xhat;
      dbp[i] += dyp[i];
    }
    const Real inv_d = Real(1) / static_cast<Real>(d);
    for (int i = 0; i < d; ++i) {
      const Real xhat = (xp[i] - m) * rs;
      const Real dxhat = dyp[i] * gp[i];
      dxp[i] += rs * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
    }
  }
}

}  // namespace

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(std::vector<int64_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(t.numel()), Real(0));
  return t;
}

template <typename Real>
int64_t Tensor<Real>::numel() const {
  int64_t n = 1;
  for (int64_t s : shape) n *= s;
  return n;
}

template <typename Real>
bool Tensor<Real>::finite() const {
  for (Real v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("model: vocab_size must be positive");
  if (context < 1) throw ConfigError("model: context must be positive");
  if (d_model < 1 || n_layers < 1 || n_heads < 1)
    throw ConfigError("model: dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("model: d_model must divide by n_heads");
  if (dropout != 0.0) throw ConfigError("model: only dropout=0 is supported");
}

template <typename Real>
ModelParams<Real> ModelParams<Real>::zeros(const ModelConfig& config) {
  config.validate();
  const int64_t v = config.vocab_size, d = config.d_model, f = config.ff_dim();
  ModelParams p;
  p.config = config;
  p.wte = Tensor<Real>::zeros({v, d});
  p.wpe = Tensor<Real>::zeros({config.context, d});
  p.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& l : p.layers) {
    l.ln1_g = Tensor<Real>::zeros({d});
    l.ln1_b = Tensor<Real>::zeros({d});
    l.qkv_w = Tensor<Real>::zeros({d, 3 * d});
    l.qkv_b = Tensor<Real>::zeros({3 * d});
    l.attn_w = Tensor<Real>::zeros({d, d});
    l.attn_b = Tensor<Real>::zeros({d});
    l.ln2_g = Tensor<Real>::zeros({d});
    l.ln2_b = Tensor<Real>::zeros({d});
    l.fc1_w = Tensor<Real>::zeros({d, f});
    l.fc1_b = Tensor<Real>::zeros({f});
    l.fc2_w = Tensor<Real>::zeros({f, d});
    l.fc2_b = Tensor<Real>::zeros({d});
  }
  p.lnf_g = Tensor<Real>::zeros({d});
  p.lnf_b = Tensor<Real>::zeros({d});
  p.head_w = Tensor<Real>::zeros({d, v});
  return p;
}

template <typename Real>
void ModelParams<Real>::for_each_tensor(
    const std::function<void(const std::string&, Tensor<Real>&)>& fn) {
  fn("wte", wte);
  fn("wpe", wpe);
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string pre = "layer" + std::to_string(i) + ".";
    auto& l = layers[i];
    fn(pre + "ln1_g", l.ln1_g);
    fn(pre + "ln1_b", l.ln1_b);
    fn(pre + "qkv_w", l.qkv_w);
    fn(pre + "qkv_b", l.qkv_b);
    fn(pre + "attn_w", l.attn_w);
    fn(pre + "attn_b", l.attn_b);
    fn(pre + "ln2_g", l.ln2_g);
    fn(pre + "ln2_b", l.ln2_b);
    fn(pre + "fc1_w", l.fc1_w);
    fn(pre + "fc1_b", l.fc1_b);
    fn(pre + "fc2_w", l.fc2_w);
    fn(pre + "fc2_b", l.fc2_b);
  }
  fn("lnf_g", lnf_g);
  fn("lnf_b", lnf_b);
  fn("head_w", head_w);
}

template <typename Real>
void ModelParams<Real>::for_each_tensor(
    const std::function<void(const std::string&, const Tensor<Real>&)>& fn) const {
  const_cast<ModelParams<Real>*>(this)->for_each_tensor(
      [&](const std::string& name, Tensor<Real>& t) { fn(name, t); });
}

template <typename Real>
int64_t ModelParams<Real>::parameter_count() const {
  int64_t n = 0;
  for_each_tensor([&](const std::string&, const Tensor<Real>& t) { n += t.numel(); });
  return n;
}

template <typename Real>
ModelParams<Real> init_params(const ModelConfig& config, uint64_t seed) {
  ModelParams<Real> p = ModelParams<Real>::zeros(config);
  Rng rng(seed);
  p.for_each_tensor([&](const std::string& name, Tensor<Real>& t) {
    const bool is_scale = name.size() >= 2 && name.compare(name.size() - 2, 2, "_g") == 0;
    const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, "_b") == 0;
    if (is_scale) {
      for (auto& v : t.data) v = Real(1);
    } else if (is_bias) {
      // already zero
    } else {
      for (auto& v : t.data) v = static_cast<Real>(0.02 * rng.normal());
    }
  });
  return p;
}

template <typename Real>
void softmax_inplace(Real* row, int n) {
  Real mx = row[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  Real sum = 0;
  for (int i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    sum += row[i];
  }
  const Real inv = Real(1) / sum;
  for (int i = 0; i < n; ++i) row[i] *= inv;
}

template <typename Real>
std::vector<Real> softmax(const std::vector<Real>& row) {
  if (row.empty()) throw InvalidInput("softmax: empty input");
  std::vector<Real> out = row;
  softmax_inplace(out.data(), static_cast<int>(out.size()));
  return out;
}

template <typename Real>
Tape<Real> forward(const ModelParams<Real>& params, const std::vector<int32_t>& ids, int batch,
                   int seq_len) {
  const ModelConfig& cfg = params.config;
  if (seq_len > cfg.context)
    throw InvalidInput("forward: context overflow: seq_len " + std::to_string(seq_len) +
                       " > context " + std::to_string(cfg.context));
  if (static_cast<int64_t>(ids.size()) != static_cast<int64_t>(batch) * seq_len)
    throw InvalidInput("forward: ids size does not match batch*seq_len");
  for (int32_t id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw InvalidInput("forward: token id out of range: " + std::to_string(id));

  const int d = cfg.d_model, f = cfg.ff_dim(), nh = cfg.n_heads, hs = cfg.head_dim();
  const int64_t n_rows = static_cast<int64_t>(batch) * seq_len;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hs));

  Tape<Real> tape;
  tape.batch = batch;
  tape.seq_len = seq_len;
  tape.ids = ids;
  tape.x_emb = Tensor<Real>::zeros({n_rows, d});
  for (int64_t r = 0; r < n_rows; ++r) {
    const Real* te = params.wte.ptr() + static_cast<int64_t>(ids[static_cast<size_t>(r)]) * d;
    const Real* pe = params.wpe.ptr() + (r % seq_len) * d;
    Real* xp = tape.x_emb.ptr() + r * d;
    for (int i = 0; i < d; ++i) xp[i] = te[i] + pe[i];
  }

  tape.layers.resize(params.layers.size());
  const Tensor<Real>* x = &tape.x_emb;
  for (size_t li = 0; li < params.layers.size(); ++li) {
    const auto& lp = params.layers[li];
    auto& lt = tape.layers[li];
    lt.ln1_out = Tensor<Real>::zeros({n_rows, d});
    layernorm(*x, n_rows, d, lp.ln1_g, lp.ln1_b, lt.ln1_out, lt.ln1_mean, lt.ln1_rstd);
    lt.qkv = Tensor<Real>::zeros({n_rows, 3 * d});
    linear(lt.ln1_out, n_rows, lp.qkv_w, lp.qkv_b, lt.qkv);

    lt.att_p = Tensor<Real>::zeros(
        {static_cast<int64_t>(batch) * nh * seq_len * seq_len});
    lt.att_out = Tensor<Real>::zeros({n_rows, d});
    CMapM<Real> qkv(lt.qkv.ptr(), n_rows, 3 * d);
    MapM<Real> att_out(lt.att_out.ptr(), n_rows, d);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < nh; ++h) {
        auto q = qkv.block(static_cast<int64_t>(b) * seq_len, h * hs, seq_len, hs);
        auto k = qkv.block(static_cast<int64_t>(b) * seq_len, d + h * hs, seq_len, hs);
        auto v = qkv.block(static_cast<int64_t>(b) * seq_len, 2 * d + h * hs, seq_len, hs);
        MapM<Real> p(lt.att_p.ptr() +
                         (static_cast<int64_t>(b) * nh + h) * seq_len * seq_len,
                     seq_len, seq_len);
        p.noalias() = q * k.transpose() * scale;
        // strictly causal: row t keeps columns [0, t], the rest are exact zeros
        for (int t = 0; t < seq_len; ++t) {
          Real* row = p.data() + static_cast<int64_t>(t) * seq_len;
          softmax_inplace(row, t + 1);
          for (int j = t + 1; j < seq_len; ++j) row[j] = Real(0);
        }
        att_out.block(static_cast<int64_t>(b) * seq_len, h * hs, seq_len, hs).noalias() =
            p * v;
      }
    }

    lt.res1 = Tensor<Real>::zeros({n_rows, d});
    linear(lt.att_out, n_rows, lp.attn_w, lp.attn_b, lt.res1);
    {
      MapM<Real> res1(lt.res1.ptr(), n_rows, d);
      CMapM<Real> xin(x->ptr(), n_rows, d);
      res1 += xin;
    }

    lt.ln2_out = Tensor<Real>::zeros({n_rows, d});
    layernorm(lt.res1, n_rows, d, lp.ln2_g, lp.ln2_b, lt.ln2_out, lt.ln2_mean, lt.ln2_rstd);
    lt.fc1 = Tensor<Real>::zeros({n_rows, f});
    linear(lt.ln2_out, n_rows, lp.fc1_w, lp.fc1_b, lt.fc1);
    lt.gelu = Tensor<Real>::zeros({n_rows, f});
    for (int64_t i = 0; i < n_rows * f; ++i)
      lt.gelu.data[static_cast<size_t>(i)] = gelu_val(lt.fc1.data[static_cast<size_t>(i)]);
    lt.res2 = Tensor<Real>::zeros({n_rows, d});
    linear(lt.gelu, n_rows, lp.fc2_w, lp.fc2_b, lt.res2);
    {
      MapM<Real> res2(lt.res2.ptr(), n_rows, d);
      CMapM<Real> r1(lt.res1.ptr(), n_rows, d);
      res2 += r1;
    }
    x = &lt.res2;
  }

  tape.lnf_out = Tensor<Real>::zeros({n_rows, d});
  layernorm(*x, n_rows, d, params.lnf_g, params.lnf_b, tape.lnf_out, tape.lnf_mean,
            tape.lnf_rstd);
  tape.logits = Tensor<Real>::zeros({n_rows, cfg.vocab_size});
  {
    CMapM<Real> lnf(tape.lnf_out.ptr(), n_rows, d);
    CMapM<Real> hw(params.head_w.ptr(), d, cfg.vocab_size);
    MapM<Real> lg(tape.logits.ptr(), n_rows, cfg.vocab_size);
    lg.noalias() = lnf * hw;
  }
  return tape;
}

template <typename Real>
ModelParams<Real> backward(const ModelParams<Real>& params, const Tape<Real>& tape,
                           const Tensor<Real>& d_logits) {
  const ModelConfig& cfg = params.config;
  const int d = cfg.d_model, f = cfg.ff_dim(), nh = cfg.n_heads, hs = cfg.head_dim();
  const int batch = tape.batch, seq_len = tape.seq_len;
  const int64_t n_rows = static_cast<int64_t>(batch) * seq_len;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hs));
  if (d_logits.shape != std::vector<int64_t>{n_rows, cfg.vocab_size})
    throw InvalidInput("backward: d_logits shape mismatch");

  ModelParams<Real> grads = ModelParams<Real>::zeros(cfg);

  // head and final norm
  Tensor<Real> d_lnf = Tensor<Real>::zeros({n_rows, d});
  {
    CMapM<Real> dlg(d_logits.ptr(), n_rows, cfg.vocab_size);
    CMapM<Real> lnf(tape.lnf_out.ptr(), n_rows, d);
    CMapM<Real> hw(params.head_w.ptr(), d, cfg.vocab_size);
    MapM<Real> dhw(grads.head_w.ptr(), d, cfg.vocab_size);
    dhw.noalias() = lnf.transpose() * dlg;
    MapM<Real> dlnf(d_lnf.ptr(), n_rows, d);
    dlnf.noalias() = dlg * hw.transpose();
  }
  const Tensor<Real>* last_x =
      tape.layers.empty() ? &tape.x_emb : &tape.layers.back().res2;
  Tensor<Real> dx = Tensor<Real>::zeros({n_rows, d});
  layernorm_backward(*last_x, n_rows, d, params.lnf_g, tape.lnf_mean, tape.lnf_rstd, d_lnf,
                     dx, grads.lnf_g, grads.lnf_b);

  for (int li = static_cast<int>(params.layers.size()) - 1; li >= 0; --li) {
    const auto& lp = params.layers[static_cast<size_t>(li)];
    const auto& lt = tape.layers[static_cast<size_t>(li)];
    auto& lg = grads.layers[static_cast<size_t>(li)];
    const Tensor<Real>& layer_in =
        li == 0 ? tape.x_emb : tape.layers[static_cast<size_t>(li - 1)].res2;

    // FFN branch: dx is the gradient at res2 = res1 + fc2(gelu(fc1(ln2(res1))))
    Tensor<Real> d_gelu = Tensor<Real>::zeros({n_rows, f});
    linear_backward(lt.gelu, n_rows, lp.fc2_w, dx, d_gelu, lg.fc2_w, lg.fc2_b);
    Tensor<Real> d_fc1 = Tensor<Real>::zeros({n_rows, f});
    for (int64_t i = 0; i < n_rows * f; ++i)
      d_fc1.data[static_cast<size_t>(i)] =
          d_gelu.data[static_cast<size_t>(i)] * gelu_grad(lt.fc1.data[static_cast<size_t>(i)]);
    Tensor<Real> d_ln2 = Tensor<Real>::zeros({n_rows, d});
    linear_backward(lt.ln2_out, n_rows, lp.fc1_w, d_fc1, d_ln2, lg.fc1_w, lg.fc1_b);
    // dx accumulates the ln2 path on top of the residual path already in dx
    layernorm_backward(lt.res1, n_rows, d, lp.ln2_g, lt.ln2_mean, lt.ln2_rstd, d_ln2, dx,
                       lg.ln2_g, lg.ln2_b);

    // attention branch: dx is now the gradient at res1 = x_in + attn_proj
    Tensor<Real> d_att_out = Tensor<Real>::zeros({n_rows, d});
    linear_backward(lt.att_out, n_rows, lp.attn_w, dx, d_att_out, lg.attn_w, lg.attn_b);

    Tensor<Real> d_qkv = Tensor<Real>::zeros({n_rows, 3 * d});
    {
      CMapM<Real> qkv(lt.qkv.ptr(), n_rows, 3 * d);
      MapM<Real> dqkv(d_qkv.ptr(), n_rows, 3 * d);
      CMapM<Real> datt(d_att_out.ptr(), n_rows, d);
      Mat<Real> dp(seq_len, seq_len), ds(seq_len, seq_len);
      for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < nh; ++h) {
          auto q = qkv.block(static_cast<int64_t>(b) * seq_len, h * hs, seq_len, hs);
          auto k = qkv.block(static_cast<int64_t>(b) * seq_len, d + h * hs, seq_len, hs);
          auto v = qkv.block(static_cast<int64_t>(b) * seq_len, 2 * d + h * hs, seq_len, hs);
          CMapM<Real> p(lt.att_p.ptr() +
                            (static_cast<int64_t>(b) * nh + h) * seq_len * seq_len,
                        seq_len, seq_len);
          auto dout = datt.block(static_cast<int64_t>(b) * seq_len, h * hs, seq_len, hs);
          dqkv.block(static_cast<int64_t>(b) * seq_len, 2 * d + h * hs, seq_len, hs)
              .noalias() = p.transpose() * dout;
          dp.noalias() = dout * v.transpose();
          // softmax backward; masked columns have p == 0 so ds vanishes
          // there. The dot is a fixed-order scalar loop: Eigen's vectorized
          // redux reassociates based on buffer alignment, which would break
          // bitwise reproducibility across allocation histories.
          for (int t = 0; t < seq_len; ++t) {
            double row_dot = 0;
            for (int u = 0; u <= t; ++u)
              row_dot += static_cast<double>(dp(t, u)) * static_cast<double>(p(t, u));
            ds.row(t) = p.row(t).array() * (dp.row(t).array() - static_cast<Real>(row_dot));
          }
          dqkv.block(static_cast<int64_t>(b) * seq_len, h * hs, seq_len, hs).noalias() =
              ds * k * scale;
          dqkv.block(static_cast<int64_t>(b) * seq_len, d + h * hs, seq_len, hs).noalias() =
              ds.transpose() * q * scale;
        }
      }
    }

    Tensor<Real> d_ln1 = Tensor<Real>::zeros({n_rows, d});
    linear_backward(lt.ln1_out, n_rows, lp.qkv_w, d_qkv, d_ln1, lg.qkv_w, lg.qkv_b);
    layernorm_backward(layer_in, n_rows, d, lp.ln1_g, lt.ln1_mean, lt.ln1_rstd, d_ln1, dx,
                       lg.ln1_g, lg.ln1_b);
  }

  // embeddings; sequential accumulation keeps the reduction order fixed
  for (int64_t r = 0; r < n_rows; ++r) {
    const Real* dxp = dx.ptr() + r * d;
    Real* te = grads.wte.ptr() + static_cast<int64_t>(tape.ids[static_cast<size_t>(r)]) * d;
    Real* pe = grads.wpe.ptr() + (r % seq_len) * d;
    for (int i = 0; i < d; ++i) {
      te[i] += dxp[i];
      pe[i] += dxp[i];
    }
  }
  return grads;
}

template <typename Real>
DecodeSession<Real>::DecodeSession(const ModelParams<Real>& params) : params_(&params) {
  const ModelConfig& cfg = params.config;
  cfg.validate();
  k_cache_.resize(static_cast<size_t>(cfg.n_layers));
  v_cache_.resize(static_cast<size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    k_cache_[static_cast<size_t>(l)] = Tensor<Real>::zeros({cfg.context, cfg.d_model});
    v_cache_[static_cast<size_t>(l)] = Tensor<Real>::zeros({cfg.context, cfg.d_model});
  }
  x_.resize(static_cast<size_t>(cfg.d_model));
  ln_.resize(static_cast<size_t>(cfg.d_model));
  qkv_.resize(static_cast<size_t>(3 * cfg.d_model));
  att_.resize(static_cast<size_t>(cfg.d_model));
  proj_.resize(static_cast<size_t>(cfg.d_model));
  ff_.resize(static_cast<size_t>(cfg.ff_dim()));
  scores_.resize(static_cast<size_t>(cfg.context));
  logits_.resize(static_cast<size_t>(cfg.vocab_size));
}

template <typename Real>
const std::vector<Real>& DecodeSession<Real>::step(int32_t token_id) {
  const ModelConfig& cfg = params_->config;
  if (pos_ >= cfg.context)
    throw GenerateError("decode session: context overflow at position " +
                        std::to_string(pos_));
  if (token_id < 0 || token_id >= cfg.vocab_size)
    throw InvalidInput("decode session: token id out of range: " + std::to_string(token_id));
  const int d = cfg.d_model, nh = cfg.n_heads, hs = cfg.head_dim(), f = cfg.ff_dim();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hs));

  const Real* te = params_->wte.ptr() + static_cast<int64_t>(token_id) * d;
  const Real* pe = params_->wpe.ptr() + static_cast<int64_t>(pos_) * d;
  for (int i = 0; i < d; ++i) x_[static_cast<size_t>(i)] = te[i] + pe[i];

  // x[1,din] * w[din,dout] + b. Output lanes are independent and the loop
  // over din is fixed-order, so results do not depend on buffer alignment
  // (Eigen's vectorized matvec reassociates, which costs bitwise
  // reproducibility across allocation histories).
  auto vecmat = [](const Real* x, const Real* w, const Real* b, int din, int dout,
                   Real* out) {
    for (int j = 0; j < dout; ++j) out[j] = b ? b[j] : Real(0);
    for (int i = 0; i < din; ++i) {
      const Real xi = x[i];
      const Real* wrow = w + static_cast<int64_t>(i) * dout;
      for (int j = 0; j < dout; ++j) out[j] += xi * wrow[j];
    }
  };

  auto layernorm_row = [&](const std::vector<Real>& in, const Tensor<Real>& g,
                           const Tensor<Real>& b, std::vector<Real>& out) {
    Real m = 0;
    for (int i = 0; i < d; ++i) m += in[static_cast<size_t>(i)];
    m /= static_cast<Real>(d);
    Real var = 0;
    for (int i = 0; i < d; ++i) {
      const Real c = in[static_cast<size_t>(i)] - m;
      var += c * c;
    }
    var /= static_cast<Real>(d);
    const Real rs = Real(1) / std::sqrt(var + static_cast<Real>(kLnEps));
    for (int i = 0; i < d; ++i)
      out[static_cast<size_t>(i)] =
          (in[static_cast<size_t>(i)] - m) * rs * g.data[static_cast<size_t>(i)] +
          b.data[static_cast<size_t>(i)];
  };

  for (size_t li = 0; li < params_->layers.size(); ++li) {
    const auto& lp = params_->layers[li];
    layernorm_row(x_, lp.ln1_g, lp.ln1_b, ln_);
    vecmat(ln_.data(), lp.qkv_w.ptr(), lp.qkv_b.ptr(), d, 3 * d, qkv_.data());

    Real* krow = k_cache_[li].ptr() + static_cast<int64_t>(pos_) * d;
    Real* vrow = v_cache_[li].ptr() + static_cast<int64_t>(pos_) * d;
    for (int i = 0; i < d; ++i) {
      krow[i] = qkv_[static_cast<size_t>(d + i)];
      vrow[i] = qkv_[static_cast<size_t>(2 * d + i)];
    }
    const int t1 = pos_ + 1;
    for (int h = 0; h < nh; ++h) {
      const Real* qh = qkv_.data() + h * hs;
      for (int t = 0; t < t1; ++t) {
        const Real* kt = k_cache_[li].ptr() + static_cast<int64_t>(t) * d + h * hs;
        double acc = 0;
        for (int i = 0; i < hs; ++i)
          acc += static_cast<double>(qh[i]) * static_cast<double>(kt[i]);
        scores_[static_cast<size_t>(t)] = static_cast<Real>(acc) * scale;
      }
      softmax_inplace(scores_.data(), t1);
      Real* oh = att_.data() + h * hs;
      for (int i = 0; i < hs; ++i) oh[i] = 0;
      for (int t = 0; t < t1; ++t) {
        const Real st = scores_[static_cast<size_t>(t)];
        const Real* vt = v_cache_[li].ptr() + static_cast<int64_t>(t) * d + h * hs;
        for (int i = 0; i < hs; ++i) oh[i] += st * vt[i];
      }
    }
    vecmat(att_.data(), lp.attn_w.ptr(), lp.attn_b.ptr(), d, d, proj_.data());
    for (int i = 0; i < d; ++i) x_[static_cast<size_t>(i)] += proj_[static_cast<size_t>(i)];

    layernorm_row(x_, lp.ln2_g, lp.ln2_b, ln_);
    vecmat(ln_.data(), lp.fc1_w.ptr(), lp.fc1_b.ptr(), d, f, ff_.data());
    for (int i = 0; i < f; ++i)
      ff_[static_cast<size_t>(i)] = gelu_val(ff_[static_cast<size_t>(i)]);
    vecmat(ff_.data(), lp.fc2_w.ptr(), lp.fc2_b.ptr(), f, d, proj_.data());
    for (int i = 0; i < d; ++i) x_[static_cast<size_t>(i)] += proj_[static_cast<size_t>(i)];
  }

  layernorm_row(x_, params_->lnf_g, params_->lnf_b, ln_);
  vecmat(ln_.data(), params_->head_w.ptr(), nullptr, d, cfg.vocab_size, logits_.data());
  ++pos_;
  return logits_;
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct ModelParams<float>;
template struct ModelParams<double>;
template struct Tape<float>;
template struct Tape<double>;
template ModelParams<float> init_params<float>(const ModelConfig&, uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, uint64_t);
template void softmax_inplace<float>(float*, int);
template void softmax_inplace<double>(double*, int);
template std::vector<float> softmax<float>(const std::vector<float>&);
template std::vector<double> softmax<double>(const std::vector<double>&);
template Tape<float> forward<float>(const ModelParams<float>&, const std::vector<int32_t>&,
                                    int, int);
template Tape<double> forward<double>(const ModelParams<double>&, const std::vector<int32_t>&,
                                      int, int);
template ModelParams<float> backward<float>(const ModelParams<float>&, const Tape<float>&,
                                            const Tensor<float>&);
template ModelParams<double> backward<double>(const ModelParams<double>&, const Tape<double>&,
                                              const Tensor<double>&);
template class DecodeSession<float>;
template class DecodeSession<double>;

}  // namespace docgen
