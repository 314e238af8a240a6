#include "addlab/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <json.hpp>
#include <limits>

#include "addlab/errors.hpp"
#include "addlab/parallel.hpp"
#include "addlab/rng.hpp"

namespace addlab {

namespace {

using nlohmann::json;

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

// ---------- layer kernels, templated on the scalar ----------
//
// Stride-1 convolutions (the default stack) run over explicitly zero-padded
// planes: no boundary checks in the hot loops, and the 3x3 case fuses all
// nine taps into a single vectorizable pass per row. Strided convolutions
// fall back to generic bounds-checked loops.

template <class T>
void pad_planes(const T* src, int C, int H, int W, int pad, T* dst) {
    const int PH = H + 2 * pad, PW = W + 2 * pad;
    std::fill(dst, dst + static_cast<std::size_t>(C) * PH * PW, T(0));
    for (int c = 0; c < C; ++c) {
        const T* s = src + static_cast<std::size_t>(c) * H * W;
        T* d = dst + static_cast<std::size_t>(c) * PH * PW +
               static_cast<std::size_t>(pad) * PW + pad;
        for (int y = 0; y < H; ++y) {
            std::copy(s + static_cast<std::size_t>(y) * W,
                      s + static_cast<std::size_t>(y) * W + W,
                      d + static_cast<std::size_t>(y) * PW);
        }
    }
}

// stride 1 forward; inpad is Cin x (Ho+k-1) x PW with PW = Wo + k - 1
template <class T>
void conv_fwd_s1(const Conv2dSpec& c, int Ho, int Wo, const T* inpad, int PW,
                 const T* weight, const T* bias, T* out) {
    const int k = c.kernel;
    const std::size_t plane_in = static_cast<std::size_t>(Ho + k - 1) * PW;
    for (int oc = 0; oc < c.out_ch; ++oc) {
        T* __restrict__ out_ch = out + static_cast<std::size_t>(oc) * Ho * Wo;
        std::fill(out_ch, out_ch + static_cast<std::size_t>(Ho) * Wo,
                  bias[oc]);
        for (int ic = 0; ic < c.in_ch; ++ic) {
            const T* in_ch = inpad + ic * plane_in;
            const T* w_tap =
                weight +
                (static_cast<std::size_t>(oc) * c.in_ch + ic) * k * k;
            if (k == 3) {
                const T w00 = w_tap[0], w01 = w_tap[1], w02 = w_tap[2];
                const T w10 = w_tap[3], w11 = w_tap[4], w12 = w_tap[5];
                const T w20 = w_tap[6], w21 = w_tap[7], w22 = w_tap[8];
                for (int oy = 0; oy < Ho; ++oy) {
                    const T* __restrict__ r0 =
                        in_ch + static_cast<std::size_t>(oy) * PW;
                    const T* __restrict__ r1 = r0 + PW;
                    const T* __restrict__ r2 = r1 + PW;
                    T* __restrict__ o = out_ch +
                                        static_cast<std::size_t>(oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        o[ox] += w00 * r0[ox] + w01 * r0[ox + 1] +
                                 w02 * r0[ox + 2] + w10 * r1[ox] +
                                 w11 * r1[ox + 1] + w12 * r1[ox + 2] +
                                 w20 * r2[ox] + w21 * r2[ox + 1] +
                                 w22 * r2[ox + 2];
                    }
                }
            } else {
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const T w = w_tap[ky * k + kx];
                        for (int oy = 0; oy < Ho; ++oy) {
                            const T* __restrict__ r =
                                in_ch +
                                static_cast<std::size_t>(oy + ky) * PW + kx;
                            T* __restrict__ o =
                                out_ch + static_cast<std::size_t>(oy) * Wo;
                            for (int ox = 0; ox < Wo; ++ox) {
                                o[ox] += w * r[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

// generic strided forward (bounds-checked), used when stride > 1
template <class T>
void conv_fwd_strided(const Conv2dSpec& c, int H, int W, int Ho, int Wo,
                      const T* in, const T* weight, const T* bias, T* out) {
    const int k = c.kernel, s = c.stride, p = c.pad;
    for (int oc = 0; oc < c.out_ch; ++oc) {
        T* out_ch = out + static_cast<std::size_t>(oc) * Ho * Wo;
        std::fill(out_ch, out_ch + static_cast<std::size_t>(Ho) * Wo,
                  bias[oc]);
        for (int ic = 0; ic < c.in_ch; ++ic) {
            const T* in_ch = in + static_cast<std::size_t>(ic) * H * W;
            const T* w_tap =
                weight +
                (static_cast<std::size_t>(oc) * c.in_ch + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int oy_lo = p - ky <= 0 ? 0 : (p - ky + s - 1) / s;
                const int ty = H - 1 - ky + p;
                if (ty < 0) continue;
                const int oy_hi = std::min(Ho, ty / s + 1);
                for (int kx = 0; kx < k; ++kx) {
                    const T w = w_tap[ky * k + kx];
                    const int ox_lo = p - kx <= 0 ? 0 : (p - kx + s - 1) / s;
                    const int tx = W - 1 - kx + p;
                    if (tx < 0) continue;
                    const int ox_hi = std::min(Wo, tx / s + 1);
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const int iy = oy * s + ky - p;
                        const T* in_row =
                            in_ch + static_cast<std::size_t>(iy) * W;
                        T* out_row =
                            out_ch + static_cast<std::size_t>(oy) * Wo;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) {
                            out_row[ox] += w * in_row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

// stride-1 input gradients from zero-padded output gradients; the padding
// is k-1-p per side, so every tap always hits a valid row
template <class T>
void conv_bwd_din_s1(const Conv2dSpec& c, int H, int W, const T* dout_pad,
                     int PDW, const T* weight, T* din) {
    const int k = c.kernel;
    const std::size_t plane_dout = static_cast<std::size_t>(H + k - 1) * PDW;
    std::fill(din, din + static_cast<std::size_t>(c.in_ch) * H * W, T(0));
    for (int ic = 0; ic < c.in_ch; ++ic) {
        T* din_ch = din + static_cast<std::size_t>(ic) * H * W;
        for (int oc = 0; oc < c.out_ch; ++oc) {
            const T* dout_ch = dout_pad + oc * plane_dout;
            const T* w_tap =
                weight +
                (static_cast<std::size_t>(oc) * c.in_ch + ic) * k * k;
            if (k == 3) {
                // correlation with the flipped kernel
                const T w00 = w_tap[8], w01 = w_tap[7], w02 = w_tap[6];
                const T w10 = w_tap[5], w11 = w_tap[4], w12 = w_tap[3];
                const T w20 = w_tap[2], w21 = w_tap[1], w22 = w_tap[0];
                for (int iy = 0; iy < H; ++iy) {
                    const T* __restrict__ r0 =
                        dout_ch + static_cast<std::size_t>(iy) * PDW;
                    const T* __restrict__ r1 = r0 + PDW;
                    const T* __restrict__ r2 = r1 + PDW;
                    T* __restrict__ o = din_ch +
                                        static_cast<std::size_t>(iy) * W;
                    for (int ix = 0; ix < W; ++ix) {
                        o[ix] += w00 * r0[ix] + w01 * r0[ix + 1] +
                                 w02 * r0[ix + 2] + w10 * r1[ix] +
                                 w11 * r1[ix + 1] + w12 * r1[ix + 2] +
                                 w20 * r2[ix] + w21 * r2[ix + 1] +
                                 w22 * r2[ix + 2];
                    }
                }
            } else {
                for (int a = 0; a < k; ++a) {
                    for (int b = 0; b < k; ++b) {
                        const T w = w_tap[(k - 1 - a) * k + (k - 1 - b)];
                        for (int iy = 0; iy < H; ++iy) {
                            const T* __restrict__ r =
                                dout_ch +
                                static_cast<std::size_t>(iy + a) * PDW + b;
                            T* __restrict__ o =
                                din_ch + static_cast<std::size_t>(iy) * W;
                            for (int ix = 0; ix < W; ++ix) {
                                o[ix] += w * r[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

// generic strided input gradients (bounds-checked)
template <class T>
void conv_bwd_din_strided(const Conv2dSpec& c, int H, int W, int Ho, int Wo,
                          const T* weight, const T* dout, T* din) {
    const int k = c.kernel, s = c.stride, p = c.pad;
    std::fill(din, din + static_cast<std::size_t>(c.in_ch) * H * W, T(0));
    for (int oc = 0; oc < c.out_ch; ++oc) {
        const T* dout_ch = dout + static_cast<std::size_t>(oc) * Ho * Wo;
        for (int ic = 0; ic < c.in_ch; ++ic) {
            T* din_ch = din + static_cast<std::size_t>(ic) * H * W;
            const T* w_tap =
                weight +
                (static_cast<std::size_t>(oc) * c.in_ch + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int oy_lo = p - ky <= 0 ? 0 : (p - ky + s - 1) / s;
                const int ty = H - 1 - ky + p;
                if (ty < 0) continue;
                const int oy_hi = std::min(Ho, ty / s + 1);
                for (int kx = 0; kx < k; ++kx) {
                    const T w = w_tap[ky * k + kx];
                    const int ox_lo = p - kx <= 0 ? 0 : (p - kx + s - 1) / s;
                    const int tx = W - 1 - kx + p;
                    if (tx < 0) continue;
                    const int ox_hi = std::min(Wo, tx / s + 1);
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const int iy = oy * s + ky - p;
                        const T* dout_row =
                            dout_ch + static_cast<std::size_t>(oy) * Wo;
                        T* din_row =
                            din_ch + static_cast<std::size_t>(iy) * W;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) {
                            din_row[ox * s + kx - p] += w * dout_row[ox];
                        }
                    }
                }
            }
        }
    }
}

// weight/bias gradients of one output channel (stride 1), summed over the
// batch in image order so the worker assignment never changes the result;
// reads the padded input planes built by forward
template <class T>
void conv_bwd_dw_oc_s1(const Conv2dSpec& c, int Ho, int Wo, const T* inpad,
                       int PW, const T* dout, int batch,
                       std::size_t inpad_img, std::size_t out_img, int oc,
                       T* dweight, T* dbias) {
    const int k = c.kernel;
    const std::size_t plane_in = static_cast<std::size_t>(Ho + k - 1) * PW;
    const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo;
    T bias_acc = 0;
    for (int b = 0; b < batch; ++b) {
        const T* dout_ch = dout + b * out_img + oc * plane_out;
        for (std::size_t i = 0; i < plane_out; ++i) {
            bias_acc += dout_ch[i];
        }
    }
    dbias[oc] = bias_acc;
    for (int ic = 0; ic < c.in_ch; ++ic) {
        T* dw_tap =
            dweight + (static_cast<std::size_t>(oc) * c.in_ch + ic) * k * k;
        if (k == 3) {
            T a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0,
              a21 = 0, a22 = 0;
            for (int b = 0; b < batch; ++b) {
                const T* in_ch = inpad + b * inpad_img + ic * plane_in;
                const T* dout_ch = dout + b * out_img + oc * plane_out;
                for (int oy = 0; oy < Ho; ++oy) {
                    const T* __restrict__ d =
                        dout_ch + static_cast<std::size_t>(oy) * Wo;
                    const T* __restrict__ r0 =
                        in_ch + static_cast<std::size_t>(oy) * PW;
                    const T* __restrict__ r1 = r0 + PW;
                    const T* __restrict__ r2 = r1 + PW;
#pragma omp simd reduction(+ : a00, a01, a02, a10, a11, a12, a20, a21, a22)
                    for (int ox = 0; ox < Wo; ++ox) {
                        const T g = d[ox];
                        a00 += g * r0[ox];
                        a01 += g * r0[ox + 1];
                        a02 += g * r0[ox + 2];
                        a10 += g * r1[ox];
                        a11 += g * r1[ox + 1];
                        a12 += g * r1[ox + 2];
                        a20 += g * r2[ox];
                        a21 += g * r2[ox + 1];
                        a22 += g * r2[ox + 2];
                    }
                }
            }
            dw_tap[0] = a00;
            dw_tap[1] = a01;
            dw_tap[2] = a02;
            dw_tap[3] = a10;
            dw_tap[4] = a11;
            dw_tap[5] = a12;
            dw_tap[6] = a20;
            dw_tap[7] = a21;
            dw_tap[8] = a22;
        } else {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    T acc = 0;
                    for (int b = 0; b < batch; ++b) {
                        const T* in_ch = inpad + b * inpad_img + ic * plane_in;
                        const T* dout_ch = dout + b * out_img + oc * plane_out;
                        for (int oy = 0; oy < Ho; ++oy) {
                            const T* __restrict__ r =
                                in_ch +
                                static_cast<std::size_t>(oy + ky) * PW + kx;
                            const T* __restrict__ d =
                                dout_ch + static_cast<std::size_t>(oy) * Wo;
                            for (int ox = 0; ox < Wo; ++ox) {
                                acc += d[ox] * r[ox];
                            }
                        }
                    }
                    dw_tap[ky * k + kx] = acc;
                }
            }
        }
    }
}

// generic strided weight/bias gradients of one output channel
template <class T>
void conv_bwd_dw_oc_strided(const Conv2dSpec& c, int H, int W, int Ho, int Wo,
                            const T* acts_in, const T* dout, int batch,
                            std::size_t in_img, std::size_t out_img, int oc,
                            T* dweight, T* dbias) {
    const int k = c.kernel, s = c.stride, p = c.pad;
    const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo;
    T bias_acc = 0;
    for (int b = 0; b < batch; ++b) {
        const T* dout_ch = dout + b * out_img + oc * plane_out;
        for (std::size_t i = 0; i < plane_out; ++i) {
            bias_acc += dout_ch[i];
        }
    }
    dbias[oc] = bias_acc;
    for (int ic = 0; ic < c.in_ch; ++ic) {
        const std::size_t tap =
            (static_cast<std::size_t>(oc) * c.in_ch + ic) * k * k;
        for (int ky = 0; ky < k; ++ky) {
            const int oy_lo = p - ky <= 0 ? 0 : (p - ky + s - 1) / s;
            const int ty = H - 1 - ky + p;
            if (ty < 0) continue;
            const int oy_hi = std::min(Ho, ty / s + 1);
            for (int kx = 0; kx < k; ++kx) {
                const int ox_lo = p - kx <= 0 ? 0 : (p - kx + s - 1) / s;
                const int tx = W - 1 - kx + p;
                if (tx < 0) continue;
                const int ox_hi = std::min(Wo, tx / s + 1);
                T acc = 0;
                for (int b = 0; b < batch; ++b) {
                    const T* in_ch =
                        acts_in + b * in_img + static_cast<std::size_t>(ic) *
                                                   H * W;
                    const T* dout_ch = dout + b * out_img + oc * plane_out;
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const int iy = oy * s + ky - p;
                        const T* dout_row =
                            dout_ch + static_cast<std::size_t>(oy) * Wo;
                        const T* in_row =
                            in_ch + static_cast<std::size_t>(iy) * W;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) {
                            acc += dout_row[ox] * in_row[ox * s + kx - p];
                        }
                    }
                }
                dweight[tap + ky * k + kx] = acc;
            }
        }
    }
}

template <class T>
void relu_forward_single(const T* in, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = in[i] > T(0) ? in[i] : T(0);
    }
}

template <class T>
void relu_backward_single(const T* in, const T* dout, T* din, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        din[i] = in[i] > T(0) ? dout[i] : T(0);
    }
}

// 2x2, stride 2. argmax keeps the first maximum in row-major window order.
template <class T>
void maxpool2_forward_single(int C, int H, int W, const T* in, T* out,
                             int* argmax) {
    const int Ho = H / 2, Wo = W / 2;
    for (int ch = 0; ch < C; ++ch) {
        const T* in_ch = in + static_cast<std::size_t>(ch) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const int iy = oy * 2, ix = ox * 2;
                int best = iy * W + ix;
                T bestv = in_ch[best];
                const int cand[3] = {iy * W + ix + 1, (iy + 1) * W + ix,
                                     (iy + 1) * W + ix + 1};
                for (int idx : cand) {
                    if (in_ch[idx] > bestv) {
                        bestv = in_ch[idx];
                        best = idx;
                    }
                }
                const std::size_t o =
                    (static_cast<std::size_t>(ch) * Ho + oy) * Wo + ox;
                out[o] = bestv;
                argmax[o] = ch * H * W + best;
            }
        }
    }
}

template <class T>
void maxpool2_backward_single(int C, int H, int W, const int* argmax,
                              const T* dout, T* din) {
    const std::size_t n_in = static_cast<std::size_t>(C) * H * W;
    const std::size_t n_out = n_in / 4;
    std::fill(din, din + n_in, T(0));
    for (std::size_t o = 0; o < n_out; ++o) {
        din[argmax[o]] += dout[o];
    }
}

template <class T>
void dense_forward_single(const DenseSpec& d, const T* in, const T* weight,
                          const T* bias, T* out) {
    for (int o = 0; o < d.out_dim; ++o) {
        const T* __restrict__ w_row =
            weight + static_cast<std::size_t>(o) * d.in_dim;
        T acc = bias[o];
        for (int i = 0; i < d.in_dim; ++i) {
            acc += w_row[i] * in[i];
        }
        out[o] = acc;
    }
}

template <class T>
void dense_backward_din(const DenseSpec& d, const T* weight, const T* dout,
                        T* din) {
    std::fill(din, din + d.in_dim, T(0));
    for (int o = 0; o < d.out_dim; ++o) {
        const T g = dout[o];
        const T* __restrict__ w_row =
            weight + static_cast<std::size_t>(o) * d.in_dim;
        T* __restrict__ out = din;
        for (int i = 0; i < d.in_dim; ++i) {
            out[i] += g * w_row[i];
        }
    }
}

// weight/bias gradient of one output unit, batch-ordered
template <class T>
void dense_backward_dw_row(const DenseSpec& d, const T* acts_in,
                           const T* dacts_out, int batch, std::size_t in_img,
                           std::size_t out_img, int o, T* dweight, T* dbias) {
    T* __restrict__ dw_row = dweight + static_cast<std::size_t>(o) * d.in_dim;
    std::fill(dw_row, dw_row + d.in_dim, T(0));
    T bias_acc = 0;
    for (int b = 0; b < batch; ++b) {
        const T g = dacts_out[b * out_img + o];
        bias_acc += g;
        const T* __restrict__ in = acts_in + b * in_img;
        for (int i = 0; i < d.in_dim; ++i) {
            dw_row[i] += g * in[i];
        }
    }
    dbias[o] = bias_acc;
}

// ---------- whole-net plumbing over flat buffers ----------

// Per-layer parameter pointers; null for non-learnable layers.
template <class T>
struct ParamView {
    std::vector<const T*> w;
    std::vector<const T*> b;
};

struct ParamCounts {
    std::vector<std::size_t> w;
    std::vector<std::size_t> b;
};

ParamCounts param_counts(const NetworkSpec& spec) {
    ParamCounts pc;
    pc.w.resize(spec.layers.size(), 0);
    pc.b.resize(spec.layers.size(), 0);
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& layer = spec.layers[l];
        if (layer.kind == LayerSpec::Kind::Conv2d) {
            pc.w[l] = static_cast<std::size_t>(layer.conv.out_ch) *
                      layer.conv.in_ch * layer.conv.kernel *
                      layer.conv.kernel;
            pc.b[l] = static_cast<std::size_t>(layer.conv.out_ch);
        } else if (layer.kind == LayerSpec::Kind::Dense) {
            pc.w[l] = static_cast<std::size_t>(layer.dense.out_dim) *
                      layer.dense.in_dim;
            pc.b[l] = static_cast<std::size_t>(layer.dense.out_dim);
        }
    }
    return pc;
}

ParamView<float> float_view(const NetworkSpec& spec,
                            const Parameters& params) {
    ParamView<float> v;
    v.w.resize(spec.layers.size(), nullptr);
    v.b.resize(spec.layers.size(), nullptr);
    std::size_t slot = 0;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (!spec.layers[l].learnable()) continue;
        v.w[l] = params.layers[slot].weight.data.data();
        v.b[l] = params.layers[slot].bias.data.data();
        ++slot;
    }
    return v;
}

struct LayerGeom {
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    std::size_t in_numel = 0, out_numel = 0;
    bool pad_input = false;       // stride-1 conv with pad > 0
    std::size_t padded_numel = 0; // per image, when pad_input
    int padded_w = 0;
};

std::vector<LayerGeom> layer_geometry(const NetworkSpec& spec,
                                      const std::vector<ActShape>& shapes) {
    std::vector<LayerGeom> geo(spec.layers.size());
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& in = shapes[l].dims;
        const auto& out = shapes[l + 1].dims;
        LayerGeom& g = geo[l];
        if (in.size() == 3) {
            g.in_c = in[0];
            g.in_h = in[1];
            g.in_w = in[2];
        }
        if (out.size() == 3) {
            g.out_c = out[0];
            g.out_h = out[1];
            g.out_w = out[2];
        }
        g.in_numel = static_cast<std::size_t>(shapes[l].numel());
        g.out_numel = static_cast<std::size_t>(shapes[l + 1].numel());
        const LayerSpec& layer = spec.layers[l];
        if (layer.kind == LayerSpec::Kind::Conv2d &&
            layer.conv.stride == 1 && layer.conv.pad > 0) {
            g.pad_input = true;
            g.padded_w = g.in_w + 2 * layer.conv.pad;
            g.padded_numel = static_cast<std::size_t>(g.in_c) *
                             (g.in_h + 2 * layer.conv.pad) * g.padded_w;
        }
    }
    return geo;
}

template <class T>
void alloc_acts(const NetworkSpec& spec, const std::vector<LayerGeom>& geo,
                int batch, std::vector<std::vector<T>>& acts,
                std::vector<std::vector<int>>& argmax,
                std::vector<std::vector<T>>& padded) {
    const std::size_t L = spec.layers.size();
    acts.resize(L + 1);
    argmax.assign(L, {});
    padded.assign(L, {});
    for (std::size_t l = 0; l < L; ++l) {
        acts[l + 1].resize(geo[l].out_numel * batch);
        if (spec.layers[l].kind == LayerSpec::Kind::MaxPool2) {
            argmax[l].resize(geo[l].out_numel * batch);
        }
        if (geo[l].pad_input) {
            padded[l].resize(geo[l].padded_numel * batch);
        }
    }
}

template <class T>
void forward_image(const NetworkSpec& spec, const std::vector<LayerGeom>& geo,
                   const ParamView<T>& pv, std::vector<std::vector<T>>& acts,
                   std::vector<std::vector<int>>& argmax,
                   std::vector<std::vector<T>>& padded, std::size_t image) {
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const LayerSpec& layer = spec.layers[l];
        const LayerGeom& g = geo[l];
        const T* in = acts[l].data() + image * g.in_numel;
        T* out = acts[l + 1].data() + image * g.out_numel;
        switch (layer.kind) {
            case LayerSpec::Kind::Conv2d:
                if (layer.conv.stride == 1) {
                    const T* inpad = in;
                    int pw = g.in_w;
                    if (g.pad_input) {
                        T* slot =
                            padded[l].data() + image * g.padded_numel;
                        pad_planes(in, g.in_c, g.in_h, g.in_w,
                                   layer.conv.pad, slot);
                        inpad = slot;
                        pw = g.padded_w;
                    }
                    conv_fwd_s1(layer.conv, g.out_h, g.out_w, inpad, pw,
                                pv.w[l], pv.b[l], out);
                } else {
                    conv_fwd_strided(layer.conv, g.in_h, g.in_w, g.out_h,
                                     g.out_w, in, pv.w[l], pv.b[l], out);
                }
                break;
            case LayerSpec::Kind::ReLU:
                relu_forward_single(in, out, g.in_numel);
                break;
            case LayerSpec::Kind::MaxPool2:
                maxpool2_forward_single(
                    g.in_c, g.in_h, g.in_w, in, out,
                    argmax[l].data() + image * g.out_numel);
                break;
            case LayerSpec::Kind::Flatten:
                std::copy(in, in + g.in_numel, out);
                break;
            case LayerSpec::Kind::Dense:
                dense_forward_single(layer.dense, in, pv.w[l], pv.b[l], out);
                break;
        }
    }
}

template <class T>
struct GradBuf {
    std::vector<std::vector<T>> weights;  // per layer, empty if non-learnable
    std::vector<std::vector<T>> biases;
};

template <class T>
GradBuf<T> zero_grads(const NetworkSpec& spec) {
    const ParamCounts pc = param_counts(spec);
    GradBuf<T> g;
    g.weights.resize(spec.layers.size());
    g.biases.resize(spec.layers.size());
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        g.weights[l].assign(pc.w[l], T(0));
        g.biases[l].assign(pc.b[l], T(0));
    }
    return g;
}

// Phase A of backward: activation gradients for one image. dacts[l]
// mirrors acts[l]; the gradient w.r.t. the network input (l = 0) is never
// needed and not computed. dout_pad[l] holds zero-padded copies of
// dacts[l+1] for stride-1 conv layers.
template <class T>
void backward_image_din(const NetworkSpec& spec,
                        const std::vector<LayerGeom>& geo,
                        const ParamView<T>& pv,
                        const std::vector<std::vector<T>>& acts,
                        const std::vector<std::vector<int>>& argmax,
                        std::vector<std::vector<T>>& dacts,
                        std::vector<std::vector<T>>& dout_pad,
                        std::size_t image) {
    const std::size_t L = spec.layers.size();
    for (std::size_t l = L; l-- > 1;) {
        const LayerSpec& layer = spec.layers[l];
        const LayerGeom& g = geo[l];
        const T* in = acts[l].data() + image * g.in_numel;
        const T* dout = dacts[l + 1].data() + image * g.out_numel;
        T* din = dacts[l].data() + image * g.in_numel;
        switch (layer.kind) {
            case LayerSpec::Kind::Conv2d:
                if (layer.conv.stride == 1) {
                    const int pp = layer.conv.kernel - 1 - layer.conv.pad;
                    const int pdw = g.out_w + 2 * pp;
                    const std::size_t pd_numel =
                        static_cast<std::size_t>(g.out_c) *
                        (g.out_h + 2 * pp) * pdw;
                    T* slot = dout_pad[l].data() + image * pd_numel;
                    pad_planes(dout, g.out_c, g.out_h, g.out_w, pp, slot);
                    conv_bwd_din_s1(layer.conv, g.in_h, g.in_w, slot, pdw,
                                    pv.w[l], din);
                } else {
                    conv_bwd_din_strided(layer.conv, g.in_h, g.in_w,
                                         g.out_h, g.out_w, pv.w[l], dout,
                                         din);
                }
                break;
            case LayerSpec::Kind::ReLU:
                relu_backward_single(in, dout, din, g.in_numel);
                break;
            case LayerSpec::Kind::MaxPool2:
                maxpool2_backward_single(
                    g.in_c, g.in_h, g.in_w,
                    argmax[l].data() + image * g.out_numel, dout, din);
                break;
            case LayerSpec::Kind::Flatten:
                std::copy(dout, dout + g.out_numel, din);
                break;
            case LayerSpec::Kind::Dense:
                dense_backward_din(layer.dense, pv.w[l], dout, din);
                break;
        }
    }
}

// Full batched backward: activation gradients per image (parallel over
// images), then parameter gradients per output channel / unit with the
// batch reduction in fixed image order (parallel over channels). Both
// phases are bit-identical for any worker count.
template <class T>
void backward_batch(const NetworkSpec& spec,
                    const std::vector<LayerGeom>& geo, const ParamView<T>& pv,
                    const std::vector<std::vector<T>>& acts,
                    const std::vector<std::vector<int>>& argmax,
                    const std::vector<std::vector<T>>& padded,
                    const T* dlogits, int batch, GradBuf<T>& grads) {
    const std::size_t L = spec.layers.size();
    std::vector<std::vector<T>> dacts(L + 1);
    for (std::size_t l = 1; l <= L; ++l) {
        dacts[l].resize(geo[l - 1].out_numel * batch);
    }
    std::copy(dlogits, dlogits + geo[L - 1].out_numel * batch,
              dacts[L].begin());

    std::vector<std::vector<T>> dout_pad(L);
    for (std::size_t l = 1; l < L; ++l) {
        const LayerSpec& layer = spec.layers[l];
        if (layer.kind == LayerSpec::Kind::Conv2d &&
            layer.conv.stride == 1) {
            const LayerGeom& g = geo[l];
            const int pp = layer.conv.kernel - 1 - layer.conv.pad;
            dout_pad[l].resize(static_cast<std::size_t>(g.out_c) *
                               (g.out_h + 2 * pp) * (g.out_w + 2 * pp) *
                               batch);
        }
    }

    parallel_for(static_cast<std::size_t>(batch), [&](std::size_t i) {
        backward_image_din(spec, geo, pv, acts, argmax, dacts, dout_pad, i);
    });

    for (std::size_t l = 0; l < L; ++l) {
        const LayerSpec& layer = spec.layers[l];
        if (!layer.learnable()) continue;
        const LayerGeom& g = geo[l];
        const T* dacts_out = dacts[l + 1].data();
        T* dw = grads.weights[l].data();
        T* db = grads.biases[l].data();
        if (layer.kind == LayerSpec::Kind::Conv2d) {
            if (layer.conv.stride == 1) {
                const T* inpad = g.pad_input ? padded[l].data()
                                             : acts[l].data();
                const int pw = g.pad_input ? g.padded_w : g.in_w;
                const std::size_t inpad_img =
                    g.pad_input ? g.padded_numel : g.in_numel;
                parallel_for(static_cast<std::size_t>(layer.conv.out_ch),
                             [&](std::size_t oc) {
                                 conv_bwd_dw_oc_s1(
                                     layer.conv, g.out_h, g.out_w, inpad,
                                     pw, dacts_out, batch, inpad_img,
                                     g.out_numel, static_cast<int>(oc), dw,
                                     db);
                             });
            } else {
                const T* acts_in = acts[l].data();
                parallel_for(static_cast<std::size_t>(layer.conv.out_ch),
                             [&](std::size_t oc) {
                                 conv_bwd_dw_oc_strided(
                                     layer.conv, g.in_h, g.in_w, g.out_h,
                                     g.out_w, acts_in, dacts_out, batch,
                                     g.in_numel, g.out_numel,
                                     static_cast<int>(oc), dw, db);
                             });
            }
        } else {
            const T* acts_in = acts[l].data();
            parallel_for(static_cast<std::size_t>(layer.dense.out_dim),
                         [&](std::size_t o) {
                             dense_backward_dw_row(
                                 layer.dense, acts_in, dacts_out, batch,
                                 g.in_numel, g.out_numel,
                                 static_cast<int>(o), dw, db);
                         });
        }
    }
}

template <class T>
double softmax_xent(const T* logits, int batch, int classes,
                    const int* labels, T* dlogits) {
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const T* row = logits + static_cast<std::size_t>(b) * classes;
        double maxv = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < classes; ++i) {
            maxv = std::max(maxv, static_cast<double>(row[i]));
        }
        double sum = 0.0;
        for (int i = 0; i < classes; ++i) {
            sum += std::exp(static_cast<double>(row[i]) - maxv);
        }
        const double log_sum = std::log(sum);
        total += log_sum - (static_cast<double>(row[labels[b]]) - maxv);
        if (dlogits) {
            T* drow = dlogits + static_cast<std::size_t>(b) * classes;
            for (int i = 0; i < classes; ++i) {
                const double p =
                    std::exp(static_cast<double>(row[i]) - maxv - log_sum);
                const double y = i == labels[b] ? 1.0 : 0.0;
                drow[i] = static_cast<T>((p - y) / batch);
            }
        }
    }
    return total / batch;
}

}  // namespace

// ---------- public API ----------

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(shape_numel(shape), 0.0f);
}

LayerSpec LayerSpec::conv2d(int in_ch, int out_ch, int kernel, int stride,
                            int pad) {
    LayerSpec l;
    l.kind = Kind::Conv2d;
    l.conv = {in_ch, out_ch, kernel, stride, pad};
    return l;
}

LayerSpec LayerSpec::relu() {
    LayerSpec l;
    l.kind = Kind::ReLU;
    return l;
}

LayerSpec LayerSpec::maxpool2() {
    LayerSpec l;
    l.kind = Kind::MaxPool2;
    return l;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec l;
    l.kind = Kind::Flatten;
    return l;
}

LayerSpec LayerSpec::make_dense(int in_dim, int out_dim) {
    LayerSpec l;
    l.kind = Kind::Dense;
    l.dense = {in_dim, out_dim};
    return l;
}

std::vector<ActShape> validate_spec(const NetworkSpec& spec) {
    auto fail = [](std::size_t layer, const std::string& what) {
        throw ConfigError("layer " + std::to_string(layer) + ": " + what);
    };
    if (spec.in_ch < 1 || spec.in_h < 1 || spec.in_w < 1) {
        throw ConfigError("network input dimensions must be positive");
    }
    if (spec.layers.empty()) {
        throw ConfigError("network needs at least one layer");
    }
    std::vector<ActShape> shapes;
    shapes.push_back({{spec.in_ch, spec.in_h, spec.in_w}});
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const LayerSpec& layer = spec.layers[l];
        const ActShape in = shapes.back();
        switch (layer.kind) {
            case LayerSpec::Kind::Conv2d: {
                const Conv2dSpec& c = layer.conv;
                if (in.dims.size() != 3) {
                    fail(l, "conv2d needs a spatial input");
                }
                if (in.dims[0] != c.in_ch) {
                    fail(l, "conv2d in_ch " + std::to_string(c.in_ch) +
                                " does not match input channels " +
                                std::to_string(in.dims[0]));
                }
                if (c.kernel < 1 || c.kernel % 2 == 0) {
                    fail(l, "conv2d kernel must be odd and positive");
                }
                if (c.stride < 1 || c.pad < 0 || c.out_ch < 1) {
                    fail(l, "conv2d stride/pad/out_ch out of range");
                }
                const int eh = in.dims[1] + 2 * c.pad - c.kernel;
                const int ew = in.dims[2] + 2 * c.pad - c.kernel;
                if (eh < 0 || ew < 0 || eh % c.stride != 0 ||
                    ew % c.stride != 0) {
                    fail(l, "conv2d output size is not integral");
                }
                shapes.push_back(
                    {{c.out_ch, eh / c.stride + 1, ew / c.stride + 1}});
                break;
            }
            case LayerSpec::Kind::ReLU:
                shapes.push_back(in);
                break;
            case LayerSpec::Kind::MaxPool2:
                if (in.dims.size() != 3) {
                    fail(l, "maxpool2 needs a spatial input");
                }
                if (in.dims[1] % 2 != 0 || in.dims[2] % 2 != 0 ||
                    in.dims[1] < 2 || in.dims[2] < 2) {
                    fail(l, "maxpool2 needs even spatial extents");
                }
                shapes.push_back(
                    {{in.dims[0], in.dims[1] / 2, in.dims[2] / 2}});
                break;
            case LayerSpec::Kind::Flatten:
                if (in.dims.size() != 3) {
                    fail(l, "flatten needs a spatial input");
                }
                shapes.push_back({{in.numel()}});
                break;
            case LayerSpec::Kind::Dense: {
                if (in.dims.size() != 1) {
                    fail(l, "dense needs a flat input (insert flatten)");
                }
                if (in.dims[0] != layer.dense.in_dim) {
                    fail(l, "dense in_dim " +
                                std::to_string(layer.dense.in_dim) +
                                " does not match input width " +
                                std::to_string(in.dims[0]));
                }
                if (layer.dense.out_dim < 1) {
                    fail(l, "dense out_dim < 1");
                }
                shapes.push_back({{layer.dense.out_dim}});
                break;
            }
        }
    }
    if (spec.layers.back().kind != LayerSpec::Kind::Dense) {
        throw ConfigError("final layer must be dense (the logits)");
    }
    return shapes;
}

int output_classes(const NetworkSpec& spec) {
    validate_spec(spec);
    return spec.layers.back().dense.out_dim;
}

Parameters init_params(const NetworkSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    Parameters params;
    RandomStream rng(seed);
    std::size_t learnable = 0;
    for (const auto& layer : spec.layers) {
        learnable += layer.learnable() ? 1 : 0;
    }
    std::size_t slot = 0;
    for (const auto& layer : spec.layers) {
        if (!layer.learnable()) continue;
        ParamTensors pt;
        int fan_in = 0;
        if (layer.kind == LayerSpec::Kind::Conv2d) {
            const auto& c = layer.conv;
            fan_in = c.in_ch * c.kernel * c.kernel;
            pt.weight = Tensor({c.out_ch, c.in_ch, c.kernel, c.kernel});
            pt.bias = Tensor({c.out_ch});
        } else {
            const auto& d = layer.dense;
            fan_in = d.in_dim;
            pt.weight = Tensor({d.out_dim, d.in_dim});
            pt.bias = Tensor({d.out_dim});
        }
        ++slot;
        if (slot == learnable) {
            // classifier head starts at zero: the first prediction is
            // exactly uniform and no init-confidence has to be unlearned
            params.layers.push_back(std::move(pt));
            continue;
        }
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (auto& w : pt.weight.data) {
            w = static_cast<float>(rng.gaussian() * std_dev);
        }
        params.layers.push_back(std::move(pt));
    }
    return params;
}

Tensor forward(const NetworkSpec& spec, const Parameters& params,
               const Tensor& batch, ForwardCache* cache) {
    const auto shapes = validate_spec(spec);
    const auto geo = layer_geometry(spec, shapes);
    if (batch.shape.size() != 4 || batch.shape[1] != spec.in_ch ||
        batch.shape[2] != spec.in_h || batch.shape[3] != spec.in_w) {
        throw ConfigError("layer 0: batch shape does not match network input");
    }
    const int B = batch.shape[0];
    if (B < 1) {
        throw ConfigError("layer 0: empty batch");
    }
    std::size_t learnable = 0;
    for (const auto& l : spec.layers) learnable += l.learnable() ? 1 : 0;
    if (params.layers.size() != learnable) {
        throw ConfigError("parameter count does not match the spec");
    }

    const auto pv = float_view(spec, params);
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.batch = B;
    alloc_acts(spec, geo, B, c.acts, c.pool_argmax, c.conv_padded);
    c.acts[0] = batch.data;

    parallel_for(static_cast<std::size_t>(B), [&](std::size_t i) {
        forward_image(spec, geo, pv, c.acts, c.pool_argmax, c.conv_padded,
                      i);
    });

    Tensor logits({B, static_cast<int>(shapes.back().dims[0])});
    logits.data = c.acts.back();
    return logits;
}

LossResult loss_softmax_xent(const Tensor& logits,
                             const std::vector<int>& labels) {
    if (logits.shape.size() != 2) {
        throw ConfigError("logits must be [batch, classes]");
    }
    const int B = logits.shape[0];
    const int C = logits.shape[1];
    if (static_cast<int>(labels.size()) != B) {
        throw ConfigError("label count does not match batch size");
    }
    for (int y : labels) {
        if (y < 0 || y >= C) {
            throw ConfigError("label " + std::to_string(y) +
                              " out of range 0.." + std::to_string(C - 1));
        }
    }
    LossResult r;
    r.dlogits = Tensor({B, C});
    r.loss = softmax_xent(logits.data.data(), B, C, labels.data(),
                          r.dlogits.data.data());
    return r;
}

Gradients backward(const NetworkSpec& spec, const Parameters& params,
                   const ForwardCache& cache, const Tensor& dlogits) {
    const auto shapes = validate_spec(spec);
    const auto geo = layer_geometry(spec, shapes);
    const int B = cache.batch;
    if (cache.acts.size() != spec.layers.size() + 1 || B < 1 ||
        cache.acts[0].size() != geo[0].in_numel * B) {
        throw ConfigError("forward cache does not match the spec");
    }
    const int C = shapes.back().dims[0];
    if (dlogits.shape.size() != 2 || dlogits.shape[0] != B ||
        dlogits.shape[1] != C) {
        throw ConfigError("dlogits shape does not match the forward cache");
    }

    const auto pv = float_view(spec, params);
    GradBuf<float> buf = zero_grads<float>(spec);
    backward_batch(spec, geo, pv, cache.acts, cache.pool_argmax,
                   cache.conv_padded, dlogits.data.data(), B, buf);

    Gradients grads;
    std::size_t slot = 0;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (!spec.layers[l].learnable()) continue;
        ParamTensors g;
        g.weight = Tensor(params.layers[slot].weight.shape);
        g.bias = Tensor(params.layers[slot].bias.shape);
        g.weight.data = std::move(buf.weights[l]);
        g.bias.data = std::move(buf.biases[l]);
        grads.layers.push_back(std::move(g));
        ++slot;
    }
    return grads;
}

std::vector<float> softmax_row(std::span<const float> logits) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (float v : logits) maxv = std::max(maxv, static_cast<double>(v));
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - maxv);
    std::vector<float> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = static_cast<float>(
            std::exp(static_cast<double>(logits[i]) - maxv) / sum);
    }
    return p;
}

std::vector<std::pair<int, float>> predict_topk(
    std::span<const float> logits_row, int k) {
    const int C = static_cast<int>(logits_row.size());
    if (k < 1 || k > C) {
        throw ConfigError("top-k: k must be in 1.." + std::to_string(C));
    }
    auto probs = softmax_row(logits_row);
    std::vector<int> order(C);
    for (int i = 0; i < C; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    std::vector<std::pair<int, float>> top;
    top.reserve(k);
    for (int i = 0; i < k; ++i) top.emplace_back(order[i], probs[order[i]]);
    return top;
}

namespace {

// Smallest |pre-activation| over ReLU inputs and smallest contested pooling
// margin. Ties among clipped zeros are fine: the ReLU margin keeps them
// pinned at zero under the probe perturbations.
template <class T>
double kink_margin(const NetworkSpec& spec, const std::vector<LayerGeom>& geo,
                   const std::vector<std::vector<T>>& acts, int batch) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (spec.layers[l].kind == LayerSpec::Kind::ReLU) {
            for (const T& v : acts[l]) {
                margin = std::min(margin, std::abs(static_cast<double>(v)));
            }
        }
        if (spec.layers[l].kind == LayerSpec::Kind::MaxPool2) {
            const LayerGeom& g = geo[l];
            for (int img = 0; img < batch; ++img) {
                const T* in = acts[l].data() + img * g.in_numel;
                for (int ch = 0; ch < g.in_c; ++ch) {
                    const T* in_ch =
                        in + static_cast<std::size_t>(ch) * g.in_h * g.in_w;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            T v[4] = {
                                in_ch[(oy * 2) * g.in_w + ox * 2],
                                in_ch[(oy * 2) * g.in_w + ox * 2 + 1],
                                in_ch[(oy * 2 + 1) * g.in_w + ox * 2],
                                in_ch[(oy * 2 + 1) * g.in_w + ox * 2 + 1]};
                            std::sort(v, v + 4);
                            if (v[2] > T(0)) {
                                margin = std::min(
                                    margin,
                                    static_cast<double>(v[3]) -
                                        static_cast<double>(v[2]));
                            }
                        }
                    }
                }
            }
        }
    }
    return margin;
}

// The analytic side runs in T (float checks the production backward);
// the finite-difference oracle always runs in double so the comparison is
// limited by the backward's own accumulation error, not by cancellation in
// the differenced losses.
template <class T>
double grad_check_impl(const NetworkSpec& spec, std::uint64_t seed,
                       double eps) {
    const auto shapes = validate_spec(spec);
    const auto geo = layer_geometry(spec, shapes);
    const int C = shapes.back().dims[0];
    const int B = 2;
    const std::size_t in_numel = geo[0].in_numel;

    // Harness-local parameters: He-normal everywhere, including the
    // classifier head (the production zero-head init would block gradient
    // flow to earlier layers and make their checks vacuous). Stored in T
    // (analytic side) and double (oracle side), bit-equal copies.
    const ParamCounts pc = param_counts(spec);
    std::vector<std::vector<T>> wstore(spec.layers.size());
    std::vector<std::vector<T>> bstore(spec.layers.size());
    std::vector<std::vector<double>> wstore_d(spec.layers.size());
    std::vector<std::vector<double>> bstore_d(spec.layers.size());
    {
        RandomStream rng(seed);
        for (std::size_t l = 0; l < spec.layers.size(); ++l) {
            const LayerSpec& layer = spec.layers[l];
            if (!layer.learnable()) continue;
            const int fan_in =
                layer.kind == LayerSpec::Kind::Conv2d
                    ? layer.conv.in_ch * layer.conv.kernel * layer.conv.kernel
                    : layer.dense.in_dim;
            const double std_dev = std::sqrt(2.0 / fan_in);
            wstore[l].resize(pc.w[l]);
            wstore_d[l].resize(pc.w[l]);
            for (std::size_t j = 0; j < pc.w[l]; ++j) {
                const float v =
                    static_cast<float>(rng.gaussian() * std_dev);
                wstore[l][j] = static_cast<T>(v);
                wstore_d[l][j] = v;
            }
            bstore[l].assign(pc.b[l], T(0));
            bstore_d[l].assign(pc.b[l], 0.0);
        }
    }
    ParamView<T> pv;
    ParamView<double> pvd;
    pv.w.resize(spec.layers.size(), nullptr);
    pv.b.resize(spec.layers.size(), nullptr);
    pvd.w.resize(spec.layers.size(), nullptr);
    pvd.b.resize(spec.layers.size(), nullptr);
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        pv.w[l] = wstore[l].data();
        pv.b[l] = bstore[l].data();
        pvd.w[l] = wstore_d[l].data();
        pvd.b[l] = bstore_d[l].data();
    }

    // probe batch, regenerated until clear of ReLU/pool kinks
    const double guard = std::max(4.0 * eps, 1e-3);
    std::vector<double> input;
    std::vector<int> labels;
    std::vector<double> best_input;
    std::vector<int> best_labels;
    double best_margin = -1.0;
    std::vector<std::vector<double>> dacts;
    std::vector<std::vector<int>> dargmax;
    std::vector<std::vector<double>> dpadded;
    for (int attempt = 0; attempt < 32; ++attempt) {
        RandomStream rng(derive_seed(seed, 100 + attempt));
        input.resize(in_numel * B);
        for (auto& v : input) {
            v = static_cast<double>(static_cast<float>(rng.unit()));
        }
        labels.resize(B);
        for (auto& y : labels) y = static_cast<int>(rng.below(C));

        alloc_acts(spec, geo, B, dacts, dargmax, dpadded);
        dacts[0] = input;
        for (int i = 0; i < B; ++i) {
            forward_image(spec, geo, pvd, dacts, dargmax, dpadded, i);
        }
        const double margin = kink_margin(spec, geo, dacts, B);
        if (margin > best_margin) {
            best_margin = margin;
            best_input = input;
            best_labels = labels;
        }
        if (margin > guard) break;
    }
    input = best_input;
    labels = best_labels;

    // analytic gradients in T, through the production batched backward
    std::vector<std::vector<T>> acts;
    std::vector<std::vector<int>> argmax;
    std::vector<std::vector<T>> padded;
    alloc_acts(spec, geo, B, acts, argmax, padded);
    acts[0].assign(input.begin(), input.end());
    for (int i = 0; i < B; ++i) {
        forward_image(spec, geo, pv, acts, argmax, padded, i);
    }
    std::vector<T> dlogits(static_cast<std::size_t>(B) * C);
    softmax_xent(acts.back().data(), B, C, labels.data(), dlogits.data());
    GradBuf<T> analytic = zero_grads<T>(spec);
    backward_batch(spec, geo, pv, acts, argmax, padded, dlogits.data(), B,
                   analytic);

    // double-precision central differences over every parameter
    auto eval_loss = [&]() {
        alloc_acts(spec, geo, B, dacts, dargmax, dpadded);
        dacts[0] = input;
        for (int i = 0; i < B; ++i) {
            forward_image(spec, geo, pvd, dacts, dargmax, dpadded, i);
        }
        return softmax_xent(dacts.back().data(), B, C, labels.data(),
                            static_cast<double*>(nullptr));
    };
    double max_rel = 0.0;
    auto check_param = [&](double& theta, double a) {
        const double original = theta;
        theta = original + eps;
        const double loss_hi = eval_loss();
        theta = original - eps;
        const double loss_lo = eval_loss();
        theta = original;
        const double n = (loss_hi - loss_lo) / (2.0 * eps);
        const double rel =
            std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
        max_rel = std::max(max_rel, rel);
    };
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        for (std::size_t j = 0; j < wstore_d[l].size(); ++j) {
            check_param(wstore_d[l][j],
                        static_cast<double>(analytic.weights[l][j]));
        }
        for (std::size_t j = 0; j < bstore_d[l].size(); ++j) {
            check_param(bstore_d[l][j],
                        static_cast<double>(analytic.biases[l][j]));
        }
    }
    return max_rel;
}

}  // namespace

double grad_check(const NetworkSpec& spec, std::uint64_t seed, double eps,
                  Precision mode) {
    if (!(eps > 0)) {
        throw ConfigError("grad_check: eps must be positive");
    }
    return mode == Precision::f32 ? grad_check_impl<float>(spec, seed, eps)
                                  : grad_check_impl<double>(spec, seed, eps);
}

NetworkSpec small_cnn(int input_hw, int classes) {
    if (input_hw < 8 || input_hw % 8 != 0) {
        throw ConfigError(
            "small_cnn input size must be a positive multiple of 8");
    }
    if (classes < 2) {
        throw ConfigError("small_cnn needs at least two classes");
    }
    const int tail = input_hw / 8;
    NetworkSpec spec;
    spec.in_ch = 1;
    spec.in_h = input_hw;
    spec.in_w = input_hw;
    spec.layers = {
        LayerSpec::conv2d(1, 16, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::maxpool2(),
        LayerSpec::conv2d(16, 32, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::maxpool2(),
        LayerSpec::conv2d(32, 64, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::maxpool2(),
        LayerSpec::flatten(),
        LayerSpec::make_dense(64 * tail * tail, 128),
        LayerSpec::relu(),
        LayerSpec::make_dense(128, classes),
    };
    return spec;
}

NetworkSpec toy_spec(int input_hw, int classes) {
    if (input_hw < 2 || input_hw % 2 != 0) {
        throw ConfigError("toy_spec input size must be a positive even "
                          "number");
    }
    NetworkSpec spec;
    spec.in_ch = 1;
    spec.in_h = input_hw;
    spec.in_w = input_hw;
    const int half = input_hw / 2;
    spec.layers = {
        LayerSpec::conv2d(1, 2, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::maxpool2(),
        LayerSpec::flatten(),
        LayerSpec::make_dense(2 * half * half, classes),
    };
    return spec;
}

std::string spec_to_json(const NetworkSpec& spec) {
    json layers = json::array();
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerSpec::Kind::Conv2d:
                layers.push_back({{"type", "conv2d"},
                                  {"in_ch", l.conv.in_ch},
                                  {"out_ch", l.conv.out_ch},
                                  {"kernel", l.conv.kernel},
                                  {"stride", l.conv.stride},
                                  {"pad", l.conv.pad}});
                break;
            case LayerSpec::Kind::ReLU:
                layers.push_back({{"type", "relu"}});
                break;
            case LayerSpec::Kind::MaxPool2:
                layers.push_back({{"type", "maxpool2"}});
                break;
            case LayerSpec::Kind::Flatten:
                layers.push_back({{"type", "flatten"}});
                break;
            case LayerSpec::Kind::Dense:
                layers.push_back({{"type", "dense"},
                                  {"in_dim", l.dense.in_dim},
                                  {"out_dim", l.dense.out_dim}});
                break;
        }
    }
    json doc = {{"input", {spec.in_ch, spec.in_h, spec.in_w}},
                {"layers", layers}};
    return doc.dump();
}

NetworkSpec spec_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        NetworkSpec spec;
        spec.in_ch = doc.at("input").at(0);
        spec.in_h = doc.at("input").at(1);
        spec.in_w = doc.at("input").at(2);
        for (const auto& l : doc.at("layers")) {
            const std::string type = l.at("type");
            if (type == "conv2d") {
                spec.layers.push_back(LayerSpec::conv2d(
                    l.at("in_ch"), l.at("out_ch"), l.at("kernel"),
                    l.at("stride"), l.at("pad")));
            } else if (type == "relu") {
                spec.layers.push_back(LayerSpec::relu());
            } else if (type == "maxpool2") {
                spec.layers.push_back(LayerSpec::maxpool2());
            } else if (type == "flatten") {
                spec.layers.push_back(LayerSpec::flatten());
            } else if (type == "dense") {
                spec.layers.push_back(
                    LayerSpec::make_dense(l.at("in_dim"), l.at("out_dim")));
            } else {
                throw FormatError(FormatError::Defect::schema,
                                  "unknown layer type: " + type);
            }
        }
        validate_spec(spec);
        return spec;
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Defect::schema,
                          std::string("network spec schema mismatch: ") +
                              e.what());
    }
}

}  // namespace addlab
