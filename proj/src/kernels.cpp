#include "attmetnet/kernels.hpp"

#include <cmath>
#include <vector>

namespace attmetnet::kernels {

namespace {
constexpr long kParGrain = 8192;  // skip thread spawn below this many flops-ish
constexpr long kSumBlock = 4096;
}  // namespace

void conv2d_forward(const double* x, int n, int cin, int h, int w,
                    const double* k, int cout, int kh, int kw,
                    const double* bias, int stride, int pad,
                    double* y, int ho, int wo) {
    const long work = static_cast<long>(n) * cout * ho * wo * cin * kh * kw;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParGrain)
    for (int in = 0; in < n; ++in) {
        for (int oc = 0; oc < cout; ++oc) {
            const double b = bias ? bias[oc] : 0.0;
            double* yp = y + (static_cast<long>(in) * cout + oc) * ho * wo;
            for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow) {
                    double acc = b;
                    for (int ic = 0; ic < cin; ++ic) {
                        const double* xp = x + (static_cast<long>(in) * cin + ic) * h * w;
                        const double* kp = k + (static_cast<long>(oc) * cin + ic) * kh * kw;
                        for (int r = 0; r < kh; ++r) {
                            const int ih = oh * stride - pad + r;
                            if (ih < 0 || ih >= h) continue;
                            const double* xrow = xp + static_cast<long>(ih) * w;
                            const double* krow = kp + static_cast<long>(r) * kw;
                            for (int s = 0; s < kw; ++s) {
                                const int iw = ow * stride - pad + s;
                                if (iw < 0 || iw >= w) continue;
                                acc += xrow[iw] * krow[s];
                            }
                        }
                    }
                    yp[static_cast<long>(oh) * wo + ow] = acc;
                }
            }
        }
    }
}

void conv2d_backward_input(const double* dy, int n, int cout, int ho, int wo,
                           const double* k, int cin, int kh, int kw,
                           int stride, int pad, double* dx, int h, int w) {
    const long work = static_cast<long>(n) * cin * h * w * cout * kh * kw;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParGrain)
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < cin; ++ic) {
            double* dxp = dx + (static_cast<long>(in) * cin + ic) * h * w;
            for (int ih = 0; ih < h; ++ih) {
                for (int iw = 0; iw < w; ++iw) {
                    double acc = 0.0;
                    for (int oc = 0; oc < cout; ++oc) {
                        const double* dyp = dy + (static_cast<long>(in) * cout + oc) * ho * wo;
                        const double* kp = k + (static_cast<long>(oc) * cin + ic) * kh * kw;
                        for (int r = 0; r < kh; ++r) {
                            const int t = ih + pad - r;
                            if (t < 0 || t % stride != 0) continue;
                            const int oh = t / stride;
                            if (oh >= ho) continue;
                            for (int s = 0; s < kw; ++s) {
                                const int u = iw + pad - s;
                                if (u < 0 || u % stride != 0) continue;
                                const int ow = u / stride;
                                if (ow >= wo) continue;
                                acc += kp[static_cast<long>(r) * kw + s] *
                                       dyp[static_cast<long>(oh) * wo + ow];
                            }
                        }
                    }
                    dxp[static_cast<long>(ih) * w + iw] += acc;
                }
            }
        }
    }
}

void conv2d_backward_kernel(const double* dy, int n, int cout, int ho, int wo,
                            const double* x, int cin, int h, int w,
                            int kh, int kw, int stride, int pad, double* dk) {
    const long work = static_cast<long>(cout) * cin * kh * kw * n * ho * wo;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParGrain)
    for (int oc = 0; oc < cout; ++oc) {
        for (int ic = 0; ic < cin; ++ic) {
            double* dkp = dk + (static_cast<long>(oc) * cin + ic) * kh * kw;
            for (int r = 0; r < kh; ++r) {
                for (int s = 0; s < kw; ++s) {
                    double acc = 0.0;
                    for (int in = 0; in < n; ++in) {
                        const double* xp = x + (static_cast<long>(in) * cin + ic) * h * w;
                        const double* dyp = dy + (static_cast<long>(in) * cout + oc) * ho * wo;
                        for (int oh = 0; oh < ho; ++oh) {
                            const int ih = oh * stride - pad + r;
                            if (ih < 0 || ih >= h) continue;
                            const double* xrow = xp + static_cast<long>(ih) * w;
                            const double* dyrow = dyp + static_cast<long>(oh) * wo;
                            for (int ow = 0; ow < wo; ++ow) {
                                const int iw = ow * stride - pad + s;
                                if (iw < 0 || iw >= w) continue;
                                acc += xrow[iw] * dyrow[ow];
                            }
                        }
                    }
                    dkp[static_cast<long>(r) * kw + s] += acc;
                }
            }
        }
    }
}

void conv2d_backward_bias(const double* dy, int n, int cout, int ho, int wo, double* db) {
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * cout * ho * wo > kParGrain)
    for (int oc = 0; oc < cout; ++oc) {
        double acc = 0.0;
        for (int in = 0; in < n; ++in) {
            const double* dyp = dy + (static_cast<long>(in) * cout + oc) * ho * wo;
            for (long i = 0; i < static_cast<long>(ho) * wo; ++i) acc += dyp[i];
        }
        db[oc] += acc;
    }
}

void conv_transpose2d_forward(const double* x, int n, int cin, int h, int w,
                              const double* k, int cout, int kh, int kw,
                              int stride, double* y, int ho, int wo) {
    const long work = static_cast<long>(n) * cout * ho * wo * cin;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParGrain)
    for (int in = 0; in < n; ++in) {
        for (int oc = 0; oc < cout; ++oc) {
            double* yp = y + (static_cast<long>(in) * cout + oc) * ho * wo;
            // valid taps per output row/column, computed once instead of per channel;
            // the accumulation order (channel-major, taps in kernel order) is unchanged
            std::vector<int> rtap(kh), rsrc(kh), stap(kw), ssrc(kw);
            for (int oh = 0; oh < ho; ++oh) {
                int nr = 0;
                for (int r = 0; r < kh; ++r) {
                    const int t = oh - r;
                    if (t < 0 || t % stride != 0) continue;
                    const int ih = t / stride;
                    if (ih >= h) continue;
                    rtap[nr] = r;
                    rsrc[nr] = ih;
                    ++nr;
                }
                for (int ow = 0; ow < wo; ++ow) {
                    int ns = 0;
                    for (int s = 0; s < kw; ++s) {
                        const int u = ow - s;
                        if (u < 0 || u % stride != 0) continue;
                        const int iw = u / stride;
                        if (iw >= w) continue;
                        stap[ns] = s;
                        ssrc[ns] = iw;
                        ++ns;
                    }
                    double acc = 0.0;
                    for (int ic = 0; ic < cin; ++ic) {
                        const double* xp = x + (static_cast<long>(in) * cin + ic) * h * w;
                        const double* kp = k + (static_cast<long>(ic) * cout + oc) * kh * kw;
                        for (int a = 0; a < nr; ++a) {
                            const double* xrow = xp + static_cast<long>(rsrc[a]) * w;
                            const double* krow = kp + static_cast<long>(rtap[a]) * kw;
                            for (int b = 0; b < ns; ++b) {
                                acc += xrow[ssrc[b]] * krow[stap[b]];
                            }
                        }
                    }
                    yp[static_cast<long>(oh) * wo + ow] = acc;
                }
            }
        }
    }
}

void conv_transpose2d_backward_input(const double* dy, int n, int cout, int ho, int wo,
                                     const double* k, int cin, int kh, int kw,
                                     int stride, double* dx, int h, int w) {
    const long work = static_cast<long>(n) * cin * h * w * cout * kh * kw;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParGrain)
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < cin; ++ic) {
            double* dxp = dx + (static_cast<long>(in) * cin + ic) * h * w;
            for (int ih = 0; ih < h; ++ih) {
                for (int iw = 0; iw < w; ++iw) {
                    double acc = 0.0;
                    for (int oc = 0; oc < cout; ++oc) {
                        const double* dyp = dy + (static_cast<long>(in) * cout + oc) * ho * wo;
                        const double* kp = k + (static_cast<long>(ic) * cout + oc) * kh * kw;
                        for (int r = 0; r < kh; ++r) {
                            const long oh = static_cast<long>(ih) * stride + r;
                            for (int s = 0; s < kw; ++s) {
                                const long ow = static_cast<long>(iw) * stride + s;
                                acc += kp[static_cast<long>(r) * kw + s] * dyp[oh * wo + ow];
                            }
                        }
                    }
                    dxp[static_cast<long>(ih) * w + iw] += acc;
                }
            }
        }
    }
}

void conv_transpose2d_backward_kernel(const double* dy, int n, int cout, int ho, int wo,
                                      const double* x, int cin, int h, int w,
                                      int kh, int kw, int stride, double* dk) {
    const long work = static_cast<long>(cin) * cout * kh * kw * n * h * w;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParGrain)
    for (int ic = 0; ic < cin; ++ic) {
        for (int oc = 0; oc < cout; ++oc) {
            double* dkp = dk + (static_cast<long>(ic) * cout + oc) * kh * kw;
            for (int r = 0; r < kh; ++r) {
                for (int s = 0; s < kw; ++s) {
                    double acc = 0.0;
                    for (int in = 0; in < n; ++in) {
                        const double* xp = x + (static_cast<long>(in) * cin + ic) * h * w;
                        const double* dyp = dy + (static_cast<long>(in) * cout + oc) * ho * wo;
                        for (int ih = 0; ih < h; ++ih) {
                            const long oh = static_cast<long>(ih) * stride + r;
                            const double* xrow = xp + static_cast<long>(ih) * w;
                            const double* dyrow = dyp + oh * wo;
                            for (int iw = 0; iw < w; ++iw) {
                                acc += xrow[iw] * dyrow[static_cast<long>(iw) * stride + s];
                            }
                        }
                    }
                    dkp[static_cast<long>(r) * kw + s] += acc;
                }
            }
        }
    }
}

void maxpool2d_forward(const double* x, int n, int c, int h, int w, int k,
                       double* y, std::int32_t* argmax) {
    const int ho = h / k;
    const int wo = w / k;
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(n) * c * h * w > kParGrain)
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            const long pbase = (static_cast<long>(in) * c + ic) * h * w;
            const double* xp = x + pbase;
            const long obase = (static_cast<long>(in) * c + ic) * ho * wo;
            for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow) {
                    double best = 0.0;
                    long besti = -1;
                    for (int r = 0; r < k; ++r) {
                        const long ih = static_cast<long>(oh) * k + r;
                        for (int s = 0; s < k; ++s) {
                            const long iw = static_cast<long>(ow) * k + s;
                            const double v = xp[ih * w + iw];
                            if (besti < 0 || v > best) {
                                best = v;
                                besti = ih * w + iw;
                            }
                        }
                    }
                    y[obase + static_cast<long>(oh) * wo + ow] = best;
                    argmax[obase + static_cast<long>(oh) * wo + ow] =
                        static_cast<std::int32_t>(pbase + besti);
                }
            }
        }
    }
}

void maxpool2d_backward(const double* dy, int n, int c, int ho, int wo,
                        const std::int32_t* argmax, double* dx) {
    // pool windows are disjoint, so argmax targets never collide across outputs
    const long total = static_cast<long>(n) * c * ho * wo;
#pragma omp parallel for schedule(static) if (total > kParGrain)
    for (long i = 0; i < total; ++i) dx[argmax[i]] += dy[i];
}

void batchnorm_forward(const double* x, int n, int c, int h, int w,
                       const double* mean, const double* invstd,
                       const double* gamma, const double* beta,
                       double* y, double* xhat) {
    const long hw = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * c * hw > kParGrain)
    for (int ic = 0; ic < c; ++ic) {
        const double m = mean[ic];
        const double is = invstd[ic];
        const double g = gamma[ic];
        const double b = beta[ic];
        for (int in = 0; in < n; ++in) {
            const long off = (static_cast<long>(in) * c + ic) * hw;
            for (long i = 0; i < hw; ++i) {
                const double xh = (x[off + i] - m) * is;
                if (xhat) xhat[off + i] = xh;
                y[off + i] = g * xh + b;
            }
        }
    }
}

void channel_mean_var(const double* x, int n, int c, int h, int w,
                      double* mean, double* var) {
    const long hw = static_cast<long>(h) * w;
    const double inv_m = 1.0 / (static_cast<double>(n) * hw);
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * c * hw > kParGrain)
    for (int ic = 0; ic < c; ++ic) {
        double s = 0.0;
        for (int in = 0; in < n; ++in) {
            const long off = (static_cast<long>(in) * c + ic) * hw;
            for (long i = 0; i < hw; ++i) s += x[off + i];
        }
        const double m = s * inv_m;
        double v = 0.0;
        for (int in = 0; in < n; ++in) {
            const long off = (static_cast<long>(in) * c + ic) * hw;
            for (long i = 0; i < hw; ++i) {
                const double d = x[off + i] - m;
                v += d * d;
            }
        }
        mean[ic] = m;
        var[ic] = v * inv_m;
    }
}

void batchnorm_backward(const double* dy, const double* xhat,
                        int n, int c, int h, int w,
                        const double* gamma, const double* invstd, bool stats_fixed,
                        double* dx, double* dgamma, double* dbeta) {
    const long hw = static_cast<long>(h) * w;
    const double m = static_cast<double>(n) * hw;
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * c * hw > kParGrain)
    for (int ic = 0; ic < c; ++ic) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int in = 0; in < n; ++in) {
            const long off = (static_cast<long>(in) * c + ic) * hw;
            for (long i = 0; i < hw; ++i) {
                sum_dy += dy[off + i];
                sum_dy_xhat += dy[off + i] * xhat[off + i];
            }
        }
        dgamma[ic] += sum_dy_xhat;
        dbeta[ic] += sum_dy;
        const double g_is = gamma[ic] * invstd[ic];
        if (stats_fixed) {
            for (int in = 0; in < n; ++in) {
                const long off = (static_cast<long>(in) * c + ic) * hw;
                for (long i = 0; i < hw; ++i) dx[off + i] += g_is * dy[off + i];
            }
        } else {
            const double mean_dy = sum_dy / m;
            const double mean_dy_xhat = sum_dy_xhat / m;
            for (int in = 0; in < n; ++in) {
                const long off = (static_cast<long>(in) * c + ic) * hw;
                for (long i = 0; i < hw; ++i) {
                    dx[off + i] += g_is * (dy[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
                }
            }
        }
    }
}

void relu_forward(const double* x, double* y, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* dy, const double* x, double* dx, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
    }
}

void sigmoid_forward(const double* x, double* y, long n) {
    // clamp keeps outputs strictly inside (0,1) even where exp saturates
    constexpr double kLo = 2.2250738585072014e-308;
    constexpr double kHi = 0x1.fffffffffffffp-1;
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) {
        const double v = x[i];
        double s;
        if (v >= 0.0) {
            s = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            s = e / (1.0 + e);
        }
        y[i] = s < kLo ? kLo : (s > kHi ? kHi : s);
    }
}

void sigmoid_backward(const double* dy, const double* y, double* dx, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
}

void add_forward(const double* a, const double* b, double* y, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void mul_forward(const double* a, const double* b, double* y, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void mul_backward(const double* dy, const double* a, const double* b,
                  double* da, double* db, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) {
        if (da) da[i] += dy[i] * b[i];
        if (db) db[i] += dy[i] * a[i];
    }
}

void scale_forward(const double* x, double s, double* y, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) y[i] = x[i] * s;
}

void mul_bcast_forward(const double* alpha, const double* x,
                       int n, int c, long hw, double* y) {
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(n) * c * hw > kParGrain)
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            const double* ap = alpha + static_cast<long>(in) * hw;
            const double* xp = x + (static_cast<long>(in) * c + ic) * hw;
            double* yp = y + (static_cast<long>(in) * c + ic) * hw;
            for (long i = 0; i < hw; ++i) yp[i] = ap[i] * xp[i];
        }
    }
}

void mul_bcast_backward(const double* dy, const double* alpha, const double* x,
                        int n, int c, long hw, double* dalpha, double* dx) {
    if (dx) {
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(n) * c * hw > kParGrain)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                const double* ap = alpha + static_cast<long>(in) * hw;
                const double* dyp = dy + (static_cast<long>(in) * c + ic) * hw;
                double* dxp = dx + (static_cast<long>(in) * c + ic) * hw;
                for (long i = 0; i < hw; ++i) dxp[i] += dyp[i] * ap[i];
            }
        }
    }
    if (dalpha) {
        // reduce over channels in fixed order
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * c * hw > kParGrain)
        for (int in = 0; in < n; ++in) {
            double* dap = dalpha + static_cast<long>(in) * hw;
            for (int ic = 0; ic < c; ++ic) {
                const double* dyp = dy + (static_cast<long>(in) * c + ic) * hw;
                const double* xp = x + (static_cast<long>(in) * c + ic) * hw;
                for (long i = 0; i < hw; ++i) dap[i] += dyp[i] * xp[i];
            }
        }
    }
}

void concat2_forward(const double* a, int ca, const double* b, int cb,
                     int n, long hw, double* y) {
    const long ya = static_cast<long>(ca) * hw;
    const long yb = static_cast<long>(cb) * hw;
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * (ya + yb) > kParGrain)
    for (int in = 0; in < n; ++in) {
        double* yp = y + static_cast<long>(in) * (ya + yb);
        const double* ap = a + static_cast<long>(in) * ya;
        const double* bp = b + static_cast<long>(in) * yb;
        for (long i = 0; i < ya; ++i) yp[i] = ap[i];
        for (long i = 0; i < yb; ++i) yp[ya + i] = bp[i];
    }
}

void concat2_backward(const double* dy, int ca, int cb, int n, long hw,
                      double* da, double* db) {
    const long ya = static_cast<long>(ca) * hw;
    const long yb = static_cast<long>(cb) * hw;
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * (ya + yb) > kParGrain)
    for (int in = 0; in < n; ++in) {
        const double* dyp = dy + static_cast<long>(in) * (ya + yb);
        if (da) {
            double* dap = da + static_cast<long>(in) * ya;
            for (long i = 0; i < ya; ++i) dap[i] += dyp[i];
        }
        if (db) {
            double* dbp = db + static_cast<long>(in) * yb;
            for (long i = 0; i < yb; ++i) dbp[i] += dyp[ya + i];
        }
    }
}

void accumulate(double* dst, const double* src, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) dst[i] += src[i];
}

void accumulate_scaled(double* dst, const double* src, double s, long n) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (long i = 0; i < n; ++i) dst[i] += src[i] * s;
}

double sum_all(const double* x, long n) {
    const long nblocks = (n + kSumBlock - 1) / kSumBlock;
    if (nblocks <= 1) {
        double s = 0.0;
        for (long i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::vector<double> partial(static_cast<std::size_t>(nblocks), 0.0);
#pragma omp parallel for schedule(static)
    for (long b = 0; b < nblocks; ++b) {
        const long lo = b * kSumBlock;
        const long hi = lo + kSumBlock < n ? lo + kSumBlock : n;
        double s = 0.0;
        for (long i = lo; i < hi; ++i) s += x[i];
        partial[static_cast<std::size_t>(b)] = s;
    }
    double total = 0.0;
    for (long b = 0; b < nblocks; ++b) total += partial[static_cast<std::size_t>(b)];
    return total;
}

}  // namespace attmetnet::kernels
