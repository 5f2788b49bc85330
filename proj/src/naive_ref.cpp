#include "attmetnet/naive_ref.hpp"

namespace attmetnet::refk {

namespace {
inline long idx4(int a, int b, int c, int d, int nb, int nc, int nd) {
    return ((static_cast<long>(a) * nb + b) * nc + c) * nd + d;
}
}  // namespace

void conv2d_forward(const double* x, int n, int cin, int h, int w,
                    const double* k, int cout, int kh, int kw,
                    const double* bias, int stride, int pad,
                    double* y, int ho, int wo) {
    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < cout; ++oc)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow)
                    y[idx4(in, oc, oh, ow, cout, ho, wo)] = bias ? bias[oc] : 0.0;
    // scatter each input pixel onto every output position it feeds
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < cin; ++ic)
            for (int ih = 0; ih < h; ++ih)
                for (int iw = 0; iw < w; ++iw) {
                    const double xv = x[idx4(in, ic, ih, iw, cin, h, w)];
                    for (int oc = 0; oc < cout; ++oc)
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
                                y[idx4(in, oc, oh, ow, cout, ho, wo)] +=
                                    xv * k[idx4(oc, ic, r, s, cin, kh, kw)];
                            }
                        }
                }
}

void conv2d_backward_input(const double* dy, int n, int cout, int ho, int wo,
                           const double* k, int cin, int kh, int kw,
                           int stride, int pad, double* dx, int h, int w) {
    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < cout; ++oc)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    const double g = dy[idx4(in, oc, oh, ow, cout, ho, wo)];
                    for (int ic = 0; ic < cin; ++ic)
                        for (int r = 0; r < kh; ++r) {
                            const int ih = oh * stride - pad + r;
                            if (ih < 0 || ih >= h) continue;
                            for (int s = 0; s < kw; ++s) {
                                const int iw = ow * stride - pad + s;
                                if (iw < 0 || iw >= w) continue;
                                dx[idx4(in, ic, ih, iw, cin, h, w)] +=
                                    g * k[idx4(oc, ic, r, s, cin, kh, kw)];
                            }
                        }
                }
}

void conv2d_backward_kernel(const double* dy, int n, int cout, int ho, int wo,
                            const double* x, int cin, int h, int w,
                            int kh, int kw, int stride, int pad, double* dk) {
    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < cout; ++oc)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    const double g = dy[idx4(in, oc, oh, ow, cout, ho, wo)];
                    for (int ic = 0; ic < cin; ++ic)
                        for (int r = 0; r < kh; ++r) {
                            const int ih = oh * stride - pad + r;
                            if (ih < 0 || ih >= h) continue;
                            for (int s = 0; s < kw; ++s) {
                                const int iw = ow * stride - pad + s;
                                if (iw < 0 || iw >= w) continue;
                                dk[idx4(oc, ic, r, s, cin, kh, kw)] +=
                                    g * x[idx4(in, ic, ih, iw, cin, h, w)];
                            }
                        }
                }
}

void conv2d_backward_bias(const double* dy, int n, int cout, int ho, int wo, double* db) {
    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < cout; ++oc)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow)
                    db[oc] += dy[idx4(in, oc, oh, ow, cout, ho, wo)];
}

void conv_transpose2d_forward(const double* x, int n, int cin, int h, int w,
                              const double* k, int cout, int kh, int kw,
                              int stride, double* y, int ho, int wo) {
    for (long i = 0; i < static_cast<long>(n) * cout * ho * wo; ++i) y[i] = 0.0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < cin; ++ic)
            for (int ih = 0; ih < h; ++ih)
                for (int iw = 0; iw < w; ++iw) {
                    const double xv = x[idx4(in, ic, ih, iw, cin, h, w)];
                    for (int oc = 0; oc < cout; ++oc)
                        for (int r = 0; r < kh; ++r)
                            for (int s = 0; s < kw; ++s)
                                y[idx4(in, oc, ih * stride + r, iw * stride + s, cout, ho, wo)] +=
                                    xv * k[idx4(ic, oc, r, s, cout, kh, kw)];
                }
}

void conv_transpose2d_backward_input(const double* dy, int n, int cout, int ho, int wo,
                                     const double* k, int cin, int kh, int kw,
                                     int stride, double* dx, int h, int w) {
    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < cout; ++oc)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    const double g = dy[idx4(in, oc, oh, ow, cout, ho, wo)];
                    for (int ic = 0; ic < cin; ++ic)
                        for (int r = 0; r < kh; ++r) {
                            const int t = oh - r;
                            if (t < 0 || t % stride != 0) continue;
                            const int ih = t / stride;
                            if (ih >= h) continue;
                            for (int s = 0; s < kw; ++s) {
                                const int u = ow - s;
                                if (u < 0 || u % stride != 0) continue;
                                const int iw = u / stride;
                                if (iw >= w) continue;
                                dx[idx4(in, ic, ih, iw, cin, h, w)] +=
                                    g * k[idx4(ic, oc, r, s, cout, kh, kw)];
                            }
                        }
                }
}

void conv_transpose2d_backward_kernel(const double* dy, int n, int cout, int ho, int wo,
                                      const double* x, int cin, int h, int w,
                                      int kh, int kw, int stride, double* dk) {
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < cin; ++ic)
            for (int ih = 0; ih < h; ++ih)
                for (int iw = 0; iw < w; ++iw) {
                    const double xv = x[idx4(in, ic, ih, iw, cin, h, w)];
                    for (int oc = 0; oc < cout; ++oc)
                        for (int r = 0; r < kh; ++r)
                            for (int s = 0; s < kw; ++s)
                                dk[idx4(ic, oc, r, s, cout, kh, kw)] +=
                                    xv * dy[idx4(in, oc, ih * stride + r, iw * stride + s,
                                                 cout, ho, wo)];
                }
}

void maxpool2d_forward(const double* x, int n, int c, int h, int w, int k,
                       double* y, std::int32_t* argmax) {
    const int ho = h / k;
    const int wo = w / k;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    long best = -1;
                    double bv = 0.0;
                    for (int r = 0; r < k; ++r)
                        for (int s = 0; s < k; ++s) {
                            const long fi = idx4(in, ic, oh * k + r, ow * k + s, c, h, w);
                            if (best < 0 || x[fi] > bv) {
                                best = fi;
                                bv = x[fi];
                            }
                        }
                    y[idx4(in, ic, oh, ow, c, ho, wo)] = bv;
                    argmax[idx4(in, ic, oh, ow, c, ho, wo)] = static_cast<std::int32_t>(best);
                }
}

void maxpool2d_backward(const double* dy, int n, int c, int ho, int wo,
                        const std::int32_t* argmax, double* dx) {
    for (long i = 0; i < static_cast<long>(n) * c * ho * wo; ++i) dx[argmax[i]] += dy[i];
}

void channel_mean_var(const double* x, int n, int c, int h, int w,
                      double* mean, double* var) {
    const long hw = static_cast<long>(h) * w;
    const double m = static_cast<double>(n) * hw;
    for (int ic = 0; ic < c; ++ic) {
        double s = 0.0;
        for (int in = 0; in < n; ++in)
            for (long i = 0; i < hw; ++i) s += x[(static_cast<long>(in) * c + ic) * hw + i];
        mean[ic] = s / m;
        double v = 0.0;
        for (int in = 0; in < n; ++in)
            for (long i = 0; i < hw; ++i) {
                const double d = x[(static_cast<long>(in) * c + ic) * hw + i] - mean[ic];
                v += d * d;
            }
        var[ic] = v / m;
    }
}

void batchnorm_forward(const double* x, int n, int c, int h, int w,
                       const double* mean, const double* invstd,
                       const double* gamma, const double* beta,
                       double* y, double* xhat) {
    const long hw = static_cast<long>(h) * w;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (long i = 0; i < hw; ++i) {
                const long off = (static_cast<long>(in) * c + ic) * hw + i;
                const double xh = (x[off] - mean[ic]) * invstd[ic];
                if (xhat) xhat[off] = xh;
                y[off] = gamma[ic] * xh + beta[ic];
            }
}

double sum_all(const double* x, long n) {
    double s = 0.0;
    for (long i = 0; i < n; ++i) s += x[i];
    return s;
}

}  // namespace attmetnet::refk
