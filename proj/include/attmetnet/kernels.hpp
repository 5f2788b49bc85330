#pragma once

#include <cstdint>

// Dense f64 kernels behind the autodiff ops. All layouts are row-major
// (last index fastest); images are NCHW, conv kernels [Cout,Cin,kh,kw],
// transposed-conv kernels [Cin,Cout,kh,kw].
//
// Determinism contract: every output element is produced by exactly one
// thread with a fixed serial reduction order, and full reductions use a
// fixed block partition. Results are bit-identical for any worker count.
// Backward kernels accumulate (+=) into their d* buffers.
namespace attmetnet::kernels {

void conv2d_forward(const double* x, int n, int cin, int h, int w,
                    const double* k, int cout, int kh, int kw,
                    const double* bias,  // nullable
                    int stride, int pad, double* y, int ho, int wo);

void conv2d_backward_input(const double* dy, int n, int cout, int ho, int wo,
                           const double* k, int cin, int kh, int kw,
                           int stride, int pad, double* dx, int h, int w);

void conv2d_backward_kernel(const double* dy, int n, int cout, int ho, int wo,
                            const double* x, int cin, int h, int w,
                            int kh, int kw, int stride, int pad, double* dk);

void conv2d_backward_bias(const double* dy, int n, int cout, int ho, int wo, double* db);

void conv_transpose2d_forward(const double* x, int n, int cin, int h, int w,
                              const double* k, int cout, int kh, int kw,
                              int stride, double* y, int ho, int wo);

void conv_transpose2d_backward_input(const double* dy, int n, int cout, int ho, int wo,
                                     const double* k, int cin, int kh, int kw,
                                     int stride, double* dx, int h, int w);

void conv_transpose2d_backward_kernel(const double* dy, int n, int cout, int ho, int wo,
                                      const double* x, int cin, int h, int w,
                                      int kh, int kw, int stride, double* dk);

// Ties break toward the first element in row-major window scan.
// argmax holds flat indices into x.
void maxpool2d_forward(const double* x, int n, int c, int h, int w, int k,
                       double* y, std::int32_t* argmax);

void maxpool2d_backward(const double* dy, int n, int c, int ho, int wo,
                        const std::int32_t* argmax, double* dx);

// Per-channel mean and biased (1/M) variance over (N,H,W).
void channel_mean_var(const double* x, int n, int c, int h, int w,
                      double* mean, double* var);

// y = gamma * (x - mean) * invstd + beta; xhat output is optional.
void batchnorm_forward(const double* x, int n, int c, int h, int w,
                       const double* mean, const double* invstd,
                       const double* gamma, const double* beta,
                       double* y, double* xhat);

// stats_fixed=true treats mean/var as constants (eval mode); otherwise the
// batch-statistics terms are included.
void batchnorm_backward(const double* dy, const double* xhat,
                        int n, int c, int h, int w,
                        const double* gamma, const double* invstd, bool stats_fixed,
                        double* dx, double* dgamma, double* dbeta);

void relu_forward(const double* x, double* y, long n);
void relu_backward(const double* dy, const double* x, double* dx, long n);

// Branching form stays finite for any finite input; output strictly in (0,1).
void sigmoid_forward(const double* x, double* y, long n);
void sigmoid_backward(const double* dy, const double* y, double* dx, long n);

void add_forward(const double* a, const double* b, double* y, long n);
void mul_forward(const double* a, const double* b, double* y, long n);
void mul_backward(const double* dy, const double* a, const double* b,
                  double* da, double* db, long n);
void scale_forward(const double* x, double s, double* y, long n);

// alpha[N,1,H,W] broadcast over the channel axis of x[N,C,H,W].
void mul_bcast_forward(const double* alpha, const double* x,
                       int n, int c, long hw, double* y);
void mul_bcast_backward(const double* dy, const double* alpha, const double* x,
                        int n, int c, long hw, double* dalpha, double* dx);

void concat2_forward(const double* a, int ca, const double* b, int cb,
                     int n, long hw, double* y);
void concat2_backward(const double* dy, int ca, int cb, int n, long hw,
                      double* da, double* db);

// dst += src (used by add backward and generic grad accumulation).
void accumulate(double* dst, const double* src, long n);
void accumulate_scaled(double* dst, const double* src, double s, long n);

// Deterministic full reduction: fixed 4096-element blocks summed serially,
// block sums combined in block order.
double sum_all(const double* x, long n);

}  // namespace attmetnet::kernels
