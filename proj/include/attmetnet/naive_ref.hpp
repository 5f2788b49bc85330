#pragma once

#include <cstdint>

// Serial reference implementations, written as direct transcriptions of the
// operator definitions. Kept deliberately independent of the parallel kernels
// so tests can compare the two; the benchmark target times both.
namespace attmetnet::refk {

void conv2d_forward(const double* x, int n, int cin, int h, int w,
                    const double* k, int cout, int kh, int kw,
                    const double* bias, int stride, int pad,
                    double* y, int ho, int wo);

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

void maxpool2d_forward(const double* x, int n, int c, int h, int w, int k,
                       double* y, std::int32_t* argmax);

void maxpool2d_backward(const double* dy, int n, int c, int ho, int wo,
                        const std::int32_t* argmax, double* dx);

void channel_mean_var(const double* x, int n, int c, int h, int w,
                      double* mean, double* var);

void batchnorm_forward(const double* x, int n, int c, int h, int w,
                       const double* mean, const double* invstd,
                       const double* gamma, const double* beta,
                       double* y, double* xhat);

double sum_all(const double* x, long n);

}  // namespace attmetnet::refk
