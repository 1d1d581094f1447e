#pragma once
// Dense double-precision inner loops used by the tensor engine.
//
// Every kernel exists as a scalar reference and, on x86-64 hosts that report
// AVX2+FMA at runtime, as an intrinsics variant. The active table is chosen
// once on first use; tests may pin either table explicitly.

#include <cstddef>
#include <span>
#include <string_view>

namespace anclaf::kernels {

enum class Isa { scalar, avx2 };

// Row-major matrices are passed as raw spans plus dimensions; callers own
// the shape checks.
struct KernelTable {
    Isa isa;
    std::string_view name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // c[m x n] += a[m x k] * b[k x n]
    void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
    // c[m x n] += a[m x k] * b[n x k]^T
    void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
    // c[k x n] += a[m x k]^T * b[m x n]
    void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

const KernelTable& active();

// Pins the table used by active(). Returns false if the ISA is unavailable.
bool select(Isa isa);

// Convenience wrappers over active().
inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace anclaf::kernels
