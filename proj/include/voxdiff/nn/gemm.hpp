#pragma once

#include <cstddef>

namespace voxdiff::nn {

// Row-major micro-GEMMs. Fixed summation order, so results are bit-stable.

// C(MxN) += A(MxK) * B(KxN)
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t m = 0; m < M; ++m) {
        T* c_row = C + m * N;
        for (std::size_t k = 0; k < K; ++k) {
            const T a = A[m * K + k];
            if (a == T(0)) continue;
            const T* b_row = B + k * N;
            for (std::size_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
        }
    }
}

// C(MxN) += A(KxM)^T * B(KxN)
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t k = 0; k < K; ++k) {
        const T* a_row = A + k * M;
        const T* b_row = B + k * N;
        for (std::size_t m = 0; m < M; ++m) {
            const T a = a_row[m];
            if (a == T(0)) continue;
            T* c_row = C + m * N;
            for (std::size_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
        }
    }
}

// C(MxN) += A(MxK) * B(NxK)^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t m = 0; m < M; ++m) {
        const T* a_row = A + m * K;
        for (std::size_t n = 0; n < N; ++n) {
            const T* b_row = B + n * K;
            T acc = T(0);
            for (std::size_t k = 0; k < K; ++k) acc += a_row[k] * b_row[k];
            C[m * N + n] += acc;
        }
    }
}

}  // namespace voxdiff::nn
