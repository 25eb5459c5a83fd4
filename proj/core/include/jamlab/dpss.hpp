#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace jamlab::specfeat {

// Discrete prolate spheroidal (Slepian) tapers.
struct DpssTapers {
    std::size_t n = 0;
    double nw = 0.0;     // time-bandwidth product N * W_bw
    std::size_t k = 0;   // taper count
    std::vector<std::vector<double>> tapers;  // k sequences, each length n, orthonormal
    std::vector<double> eigenvalues;          // in-band concentrations, strictly decreasing

    double half_bandwidth() const { return nw / static_cast<double>(n); }
};

// Computes the k leading eigenvectors of the symmetric tridiagonal Slepian
// matrix (diagonal ((n-1-2i)/2)^2 cos(2 pi W), off-diagonal i(n-i)/2,
// W = nw/n) by bisection plus inverse iteration. Tapers are unit-norm with
// a nonnegative total sum for even orders and a positive leading half-sum
// for odd orders. The eigenvalue field holds the in-band energy
// concentration of each taper over [-W, W].
DpssTapers dpss_tapers(std::size_t n, double nw, std::size_t k);

// Memoized per (n, nw, k); the returned object is immutable and shareable.
std::shared_ptr<const DpssTapers> dpss_tapers_cached(std::size_t n, double nw, std::size_t k);

}  // namespace jamlab::specfeat
