#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfcov/covsmooth.hpp"
#include "mfcov/mfpca.hpp"

namespace mfcov {

struct FitOptions {
    int order = 4;
    int n_interior = 9;      // covariance basis, c = 13 by default
    int mean_n_interior = 9; // mean basis
    /// Defaults to the observed time range.
    std::optional<Interval> domain;
    std::vector<double> tau_grid = default_tau_grid();
    SmoothingGrid grid = SmoothingGrid::defaults();
    double pve = 0.99;
    int threads = 1;
};

struct BlockSummary {
    int k = 0;
    int kp = 0;
    double rho = 0.0;
    double w = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    std::vector<GridPoint> surface;
};

struct FittedModel {
    CovarianceModel raw;     // smoothed blocks, before the PSD refinement
    CovarianceModel refined; // used for everything downstream
    EigenSystem eigen;       // spectrum of the raw whitened matrix
    std::vector<BlockSummary> blocks;
    std::vector<std::string> warnings;
};

/// Mean smoothing, all p(p+1)/2 block fits, spectral decomposition and
/// PSD refinement.
FittedModel fit(const SparseFunctionalDataset& data, const FitOptions& options = {});

} // namespace mfcov
