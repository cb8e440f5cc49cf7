#include "mfcov/fit.hpp"

#include <memory>
#include <stdexcept>

#include "mfcov/parallel.hpp"

namespace mfcov {

FittedModel fit(const SparseFunctionalDataset& data, const FitOptions& options) {
    if (data.n_subjects() < 2) throw std::invalid_argument("fit: need at least two subjects");
    if (!(options.pve > 0.0 && options.pve <= 1.0))
        throw std::invalid_argument("fit: pve must lie in (0, 1]");
    const int p = data.n_responses();
    const Interval domain = options.domain.value_or(data.time_range());

    auto cov_ws = std::make_shared<const SplineWorkspace>(domain, options.n_interior, options.order);
    auto mean_ws = options.mean_n_interior == options.n_interior
                       ? cov_ws
                       : std::make_shared<const SplineWorkspace>(domain, options.mean_n_interior,
                                                                 options.order);

    std::vector<MeanFit> means(p);
    parallel_for(static_cast<std::size_t>(p), options.threads, [&](std::size_t k) {
        means[k] = fit_mean(data, static_cast<int>(k), mean_ws, options.tau_grid);
    });

    std::vector<std::pair<int, int>> pairs;
    for (int k = 0; k < p; ++k)
        for (int kp = k; kp < p; ++kp) pairs.emplace_back(k, kp);
    std::vector<BlockFit> fits(pairs.size());
    parallel_for(pairs.size(), options.threads, [&](std::size_t b) {
        const auto [k, kp] = pairs[b];
        const AuxBlock block = build_aux(data, means, *cov_ws, k, kp);
        fits[b] = k == kp ? fit_auto(block, *cov_ws, options.grid)
                          : fit_cross(block, *cov_ws, options.grid);
    });

    FittedModel out;
    out.raw = CovarianceModel(cov_ws, p);
    out.raw.means = means;
    for (std::size_t b = 0; b < pairs.size(); ++b) {
        const auto [k, kp] = pairs[b];
        const BlockFit& f = fits[b];
        out.raw.set_block(k, kp, f.theta);
        if (k == kp) out.raw.sigma2(k) = f.sigma2;
        out.blocks.push_back({k, kp, f.selection.rho, f.selection.w, f.lambda1, f.lambda2,
                              f.selection.surface});
        out.warnings.insert(out.warnings.end(), f.warnings.begin(), f.warnings.end());
    }
    out.eigen = eigendecompose(out.raw, options.pve);
    if (out.eigen.npc == 0) out.warnings.push_back("no positive eigenvalue; refined model is zero");
    out.refined = refine(out.raw, out.eigen);
    return out;
}

} // namespace mfcov
