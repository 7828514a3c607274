#pragma once

#include "scentree/process_models.hpp"
#include "scentree/tree.hpp"

#include <random>
#include <vector>

namespace fixtures {

// Three-stage golden tree, node probabilities and values breadth-first.
inline scentree::ScenarioTree golden_tree() {
    const std::vector<int> parents{-1, 0, 0, 0, 1, 1, 2, 2, 2, 3, 3, 4, 4, 5, 5,
                                   6, 6, 7, 7, 7, 8, 8, 9, 9, 9, 10, 10};
    const std::vector<double> p{1,   0.2, 0.3, 0.5, 0.5, 0.5, 0.6, 0.2, 0.2, 0.7, 0.3, 0.5, 0.5, 0.1,
                                0.9, 0.2, 0.8, 0.1, 0.2, 0.7, 0.5, 0.5, 0.2, 0.3, 0.5, 0.9, 0.1};
    const std::vector<double> v{0,     40.68, 93.83, 25.54, 53.32, 95.48, 26.77, 25.01, 92.77,
                                6.86,  29.94, 59.16, 20.33, 63.59, 79.84, 50.17, 65.08, 79.6,
                                23.34, 60.08, 11.25, 51.58, 83.78, 92.08, 49.82, 27.76, 65.25};
    Eigen::MatrixXd values(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) values(0, static_cast<Eigen::Index>(i)) = v[i];
    return {scentree::TreeTopology::from_parents(parents), values, p};
}

// Two-stage tree with 3, 4 and 3 children below the stage-1 nodes.
inline scentree::TreeTopology example_topology() {
    return scentree::TreeTopology::from_parents({-1, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3});
}

// Random tree in canonical order with per-node branching in [1, max_branch].
inline scentree::ScenarioTree random_tree(std::mt19937_64& rng, int stages, int max_branch, int dim = 1,
                                          double scale = 10.0) {
    std::uniform_int_distribution<int> branch(1, max_branch);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> parents{-1};
    int first = 0;
    int count = 1;
    for (int t = 0; t < stages; ++t) {
        const int next = static_cast<int>(parents.size());
        for (int p = first; p < first + count; ++p) {
            const int b = branch(rng);
            for (int c = 0; c < b; ++c) parents.push_back(p);
        }
        count = static_cast<int>(parents.size()) - next;
        first = next;
    }
    const int n = static_cast<int>(parents.size());
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(dim, n);
    std::vector<double> probs(n, 1.0);
    for (int i = 1; i < n; ++i) {
        for (int d = 0; d < dim; ++d) values(d, i) = scale * unif(rng);
        probs[i] = 0.1 + unif(rng);
    }
    auto topo = scentree::TreeTopology::from_parents(parents);
    for (int p = 0; p < n; ++p) {
        double s = 0.0;
        for (int c : topo.children(p)) s += probs[c];
        for (int c : topo.children(p)) probs[c] /= s;
        // Force exact normalization on the last child.
        if (!topo.children(p).empty()) {
            double rest = 1.0;
            const auto kids = topo.children(p);
            for (std::size_t k = 0; k + 1 < kids.size(); ++k) rest -= probs[kids[k]];
            probs[kids.back()] = rest;
        }
    }
    return {topo, values, probs};
}

inline scentree::GaussianProcessModel small_gaussian() {
    Eigen::Vector3d mu(1, 2, 3);
    Eigen::Matrix3d c;
    c << 1, 0.3, 0, 0.3, 0.7, 0.3, 0, 0.3, 0.5;
    return {1, 3, mu, c};
}

}  // namespace fixtures
