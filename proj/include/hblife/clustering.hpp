// Size-constrained K-means over the usage feature g. The assignment step is
// solved exactly each iteration as a min-cost transportation problem, so
// cluster sizes always land inside [min_size, max_size].
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hblife/common.hpp"
#include "hblife/rng.hpp"

namespace hblife {

struct ClusterConfig {
    int k = 8;
    int min_size = 10;
    int max_size = 100;
    int n_restarts = 10;
    int max_iters = 100;
};

struct GroupAssignment {
    int k = 0;
    std::vector<double> centroids;         // one g value per cluster
    std::map<std::string, int> membership; // cell_id -> group index in [0,k)
    std::vector<int> sizes;
    int min_size = 0;
    int max_size = 0;
    double objective = std::numeric_limits<double>::quiet_NaN(); // within-cluster sum of squares

    void validate() const {
        if (k < 1 || static_cast<int>(centroids.size()) != k || static_cast<int>(sizes.size()) != k)
            fail("clustering: malformed assignment");
        int total = 0;
        for (int s : sizes) {
            if (s < min_size || s > max_size) fail("clustering: cluster size outside bounds");
            total += s;
        }
        if (total != static_cast<int>(membership.size())) fail("clustering: sizes do not sum to member count");
        for (double c : centroids)
            if (!std::isfinite(c)) fail("clustering: non-finite centroid");
    }
};

namespace detail {

/// Successive-shortest-path min-cost flow (SPFA distances; real-valued
/// non-negative arc costs, integral capacities).
class MinCostFlow {
  public:
    explicit MinCostFlow(int n_nodes) : head_(static_cast<std::size_t>(n_nodes), -1) {}

    int add_edge(int from, int to, int cap, double cost) {
        const int id = static_cast<int>(edges_.size());
        edges_.push_back({to, head_[static_cast<std::size_t>(from)], cap, cost});
        head_[static_cast<std::size_t>(from)] = id;
        edges_.push_back({from, head_[static_cast<std::size_t>(to)], 0, -cost});
        head_[static_cast<std::size_t>(to)] = id + 1;
        return id;
    }

    int flow_on(int edge_id) const { return edges_[static_cast<std::size_t>(edge_id) ^ 1].cap; }

    /// Returns (total flow, total cost).
    std::pair<int, double> solve(int source, int sink) {
        const auto n = head_.size();
        int total_flow = 0;
        double total_cost = 0.0;
        std::vector<double> dist(n);
        std::vector<int> in_edge(n);
        std::vector<char> in_queue(n);
        while (true) {
            std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
            std::fill(in_queue.begin(), in_queue.end(), 0);
            std::fill(in_edge.begin(), in_edge.end(), -1);
            dist[static_cast<std::size_t>(source)] = 0.0;
            std::deque<int> queue{source};
            in_queue[static_cast<std::size_t>(source)] = 1;
            while (!queue.empty()) {
                const int u = queue.front();
                queue.pop_front();
                in_queue[static_cast<std::size_t>(u)] = 0;
                for (int e = head_[static_cast<std::size_t>(u)]; e != -1; e = edges_[static_cast<std::size_t>(e)].next) {
                    const Edge& ed = edges_[static_cast<std::size_t>(e)];
                    if (ed.cap <= 0) continue;
                    const double nd = dist[static_cast<std::size_t>(u)] + ed.cost;
                    if (nd < dist[static_cast<std::size_t>(ed.to)] - 1e-15) {
                        dist[static_cast<std::size_t>(ed.to)] = nd;
                        in_edge[static_cast<std::size_t>(ed.to)] = e;
                        if (!in_queue[static_cast<std::size_t>(ed.to)]) {
                            queue.push_back(ed.to);
                            in_queue[static_cast<std::size_t>(ed.to)] = 1;
                        }
                    }
                }
            }
            if (in_edge[static_cast<std::size_t>(sink)] == -1) break;
            int bottleneck = std::numeric_limits<int>::max();
            for (int v = sink; v != source;) {
                const Edge& ed = edges_[static_cast<std::size_t>(in_edge[static_cast<std::size_t>(v)])];
                bottleneck = std::min(bottleneck, ed.cap);
                v = edges_[static_cast<std::size_t>(in_edge[static_cast<std::size_t>(v)]) ^ 1].to;
            }
            for (int v = sink; v != source;) {
                const int e = in_edge[static_cast<std::size_t>(v)];
                edges_[static_cast<std::size_t>(e)].cap -= bottleneck;
                edges_[static_cast<std::size_t>(e) ^ 1].cap += bottleneck;
                total_cost += bottleneck * edges_[static_cast<std::size_t>(e)].cost;
                v = edges_[static_cast<std::size_t>(e) ^ 1].to;
            }
            total_flow += bottleneck;
        }
        return {total_flow, total_cost};
    }

  private:
    struct Edge {
        int to;
        int next;
        int cap;
        double cost;
    };
    std::vector<Edge> edges_;
    std::vector<int> head_;
};

/// Exact capacity-bounded assignment of points to fixed centroids.
/// Lower bounds are folded in via the standard node-excess transformation.
inline std::vector<int> constrained_assignment(const Eigen::MatrixXd& points,
                                               const Eigen::MatrixXd& centroids, int min_size,
                                               int max_size) {
    const int n = static_cast<int>(points.rows());
    const int k = static_cast<int>(centroids.rows());
    // Nodes: 0 = S, 1..n = points, n+1..n+k = clusters, n+k+1 = T,
    //        n+k+2 = super-source, n+k+3 = super-sink.
    const int s_node = 0, t_node = n + k + 1, ss = n + k + 2, tt = n + k + 3;
    MinCostFlow flow(n + k + 4);
    std::vector<std::vector<int>> point_edges(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        flow.add_edge(s_node, 1 + i, 1, 0.0);
        for (int j = 0; j < k; ++j) {
            const double cost = (points.row(i) - centroids.row(j)).squaredNorm();
            point_edges[static_cast<std::size_t>(i)].push_back(flow.add_edge(1 + i, n + 1 + j, 1, cost));
        }
    }
    for (int j = 0; j < k; ++j) {
        flow.add_edge(n + 1 + j, t_node, max_size - min_size, 0.0);
        if (min_size > 0) flow.add_edge(n + 1 + j, tt, min_size, 0.0); // forced lower-bound units
    }
    flow.add_edge(ss, s_node, n, 0.0);
    if (n - k * min_size > 0) flow.add_edge(t_node, tt, n - k * min_size, 0.0);

    const auto [pushed, cost] = flow.solve(ss, tt);
    (void)cost;
    if (pushed != n) fail("clustering: internal assignment flow infeasible");
    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            if (flow.flow_on(point_edges[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) > 0)
                labels[static_cast<std::size_t>(i)] = j;
    return labels;
}

inline double assignment_cost(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
                              const std::vector<int>& labels) {
    double total = 0.0;
    for (int i = 0; i < points.rows(); ++i)
        total += (points.row(i) - centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
    return total;
}

inline Eigen::MatrixXd update_centroids(const Eigen::MatrixXd& points, const std::vector<int>& labels,
                                        const Eigen::MatrixXd& previous) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(previous.rows(), previous.cols());
    std::vector<int> counts(static_cast<std::size_t>(previous.rows()), 0);
    for (int i = 0; i < points.rows(); ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
        ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    Eigen::MatrixXd out = previous; // empty clusters keep their centroid
    for (int j = 0; j < previous.rows(); ++j)
        if (counts[static_cast<std::size_t>(j)] > 0) out.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
    return out;
}

struct KmeansRun {
    std::vector<int> labels;
    Eigen::MatrixXd centroids;
    double objective = std::numeric_limits<double>::infinity();
    int iterations = 0;
};

/// Lloyd iteration with the exact transported assignment step.
/// objective_trace, when given, records the cost after every iteration.
inline KmeansRun constrained_lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids,
                                   int min_size, int max_size, int max_iters,
                                   std::vector<double>* objective_trace = nullptr) {
    KmeansRun run;
    run.labels = constrained_assignment(points, centroids, min_size, max_size);
    for (int iter = 0; iter < max_iters; ++iter) {
        run.iterations = iter + 1;
        centroids = update_centroids(points, run.labels, centroids);
        const double obj = assignment_cost(points, centroids, run.labels);
        if (objective_trace) objective_trace->push_back(obj);
        std::vector<int> next = constrained_assignment(points, centroids, min_size, max_size);
        if (next == run.labels) break;
        run.labels = std::move(next);
    }
    centroids = update_centroids(points, run.labels, centroids);
    run.centroids = centroids;
    run.objective = assignment_cost(points, centroids, run.labels);
    return run;
}

/// k-means++ seeding.
inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& points, int k, Rng& rng) {
    const int n = static_cast<int>(points.rows());
    Eigen::MatrixXd centroids(k, points.cols());
    centroids.row(0) = points.row(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n))));
    Eigen::VectorXd d2(n);
    for (int i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
        } else {
            double r = rng.uniform() * total;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                r -= d2[i];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.row(c) = points.row(pick);
        for (int i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], (points.row(i) - centroids.row(c)).squaredNorm());
    }
    return centroids;
}

inline void check_feasible(int n, int k, int min_size, int max_size) {
    if (k < 1) fail("clustering: k must be >= 1");
    if (min_size < 0 || max_size < min_size) fail("clustering: need 0 <= min_size <= max_size");
    if (static_cast<long long>(min_size) * k > n)
        fail("clustering: infeasible size bounds: min_size*k = " + std::to_string(min_size) + "*" +
             std::to_string(k) + " = " + std::to_string(static_cast<long long>(min_size) * k) + " > " +
             std::to_string(n) + " cells");
    if (static_cast<long long>(max_size) * k < n)
        fail("clustering: infeasible size bounds: max_size*k = " + std::to_string(max_size) + "*" +
             std::to_string(k) + " = " + std::to_string(static_cast<long long>(max_size) * k) + " < " +
             std::to_string(n) + " cells");
}

/// Multi-restart driver over d-dimensional points (the pipeline uses d = 1).
inline KmeansRun constrained_kmeans_points(const Eigen::MatrixXd& points, int k, int min_size,
                                           int max_size, int n_restarts, std::uint64_t seed,
                                           int max_iters = 100,
                                           const Eigen::MatrixXd* init_centroids = nullptr) {
    check_feasible(static_cast<int>(points.rows()), k, min_size, max_size);
    if (n_restarts < 1) fail("clustering: n_restarts must be >= 1");
    if (init_centroids) {
        if (init_centroids->rows() != k || init_centroids->cols() != points.cols())
            fail("clustering: init centroids have wrong shape");
        return constrained_lloyd(points, *init_centroids, min_size, max_size, max_iters);
    }
    KmeansRun best;
    for (int r = 0; r < n_restarts; ++r) {
        Rng rng(derive_seed(seed, 0xC1u + static_cast<std::uint64_t>(r)));
        Eigen::MatrixXd init = kmeanspp_init(points, k, rng);
        KmeansRun run = constrained_lloyd(points, init, min_size, max_size, max_iters);
        if (run.objective < best.objective) best = std::move(run); // ties keep earliest restart
    }
    return best;
}

} // namespace detail

/// Constrained K-means over per-cell g values. Deterministic in (values, seed).
inline GroupAssignment constrained_kmeans(const std::map<std::string, double>& values, int k,
                                          int min_size, int max_size, int n_restarts,
                                          std::uint64_t seed, int max_iters = 100) {
    if (values.empty()) fail("clustering: no values to cluster");
    Eigen::MatrixXd points(static_cast<int>(values.size()), 1);
    std::vector<const std::string*> ids;
    ids.reserve(values.size());
    for (const auto& [id, g] : values) {
        if (!std::isfinite(g)) fail("clustering: non-finite g for cell '" + id + "'");
        points(static_cast<int>(ids.size()), 0) = g;
        ids.push_back(&id);
    }
    detail::KmeansRun run =
        detail::constrained_kmeans_points(points, k, min_size, max_size, n_restarts, seed, max_iters);

    GroupAssignment out;
    out.k = k;
    out.min_size = min_size;
    out.max_size = max_size;
    out.objective = run.objective;
    out.centroids.resize(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) out.centroids[static_cast<std::size_t>(j)] = run.centroids(j, 0);
    out.sizes.assign(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out.membership[*ids[i]] = run.labels[i];
        ++out.sizes[static_cast<std::size_t>(run.labels[i])];
    }
    out.validate();
    return out;
}

/// Nearest fitted centroid by |g - centroid|; ties go to the lowest index.
inline int assign_group(double g_value, const GroupAssignment& assignment) {
    if (assignment.centroids.empty()) fail("clustering: assignment has no centroids");
    int best = 0;
    double best_dist = std::abs(g_value - assignment.centroids[0]);
    for (int j = 1; j < static_cast<int>(assignment.centroids.size()); ++j) {
        const double d = std::abs(g_value - assignment.centroids[static_cast<std::size_t>(j)]);
        if (d < best_dist) {
            best = j;
            best_dist = d;
        }
    }
    return best;
}

} // namespace hblife
