// Feedback policies: nearest-neighbour (Voronoi piecewise-constant) tables
// fitted from (state, control) samples, and closed-form evaluators.
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "soc/core.hpp"
#include "soc/csv.hpp"

namespace soc {

/// Squared Euclidean distance accumulated coordinate by coordinate in index
/// order. Every search path uses this exact expression so the fast paths
/// agree bit-for-bit with an exhaustive scan.
inline double squared_distance(std::span<const double> a, const double* b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double diff = a[k] - b[k];
        d += diff * diff;
    }
    return d;
}

/// Nearest-centre lookup over one stage's (centre, value) pairs.
///
/// The answer is always the centre minimising squared_distance, with ties
/// broken towards the lowest index. One-dimensional tables search a sorted
/// copy of the centres; higher dimensions use a kd-tree whose pruning test
/// never discards a tied candidate, so both match exhaustive_nearest exactly.
class NearestNeighborIndex {
public:
    NearestNeighborIndex() = default;

    NearestNeighborIndex(std::vector<double> centers, std::vector<double> values, int dim,
                         int value_dim)
        : dim_(dim), value_dim_(value_dim), centers_(std::move(centers)), values_(std::move(values)) {
        if (dim_ < 1 || value_dim_ < 1)
            throw std::invalid_argument("NearestNeighborIndex: dimensions must be >= 1");
        if (centers_.empty() || centers_.size() % dim_ != 0)
            throw std::invalid_argument("NearestNeighborIndex: need at least one centre");
        count_ = centers_.size() / dim_;
        if (values_.size() != count_ * value_dim_)
            throw std::invalid_argument("NearestNeighborIndex: centre/value count mismatch");
        if (dim_ == 1)
            build_sorted();
        else
            build_kdtree();
    }

    std::size_t size() const noexcept { return count_; }
    int dim() const noexcept { return dim_; }
    int value_dim() const noexcept { return value_dim_; }

    std::span<const double> center(std::size_t i) const {
        return {centers_.data() + i * dim_, static_cast<std::size_t>(dim_)};
    }
    std::span<const double> value(std::size_t i) const {
        return {values_.data() + i * value_dim_, static_cast<std::size_t>(value_dim_)};
    }
    const std::vector<double>& centers() const noexcept { return centers_; }
    const std::vector<double>& values() const noexcept { return values_; }

    /// Index of the nearest centre.
    std::size_t nearest(std::span<const double> q) const {
        std::size_t cursor = 0;
        return nearest(q, cursor);
    }

    /// Index of the nearest centre. `cursor` carries search state between
    /// calls; successive nearby queries are cheaper when it is reused.
    std::size_t nearest(std::span<const double> q, std::size_t& cursor) const {
        if (dim_ == 1) return nearest_sorted(q[0], cursor);
        return nearest_kd(q, cursor);
    }

    /// Regressor evaluation: writes the value of the nearest centre.
    void eval(std::span<const double> q, std::span<double> out, std::size_t& cursor) const {
        const std::size_t i = nearest(q, cursor);
        if (value_dim_ == 1) {
            out[0] = values_[i];
            return;
        }
        const auto v = value(i);
        std::copy(v.begin(), v.end(), out.begin());
    }

    /// Reference O(M) scan.
    std::size_t exhaustive_nearest(std::span<const double> q) const {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < count_; ++i) {
            const double d = squared_distance(q, centers_.data() + i * dim_);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

private:
    // --- 1-D ---------------------------------------------------------------

    void build_sorted() {
        std::vector<std::size_t> order(count_);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
            return centers_[a] < centers_[b] || (centers_[a] == centers_[b] && a < b);
        });
        // duplicates keep their lowest index only
        sorted_pos_.clear();
        sorted_idx_.clear();
        for (std::size_t k : order) {
            if (!sorted_pos_.empty() && sorted_pos_.back() == centers_[k]) continue;
            sorted_pos_.push_back(centers_[k]);
            sorted_idx_.push_back(k);
        }
    }

    // first position with sorted_pos_[p] >= q, searched outwards from hint
    std::size_t lower_bound_from(double q, std::size_t hint) const {
        const std::size_t n = sorted_pos_.size();
        if (hint > n) hint = n;
        std::size_t lo, hi;
        // short linear walk first: successive queries usually land close by
        if (hint < n && sorted_pos_[hint] < q) {
            std::size_t k = hint + 1;
            for (int s = 0; s < 4 && k < n; ++s, ++k)
                if (!(sorted_pos_[k] < q)) return k;
            if (k == n) return n;
            hint = k - 1;
        } else if (hint > 0 && hint <= n) {
            std::size_t k = hint;
            for (int s = 0; s < 4 && k > 0; ++s, --k)
                if (sorted_pos_[k - 1] < q) return k;
            if (k == 0) return 0;
            hint = k;
        }
        if (hint < n && sorted_pos_[hint] < q) {
            lo = hint + 1;
            std::size_t step = 1;
            hi = lo;
            while (hi < n && sorted_pos_[hi] < q) {
                lo = hi + 1;
                hi += step;
                step <<= 1;
            }
            hi = std::min(hi, n);
        } else {
            hi = hint;
            std::size_t step = 1;
            lo = hi;
            while (lo > 0 && !(sorted_pos_[lo - 1] < q)) {
                hi = lo - 1;
                lo = lo > step ? lo - step : 0;
                step <<= 1;
            }
        }
        auto it = std::lower_bound(sorted_pos_.begin() + lo, sorted_pos_.begin() + hi, q);
        return static_cast<std::size_t>(it - sorted_pos_.begin());
    }

    std::size_t nearest_sorted(double q, std::size_t& cursor) const {
        const std::size_t n = sorted_pos_.size();
        const std::size_t p = lower_bound_from(q, cursor);
        auto dist = [q](double c) {
            const double diff = q - c;
            return diff * diff;
        };
        double best_d = std::numeric_limits<double>::infinity();
        std::size_t best_pos = 0;
        auto consider = [&](std::size_t pos) {
            const double d = dist(sorted_pos_[pos]);
            if (d < best_d || (d == best_d && sorted_idx_[pos] < sorted_idx_[best_pos])) {
                best_d = d;
                best_pos = pos;
            }
        };
        if (p > 0) consider(p - 1);
        if (p < n) consider(p);
        // Rounding can make a farther centre compute the same distance.
        for (std::size_t k = p > 0 ? p - 1 : 0; k > 0 && dist(sorted_pos_[k - 1]) == best_d; --k)
            consider(k - 1);
        for (std::size_t k = p + 1; k < n && dist(sorted_pos_[k]) == best_d; ++k) consider(k);
        cursor = best_pos;
        return sorted_idx_[best_pos];
    }

    // --- kd-tree -----------------------------------------------------------

    struct KdNode {
        std::size_t begin, end;  // range in kd_order_
        int split_dim = -1;      // -1 marks a leaf
        double split = 0.0;
        std::size_t left = 0, right = 0;
    };

    static constexpr std::size_t kLeafSize = 8;

    void build_kdtree() {
        kd_order_.resize(count_);
        std::iota(kd_order_.begin(), kd_order_.end(), std::size_t{0});
        kd_nodes_.clear();
        kd_nodes_.reserve(2 * count_ / kLeafSize + 2);
        build_node(0, count_);
    }

    std::size_t build_node(std::size_t begin, std::size_t end) {
        const std::size_t id = kd_nodes_.size();
        kd_nodes_.push_back(KdNode{begin, end});
        if (end - begin <= kLeafSize) return id;

        int best_dim = 0;
        double best_spread = -1.0;
        for (int k = 0; k < dim_; ++k) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t p = begin; p < end; ++p) {
                const double c = centers_[kd_order_[p] * dim_ + k];
                lo = std::min(lo, c);
                hi = std::max(hi, c);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                best_dim = k;
            }
        }
        if (best_spread <= 0.0) return id;  // all coincident

        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(kd_order_.begin() + begin, kd_order_.begin() + mid, kd_order_.begin() + end,
                         [&](std::size_t a, std::size_t b) {
                             const double ca = centers_[a * dim_ + best_dim];
                             const double cb = centers_[b * dim_ + best_dim];
                             return ca < cb || (ca == cb && a < b);
                         });
        const double split = centers_[kd_order_[mid] * dim_ + best_dim];
        const std::size_t left = build_node(begin, mid);
        const std::size_t right = build_node(mid, end);
        kd_nodes_[id].split_dim = best_dim;
        kd_nodes_[id].split = split;
        kd_nodes_[id].left = left;
        kd_nodes_[id].right = right;
        return id;
    }

    void search_kd(std::size_t node_id, std::span<const double> q, double& best_d,
                   std::size_t& best) const {
        const KdNode& node = kd_nodes_[node_id];
        if (node.split_dim < 0) {
            for (std::size_t p = node.begin; p < node.end; ++p) {
                const std::size_t i = kd_order_[p];
                const double d = squared_distance(q, centers_.data() + i * dim_);
                if (d < best_d || (d == best_d && i < best)) {
                    best_d = d;
                    best = i;
                }
            }
            return;
        }
        const double diff = q[node.split_dim] - node.split;
        const bool go_left = diff < 0.0;
        search_kd(go_left ? node.left : node.right, q, best_d, best);
        // Far side is skipped only when it cannot hold a centre at distance <= best_d.
        if (diff * diff <= best_d) search_kd(go_left ? node.right : node.left, q, best_d, best);
    }

    std::size_t nearest_kd(std::span<const double> q, std::size_t& cursor) const {
        std::size_t best = cursor < count_ ? cursor : 0;
        double best_d = squared_distance(q, centers_.data() + best * dim_);
        search_kd(0, q, best_d, best);
        cursor = best;
        return best;
    }

    int dim_ = 1;
    int value_dim_ = 1;
    std::size_t count_ = 0;
    std::vector<double> centers_;
    std::vector<double> values_;

    std::vector<double> sorted_pos_;
    std::vector<std::size_t> sorted_idx_;

    std::vector<std::size_t> kd_order_;
    std::vector<KdNode> kd_nodes_;
};

/// A fitted regression operator: maps a query to a value vector.
template <class E>
concept FittedRegression = requires(const E& e, std::span<const double> q, std::span<double> out,
                                    std::size_t& cursor) {
    e.eval(q, out, cursor);
};

/// Builds a fitted regression operator from (centre, value) samples.
template <class R>
concept Regressor = requires(const R& r, std::vector<double> c, std::vector<double> v, int d) {
    { r.fit(std::move(c), std::move(v), d, d) } -> FittedRegression;
};

struct NearestNeighborRegressor {
    NearestNeighborIndex fit(std::vector<double> centers, std::vector<double> values, int dim,
                             int value_dim) const {
        return NearestNeighborIndex(std::move(centers), std::move(values), dim, value_dim);
    }
};

/// Samples for one stage, flat row-major.
struct StageSamples {
    std::vector<double> states;    // M x state_dim
    std::vector<double> controls;  // M x control_dim
};

enum class PolicyKind { NearestNeighbor, ClosedForm };

/// Per-stage feedback map x -> u for t = 0..T-1.
class FeedbackPolicy {
public:
    using Evaluator = std::function<void(int, std::span<const double>, std::span<double>)>;

    static FeedbackPolicy closed_form(int horizon, int state_dim, int control_dim, Evaluator fn) {
        FeedbackPolicy p;
        p.kind_ = PolicyKind::ClosedForm;
        p.horizon_ = horizon;
        p.state_dim_ = state_dim;
        p.control_dim_ = control_dim;
        p.closed_ = std::move(fn);
        return p;
    }

    static FeedbackPolicy nearest_neighbor(int state_dim, int control_dim,
                                           std::vector<NearestNeighborIndex> stages) {
        FeedbackPolicy p;
        p.kind_ = PolicyKind::NearestNeighbor;
        p.horizon_ = static_cast<int>(stages.size());
        p.state_dim_ = state_dim;
        p.control_dim_ = control_dim;
        p.tables_ = std::move(stages);
        return p;
    }

    PolicyKind kind() const noexcept { return kind_; }
    int horizon() const noexcept { return horizon_; }
    int state_dim() const noexcept { return state_dim_; }
    int control_dim() const noexcept { return control_dim_; }

    /// Number of Voronoi cells at stage t; 0 for closed-form policies.
    std::size_t support_size(int t) const {
        return kind_ == PolicyKind::NearestNeighbor ? tables_.at(t).size() : 0;
    }

    const NearestNeighborIndex& table(int t) const { return tables_.at(t); }

    void eval(int t, std::span<const double> x, std::span<double> out) const {
        if (t < 0 || t >= horizon_) throw std::out_of_range("FeedbackPolicy: stage out of range");
        if (!all_finite(x)) throw std::domain_error("FeedbackPolicy: non-finite state");
        if (kind_ == PolicyKind::ClosedForm) {
            closed_(t, x, out);
        } else {
            std::size_t cursor = 0;
            tables_[t].eval(x, out, cursor);
        }
    }

    std::vector<double> eval(int t, std::span<const double> x) const {
        std::vector<double> out(control_dim_);
        eval(t, x, out);
        return out;
    }

private:
    PolicyKind kind_ = PolicyKind::NearestNeighbor;
    int horizon_ = 0;
    int state_dim_ = 1;
    int control_dim_ = 1;
    std::vector<NearestNeighborIndex> tables_;
    Evaluator closed_;
};

inline FeedbackPolicy fit_nearest_neighbor(std::span<const StageSamples> stages, int state_dim,
                                           int control_dim) {
    std::vector<NearestNeighborIndex> tables;
    tables.reserve(stages.size());
    for (std::size_t t = 0; t < stages.size(); ++t) {
        if (stages[t].states.empty())
            throw std::invalid_argument("fit_nearest_neighbor: stage " + std::to_string(t) +
                                        " has no samples");
        tables.emplace_back(stages[t].states, stages[t].controls, state_dim, control_dim);
    }
    return FeedbackPolicy::nearest_neighbor(state_dim, control_dim, std::move(tables));
}

inline std::vector<double> eval_policy(const FeedbackPolicy& policy, int t, std::span<const double> x) {
    return policy.eval(t, x);
}

/// Pointwise average of R policies. points[t] holds P_t states (flat);
/// the result holds P_t controls per stage.
inline std::vector<std::vector<double>> mean_policy(std::span<const FeedbackPolicy> policies,
                                                    std::span<const std::vector<double>> points) {
    if (policies.empty()) throw std::invalid_argument("mean_policy: need at least one policy");
    const int nx = policies[0].state_dim(), nu = policies[0].control_dim();
    for (const auto& p : policies)
        if (p.state_dim() != nx || p.control_dim() != nu)
            throw std::invalid_argument("mean_policy: replicas disagree on dimensions");
    const double inv_r = 1.0 / static_cast<double>(policies.size());
    std::vector<std::vector<double>> out(points.size());
    std::vector<double> v(nu);
    for (std::size_t t = 0; t < points.size(); ++t) {
        const std::size_t count = points[t].size() / nx;
        out[t].assign(count * nu, 0.0);
        for (const auto& pol : policies)
            for (std::size_t p = 0; p < count; ++p) {
                pol.eval(static_cast<int>(t), {points[t].data() + p * nx, static_cast<std::size_t>(nx)}, v);
                for (int k = 0; k < nu; ++k) out[t][p * nu + k] += v[k];
            }
        for (double& m : out[t]) m *= inv_r;
    }
    return out;
}

/// Writes `t,center...,value...` rows for every nearest-neighbour cell.
inline void write_policy_csv(std::ostream& os, const FeedbackPolicy& policy) {
    if (policy.kind() != PolicyKind::NearestNeighbor)
        throw std::invalid_argument("write_policy_csv: only tabulated policies can be dumped");
    os << "t";
    for (int k = 0; k < policy.state_dim(); ++k) os << ",center" << k;
    for (int k = 0; k < policy.control_dim(); ++k) os << ",value" << k;
    os << '\n';
    for (int t = 0; t < policy.horizon(); ++t) {
        const auto& tab = policy.table(t);
        for (std::size_t i = 0; i < tab.size(); ++i) {
            os << t;
            for (double c : tab.center(i)) os << ',' << csv_number(c);
            for (double v : tab.value(i)) os << ',' << csv_number(v);
            os << '\n';
        }
    }
}

}  // namespace soc
