#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace koop {

enum class Activation { Sigmoid, ReLU, Step };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Flat vector of every weight and bias of a network at one training
/// iteration. Ordering contract: layer-major, then destination-node-major,
/// then source-node index, with each node's bias immediately after its
/// incoming weights. Node groups are therefore contiguous index ranges.
using ParamVector = Eigen::VectorXd;

struct Architecture {
    std::vector<int> layer_sizes;  // input, hidden..., output
    Activation activation = Activation::Sigmoid;
    bool has_bias = true;

    Architecture() = default;
    Architecture(std::vector<int> sizes, Activation act, bool bias);

    int layer_count() const { return static_cast<int>(layer_sizes.size()); }
    /// Number of weight layers (= layer_count() - 1).
    int depth() const { return layer_count() - 1; }
    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }

    /// Total parameter count N = sum over layers of (fan_in + bias) * fan_out.
    Eigen::Index param_count() const;
    /// Parameters per node of weight layer l (0-based): fan_in + bias.
    int node_span(int l) const;
    /// Offset of weight layer l's block inside a ParamVector.
    Eigen::Index layer_offset(int l) const;

    /// Parses the colon-separated size notation, e.g. "1:10:10:2".
    static Architecture parse(const std::string& sizes, Activation act, bool bias);
    std::string size_string() const;
};

struct LayerParams {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;  // out (empty when the architecture has no bias)
};

ParamVector flatten(const Architecture& arch, const std::vector<LayerParams>& layers);
std::vector<LayerParams> unflatten(const Architecture& arch, const ParamVector& v);

/// Throws NumericError when v has NaN/Inf entries, ConfigError on bad length.
void validate_params(const Architecture& arch, const ParamVector& v, const std::string& context);

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

enum class SchemeKind { SingleWeight, QuasiNode, Node, Layer, Network };

struct Scheme {
    SchemeKind kind = SchemeKind::Node;
    int q = 0;  // chunk size, QuasiNode only

    static Scheme single_weight() { return {SchemeKind::SingleWeight, 0}; }
    static Scheme quasi_node(int q) { return {SchemeKind::QuasiNode, q}; }
    static Scheme node() { return {SchemeKind::Node, 0}; }
    static Scheme layer() { return {SchemeKind::Layer, 0}; }
    static Scheme network() { return {SchemeKind::Network, 0}; }

    bool operator==(const Scheme&) const = default;
};

std::string to_string(const Scheme& s);

struct PatchGroup {
    std::vector<Eigen::Index> indices;
    Scheme scheme;

    Eigen::Index size() const { return static_cast<Eigen::Index>(indices.size()); }
    /// True when indices form the contiguous run [first, first+size).
    bool contiguous() const;
};

/// Disjoint cover of {0..N-1} into Koopman patches.
struct Partition {
    Eigen::Index param_count = 0;
    std::vector<PatchGroup> groups;

    Eigen::Index group_count() const { return static_cast<Eigen::Index>(groups.size()); }
};

Partition build_partition(const Architecture& arch, Scheme scheme);
/// Per-layer scheme map (one entry per weight layer). Network is global-only
/// and rejected here.
Partition build_partition(const Architecture& arch, const std::vector<Scheme>& per_layer);

struct ComplexityEstimate {
    double construction_flops = 0;
    double per_iteration_flops = 0;
};

/// Order-of-magnitude cost formulas for the canonical cube network
/// (n-1 hidden layers, constant width n, ~n^3 parameters) built from k
/// snapshots.
ComplexityEstimate predicted_complexity(const Scheme& scheme, int n, int k);

}  // namespace koop
