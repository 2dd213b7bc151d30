#include "kooptrain/param_space.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kooptrain/errors.hpp"

namespace koop {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Sigmoid: return "sigmoid";
        case Activation::ReLU: return "relu";
        case Activation::Step: return "step";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "relu") return Activation::ReLU;
    if (s == "step") return Activation::Step;
    throw ConfigError("unknown activation '" + s + "' (expected sigmoid|relu|step)");
}

Architecture::Architecture(std::vector<int> sizes, Activation act, bool bias)
    : layer_sizes(std::move(sizes)), activation(act), has_bias(bias) {
    if (layer_sizes.size() < 2) {
        throw ConfigError("architecture needs at least 2 layers, got " +
                          std::to_string(layer_sizes.size()));
    }
    for (int s : layer_sizes) {
        if (s < 1) throw ConfigError("layer sizes must be >= 1");
    }
}

Eigen::Index Architecture::param_count() const {
    Eigen::Index n = 0;
    for (int l = 0; l < depth(); ++l) {
        n += static_cast<Eigen::Index>(node_span(l)) * layer_sizes[l + 1];
    }
    return n;
}

int Architecture::node_span(int l) const {
    return layer_sizes[l] + (has_bias ? 1 : 0);
}

Eigen::Index Architecture::layer_offset(int l) const {
    Eigen::Index off = 0;
    for (int i = 0; i < l; ++i) {
        off += static_cast<Eigen::Index>(node_span(i)) * layer_sizes[i + 1];
    }
    return off;
}

Architecture Architecture::parse(const std::string& sizes, Activation act, bool bias) {
    std::vector<int> out;
    std::stringstream ss(sizes);
    std::string part;
    while (std::getline(ss, part, ':')) {
        try {
            size_t pos = 0;
            int v = std::stoi(part, &pos);
            if (pos != part.size()) throw std::invalid_argument(part);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad architecture string '" + sizes + "': token '" + part + "'");
        }
    }
    return Architecture(std::move(out), act, bias);
}

std::string Architecture::size_string() const {
    std::string s;
    for (size_t i = 0; i < layer_sizes.size(); ++i) {
        if (i) s += ':';
        s += std::to_string(layer_sizes[i]);
    }
    return s;
}

ParamVector flatten(const Architecture& arch, const std::vector<LayerParams>& layers) {
    if (static_cast<int>(layers.size()) != arch.depth()) {
        throw ConfigError("flatten: expected " + std::to_string(arch.depth()) +
                          " weight layers, got " + std::to_string(layers.size()));
    }
    ParamVector v(arch.param_count());
    Eigen::Index pos = 0;
    for (int l = 0; l < arch.depth(); ++l) {
        const auto& lp = layers[l];
        const int n_in = arch.layer_sizes[l];
        const int n_out = arch.layer_sizes[l + 1];
        if (lp.W.rows() != n_out || lp.W.cols() != n_in) {
            throw ConfigError("flatten: layer " + std::to_string(l) + " weight shape " +
                              std::to_string(lp.W.rows()) + "x" + std::to_string(lp.W.cols()) +
                              " does not match " + std::to_string(n_out) + "x" +
                              std::to_string(n_in));
        }
        if (arch.has_bias && lp.b.size() != n_out) {
            throw ConfigError("flatten: layer " + std::to_string(l) + " bias length " +
                              std::to_string(lp.b.size()) + " != " + std::to_string(n_out));
        }
        for (int j = 0; j < n_out; ++j) {
            v.segment(pos, n_in) = lp.W.row(j).transpose();
            pos += n_in;
            if (arch.has_bias) v(pos++) = lp.b(j);
        }
    }
    return v;
}

std::vector<LayerParams> unflatten(const Architecture& arch, const ParamVector& v) {
    if (v.size() != arch.param_count()) {
        throw ConfigError("unflatten: vector length " + std::to_string(v.size()) +
                          " != parameter count " + std::to_string(arch.param_count()));
    }
    std::vector<LayerParams> layers(arch.depth());
    Eigen::Index pos = 0;
    for (int l = 0; l < arch.depth(); ++l) {
        const int n_in = arch.layer_sizes[l];
        const int n_out = arch.layer_sizes[l + 1];
        layers[l].W.resize(n_out, n_in);
        if (arch.has_bias) layers[l].b.resize(n_out);
        for (int j = 0; j < n_out; ++j) {
            layers[l].W.row(j) = v.segment(pos, n_in).transpose();
            pos += n_in;
            if (arch.has_bias) layers[l].b(j) = v(pos++);
        }
    }
    return layers;
}

void validate_params(const Architecture& arch, const ParamVector& v, const std::string& context) {
    if (v.size() != arch.param_count()) {
        throw ConfigError(context + ": parameter vector length " + std::to_string(v.size()) +
                          " != " + std::to_string(arch.param_count()));
    }
    if (!v.allFinite()) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v(i))) {
                throw NumericError(context + ": non-finite parameter at index " +
                                   std::to_string(i));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

std::string to_string(const Scheme& s) {
    switch (s.kind) {
        case SchemeKind::SingleWeight: return "single_weight";
        case SchemeKind::QuasiNode: return "quasi_node(" + std::to_string(s.q) + ")";
        case SchemeKind::Node: return "node";
        case SchemeKind::Layer: return "layer";
        case SchemeKind::Network: return "network";
    }
    return "?";
}

bool PatchGroup::contiguous() const {
    for (size_t i = 1; i < indices.size(); ++i) {
        if (indices[i] != indices[i - 1] + 1) return false;
    }
    return !indices.empty();
}

namespace {

std::vector<Eigen::Index> index_range(Eigen::Index first, Eigen::Index count) {
    std::vector<Eigen::Index> out(static_cast<size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) out[static_cast<size_t>(i)] = first + i;
    return out;
}

void check_quasi_node_q(const Architecture& arch, int q) {
    int max_span = 0;
    for (int l = 0; l < arch.depth(); ++l) max_span = std::max(max_span, arch.node_span(l));
    if (q < 1 || q > max_span) {
        throw ConfigError("quasi_node q=" + std::to_string(q) + " out of range [1, " +
                          std::to_string(max_span) + "]");
    }
}

// Emits the groups of one weight layer under the given scheme.
void emit_layer_groups(const Architecture& arch, int l, const Scheme& scheme,
                       std::vector<PatchGroup>& out) {
    const Eigen::Index base = arch.layer_offset(l);
    const int span = arch.node_span(l);
    const int n_out = arch.layer_sizes[l + 1];
    switch (scheme.kind) {
        case SchemeKind::SingleWeight:
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(span) * n_out; ++i) {
                out.push_back({{base + i}, scheme});
            }
            break;
        case SchemeKind::Node:
            for (int j = 0; j < n_out; ++j) {
                out.push_back({index_range(base + static_cast<Eigen::Index>(j) * span, span),
                               scheme});
            }
            break;
        case SchemeKind::QuasiNode: {
            // Contiguous chunks of size q inside each node's range; the final
            // chunk (which holds the bias) may be shorter.
            const int q = scheme.q;
            for (int j = 0; j < n_out; ++j) {
                Eigen::Index node_base = base + static_cast<Eigen::Index>(j) * span;
                for (int off = 0; off < span; off += q) {
                    const int len = std::min(q, span - off);
                    out.push_back({index_range(node_base + off, len), scheme});
                }
            }
            break;
        }
        case SchemeKind::Layer:
            out.push_back({index_range(base, static_cast<Eigen::Index>(span) * n_out), scheme});
            break;
        case SchemeKind::Network:
            throw ConfigError("network scheme cannot be applied per-layer");
    }
}

}  // namespace

Partition build_partition(const Architecture& arch, Scheme scheme) {
    Partition p;
    p.param_count = arch.param_count();
    if (scheme.kind == SchemeKind::Network) {
        p.groups.push_back({index_range(0, p.param_count), scheme});
        return p;
    }
    if (scheme.kind == SchemeKind::QuasiNode) check_quasi_node_q(arch, scheme.q);
    for (int l = 0; l < arch.depth(); ++l) emit_layer_groups(arch, l, scheme, p.groups);
    return p;
}

Partition build_partition(const Architecture& arch, const std::vector<Scheme>& per_layer) {
    if (static_cast<int>(per_layer.size()) != arch.depth()) {
        throw ConfigError("per-layer scheme map has " + std::to_string(per_layer.size()) +
                          " entries, architecture has " + std::to_string(arch.depth()) +
                          " weight layers");
    }
    Partition p;
    p.param_count = arch.param_count();
    for (int l = 0; l < arch.depth(); ++l) {
        const Scheme& s = per_layer[l];
        if (s.kind == SchemeKind::QuasiNode) {
            if (s.q < 1 || s.q > arch.node_span(l)) {
                throw ConfigError("layer " + std::to_string(l) + ": quasi_node q=" +
                                  std::to_string(s.q) + " out of range [1, " +
                                  std::to_string(arch.node_span(l)) + "]");
            }
        }
        emit_layer_groups(arch, l, s, p.groups);
    }
    return p;
}

ComplexityEstimate predicted_complexity(const Scheme& scheme, int n, int k) {
    if (n < 1) throw ConfigError("predicted_complexity: n must be >= 1");
    if (k < 2) throw ConfigError("predicted_complexity: k must be >= 2");
    const double nd = n, kd = k;
    const double n3 = nd * nd * nd;
    switch (scheme.kind) {
        case SchemeKind::SingleWeight:
            return {kd * n3, n3};
        case SchemeKind::QuasiNode: {
            const double q = scheme.q;
            return {std::max(kd * q * n3, n3 * q * q), q * n3};
        }
        case SchemeKind::Node:
            return {std::max(kd * n3 * nd, n3 * nd * nd), n3 * nd};
        case SchemeKind::Layer:
            return {std::max(kd * n3 * nd * nd, std::pow(nd, 7)), n3 * nd * nd};
        case SchemeKind::Network:
            return {std::max(kd * n3 * n3, std::pow(nd, 9)), n3 * n3};
    }
    throw ConfigError("predicted_complexity: bad scheme");
}

}  // namespace koop
