// Copyright 2026 The pdnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pdnet/autodiff.hpp"
#include "pdnet/binarize.hpp"
#include "pdnet/mlp.hpp"
#include "pdnet/problems.hpp"
#include "pdnet/trainer.hpp"

namespace pdnet {

/// Backhaul bit budgets. bits(i, j) is what node i sends to node j; nodes are
/// 0-based and the diagonal is always zero.
class Topology {
public:
    Topology() = default;
    explicit Topology(std::size_t n) : n_(n), bits_(n * n, 0) {}

    /// Every ordered pair gets floor(b) bits.
    static Topology uniform(std::size_t n, double b) {
        if (!(b >= 0) || !std::isfinite(b)) throw std::invalid_argument("Topology: bit budget must be finite and >= 0");
        Topology t(n);
        const int bits = int(std::floor(b));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) t.set(i, j, bits);
        return t;
    }

    std::size_t nodes() const { return n_; }
    int bits(std::size_t from, std::size_t to) const { return bits_.at(from * n_ + to); }
    void set(std::size_t from, std::size_t to, int b) {
        if (from >= n_ || to >= n_) throw std::out_of_range("Topology: node index out of range");
        if (b < 0) throw std::invalid_argument("Topology: negative bit count");
        if (from == to && b != 0) throw std::invalid_argument("Topology: a node does not message itself");
        bits_[from * n_ + to] = b;
    }

    /// Bits node i sends in total.
    int sent(std::size_t i) const {
        int s = 0;
        for (std::size_t j = 0; j < n_; ++j) s += bits(i, j);
        return s;
    }
    /// Bits node i receives in total.
    int received(std::size_t i) const {
        int s = 0;
        for (std::size_t j = 0; j < n_; ++j) s += bits(j, i);
        return s;
    }
    /// Column of v_from where the message to `to` starts. Messages are laid
    /// out by ascending recipient.
    int offset(std::size_t from, std::size_t to) const {
        int s = 0;
        for (std::size_t j = 0; j < to; ++j) s += bits(from, j);
        return s;
    }

    bool operator==(const Topology&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<int> bits_;
};

/// Networks owned by one node: an optional quantizer a_i -> v_hat_i in
/// [-1, 1]^{L_i} followed by a binarizer, and an optimizer c_i -> x_i.
struct NodeNet {
    std::optional<Mlp> quantizer;
    Mlp optimizer;
    StochasticBinarizer binarizer;
};

struct DistributedArchitecture {
    int optimizer_layers = 3;
    int optimizer_width = 20;
    int quantizer_layers = 1;
    int quantizer_width = 20;
    bool batch_norm = true;
};

/// 3 x 10N optimizer and 1 x 10N quantizer, or 4 x 20N and 1 x 20N for the
/// min-rate problem.
inline DistributedArchitecture distributed_architecture(const Problem& problem) {
    const int n = int(problem.num_nodes());
    if (problem.id() == ProblemId::p5) return {4, 20 * n, 1, 20 * n, true};
    return {3, 10 * n, 1, 10 * n, true};
}

class DistributedPolicy {
public:
    DistributedPolicy() = default;
    DistributedPolicy(Topology topology, std::vector<Index> obs_dims, std::vector<NodeNet> nodes)
        : topology_(std::move(topology)), obs_dims_(std::move(obs_dims)), nodes_(std::move(nodes)) {
        if (nodes_.size() != topology_.nodes() || obs_dims_.size() != topology_.nodes())
            throw dimension_error("DistributedPolicy: node count mismatch");
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const int L = topology_.sent(i);
            const auto& q = nodes_[i].quantizer;
            if ((L > 0) != q.has_value())
                throw dimension_error("DistributedPolicy: node " + std::to_string(i) +
                                      (L > 0 ? " sends bits but has no quantizer" : " has a quantizer but sends nothing"));
            if (q && (q->input_dim() != obs_dims_[i] || q->output_dim() != L))
                throw dimension_error("DistributedPolicy: quantizer of node " + std::to_string(i) + " has shape " +
                                      std::to_string(q->input_dim()) + "->" + std::to_string(q->output_dim()) +
                                      ", expected " + std::to_string(obs_dims_[i]) + "->" + std::to_string(L));
            if (nodes_[i].optimizer.input_dim() != obs_dims_[i] + topology_.received(i))
                throw dimension_error("DistributedPolicy: optimizer of node " + std::to_string(i) + " takes " +
                                      std::to_string(nodes_[i].optimizer.input_dim()) + " inputs, expected " +
                                      std::to_string(obs_dims_[i] + topology_.received(i)));
        }
    }

    const Topology& topology() const { return topology_; }
    std::size_t nodes() const { return nodes_.size(); }
    NodeNet& node(std::size_t i) { return nodes_.at(i); }
    const NodeNet& node(std::size_t i) const { return nodes_.at(i); }
    const std::vector<Index>& observation_dims() const { return obs_dims_; }

    /// Local observations a_i as slices of the global observation.
    std::vector<Var> local_observations(Tape& tape, const Matrix& obs) const {
        auto off = block_offsets(obs_dims_);
        if (obs.cols() != off.back())
            throw dimension_error("DistributedPolicy: observation has " + std::to_string(obs.cols()) +
                                  " columns, expected " + std::to_string(off.back()));
        Var all = tape.constant(obs);
        std::vector<Var> a;
        for (std::size_t i = 0; i < nodes_.size(); ++i) a.push_back(slice_cols(all, off[i], obs_dims_[i]));
        return a;
    }

    /// v_i for every node; an invalid Var for nodes that send nothing.
    /// Binarization samples in train and eval_stochastic modes and is the
    /// deterministic sign otherwise.
    std::vector<Var> quantize_all(const std::vector<Var>& a, Mode mode) {
        std::vector<Var> v(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (!nodes_[i].quantizer) continue;
            Var v_hat = nodes_[i].quantizer->forward(*a[i].tape(), a[i], mode);
            v[i] = nodes_[i].binarizer.forward(v_hat, samples_noise(mode));
        }
        return v;
    }

    /// c_i = [a_i | v_1i | ... | v_Ni], senders in ascending order, skipping
    /// i and senders with no bits for i.
    std::vector<Var> assemble_inputs(const std::vector<Var>& a, const std::vector<Var>& v) const {
        std::vector<Var> c;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            std::vector<Var> parts{a[i]};
            for (std::size_t j = 0; j < nodes_.size(); ++j) {
                const int b = j == i ? 0 : topology_.bits(j, i);
                if (b > 0) parts.push_back(slice_cols(v[j], topology_.offset(j, i), b));
            }
            c.push_back(parts.size() == 1 ? parts[0] : concat_cols(std::span<const Var>(parts)));
        }
        return c;
    }

    Var forward(Tape& tape, const Matrix& obs, Mode mode) {
        auto a = local_observations(tape, obs);
        auto v = quantize_all(a, mode);
        auto c = assemble_inputs(a, v);
        std::vector<Var> x;
        for (std::size_t i = 0; i < nodes_.size(); ++i) x.push_back(nodes_[i].optimizer.forward(tape, c[i], mode));
        return concat_cols(std::span<const Var>(x));
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& nd : nodes_) {
            if (nd.quantizer)
                for (Tensor* p : nd.quantizer->parameters()) out.push_back(p);
            for (Tensor* p : nd.optimizer.parameters()) out.push_back(p);
        }
        return out;
    }

    /// One directory per policy: topology.txt plus node_<i>_optimizer.txt and
    /// node_<i>_quantizer.txt (when the node sends bits).
    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        {
            std::ofstream os(dir / "topology.txt");
            os << "topology " << topology_.nodes() << '\n';
            for (std::size_t i = 0; i < topology_.nodes(); ++i) {
                os << "obs " << obs_dims_[i] << " bits";
                for (std::size_t j = 0; j < topology_.nodes(); ++j) os << ' ' << topology_.bits(i, j);
                os << '\n';
            }
            if (!os) throw std::runtime_error("cannot write " + (dir / "topology.txt").string());
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            std::ofstream os(dir / ("node_" + std::to_string(i) + "_optimizer.txt"));
            nodes_[i].optimizer.save(os);
            if (nodes_[i].quantizer) {
                std::ofstream qs(dir / ("node_" + std::to_string(i) + "_quantizer.txt"));
                nodes_[i].quantizer->save(qs);
            }
        }
    }

    /// Binarizer streams restart from `noise_seed`.
    static DistributedPolicy load(const std::filesystem::path& dir, std::uint64_t noise_seed = 0) {
        std::ifstream is(dir / "topology.txt");
        if (!is) throw std::runtime_error("cannot read " + (dir / "topology.txt").string());
        std::string word;
        std::size_t n = 0;
        if (!(is >> word >> n) || word != "topology") throw std::runtime_error("topology.txt: bad header");
        Topology topo(n);
        std::vector<Index> dims(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::string w1, w2;
            if (!(is >> w1 >> dims[i] >> w2) || w1 != "obs" || w2 != "bits")
                throw std::runtime_error("topology.txt: bad row " + std::to_string(i));
            for (std::size_t j = 0; j < n; ++j) {
                int b = 0;
                if (!(is >> b)) throw std::runtime_error("topology.txt: missing bit count");
                topo.set(i, j, b);
            }
        }
        std::vector<NodeNet> nodes(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::ifstream os(dir / ("node_" + std::to_string(i) + "_optimizer.txt"));
            if (!os) throw std::runtime_error("missing optimizer checkpoint for node " + std::to_string(i));
            nodes[i].optimizer = Mlp::load(os);
            if (topo.sent(i) > 0) {
                std::ifstream qs(dir / ("node_" + std::to_string(i) + "_quantizer.txt"));
                if (!qs) throw std::runtime_error("missing quantizer checkpoint for node " + std::to_string(i));
                nodes[i].quantizer = Mlp::load(qs);
            }
            nodes[i].binarizer = StochasticBinarizer(derive_seed(noise_seed, i));
        }
        return DistributedPolicy(std::move(topo), std::move(dims), std::move(nodes));
    }

private:
    Topology topology_;
    std::vector<Index> obs_dims_;
    std::vector<NodeNet> nodes_;
};

/// Fresh networks for every node. Quantizers end in a tanh layer of width
/// L_i; optimizers end in the per-node feasible set.
inline DistributedPolicy make_distributed_policy(const Problem& problem, const Topology& topology,
                                                 const DistributedArchitecture& arch, Rng& rng,
                                                 std::uint64_t noise_seed) {
    if (topology.nodes() != problem.num_nodes())
        throw dimension_error("make_distributed_policy: topology has " + std::to_string(topology.nodes()) +
                              " nodes, problem has " + std::to_string(problem.num_nodes()));
    const auto dims = problem.observation_dims();
    std::vector<NodeNet> nodes(problem.num_nodes());
    Architecture opt{arch.optimizer_layers, arch.optimizer_width, arch.batch_norm};
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const int L = topology.sent(i);
        if (L > 0) {
            std::vector<LayerSpec> specs;
            for (int r = 0; r < arch.quantizer_layers; ++r)
                specs.push_back(LayerSpec::hidden(arch.quantizer_width, arch.batch_norm));
            specs.push_back(LayerSpec::output(L, Activation::tanh));
            nodes[i].quantizer = Mlp(dims[i], std::move(specs), rng);
        }
        const Index in = dims[i] + topology.received(i);
        nodes[i].optimizer = Mlp(in, policy_layers(problem, opt, problem.decision_dims()[i]), rng);
        nodes[i].binarizer = StochasticBinarizer(derive_seed(noise_seed, i));
    }
    return DistributedPolicy(topology, dims, std::move(nodes));
}

inline TrainResult<DistributedPolicy> train_distributed(const Problem& problem, const Topology& topology,
                                                        const TrainConfig& config,
                                                        std::optional<DistributedArchitecture> arch = std::nullopt) {
    Rng init(config.init_seed());
    auto policy = make_distributed_policy(problem, topology, arch.value_or(distributed_architecture(problem)), init,
                                          config.noise_seed());
    return train(problem, std::move(policy), config);
}

}  // namespace pdnet
