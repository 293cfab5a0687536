#pragma once

// Model file layout (all integers little-endian):
//   "OPTIFRST"                8-byte magic
//   u32 format version
//   u64 header length, then that many bytes of JSON (config echo, constants)
//   u8 scaler flag; when 1, f64[dim] mins then f64[dim] maxs
//   per tree: u32 node count, u32 root, then nodes in index order
//     u8 kind, u32 depth, u32 size, payload
//     leaf    (0): u32 count
//     lsh     (1): u32 dim, f64[dim] a, f64 b, f64 w, u32 k, i64[k] keys, u32[k] children
//     learned (2): u32 dim, u32 k, f64[k*dim] centres, u32[k] children
// Doubles are stored as raw IEEE-754 bits, so a loaded model scores bit-identically.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "optiforest/error.hpp"
#include "optiforest/forest.hpp"

namespace optiforest {

inline constexpr std::array<char, 8> kModelMagic = {'O', 'P', 'T', 'I', 'F', 'R', 'S', 'T'};
inline constexpr std::uint32_t kModelVersion = 1;

inline nlohmann::json config_to_json(const ForestConfig& c) {
    nlohmann::json j;
    j["trees"] = c.trees;
    j["sample_size"] = c.psi;
    j["epsilon"] = c.epsilon ? nlohmann::json(*c.epsilon) : nlohmann::json("auto");
    j["distribution"] = c.distribution.name();
    j["seed"] = c.seed;
    j["mode"] = mode_name(c.mode);
    j["lsh_arity"] = c.lsh_arity ? nlohmann::json(*c.lsh_arity) : nlohmann::json(nullptr);
    j["min_max_scale"] = c.min_max_scale;
    return j;
}

inline ForestConfig config_from_json(const nlohmann::json& j) {
    ForestConfig c;
    c.trees = j.at("trees").get<std::size_t>();
    c.psi = j.at("sample_size").get<std::size_t>();
    if (j.at("epsilon").is_number()) c.epsilon = j.at("epsilon").get<std::size_t>();
    c.distribution = theory::BranchingDistribution::parse(j.at("distribution").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mode = parse_mode(j.at("mode").get<std::string>());
    if (!j.at("lsh_arity").is_null()) c.lsh_arity = j.at("lsh_arity").get<std::int64_t>();
    c.min_max_scale = j.at("min_max_scale").get<bool>();
    return c;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    template <class T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }
    void bytes(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& in) : in_(in) {}

    template <class T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        T value;
        if (!in_.read(reinterpret_cast<char*>(&value), sizeof(T))) throw DataError("model file is truncated");
        return value;
    }
    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        if (n && !in_.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("model file is truncated");
        return s;
    }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& in_;
};

// Guards allocations driven by untrusted counts.
inline std::uint32_t bounded(std::uint32_t n, std::uint32_t limit, const char* what) {
    if (n > limit) throw DataError(std::string("model file has an implausible ") + what + " (" + std::to_string(n) + ")");
    return n;
}

inline void write_tree(BinaryWriter& w, const Tree& tree) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.nodes.size()));
    w.put<std::uint32_t>(tree.root);
    for (const TreeNode& n : tree.nodes) {
        w.put<std::uint8_t>(static_cast<std::uint8_t>(n.router.index()));
        w.put<std::uint32_t>(n.depth);
        w.put<std::uint32_t>(n.size);
        if (const auto* leaf = std::get_if<Leaf>(&n.router)) {
            w.put<std::uint32_t>(leaf->count);
        } else if (const auto* lsh = std::get_if<LshRouter>(&n.router)) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(lsh->fn.a.size()));
            for (double a : lsh->fn.a) w.put<double>(a);
            w.put<double>(lsh->fn.b);
            w.put<double>(lsh->fn.w);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(lsh->keys.size()));
            for (auto k : lsh->keys) w.put<std::int64_t>(k);
            for (auto c : lsh->children) w.put<std::uint32_t>(c);
        } else {
            const auto& learned = std::get<LearnedRouter>(n.router);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(learned.dim));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(learned.children.size()));
            for (double c : learned.centres) w.put<double>(c);
            for (auto c : learned.children) w.put<std::uint32_t>(c);
        }
    }
}

inline Tree read_tree(BinaryReader& r, std::size_t dim) {
    constexpr std::uint32_t kMaxNodes = 1u << 26;
    constexpr std::uint32_t kMaxDim = 1u << 20;
    Tree tree;
    const std::uint32_t count = bounded(r.get<std::uint32_t>(), kMaxNodes, "node count");
    if (count == 0) throw DataError("model file contains an empty tree");
    tree.root = r.get<std::uint32_t>();
    if (tree.root >= count) throw DataError("model tree root out of range");
    tree.nodes.resize(count);
    const auto check_children = [&](NodeId parent, const std::vector<NodeId>& kids) {
        if (kids.empty()) throw DataError("model router node without children");
        for (NodeId c : kids) {
            // Children follow their parent, which rules out cycles.
            if (c >= count || c <= parent) throw DataError("model child index out of range");
        }
    };
    for (NodeId id = 0; id < count; ++id) {
        TreeNode& n = tree.nodes[id];
        const auto kind = r.get<std::uint8_t>();
        n.depth = r.get<std::uint32_t>();
        n.size = r.get<std::uint32_t>();
        if (kind == 0) {
            n.router = Leaf{r.get<std::uint32_t>()};
        } else if (kind == 1) {
            LshRouter lsh;
            const auto d = bounded(r.get<std::uint32_t>(), kMaxDim, "dimension");
            if (d != dim) throw DataError("model LSH router dimension mismatch");
            lsh.fn.a.resize(d);
            for (double& a : lsh.fn.a) a = r.get<double>();
            lsh.fn.b = r.get<double>();
            lsh.fn.w = r.get<double>();
            if (!(lsh.fn.w > 0.0)) throw DataError("model LSH bucket width must be positive");
            const auto k = bounded(r.get<std::uint32_t>(), count, "child count");
            lsh.keys.resize(k);
            for (auto& key : lsh.keys) key = r.get<std::int64_t>();
            if (!std::is_sorted(lsh.keys.begin(), lsh.keys.end())) throw DataError("model LSH keys are not sorted");
            lsh.children.resize(k);
            for (auto& c : lsh.children) c = r.get<std::uint32_t>();
            check_children(id, lsh.children);
            n.router = std::move(lsh);
        } else if (kind == 2) {
            LearnedRouter learned;
            learned.dim = bounded(r.get<std::uint32_t>(), kMaxDim, "dimension");
            if (learned.dim != dim) throw DataError("model learned router dimension mismatch");
            const auto k = bounded(r.get<std::uint32_t>(), count, "child count");
            learned.centres.resize(static_cast<std::size_t>(k) * learned.dim);
            for (double& c : learned.centres) c = r.get<double>();
            learned.children.resize(k);
            for (auto& c : learned.children) c = r.get<std::uint32_t>();
            check_children(id, learned.children);
            n.router = std::move(learned);
        } else {
            throw DataError("model file has unknown node kind " + std::to_string(kind));
        }
    }
    return tree;
}

} // namespace detail

inline void save_model(const Forest& forest, std::ostream& out) {
    nlohmann::json header;
    header["format_version"] = kModelVersion;
    header["config"] = config_to_json(forest.config);
    header["dim"] = forest.dim;
    header["psi_effective"] = forest.psi_effective;
    header["epsilon_used"] = forest.epsilon_used;
    header["trees"] = forest.trees.size();
    const std::string text = header.dump();

    detail::BinaryWriter w(out);
    w.bytes(kModelMagic.data(), kModelMagic.size());
    w.put<std::uint32_t>(kModelVersion);
    w.put<std::uint64_t>(text.size());
    w.bytes(text.data(), text.size());
    w.put<std::uint8_t>(forest.scaler ? 1 : 0);
    if (forest.scaler) {
        for (double v : forest.scaler->mins) w.put<double>(v);
        for (double v : forest.scaler->maxs) w.put<double>(v);
    }
    for (const Tree& t : forest.trees) detail::write_tree(w, t);
    if (!out) throw DataError("failed writing model");
}

inline void save_model(const Forest& forest, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    save_model(forest, out);
}

/// Reads a model; any inconsistency throws DataError and nothing is returned.
inline Forest load_model(std::istream& in) {
    detail::BinaryReader r(in);
    std::array<char, 8> magic{};
    const std::string head = r.bytes(magic.size());
    if (std::memcmp(head.data(), kModelMagic.data(), kModelMagic.size()) != 0) {
        throw DataError("not a model file (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kModelVersion) {
        throw DataError("unsupported model format version " + std::to_string(version) + " (expected " +
                        std::to_string(kModelVersion) + ")");
    }
    const auto length = r.get<std::uint64_t>();
    if (length > (1u << 24)) throw DataError("model header too large");

    Forest forest;
    std::size_t tree_count = 0;
    try {
        const auto header = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(length)));
        if (header.at("format_version").get<std::uint32_t>() != version) {
            throw DataError("model header version disagrees with file version");
        }
        forest.config = config_from_json(header.at("config"));
        forest.dim = header.at("dim").get<std::size_t>();
        forest.psi_effective = header.at("psi_effective").get<std::size_t>();
        forest.epsilon_used = header.at("epsilon_used").get<std::size_t>();
        tree_count = header.at("trees").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupted model header: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("corrupted model header: ") + e.what());
    }
    if (forest.dim == 0 || forest.dim > (1u << 20)) throw DataError("model header has invalid dimension");
    if (forest.psi_effective < 2) throw DataError("model header has invalid sample size");
    if (tree_count == 0 || tree_count != forest.config.trees) throw DataError("model header has invalid tree count");
    forest.c_psi = average_path_length(forest.psi_effective);

    const auto has_scaler = r.get<std::uint8_t>();
    if (has_scaler > 1) throw DataError("model file has an invalid scaler flag");
    if (has_scaler) {
        MinMaxScaler s;
        s.mins.resize(forest.dim);
        s.maxs.resize(forest.dim);
        for (double& v : s.mins) v = r.get<double>();
        for (double& v : s.maxs) v = r.get<double>();
        forest.scaler = std::move(s);
    }
    forest.trees.reserve(tree_count);
    for (std::size_t i = 0; i < tree_count; ++i) forest.trees.push_back(detail::read_tree(r, forest.dim));
    if (!r.at_end()) throw DataError("model file has trailing bytes");
    return forest;
}

inline Forest load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model '" + path + "'");
    return load_model(in);
}

} // namespace optiforest
