#include "dcl/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dcl {

Tensor& ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
    return add(name, Tensor(rows, cols, 0.0, true));
}

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
        throw std::invalid_argument("parameter names must be non-empty and free of whitespace: '" + name + "'");
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor leaf(value.rows(), value.cols(), std::vector<double>(value.data().begin(), value.data().end()), true);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, leaf, std::vector<double>(leaf.size(), 0.0), std::vector<double>(leaf.size(), 0.0), 0});
    return entries_.back().value;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw GraphError("unknown parameter: " + name);
    return entries_[it->second].value;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw GraphError("unknown parameter: " + name);
    return entries_[it->second].value;
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

void adam_step(ParameterStore& store, const AdamOptions& opts) {
    bool any = false;
    for (auto& e : store.entries()) {
        if (!e.value.has_grad()) continue;
        any = true;
        ++e.step;
        const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(e.step));
        const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(e.step));
        const auto& g = e.value.node()->grad;
        auto w = e.value.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            e.m[i] = opts.beta1 * e.m[i] + (1.0 - opts.beta1) * g[i];
            e.v[i] = opts.beta2 * e.v[i] + (1.0 - opts.beta2) * g[i] * g[i];
            const double mhat = e.m[i] / bc1;
            const double vhat = e.v[i] / bc2;
            w[i] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
        }
        e.value.zero_grad();
    }
    if (!any) throw GraphError("adam_step: no parameter has a gradient; run backward first");
}

void register_mlp(ParameterStore& store, const std::string& prefix, const std::vector<std::size_t>& widths,
                  std::mt19937_64& rng) {
    if (widths.size() < 2) throw ShapeError("register_mlp: need at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l], out = widths[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::vector<double> w(in * out);
        for (double& x : w) {
            // 53 random mantissa bits mapped to [-bound, bound)
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            x = (2.0 * u - 1.0) * bound;
        }
        const std::string base = prefix + ".l" + std::to_string(l);
        store.add(base + ".W", Tensor(in, out, std::move(w)));
        store.add(base + ".b", Tensor(1, out, 0.0));
    }
}

std::size_t mlp_depth(const ParameterStore& store, const std::string& prefix) {
    std::size_t depth = 0;
    while (store.contains(prefix + ".l" + std::to_string(depth) + ".W")) ++depth;
    return depth;
}

Tensor mlp_forward(const ParameterStore& store, const std::string& prefix, const Tensor& x) {
    const std::size_t depth = mlp_depth(store, prefix);
    if (depth == 0) throw GraphError("mlp_forward: no layers registered under '" + prefix + "'");
    Tensor h = x;
    for (std::size_t l = 0; l < depth; ++l) {
        const std::string base = prefix + ".l" + std::to_string(l);
        const Tensor& w = store.get(base + ".W");
        if (h.cols() != w.rows())
            throw ShapeError("mlp_forward: '" + base + "' expects width " + std::to_string(w.rows()) + ", got " +
                             std::to_string(h.cols()));
        h = add_row(matmul(h, w), store.get(base + ".b"));
        if (l + 1 < depth) h = relu(h);
    }
    return h;
}

// ---- checkpoint container -----------------------------------------------------

namespace {

static_assert(sizeof(double) == 8);

void append_le(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double read_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
    std::ostringstream header;
    header << "DCLCKPT 1\nrecords " << records.size() << '\n';
    std::string payload;
    for (const auto& r : records) {
        if (r.values.size() != r.rows * r.cols) throw ShapeError("checkpoint record '" + r.name + "' has wrong size");
        header << r.name << ' ' << r.rows << ' ' << r.cols << ' ' << payload.size() << ' ' << r.values.size() * 8 << '\n';
        for (double v : r.values) append_le(payload, v);
    }
    header << "end\n";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    auto fail = [&](const std::string& why) { return std::runtime_error("malformed checkpoint " + path.string() + ": " + why); };
    std::string line;
    if (!std::getline(in, line) || line != "DCLCKPT 1") throw fail("bad magic");
    std::size_t count = 0;
    {
        if (!std::getline(in, line)) throw fail("missing record count");
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key >> count) || key != "records") throw fail("bad record count line");
    }
    struct Entry {
        CheckpointRecord rec;
        std::size_t offset, bytes;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw fail("truncated header");
        std::istringstream ls(line);
        Entry e;
        if (!(ls >> e.rec.name >> e.rec.rows >> e.rec.cols >> e.offset >> e.bytes)) throw fail("bad record line: " + line);
        if (e.bytes != e.rec.rows * e.rec.cols * 8) throw fail("byte count mismatch for " + e.rec.name);
        entries.push_back(std::move(e));
    }
    if (!std::getline(in, line) || line != "end") throw fail("missing header terminator");
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<CheckpointRecord> out;
    out.reserve(entries.size());
    for (auto& e : entries) {
        if (e.offset + e.bytes > payload.size()) throw fail("payload truncated for " + e.rec.name);
        const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + e.offset;
        e.rec.values.resize(e.rec.rows * e.rec.cols);
        for (std::size_t k = 0; k < e.rec.values.size(); ++k) e.rec.values[k] = read_le(p + 8 * k);
        out.push_back(std::move(e.rec));
    }
    return out;
}

std::vector<CheckpointRecord> store_records(const ParameterStore& store, bool with_optimizer) {
    std::vector<CheckpointRecord> out;
    for (const auto& e : store.entries()) {
        const auto d = e.value.data();
        out.push_back({e.name, e.value.rows(), e.value.cols(), {d.begin(), d.end()}});
    }
    if (with_optimizer) {
        for (const auto& e : store.entries()) {
            out.push_back({"adam.m/" + e.name, e.value.rows(), e.value.cols(), e.m});
            out.push_back({"adam.v/" + e.name, e.value.rows(), e.value.cols(), e.v});
            out.push_back({"adam.step/" + e.name, 1, 1, {static_cast<double>(e.step)}});
        }
    }
    return out;
}

void load_store_records(ParameterStore& store, const std::vector<CheckpointRecord>& records) {
    std::unordered_map<std::string, const CheckpointRecord*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    for (auto& e : store.entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) throw ShapeError("checkpoint lacks parameter " + e.name);
        const auto& r = *it->second;
        if (r.rows != e.value.rows() || r.cols != e.value.cols())
            throw ShapeError("checkpoint shape mismatch for " + e.name);
        std::copy(r.values.begin(), r.values.end(), e.value.mutable_data().begin());
        e.value.zero_grad();
        if (auto m = by_name.find("adam.m/" + e.name); m != by_name.end()) e.m = m->second->values;
        if (auto v = by_name.find("adam.v/" + e.name); v != by_name.end()) e.v = v->second->values;
        if (auto s = by_name.find("adam.step/" + e.name); s != by_name.end())
            e.step = static_cast<std::uint64_t>(s->second->values.at(0));
    }
}

}  // namespace dcl
