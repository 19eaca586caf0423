#pragma once

#include "dcl/tensor.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace dcl {

// Named trainable tensors in insertion order, plus the Adam state that goes
// with each of them.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        std::vector<double> m;
        std::vector<double> v;
        std::uint64_t step = 0;
    };

    // Registers a zero-initialized parameter. Names must be unique; the
    // returned reference stays valid as more parameters are added.
    Tensor& add(const std::string& name, std::size_t rows, std::size_t cols);
    Tensor& add(const std::string& name, Tensor value);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    std::size_t size() const { return entries_.size(); }
    const std::deque<Entry>& entries() const { return entries_; }
    std::deque<Entry>& entries() { return entries_; }

    void zero_grad();
    std::size_t parameter_count() const;

private:
    std::deque<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update over every parameter holding a gradient,
// then clears the gradients. Parameters the loss never reached are skipped.
// Throws GraphError when no parameter has a gradient.
void adam_step(ParameterStore& store, const AdamOptions& opts = {});

// Glorot-uniform weights (+-sqrt(6 / (fan_in + fan_out))) and zero biases
// for layers `prefix.l{i}.W` (in x out) and `prefix.l{i}.b` (1 x out).
void register_mlp(ParameterStore& store, const std::string& prefix, const std::vector<std::size_t>& widths,
                  std::mt19937_64& rng);

// Row-wise MLP: affine layers with ReLU between them and nothing after the
// last one. Throws GraphError on an unknown prefix, ShapeError on a width
// mismatch.
Tensor mlp_forward(const ParameterStore& store, const std::string& prefix, const Tensor& x);

std::size_t mlp_depth(const ParameterStore& store, const std::string& prefix);

// ---- checkpoint container -----------------------------------------------------
//
// Layout: a text header
//   DCLCKPT 1
//   records <n>
//   <name> <rows> <cols> <byte offset> <byte count>     (n lines)
//   end
// followed by the concatenated little-endian IEEE-754 float64 payloads.
// Offsets are relative to the first payload byte.

struct CheckpointRecord {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

// Parameters, optionally with Adam moments ("adam.m/<name>", "adam.v/<name>",
// "adam.step/<name>"), plus any caller-supplied extra records.
std::vector<CheckpointRecord> store_records(const ParameterStore& store, bool with_optimizer);
// Overwrites values (and optimizer state when present) of existing parameters.
// Throws ShapeError if a parameter is missing or its shape differs.
void load_store_records(ParameterStore& store, const std::vector<CheckpointRecord>& records);

}  // namespace dcl
