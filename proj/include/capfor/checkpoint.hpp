#ifndef CAPFOR_CHECKPOINT_HPP
#define CAPFOR_CHECKPOINT_HPP

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "capfor/autodiff.hpp"
#include "capfor/tensor.hpp"

namespace capfor {

/// Thrown when a checkpoint file is malformed or has the wrong version.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * Binary tensor checkpoint, format "BTKD" version 1.
 *
 * Layout (all integers little-endian):
 *   magic "BTKD" | u32 version | u32 tensor_count
 *   per tensor: u32 name_len | name bytes | u32 rank | u64 dims[rank] | f32 data[]
 *
 * Tensors are written in map order (sorted by name), so the same contents
 * always produce the same bytes.
 */
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

/// Snapshot parameters into a name -> tensor map (names must be unique).
std::map<std::string, Tensor> snapshot(const std::vector<Parameter*>& params);

/// Restore parameter values from a map; throws CheckpointError on missing
/// names or shape mismatches.
void restore(const std::map<std::string, Tensor>& tensors,
             const std::vector<Parameter*>& params);

}  // namespace capfor

#endif  // CAPFOR_CHECKPOINT_HPP
