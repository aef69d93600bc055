#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scenegen/optim.hpp"
#include "scenegen/tensor.hpp"

namespace scenegen::cli {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary training snapshot: little-endian, CRC-checked per blob, byte-stable
// across save/load/save round trips.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    uint32_t version = kVersion;
    std::string config_text;
    uint64_t step = 0;
    std::array<uint64_t, 4> rng_state{};
    std::vector<std::pair<std::string, uint64_t>> counters;

    struct Blob {
        std::string name;
        std::vector<int> shape;
        std::vector<float> data;
    };
    std::vector<Blob> blobs;

    void add_blob(const std::string& name, const std::vector<int>& shape,
                  const std::vector<float>& data);
    const Blob& find(const std::string& name) const; // throws when absent
    uint64_t counter(const std::string& name) const;

    // named model parameters <-> blobs
    void add_params(const std::vector<std::pair<std::string, num::Tensor>>& named);
    void restore_params(const std::vector<std::pair<std::string, num::Tensor>>& named) const;

    // optimizer moments + step counter under a prefix
    void add_adam(const std::string& prefix, num::Adam& opt,
                  const std::vector<std::pair<std::string, num::Tensor>>& named);
    void restore_adam(const std::string& prefix, num::Adam& opt,
                      const std::vector<std::pair<std::string, num::Tensor>>& named) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path); // integrity + version checks

} // namespace scenegen::cli
