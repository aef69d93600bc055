#include "scenegen/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "scenegen/crc32.hpp"

namespace scenegen::cli {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'E', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.append(bytes, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
    put<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& buffer;
    size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > buffer.size()) {
            throw CheckpointError("checkpoint: truncated file");
        }
        T value;
        std::memcpy(&value, buffer.data() + pos, sizeof(T));
        pos += sizeof(T);
        return value;
    }

    std::string get_string() {
        const uint32_t len = get<uint32_t>();
        if (pos + len > buffer.size()) throw CheckpointError("checkpoint: truncated string");
        std::string s(buffer.data() + pos, len);
        pos += len;
        return s;
    }
};

} // namespace

void Checkpoint::add_blob(const std::string& name, const std::vector<int>& shape,
                          const std::vector<float>& data) {
    blobs.push_back({name, shape, data});
}

const Checkpoint::Blob& Checkpoint::find(const std::string& name) const {
    for (const Blob& blob : blobs) {
        if (blob.name == name) return blob;
    }
    throw CheckpointError("checkpoint: missing blob '" + name + "'");
}

uint64_t Checkpoint::counter(const std::string& name) const {
    for (const auto& [key, value] : counters) {
        if (key == name) return value;
    }
    throw CheckpointError("checkpoint: missing counter '" + name + "'");
}

void Checkpoint::add_params(const std::vector<std::pair<std::string, num::Tensor>>& named) {
    for (const auto& [name, tensor] : named) {
        add_blob(name, tensor.shape(), tensor.values());
    }
}

void Checkpoint::restore_params(
    const std::vector<std::pair<std::string, num::Tensor>>& named) const {
    for (const auto& [name, tensor] : named) {
        const Blob& blob = find(name);
        if (blob.shape != tensor.shape()) {
            throw CheckpointError("checkpoint: shape mismatch for '" + name + "'");
        }
        num::Tensor target = tensor;
        target.values() = blob.data;
    }
}

void Checkpoint::add_adam(const std::string& prefix, num::Adam& opt,
                          const std::vector<std::pair<std::string, num::Tensor>>& named) {
    if (named.size() != opt.size()) {
        throw CheckpointError("checkpoint: optimizer/parameter count mismatch");
    }
    for (size_t i = 0; i < named.size(); ++i) {
        add_blob(prefix + ".m." + named[i].first, named[i].second.shape(), opt.moment1(i));
        add_blob(prefix + ".v." + named[i].first, named[i].second.shape(), opt.moment2(i));
    }
    counters.emplace_back(prefix + ".t", static_cast<uint64_t>(opt.t()));
}

void Checkpoint::restore_adam(const std::string& prefix, num::Adam& opt,
                              const std::vector<std::pair<std::string, num::Tensor>>& named) const {
    if (named.size() != opt.size()) {
        throw CheckpointError("checkpoint: optimizer/parameter count mismatch");
    }
    for (size_t i = 0; i < named.size(); ++i) {
        opt.moment1(i) = find(prefix + ".m." + named[i].first).data;
        opt.moment2(i) = find(prefix + ".v." + named[i].first).data;
    }
    opt.set_t(static_cast<int64_t>(counter(prefix + ".t")));
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put<uint32_t>(out, checkpoint.version);
    put<uint64_t>(out, checkpoint.step);
    for (uint64_t word : checkpoint.rng_state) put<uint64_t>(out, word);
    put_string(out, checkpoint.config_text);

    put<uint32_t>(out, static_cast<uint32_t>(checkpoint.counters.size()));
    for (const auto& [name, value] : checkpoint.counters) {
        put_string(out, name);
        put<uint64_t>(out, value);
    }

    put<uint32_t>(out, static_cast<uint32_t>(checkpoint.blobs.size()));
    for (const Checkpoint::Blob& blob : checkpoint.blobs) {
        put_string(out, blob.name);
        put<uint32_t>(out, static_cast<uint32_t>(blob.shape.size()));
        for (int extent : blob.shape) put<int32_t>(out, extent);
        const uint64_t bytes = blob.data.size() * sizeof(float);
        put<uint64_t>(out, bytes);
        const size_t start = out.size();
        out.resize(out.size() + bytes);
        std::memcpy(out.data() + start, blob.data.data(), bytes);
        put<uint32_t>(out, crc32(out.data() + start, bytes));
    }
    put<uint32_t>(out, crc32(out.data(), out.size()));

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw CheckpointError("checkpoint: short write on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw CheckpointError("checkpoint: cannot open " + path);
    std::string buffer((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    if (buffer.size() < sizeof(kMagic) + 8 ||
        std::memcmp(buffer.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("checkpoint: bad magic in " + path);
    }
    const uint32_t file_crc = crc32(buffer.data(), buffer.size() - 4);
    uint32_t stored_crc;
    std::memcpy(&stored_crc, buffer.data() + buffer.size() - 4, 4);
    if (file_crc != stored_crc) {
        throw CheckpointError("checkpoint: file integrity check failed for " + path);
    }

    Reader reader{buffer, sizeof(kMagic)};
    Checkpoint checkpoint;
    checkpoint.version = reader.get<uint32_t>();
    if (checkpoint.version != Checkpoint::kVersion) {
        throw CheckpointError("checkpoint: version mismatch (file has " +
                              std::to_string(checkpoint.version) + ", reader expects " +
                              std::to_string(Checkpoint::kVersion) + ")");
    }
    checkpoint.step = reader.get<uint64_t>();
    for (uint64_t& word : checkpoint.rng_state) word = reader.get<uint64_t>();
    checkpoint.config_text = reader.get_string();

    const uint32_t n_counters = reader.get<uint32_t>();
    for (uint32_t i = 0; i < n_counters; ++i) {
        std::string name = reader.get_string();
        const uint64_t value = reader.get<uint64_t>();
        checkpoint.counters.emplace_back(std::move(name), value);
    }

    const uint32_t n_blobs = reader.get<uint32_t>();
    for (uint32_t i = 0; i < n_blobs; ++i) {
        Checkpoint::Blob blob;
        blob.name = reader.get_string();
        const uint32_t ndim = reader.get<uint32_t>();
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            blob.shape.push_back(reader.get<int32_t>());
            numel *= blob.shape.back();
        }
        const uint64_t bytes = reader.get<uint64_t>();
        if (bytes != static_cast<uint64_t>(numel) * sizeof(float)) {
            throw CheckpointError("checkpoint: blob '" + blob.name + "' length mismatch");
        }
        if (reader.pos + bytes + 4 > buffer.size()) {
            throw CheckpointError("checkpoint: blob '" + blob.name + "' truncated");
        }
        blob.data.resize(static_cast<size_t>(numel));
        std::memcpy(blob.data.data(), buffer.data() + reader.pos, bytes);
        const uint32_t computed = crc32(buffer.data() + reader.pos, bytes);
        reader.pos += bytes;
        const uint32_t stored = reader.get<uint32_t>();
        if (computed != stored) {
            throw CheckpointError("checkpoint: blob '" + blob.name + "' failed integrity check");
        }
        checkpoint.blobs.push_back(std::move(blob));
    }
    return checkpoint;
}

} // namespace scenegen::cli
