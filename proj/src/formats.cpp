#include "everest/formats.hpp"

#include "everest/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace everest {

namespace {

class ByteWriter {
public:
    void magic(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }

    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }

    void expect_magic(const char (&tag)[5], const char* what) {
        need(4, what);
        if (std::memcmp(bytes_.data(), tag, 4) != 0) {
            throw FormatError(std::string("bad magic for ") + what + " file", 0);
        }
        pos_ = 4;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::vector<std::uint8_t> raw(std::size_t n, const char* what) {
        need(n, what);
        std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }
    std::vector<float> f32s(std::size_t n, const char* what) {
        need_items(n, 4, what);
        std::vector<float> out(n);
        for (float& v : out) v = f32(what);
        return out;
    }
    void expect_end() const {
        if (pos_ != bytes_.size()) {
            throw FormatError("trailing bytes after payload", pos_);
        }
    }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated while reading ") + what, pos_);
        }
    }
    void need_items(std::size_t count, std::size_t width, const char* what) const {
        if (count > (bytes_.size() - pos_) / width) {
            throw FormatError(std::string("truncated while reading ") + what, pos_);
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void expect_version(ByteReader& in) {
    const std::size_t at = in.offset();
    const std::uint32_t v = in.u32("version");
    if (v != kFormatVersion) {
        throw FormatError("unsupported version " + std::to_string(v), at);
    }
}

} // namespace

std::vector<std::uint8_t> encode_activations(std::span<const ActivationMatrix> layers) {
    ByteWriter out;
    out.magic("ACTV");
    out.u32(kFormatVersion);
    out.u32(static_cast<std::uint32_t>(layers.size()));
    for (const ActivationMatrix& m : layers) {
        out.u32(m.layer().index);
        out.u32(static_cast<std::uint32_t>(m.rows()));
        out.u32(static_cast<std::uint32_t>(m.cols()));
        for (float v : m.values()) out.f32(v);
    }
    return out.take();
}

std::vector<ActivationMatrix> decode_activations(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    in.expect_magic("ACTV", "ACTV");
    expect_version(in);
    const std::uint32_t layerCount = in.u32("layer count");
    std::vector<ActivationMatrix> layers;
    for (std::uint32_t l = 0; l < layerCount; ++l) {
        const std::size_t at = in.offset();
        const std::uint32_t layerId = in.u32("layer id");
        const std::uint32_t nInputs = in.u32("input count");
        const std::uint32_t nNeurons = in.u32("neuron count");
        if (layerId != l) {
            throw FormatError("layers must be stored in order", at);
        }
        const std::size_t dataAt = in.offset();
        std::vector<float> values = in.f32s(static_cast<std::size_t>(nInputs) * nNeurons, "activations");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i])) {
                throw FormatError("non-finite activation", dataAt + 4 * i);
            }
        }
        if (!layers.empty() && layers.front().rows() != nInputs) {
            throw FormatError("layer input count differs from layer 0", at);
        }
        layers.emplace_back(LayerId(layerId), nInputs, nNeurons, std::move(values));
    }
    in.expect_end();
    return layers;
}

std::vector<std::uint8_t> encode_npi(const NeuralPartitionIndex& idx) {
    ByteWriter out;
    out.magic("NPI1");
    out.u32(kFormatVersion);
    out.u32(idx.layer().index);
    out.u32(idx.input_count());
    out.u32(idx.neuron_count());
    out.u32(idx.partition_count());
    out.u8(idx.bits_per_pid());
    out.u8(0);
    out.u8(0);
    out.u8(0);
    out.raw(idx.packed_pids());
    for (float v : idx.lower_bounds()) out.f32(v);
    for (float v : idx.upper_bounds()) out.f32(v);
    return out.take();
}

NeuralPartitionIndex decode_npi(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    in.expect_magic("NPI1", "NPI");
    expect_version(in);
    const std::uint32_t layerId = in.u32("layer id");
    const std::uint32_t nInputs = in.u32("input count");
    const std::uint32_t nNeurons = in.u32("neuron count");
    const std::size_t partitionsAt = in.offset();
    const std::uint32_t nPartitions = in.u32("partition count");
    if (nPartitions == 0) {
        throw FormatError("partition count must be >= 1", partitionsAt);
    }
    const std::size_t bitsAt = in.offset();
    const std::uint8_t bits = in.u8("bits per PID");
    if (bits != NeuralPartitionIndex::bits_for(nPartitions)) {
        throw FormatError("bits per PID inconsistent with partition count", bitsAt);
    }
    in.raw(3, "padding");
    const std::size_t rowBytes = (static_cast<std::size_t>(nInputs) * bits + 7) / 8;
    const std::size_t pidsAt = in.offset();
    auto pids = in.raw(rowBytes * nNeurons, "packed PIDs");
    const std::size_t boundCount = static_cast<std::size_t>(nNeurons) * nPartitions;
    auto lower = in.f32s(boundCount, "lower bounds");
    auto upper = in.f32s(boundCount, "upper bounds");
    in.expect_end();
    try {
        return NeuralPartitionIndex::from_parts(LayerId(layerId), nInputs, nNeurons, nPartitions, bits,
                                                std::move(pids), std::move(lower), std::move(upper));
    } catch (const ConfigError& e) {
        throw FormatError(e.what(), pidsAt);
    }
}

std::vector<std::uint8_t> encode_mai(const MaximumActivationIndex& mai) {
    ByteWriter out;
    out.magic("MAI1");
    out.u32(kFormatVersion);
    out.u32(mai.layer().index);
    out.u32(mai.neuron_count());
    out.u32(mai.entry_count());
    out.f32(mai.ratio());
    for (NeuronId n = 0; n < mai.neuron_count(); ++n) {
        for (const MaiEntry& e : mai.entries(n)) {
            out.u32(e.input);
            out.f32(e.activation);
        }
    }
    return out.take();
}

MaximumActivationIndex decode_mai(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    in.expect_magic("MAI1", "MAI");
    expect_version(in);
    const std::uint32_t layerId = in.u32("layer id");
    const std::uint32_t nNeurons = in.u32("neuron count");
    const std::uint32_t entryCount = in.u32("entry count");
    const std::size_t ratioAt = in.offset();
    const float ratio = in.f32("ratio");
    if (!(ratio >= 0.0f && ratio <= 1.0f)) {
        throw FormatError("ratio outside [0, 1]", ratioAt);
    }
    const std::size_t listsAt = in.offset();
    if (entryCount != 0 && nNeurons > (bytes.size() - listsAt) / 8 / entryCount) {
        throw FormatError("truncated while reading MAI entries", listsAt);
    }
    std::vector<std::vector<MaiEntry>> perNeuron(nNeurons);
    for (auto& list : perNeuron) {
        list.resize(entryCount);
        for (MaiEntry& e : list) {
            e.input = in.u32("MAI input id");
            e.activation = in.f32("MAI activation");
        }
    }
    in.expect_end();
    try {
        return MaximumActivationIndex(LayerId(layerId), ratio, entryCount, std::move(perNeuron));
    } catch (const ConfigError& e) {
        throw FormatError(e.what(), listsAt);
    }
}

std::size_t npi_file_bytes(std::size_t nInputs, std::size_t nNeurons, std::uint32_t nPartitions) {
    const std::size_t rowBytes = (nInputs * NeuralPartitionIndex::bits_for(nPartitions) + 7) / 8;
    return 28 + rowBytes * nNeurons + nNeurons * nPartitions * 8;
}

std::size_t mai_file_bytes(std::size_t nNeurons, std::size_t entryCount) {
    return 24 + nNeurons * entryCount * 8;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failed for " + path.string());
    }
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

void write_activation_file(const std::filesystem::path& path, std::span<const ActivationMatrix> layers) {
    write_file_bytes(path, encode_activations(layers));
}

MatrixSource load_activation_file(const std::filesystem::path& path) {
    return MatrixSource(decode_activations(read_file_bytes(path)));
}

void write_npi_file(const std::filesystem::path& path, const NeuralPartitionIndex& idx) {
    write_file_bytes(path, encode_npi(idx));
}

NeuralPartitionIndex read_npi_file(const std::filesystem::path& path) {
    return decode_npi(read_file_bytes(path));
}

void write_mai_file(const std::filesystem::path& path, const MaximumActivationIndex& mai) {
    write_file_bytes(path, encode_mai(mai));
}

MaximumActivationIndex read_mai_file(const std::filesystem::path& path) {
    return decode_mai(read_file_bytes(path));
}

} // namespace everest
