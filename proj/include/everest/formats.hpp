#pragma once

#include "everest/activation_source.hpp"
#include "everest/mai.hpp"
#include "everest/npi.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

// Little-endian on-disk formats.
//
//  ACTV: "ACTV" | version u32 = 1 | layerCount u32 |
//        per layer { layerId u32 | nInputs u32 | nNeurons u32 | f32[nInputs * nNeurons] row-major by input }
//  NPI:  "NPI1" | version u32 = 1 | layerId u32 | nInputs u32 | nNeurons u32 | nPartitions u32 |
//        bitsPerPid u8 | 3 pad bytes | packed PID rows | lowerBound f32[nNeurons * nPartitions] |
//        upperBound f32[nNeurons * nPartitions]
//  MAI:  "MAI1" | version u32 = 1 | layerId u32 | nNeurons u32 | entryCount u32 | ratio f32 |
//        per neuron entryCount x { inputId u32 | activation f32 }
namespace everest {

inline constexpr std::uint32_t kFormatVersion = 1;

std::vector<std::uint8_t> encode_activations(std::span<const ActivationMatrix> layers);
std::vector<ActivationMatrix> decode_activations(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_npi(const NeuralPartitionIndex& idx);
NeuralPartitionIndex decode_npi(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_mai(const MaximumActivationIndex& mai);
MaximumActivationIndex decode_mai(std::span<const std::uint8_t> bytes);

// Exact encoded sizes, without building the structures.
std::size_t npi_file_bytes(std::size_t nInputs, std::size_t nNeurons, std::uint32_t nPartitions);
std::size_t mai_file_bytes(std::size_t nNeurons, std::size_t entryCount);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void write_activation_file(const std::filesystem::path& path, std::span<const ActivationMatrix> layers);
MatrixSource load_activation_file(const std::filesystem::path& path);

void write_npi_file(const std::filesystem::path& path, const NeuralPartitionIndex& idx);
NeuralPartitionIndex read_npi_file(const std::filesystem::path& path);

void write_mai_file(const std::filesystem::path& path, const MaximumActivationIndex& mai);
MaximumActivationIndex read_mai_file(const std::filesystem::path& path);

} // namespace everest
