#include "flowchain/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace flowchain {

namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

constexpr char kMagic[8] = {'F', 'C', 'P', 'A', 'R', 'A', 'M', 'S'};

}  // namespace

void save_parameters(const ParameterSet& params, const std::filesystem::path& path)
{
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& m = params[i];
        entries.push_back({{"name", params.name(i)}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
    }
    const nlohmann::json header = {
        {"version", kParamFormatVersion}, {"data_bytes", offset}, {"params", entries}};
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t header_len = text.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& m = params[i];
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

ParameterSet read_parameters(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open parameter container '" + path.string() + "'");
    const auto file_size = std::filesystem::file_size(path);

    char magic[8];
    std::uint64_t header_len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("'" + path.string() + "' is not a parameter container");
    }
    if (header_len > file_size - 16) throw FormatError("'" + path.string() + "': truncated header");
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path.string() + "': corrupt header: " + e.what());
    }
    if (header.value("version", -1) != kParamFormatVersion) {
        throw FormatError("'" + path.string() + "': unsupported container version " +
                          header.value("version", nlohmann::json(-1)).dump());
    }
    const std::uint64_t data_bytes = header.at("data_bytes").get<std::uint64_t>();
    const std::uint64_t data_start = 16 + header_len;
    if (file_size != data_start + data_bytes) {
        throw FormatError("'" + path.string() + "': expected " + std::to_string(data_start + data_bytes) +
                          " bytes, file has " + std::to_string(file_size) + " (truncated or corrupt)");
    }

    ParameterSet params;
    for (const auto& e : header.at("params")) {
        const auto rows = e.at("shape").at(0).get<Index>();
        const auto cols = e.at("shape").at(1).get<Index>();
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto bytes = static_cast<std::uint64_t>(rows * cols) * sizeof(double);
        if (offset + bytes > data_bytes) throw FormatError("'" + path.string() + "': parameter out of range");
        Matrix m(rows, cols);
        in.seekg(static_cast<std::streamoff>(data_start + offset));
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw FormatError("'" + path.string() + "': short read");
        params.add(e.at("name").get<std::string>(), std::move(m));
    }
    return params;
}

void load_parameters(ParameterSet& params, const std::filesystem::path& path)
{
    ParameterSet stored = read_parameters(path);
    if (stored.size() != params.size()) {
        throw FormatError("'" + path.string() + "': holds " + std::to_string(stored.size()) +
                          " parameters, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamId j = stored.find(params.name(i));
        if (stored[j].rows() != params[i].rows() || stored[j].cols() != params[i].cols()) {
            throw FormatError("parameter '" + params.name(i) + "' has shape " + shape_string(stored[j]) +
                              ", expected " + shape_string(params[i]));
        }
        params[i] = stored[j];
    }
}

}  // namespace flowchain
