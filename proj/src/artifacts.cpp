#include "qqm/artifacts.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qqm/errors.hpp"

namespace qqm {

std::string format_double(double x) {
    if (std::isnan(x)) {
        return "nan";
    }
    if (std::isinf(x)) {
        return x > 0 ? "inf" : "-inf";
    }
    std::array<char, 32> buf{};
    const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    if (ec != std::errc()) {
        throw std::runtime_error("format_double: to_chars failed");
    }
    return std::string(buf.data(), end);
}

namespace {

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

} // namespace

Csv::Csv(std::vector<std::string> columns) : columns_(std::move(columns)) {
    if (columns_.empty()) {
        throw ConfigError("a CSV table needs at least one column");
    }
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        text_ += (i ? "," : "") + quote_if_needed(columns_[i]);
    }
    text_ += '\n';
}

void Csv::row(const std::vector<CsvCell>& cells) {
    if (cells.size() != columns_.size()) {
        throw ConfigError("CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                          std::to_string(columns_.size()));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) {
            text_ += ',';
        }
        std::visit(
            [this](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, double>) {
                    text_ += format_double(v);
                } else if constexpr (std::is_same_v<T, std::int64_t>) {
                    text_ += std::to_string(v);
                } else {
                    text_ += quote_if_needed(v);
                }
            },
            cells[i]);
    }
    text_ += '\n';
    ++rows_;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw std::runtime_error("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::string digest_hex(std::initializer_list<std::string_view> parts) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) {
        throw std::runtime_error("EVP_MD_CTX_new failed");
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1;
    for (auto p : parts) {
        ok = ok && EVP_DigestUpdate(ctx, p.data(), p.size()) == 1;
    }
    ok = ok && EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) {
        throw std::runtime_error("SHA-1 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

} // namespace

std::string sha1_hex(std::string_view data) { return digest_hex({data}); }

std::string git_blob_sha1(std::string_view data) {
    const std::string header = "blob " + std::to_string(data.size());
    return digest_hex({header, std::string_view("\0", 1), data});
}

} // namespace qqm
