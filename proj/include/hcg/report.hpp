#pragma once

// Report plumbing: RFC-4180 CSV tables, JSON documents with stable key
// order, and file output that fails loudly.

#include "linalg.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace hcg {

using Json = nlohmann::ordered_json;

/// Shortest round-trip decimal form with '.' separator, independent of locale.
inline std::string format_number(double x)
{
    if (std::isnan(x)) {
        return "nan";
    }
    if (std::isinf(x)) {
        return x > 0 ? "inf" : "-inf";
    }
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

inline std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add(const std::vector<std::string>& row)
    {
        if (row.size() != header_.size()) {
            throw ValidationError("csv: row has " + std::to_string(row.size()) + " fields, header has " +
                                  std::to_string(header_.size()));
        }
        rows_.push_back(row);
    }

    std::size_t size() const { return rows_.size(); }

    std::string str() const
    {
        std::string out;
        auto line = [&out](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                out += (i ? "," : "") + csv_escape(r[i]);
            }
            out += "\r\n";
        };
        line(header_);
        for (const auto& r : rows_) {
            line(r);
        }
        return out;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// NaN and infinities become null; JSON has no spelling for them.
inline Json json_number(double x)
{
    return std::isfinite(x) ? Json(x) : Json(nullptr);
}

inline Json json_matrix(const Eigen::MatrixXd& m)
{
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            r.push_back(json_number(m(i, j)));
        }
        rows.push_back(r);
    }
    return rows;
}

inline void ensure_directory(const std::string& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw ValidationError("cannot create output directory '" + dir + "'");
    }
}

inline void write_text(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ValidationError("cannot write '" + path + "'");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw ValidationError("write failed for '" + path + "'");
    }
}

inline void write_json(const std::string& path, const Json& j)
{
    write_text(path, j.dump(2) + "\n");
}

}  // namespace hcg
