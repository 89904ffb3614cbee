#pragma once

#include <string>

#include "graphtop/matrix.hpp"
#include "json.hpp"

namespace graphtop::detail {

inline nlohmann::json matrix_to_json(const DenseMatrix& m) {
    return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline DenseMatrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
        throw std::runtime_error(what + ": malformed tensor");
    const auto rows = j["rows"].get<std::size_t>();
    const auto cols = j["cols"].get<std::size_t>();
    auto data = j["data"].get<std::vector<double>>();
    if (data.size() != rows * cols)
        throw std::runtime_error(what + ": shape " + std::to_string(rows) + "x" +
                                 std::to_string(cols) + " does not match data length " +
                                 std::to_string(data.size()));
    return DenseMatrix(rows, cols, std::move(data));
}

}  // namespace graphtop::detail
