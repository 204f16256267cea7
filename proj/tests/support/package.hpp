#pragma once

#include <json.hpp>
#include <string>

#include "esx/loader/package.hpp"

namespace esx::testing {

// One-ECALL package over the default layout; `params` is the JSON params array.
inline loader::EnclavePackage make_package(const std::string& source, const std::string& entry,
                                           const std::string& params = "[]",
                                           const std::string& hooks = "{}") {
    nlohmann::json m;
    m["name"] = "t";
    m["enclave_base"] = "0x10000000";
    m["enclave_size"] = "0x100000";
    m["ecalls"] = nlohmann::json::array(
        {{{"index", 0}, {"name", entry}, {"entry", entry}, {"params", nlohmann::json::parse(params)}}});
    m["hooks"] = nlohmann::json::parse(hooks);
    return loader::parse_package(m.dump(), source);
}

} // namespace esx::testing
