#pragma once

#include <filesystem>
#include <optional>

#include "refpred/cloze_service.hpp"

namespace httplib {
class Server;
}

namespace refpred {

// Mounts the JSON endpoints (and the static UI directory, if given) on
// `server`. Bodies are documented in docs/api.md.
void register_cloze_routes(httplib::Server& server, ClozeService& service,
                           const std::optional<std::filesystem::path>& ui_dir = std::nullopt);

}  // namespace refpred
