#pragma once

// nlohmann::json conversions for the configuration and record types.

#include <json.hpp>

#include "polarcast/dataio.hpp"
#include "polarcast/netcore.hpp"
#include "polarcast/somclean.hpp"
#include "polarcast/trainer.hpp"

namespace polarcast {

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const TrainRecord& r);
void from_json(const nlohmann::json& j, TrainRecord& r);

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

void to_json(nlohmann::json& j, const WindowSpec& w);
void from_json(const nlohmann::json& j, WindowSpec& w);

void to_json(nlohmann::json& j, const SomConfig& c);
void from_json(const nlohmann::json& j, SomConfig& c);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace polarcast
