#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tbe {

enum class Stream { still, sim_video, real_video };

const char* stream_name(Stream s);
Stream parse_stream(const std::string& name);

/// One line of a dataset manifest. Paths are relative to the manifest's
/// directory unless absolute.
struct ManifestRecord {
    std::string path;
    std::string subject_id;
    std::optional<std::string> video_id;
    std::optional<int> frame_idx;
    Stream stream = Stream::still;
    std::optional<std::string> split;  // "train", "gallery" or "probe"
    std::optional<std::string> blur;   // blur spec name for sim_video records

    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;  // directory relative paths resolve against

    std::filesystem::path resolve(const ManifestRecord& r) const;
};

/// Manifests are JSON Lines; keys are emitted sorted so output is byte-stable.
std::string manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(const std::string& line);

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace tbe
