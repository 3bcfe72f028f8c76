#include "tbe/manifest.hpp"

#include <fstream>
#include <json.hpp>
#include <set>

#include "tbe/errors.hpp"

namespace tbe {

using nlohmann::json;

const char* stream_name(Stream s) {
    switch (s) {
        case Stream::still: return "still";
        case Stream::sim_video: return "sim_video";
        case Stream::real_video: return "real_video";
    }
    return "?";
}

Stream parse_stream(const std::string& name) {
    if (name == "still") return Stream::still;
    if (name == "sim_video") return Stream::sim_video;
    if (name == "real_video") return Stream::real_video;
    throw ManifestError("unknown stream '" + name + "'");
}

std::filesystem::path Manifest::resolve(const ManifestRecord& r) const {
    const std::filesystem::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
}

std::string manifest_line(const ManifestRecord& r) {
    json j;
    j["path"] = r.path;
    j["subject_id"] = r.subject_id;
    j["video_id"] = r.video_id ? json(*r.video_id) : json(nullptr);
    j["frame_idx"] = r.frame_idx ? json(*r.frame_idx) : json(nullptr);
    j["stream"] = stream_name(r.stream);
    if (r.split) j["split"] = *r.split;
    if (r.blur) j["blur"] = *r.blur;
    return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
    static const std::set<std::string> known{"path", "subject_id", "video_id", "frame_idx",
                                             "stream", "split", "blur"};
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ManifestError(std::string("malformed manifest line: ") + e.what());
    }
    if (!j.is_object()) {
        throw ManifestError("manifest line is not an object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) {
            throw ManifestError("unknown manifest field '" + key + "'");
        }
    }
    ManifestRecord r;
    try {
        r.path = j.at("path").get<std::string>();
        r.subject_id = j.at("subject_id").get<std::string>();
        r.stream = parse_stream(j.at("stream").get<std::string>());
        if (j.contains("video_id") && !j["video_id"].is_null()) r.video_id = j["video_id"].get<std::string>();
        if (j.contains("frame_idx") && !j["frame_idx"].is_null()) r.frame_idx = j["frame_idx"].get<int>();
        if (j.contains("split") && !j["split"].is_null()) r.split = j["split"].get<std::string>();
        if (j.contains("blur") && !j["blur"].is_null()) r.blur = j["blur"].get<std::string>();
    } catch (const json::exception& e) {
        throw ManifestError(std::string("bad manifest field: ") + e.what());
    }
    if (r.split && *r.split != "train" && *r.split != "gallery" && *r.split != "probe") {
        throw ManifestError("unknown split '" + *r.split + "'");
    }
    return r;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    Manifest m;
    m.base_dir = path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            m.records.push_back(parse_manifest_line(line));
        } catch (const ManifestError& e) {
            throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write manifest " + path.string());
    }
    for (const auto& r : manifest.records) {
        out << manifest_line(r) << '\n';
    }
    if (!out) {
        throw IoError("failed writing manifest " + path.string());
    }
}

}  // namespace tbe
