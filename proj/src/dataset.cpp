#include "tbe/dataset.hpp"

#include <algorithm>
#include <map>

#include "tbe/errors.hpp"
#include "tbe/image.hpp"

namespace tbe {

Dataset load_dataset(const Manifest& manifest, const RecordFilter& keep) {
    Dataset ds;
    for (const auto& r : manifest.records) {
        if (!keep || keep(r)) {
            ds.records.push_back(r);
        }
    }
    if (ds.records.empty()) {
        throw ManifestError("no manifest records match the requested selection");
    }
    for (const auto& r : ds.records) ds.subjects.push_back(r.subject_id);
    std::sort(ds.subjects.begin(), ds.subjects.end());
    ds.subjects.erase(std::unique(ds.subjects.begin(), ds.subjects.end()), ds.subjects.end());
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) index[ds.subjects[i]] = static_cast<int>(i);
    for (const auto& r : ds.records) {
        ds.labels.push_back(index.at(r.subject_id));
        ds.images.push_back(read_pnm(manifest.resolve(r)));
    }
    const Shape& first = ds.images.front().shape();
    for (std::size_t i = 1; i < ds.images.size(); ++i) {
        if (ds.images[i].shape() != first) {
            throw ManifestError("image " + ds.records[i].path + " has shape " +
                                shape_string(ds.images[i].shape()) + ", expected " + shape_string(first));
        }
    }
    return ds;
}

RecordFilter training_filter(bool two_stream) {
    return [two_stream](const ManifestRecord& r) {
        if (r.split && *r.split != "train") return false;
        return r.stream == Stream::still || (two_stream && r.stream == Stream::sim_video);
    };
}

}  // namespace tbe
