#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tbe/manifest.hpp"
#include "tbe/tensor.hpp"

namespace tbe {

/// Images of the kept manifest records, decoded once, with dense labels
/// 0..K-1 assigned in sorted subject_id order.
struct Dataset {
    std::vector<ManifestRecord> records;
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<std::string> subjects;

    std::size_t size() const { return records.size(); }
    std::size_t num_classes() const { return subjects.size(); }
};

using RecordFilter = std::function<bool(const ManifestRecord&)>;

Dataset load_dataset(const Manifest& manifest, const RecordFilter& keep);

/// Training records: split "train" (or no split) in the still stream, plus
/// sim_video when `two_stream` is set.
RecordFilter training_filter(bool two_stream);

}  // namespace tbe
