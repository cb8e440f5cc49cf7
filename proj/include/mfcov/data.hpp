#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfcov/splines.hpp"

namespace mfcov {

/// Contiguous row range owned by one subject in a stacked design.
struct Slice {
    Eigen::Index start = 0;
    Eigen::Index size = 0;
};

/// One subject's observations, split by response. Input order is preserved.
struct SubjectRecord {
    std::string id;
    std::vector<std::vector<double>> times;  // [response][j]
    std::vector<std::vector<double>> values; // [response][j]

    std::size_t count(int k) const { return times[k].size(); }
    std::size_t total() const;
};

/// Long-format multivariate sparse functional data: for each subject and
/// response k, m_ik (time, value) pairs.
class SparseFunctionalDataset {
public:
    explicit SparseFunctionalDataset(std::vector<std::string> response_labels);

    /// Appends an observation; subjects are created in order of first appearance.
    void add(const std::string& subject, int response, double time, double value);
    void add(const std::string& subject, const std::string& response, double time, double value);

    int n_subjects() const { return static_cast<int>(subjects_.size()); }
    int n_responses() const { return static_cast<int>(labels_.size()); }
    const std::vector<std::string>& response_labels() const { return labels_; }
    /// Throws std::invalid_argument for unknown labels.
    int response_index(const std::string& label) const;

    const SubjectRecord& subject(int i) const { return subjects_[i]; }
    const std::vector<SubjectRecord>& subjects() const { return subjects_; }
    std::vector<SubjectRecord>& subjects() { return subjects_; }

    std::size_t count(int k) const;
    /// Smallest interval holding every observed time; throws when empty.
    Interval time_range() const;
    /// Sample variance of the raw values of response k.
    double sample_variance(int k) const;

private:
    std::vector<std::string> labels_;
    std::vector<SubjectRecord> subjects_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace mfcov
