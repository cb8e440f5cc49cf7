#include "mfcov/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mfcov {

std::size_t SubjectRecord::total() const {
    std::size_t n = 0;
    for (const auto& t : times) n += t.size();
    return n;
}

SparseFunctionalDataset::SparseFunctionalDataset(std::vector<std::string> response_labels)
    : labels_(std::move(response_labels)) {
    if (labels_.empty()) throw std::invalid_argument("dataset needs at least one response");
}

int SparseFunctionalDataset::response_index(const std::string& label) const {
    const auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) throw std::invalid_argument("unknown response label '" + label + "'");
    return static_cast<int>(it - labels_.begin());
}

void SparseFunctionalDataset::add(const std::string& subject, int response, double time,
                                  double value) {
    if (response < 0 || response >= n_responses())
        throw std::invalid_argument("response index out of range");
    if (!std::isfinite(time) || !std::isfinite(value))
        throw std::invalid_argument("non-finite time or value");
    auto [it, inserted] = index_.try_emplace(subject, subjects_.size());
    if (inserted) {
        SubjectRecord rec;
        rec.id = subject;
        rec.times.resize(labels_.size());
        rec.values.resize(labels_.size());
        subjects_.push_back(std::move(rec));
    }
    SubjectRecord& rec = subjects_[it->second];
    rec.times[response].push_back(time);
    rec.values[response].push_back(value);
}

void SparseFunctionalDataset::add(const std::string& subject, const std::string& response,
                                  double time, double value) {
    add(subject, response_index(response), time, value);
}

std::size_t SparseFunctionalDataset::count(int k) const {
    std::size_t n = 0;
    for (const auto& s : subjects_) n += s.count(k);
    return n;
}

Interval SparseFunctionalDataset::time_range() const {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& s : subjects_)
        for (const auto& ts : s.times)
            for (double t : ts) {
                lo = std::min(lo, t);
                hi = std::max(hi, t);
            }
    if (!(lo <= hi)) throw std::invalid_argument("dataset has no observations");
    return {lo, hi};
}

double SparseFunctionalDataset::sample_variance(int k) const {
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (const auto& s : subjects_)
        for (double v : s.values[k]) {
            sum += v;
            ++n;
        }
    if (n < 2) return 0.0;
    const double mean = sum / static_cast<double>(n);
    for (const auto& s : subjects_)
        for (double v : s.values[k]) sum2 += (v - mean) * (v - mean);
    return sum2 / static_cast<double>(n - 1);
}

} // namespace mfcov
