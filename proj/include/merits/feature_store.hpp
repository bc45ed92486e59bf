#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "merits/errors.hpp"
#include "merits/matrix.hpp"

namespace merits {

// Immutable key -> vector map for acoustic (or exported stage) features.
// Values are float32 on disk; lookups widen to double. Insertion order is
// preserved so save() is deterministic.
class FeatureStore {
  public:
    FeatureStore() = default;
    explicit FeatureStore(std::size_t dim) : dim_(dim) {}

    static FeatureStore load(const std::filesystem::path& file);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return order_.size(); }
    bool contains(const std::string& key) const { return index_.count(key) > 0; }

    const std::vector<float>& lookup(const std::string& key) const;
    Matrix lookup_row(const std::string& key) const;  // 1 x dim, doubles

    void insert(const std::string& key, std::vector<float> vec);

    // Optional stage/modality tags land in the header line.
    void save(const std::filesystem::path& file, const std::string& stage_tag = "",
              const std::string& modality_tag = "") const;

    const std::string& stage_tag() const { return stage_tag_; }
    const std::string& modality_tag() const { return modality_tag_; }

  private:
    std::size_t dim_ = 0;
    std::vector<std::pair<std::string, std::vector<float>>> order_;
    std::unordered_map<std::string, std::size_t> index_;
    std::string stage_tag_;
    std::string modality_tag_;
};

}  // namespace merits
