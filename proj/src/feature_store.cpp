#include "merits/feature_store.hpp"

#include <fstream>

#include "json.hpp"

namespace merits {

using nlohmann::json;
using nlohmann::ordered_json;

FeatureStore FeatureStore::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ParseError("cannot open feature store " + file.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError(file.string() + ": missing header");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(file.string() + " header: " + e.what());
    }
    if (!header.contains("d_s") || !header["d_s"].is_number_integer())
        throw ParseError(file.string() + ": header must carry integer d_s");

    FeatureStore store(header["d_s"].get<std::size_t>());
    if (header.contains("stage")) store.stage_tag_ = header["stage"].get<std::string>();
    if (header.contains("modality"))
        store.modality_tag_ = header["modality"].get<std::string>();

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(file.string() + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        if (!j.contains("key") || !j.contains("vec"))
            throw ParseError(file.string() + " line " + std::to_string(line_no) +
                             ": entries need key and vec");
        store.insert(j["key"].get<std::string>(), j["vec"].get<std::vector<float>>());
    }
    return store;
}

const std::vector<float>& FeatureStore::lookup(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end())
        throw IntegrityError("feature store has no entry for key \"" + key + "\"");
    return order_[it->second].second;
}

Matrix FeatureStore::lookup_row(const std::string& key) const {
    const std::vector<float>& v = lookup(key);
    Matrix m(1, v.size());
    for (std::size_t j = 0; j < v.size(); ++j) m(0, j) = static_cast<double>(v[j]);
    return m;
}

void FeatureStore::insert(const std::string& key, std::vector<float> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_)
        throw IntegrityError("feature vector for \"" + key + "\" has dimension " +
                             std::to_string(vec.size()) + ", store expects " +
                             std::to_string(dim_));
    if (index_.count(key))
        throw IntegrityError("duplicate feature store key \"" + key + "\"");
    index_[key] = order_.size();
    order_.emplace_back(key, std::move(vec));
}

void FeatureStore::save(const std::filesystem::path& file, const std::string& stage_tag,
                        const std::string& modality_tag) const {
    std::ofstream out(file);
    if (!out) throw Error("cannot write feature store " + file.string());
    ordered_json header;
    header["d_s"] = dim_;
    if (!stage_tag.empty()) header["stage"] = stage_tag;
    if (!modality_tag.empty()) header["modality"] = modality_tag;
    out << header.dump() << "\n";
    for (const auto& [key, vec] : order_) {
        ordered_json j;
        j["key"] = key;
        j["vec"] = vec;
        out << j.dump() << "\n";
    }
}

}  // namespace merits
