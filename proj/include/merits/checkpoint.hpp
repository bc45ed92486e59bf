#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "merits/errors.hpp"
#include "merits/matrix.hpp"

namespace merits {

// Little serialization surface shared by every model: matrices, strings and
// integers framed into one byte blob. The blob is the unit that gets content
// hashed, so emission order must be stable.
class BlobWriter {
  public:
    void u64(std::uint64_t v);
    void str(const std::string& s);
    void mat(const Matrix& m);
    void strings(const std::vector<std::string>& v);
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

  private:
    std::vector<std::uint8_t> bytes_;
};

class BlobReader {
  public:
    explicit BlobReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
    std::uint64_t u64();
    std::string str();
    Matrix mat();
    std::vector<std::string> strings();
    bool done() const { return at_ == bytes_.size(); }

  private:
    void need(std::size_t n) const;
    const std::vector<std::uint8_t>& bytes_;
    std::size_t at_ = 0;
};

struct StageCheckpoint {
    std::string stage;     // pretrain | stage1 | stage2 | stage3
    std::string modality;  // text | speech | fused
    std::uint64_t config_hash = 0;
    std::vector<std::uint8_t> blob;
    std::uint64_t content_hash = 0;  // fnv1a64 over blob

    static StageCheckpoint wrap(std::string stage, std::string modality,
                                std::uint64_t config_hash,
                                std::vector<std::uint8_t> blob);
};

// Atomic write: temp file in the target directory, then rename.
void save_checkpoint(const StageCheckpoint& ckpt, const std::filesystem::path& file);
StageCheckpoint load_checkpoint(const std::filesystem::path& file);

// True when tags match and the parameter blob is bit-identical. Differing
// tags are a usage error, not a freeze violation.
bool verify_frozen(const StageCheckpoint& before, const StageCheckpoint& after);

}  // namespace merits
