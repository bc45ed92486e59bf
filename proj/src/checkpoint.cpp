#include "merits/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "merits/hash.hpp"

namespace merits {

namespace {
constexpr char kMagic[8] = {'M', 'R', 'T', 'S', 'C', 'K', '0', '1'};
}

void BlobWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        bytes_.push_back(static_cast<std::uint8_t>(v & 0xff));
        v >>= 8;
    }
}

void BlobWriter::str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void BlobWriter::mat(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
    bytes_.insert(bytes_.end(), p, p + m.size() * sizeof(double));
}

void BlobWriter::strings(const std::vector<std::string>& v) {
    u64(v.size());
    for (const std::string& s : v) str(s);
}

void BlobReader::need(std::size_t n) const {
    if (at_ + n > bytes_.size()) throw ParseError("truncated checkpoint blob");
}

std::uint64_t BlobReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes_[at_ + static_cast<std::size_t>(i)];
    at_ += 8;
    return v;
}

std::string BlobReader::str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
}

Matrix BlobReader::mat() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    need(rows * cols * sizeof(double));
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes_.data() + at_, rows * cols * sizeof(double));
    at_ += rows * cols * sizeof(double);
    return m;
}

std::vector<std::string> BlobReader::strings() {
    const std::uint64_t n = u64();
    std::vector<std::string> v;
    v.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) v.push_back(str());
    return v;
}

StageCheckpoint StageCheckpoint::wrap(std::string stage, std::string modality,
                                      std::uint64_t config_hash,
                                      std::vector<std::uint8_t> blob) {
    StageCheckpoint c;
    c.stage = std::move(stage);
    c.modality = std::move(modality);
    c.config_hash = config_hash;
    c.content_hash = fnv1a64(blob.data(), blob.size());
    c.blob = std::move(blob);
    return c;
}

void save_checkpoint(const StageCheckpoint& ckpt, const std::filesystem::path& file) {
    BlobWriter w;
    w.str(ckpt.stage);
    w.str(ckpt.modality);
    w.u64(ckpt.config_hash);
    w.u64(ckpt.blob.size());

    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + file.string());
        out.write(kMagic, sizeof(kMagic));
        const auto& head = w.bytes();
        out.write(reinterpret_cast<const char*>(head.data()),
                  static_cast<std::streamsize>(head.size()));
        out.write(reinterpret_cast<const char*>(ckpt.blob.data()),
                  static_cast<std::streamsize>(ckpt.blob.size()));
        BlobWriter tail;
        tail.u64(ckpt.content_hash);
        out.write(reinterpret_cast<const char*>(tail.bytes().data()),
                  static_cast<std::streamsize>(tail.bytes().size()));
        if (!out) throw Error("short write for checkpoint " + file.string());
    }
    std::filesystem::rename(tmp, file);
}

StageCheckpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DependencyError("missing checkpoint " + file.string());
    std::vector<std::uint8_t> all((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (all.size() < sizeof(kMagic) ||
        std::memcmp(all.data(), kMagic, sizeof(kMagic)) != 0)
        throw ParseError(file.string() + " is not a checkpoint file");

    std::vector<std::uint8_t> rest(all.begin() + sizeof(kMagic), all.end());
    BlobReader r(rest);
    StageCheckpoint ckpt;
    ckpt.stage = r.str();
    ckpt.modality = r.str();
    ckpt.config_hash = r.u64();
    const std::uint64_t blob_size = r.u64();
    // Remaining layout: blob bytes, then the stored content hash.
    const std::size_t header_bytes = 8 + ckpt.stage.size() + 8 + ckpt.modality.size() + 16;
    if (rest.size() != header_bytes + blob_size + 8)
        throw ParseError(file.string() + " has inconsistent framing");
    ckpt.blob.assign(rest.begin() + static_cast<std::ptrdiff_t>(header_bytes),
                     rest.begin() + static_cast<std::ptrdiff_t>(header_bytes + blob_size));
    std::uint64_t stored = 0;
    for (int i = 7; i >= 0; --i)
        stored = (stored << 8) | rest[header_bytes + blob_size + static_cast<std::size_t>(i)];
    ckpt.content_hash = fnv1a64(ckpt.blob.data(), ckpt.blob.size());
    if (stored != ckpt.content_hash)
        throw IntegrityError(file.string() + " failed its content hash check");
    return ckpt;
}

bool verify_frozen(const StageCheckpoint& before, const StageCheckpoint& after) {
    if (before.stage != after.stage || before.modality != after.modality)
        throw IntegrityError("verify_frozen got mismatched tags: " + before.stage + "/" +
                             before.modality + " vs " + after.stage + "/" +
                             after.modality);
    return before.content_hash == after.content_hash &&
           before.blob == after.blob;
}

}  // namespace merits
