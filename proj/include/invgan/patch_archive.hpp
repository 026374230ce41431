#pragma once

// Pre-extracted training patches for volumes too large to keep resident.
//
//   "IVP1" | uint32 count | uint32 P | float32 sx, sy, sz |
//   count x ( uint32 i, j, k | P^3 float32 source | P^3 float32 target )
// Little-endian; voxel order as IVL1.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "invgan/sampler.hpp"
#include "invgan/trainer.hpp"
#include "invgan/volio.hpp"

namespace invgan {

inline constexpr std::size_t kArchiveHeaderBytes = 24;

inline void write_patch_archive(const Volume& source, const Volume& target, const std::vector<PatchSpec>& specs,
                                const std::filesystem::path& path)
{
    require_same_dims(source.dims, target.dims, "write_patch_archive");
    const int P = specs.empty() ? 0 : specs.front().size;
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError("cannot write " + path.string());
    std::vector<unsigned char> buf{'I', 'V', 'P', '1'};
    detail::put_u32(buf, static_cast<std::uint32_t>(specs.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(P));
    detail::put_f32(buf, source.spacing.sx);
    detail::put_f32(buf, source.spacing.sy);
    detail::put_f32(buf, source.spacing.sz);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (const auto& s : specs) {
        if (s.size != P)
            throw DataError("write_patch_archive: mixed patch sizes");
        buf.clear();
        for (int a = 0; a < 3; ++a)
            detail::put_u32(buf, static_cast<std::uint32_t>(s.origin[a]));
        for (const auto* v : {&source, &target})
            for (float x : extract_patch(*v, s).voxels)
                detail::put_f32(buf, x);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out)
        throw FormatError("short write to " + path.string());
}

/// Random-access reader; records are read on demand.
class PatchArchive : public PatchProvider {
public:
    explicit PatchArchive(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary)
    {
        if (!in_)
            throw FormatError("cannot open " + path.string());
        unsigned char h[kArchiveHeaderBytes];
        in_.read(reinterpret_cast<char*>(h), sizeof h);
        if (in_.gcount() < 4 || h[0] != 'I' || h[1] != 'V' || h[2] != 'P' || h[3] != '1')
            throw FormatError("bad magic, expected IVP1", 0);
        if (in_.gcount() != static_cast<std::streamsize>(sizeof h))
            throw FormatError("truncated archive header", in_.gcount());
        count_ = detail::get_u32(h + 4);
        P_ = static_cast<int>(detail::get_u32(h + 8));
        spacing_ = {detail::get_f32(h + 12), detail::get_f32(h + 16), detail::get_f32(h + 20)};
        const auto expected = kArchiveHeaderBytes + count_ * record_bytes();
        const auto actual = std::filesystem::file_size(path);
        if (actual != expected)
            throw FormatError("archive is " + std::to_string(actual) + " bytes, header implies " +
                                  std::to_string(expected),
                              static_cast<std::int64_t>(std::min<std::uintmax_t>(actual, expected)));
    }

    std::size_t size() const noexcept { return count_; }
    int patch_size() const noexcept { return P_; }

    std::size_t pair_count() const override { return 1; }
    std::size_t patch_count(std::size_t) override { return count_; }

    PatchPair patch(std::size_t, std::size_t index) override
    {
        if (index >= count_)
            throw DataError("archive index out of range");
        std::vector<unsigned char> rec(record_bytes());
        in_.clear();
        in_.seekg(static_cast<std::streamoff>(kArchiveHeaderBytes + index * record_bytes()));
        in_.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
        if (in_.gcount() != static_cast<std::streamsize>(rec.size()))
            throw FormatError("truncated archive record", static_cast<std::int64_t>(index));
        PatchPair out;
        out.spec.size = P_;
        for (int a = 0; a < 3; ++a)
            out.spec.origin[a] = static_cast<int>(detail::get_u32(&rec[4 * a]));
        const Dims d{P_, P_, P_};
        out.source = Volume(d, spacing_);
        out.target = Volume(d, spacing_);
        std::size_t at = 12;
        for (auto* v : {&out.source, &out.target})
            for (auto& x : v->voxels) {
                x = detail::get_f32(&rec[at]);
                at += 4;
            }
        return out;
    }

private:
    std::size_t record_bytes() const { return 12 + 8 * static_cast<std::size_t>(P_) * P_ * P_; }

    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t count_ = 0;
    int P_ = 0;
    Spacing spacing_;
};

} // namespace invgan
