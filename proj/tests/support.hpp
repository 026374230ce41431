#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "fixtures.hpp"

namespace invgan::test {

class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        path_ = std::filesystem::temp_directory_path() /
                ("invgan_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                 std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace invgan::test
