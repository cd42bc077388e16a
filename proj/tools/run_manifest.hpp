#pragma once

// manifest.json for a run directory: config snapshot, input datasets and a
// git-style blob hash of every file written under the directory.

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pint/binary_io.hpp"
#include "pint/config.hpp"

namespace pint::cli {

// SHA-1 over "blob <size>\0<content>", as `git hash-object` prints it.
inline std::string git_blob_sha1(const std::vector<std::uint8_t>& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string git_blob_sha1(const std::filesystem::path& file) {
  return git_blob_sha1(io::read_file(file.string()));
}

struct InputRef {
  std::string role;  // "train", "test", "data", "checkpoint"
  std::filesystem::path path;
};

class RunManifest {
 public:
  RunManifest(std::string command, std::filesystem::path dir) : command_(std::move(command)), dir_(std::move(dir)) {}

  void set_config(const TrainConfig& c) { config_ = serialize_config(c); }
  void add_input(const std::string& role, const std::filesystem::path& p) { inputs_.push_back({role, p}); }
  void set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

  // Hashes every regular file under the run directory (except the manifest
  // itself) and writes manifest.json.
  std::filesystem::path write() const {
    nlohmann::json j;
    j["command"] = command_;
    j["run_dir"] = std::filesystem::absolute(dir_).string();
    if (!config_.empty()) j["config"] = config_;
    j["inputs"] = nlohmann::json::array();
    for (const auto& in : inputs_)
      j["inputs"].push_back({{"role", in.role},
                             {"path", std::filesystem::absolute(in.path).string()},
                             {"git_sha1", git_blob_sha1(in.path)}});
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir_))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    j["outputs"] = nlohmann::json::array();
    for (const auto& f : files)
      j["outputs"].push_back({{"path", std::filesystem::relative(f, dir_).generic_string()},
                              {"bytes", std::filesystem::file_size(f)},
                              {"git_sha1", git_blob_sha1(f)}});
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    const auto path = dir_ / "manifest.json";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << j.dump(2) << '\n';
    return path;
  }

 private:
  std::string command_;
  std::filesystem::path dir_;
  std::string config_;
  std::vector<InputRef> inputs_;
  nlohmann::json extra_ = nlohmann::json::object();
};

}  // namespace pint::cli
