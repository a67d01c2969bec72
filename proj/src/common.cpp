#include <array>
#include <cstdio>
#include <iterator>
#include <memory>

#include <omp.h>
#include <openssl/evp.h>

#include "densetune/error.hpp"
#include "densetune/exec.hpp"
#include "densetune/io.hpp"

namespace densetune {

void set_thread_count(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int thread_count() { return omp_get_max_threads(); }

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ifstream in(path, mode);
  if (!in) throw UsageError("cannot open input file: " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw UsageError("cannot open output file: " + path.string());
  return out;
}

void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const json&, std::size_t)>& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected a JSON object");
    }
    fn(obj, line_no);
  }
}

std::string require_string(const json& obj, std::string_view field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    throw DataError("line " + std::to_string(line) + ": missing string field \"" +
                    std::string(field) + "\"");
  }
  return it->get<std::string>();
}

double require_number(const json& obj, std::string_view field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_number()) {
    throw DataError("line " + std::to_string(line) + ": missing numeric field \"" +
                    std::string(field) + "\"");
  }
  return it->get<double>();
}

std::string dump_line(const json& obj) { return obj.dump(-1, ' ', false, json::error_handler_t::strict); }

void write_json_file(const std::filesystem::path& path, const json& obj) {
  auto out = open_output(path);
  out << obj.dump(2) << '\n';
}

json read_json_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

namespace {

std::string to_hex(const unsigned char* data, unsigned len) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    hex.push_back(digits[data[i] >> 4]);
    hex.push_back(digits[data[i] & 0xF]);
  }
  return hex;
}

struct DigestCtx {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  DigestCtx() { EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr); }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }
  std::string finish() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    return to_hex(md.data(), len);
  }
};

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::binary);
  DigestCtx digest;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    digest.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return digest.finish();
}

std::string sha256_string(std::string_view data) {
  DigestCtx digest;
  digest.update(data.data(), data.size());
  return digest.finish();
}

}  // namespace densetune
