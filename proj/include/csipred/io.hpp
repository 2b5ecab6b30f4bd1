// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

// Binary tensor records and key=value text files.
//
// Tensor record (little-endian):
//   magic "SCACSI\0" (7 bytes) | u32 version | u32 rank | u64 dims[rank] |
//   float32 (re, im) pairs in row-major order
// Real tensors are stored with a zero imaginary part.
//
// Named container:
//   magic "SCANTC\0" (7 bytes) | u32 version | u64 count |
//   count x (u32 name length | name bytes | tensor record)

#ifndef CSIPRED_IO_HPP
#define CSIPRED_IO_HPP

#include "csipred/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace csipred::io {

inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kContainerVersion = 1;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& os, const CsiTensor& t);
CsiTensor read_tensor(std::istream& is);

void write_real_tensor(std::ostream& os, const RealTensor& t);
RealTensor read_real_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const CsiTensor& t);
CsiTensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, RealTensor>>;

void save_named_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_named_tensors(const std::filesystem::path& path);

/// Ordered key=value text file; '#' starts a comment line.
class KeyValueFile {
public:
    KeyValueFile() = default;

    static KeyValueFile load(const std::filesystem::path& path);
    static KeyValueFile parse(const std::string& text);
    void save(const std::filesystem::path& path) const;
    std::string str() const;

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int_or(const std::string& key, long long fallback) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, const char* value) { set(key, std::string(value)); }
    void set(const std::string& key, double value);
    void set(const std::string& key, long long value);
    void set(const std::string& key, Index value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, const std::vector<double>& values);

    const std::vector<std::string>& keys() const { return order_; }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

/// Shortest decimal text that reads back to the same double ("inf" allowed).
std::string format_double(double value);
double parse_double(const std::string& text);

}  // namespace csipred::io

#endif  // CSIPRED_IO_HPP
