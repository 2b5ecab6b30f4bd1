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

#include "csipred/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace csipred::io {

static_assert(std::endian::native == std::endian::little, "tensor files are written in native little-endian order");

namespace {

constexpr char kTensorMagic[7] = {'S', 'C', 'A', 'C', 'S', 'I', '\0'};
constexpr char kContainerMagic[7] = {'S', 'C', 'A', 'N', 'T', 'C', '\0'};

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw IoError("unexpected end of tensor stream");
    return value;
}

void expect_magic(std::istream& is, const char (&magic)[7], const char* what) {
    char buf[7];
    is.read(buf, 7);
    if (!is || std::memcmp(buf, magic, 7) != 0) throw IoError(std::string("bad magic: not a ") + what);
}

void write_header(std::ostream& os, const Shape& shape) {
    os.write(kTensorMagic, 7);
    put<std::uint32_t>(os, kTensorVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (Index d : shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
}

Shape read_header(std::istream& is) {
    expect_magic(is, kTensorMagic, "tensor record");
    const auto version = take<std::uint32_t>(is);
    if (version != kTensorVersion) throw IoError("unsupported tensor version " + std::to_string(version));
    const auto rank = take<std::uint32_t>(is);
    if (rank > 16) throw IoError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(take<std::uint64_t>(is));
    return shape;
}

std::vector<float> read_pairs(std::istream& is, Index count) {
    std::vector<float> buf(static_cast<std::size_t>(2 * count));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw IoError("truncated tensor payload");
    return buf;
}

}  // namespace

void write_tensor(std::ostream& os, const CsiTensor& t) {
    write_header(os, t.shape());
    // std::complex<float> is layout-compatible with float[2]
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * 2 * sizeof(float)));
    if (!os) throw IoError("failed writing tensor payload");
}

CsiTensor read_tensor(std::istream& is) {
    const Shape shape = read_header(is);
    CsiTensor t(shape);
    is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * 2 * sizeof(float)));
    if (!is) throw IoError("truncated tensor payload");
    return t;
}

void write_real_tensor(std::ostream& os, const RealTensor& t) {
    write_header(os, t.shape());
    std::vector<float> buf(static_cast<std::size_t>(2 * t.size()), 0.0f);
    for (Index i = 0; i < t.size(); ++i) buf[static_cast<std::size_t>(2 * i)] = t[i];
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) throw IoError("failed writing tensor payload");
}

RealTensor read_real_tensor(std::istream& is) {
    const Shape shape = read_header(is);
    RealTensor t(shape);
    const auto buf = read_pairs(is, t.size());
    for (Index i = 0; i < t.size(); ++i) t[i] = buf[static_cast<std::size_t>(2 * i)];
    return t;
}

void save_tensor(const std::filesystem::path& path, const CsiTensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

CsiTensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_tensor(is);
}

void save_named_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kContainerMagic, 7);
    put<std::uint32_t>(os, kContainerVersion);
    put<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_real_tensor(os, t);
    }
    if (!os) throw IoError("failed writing " + path.string());
}

NamedTensors load_named_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    expect_magic(is, kContainerMagic, "named tensor container");
    const auto version = take<std::uint32_t>(is);
    if (version != kContainerVersion) throw IoError("unsupported container version " + std::to_string(version));
    const auto count = take<std::uint64_t>(is);
    NamedTensors out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = take<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw IoError("truncated tensor name");
        out.emplace_back(std::move(name), read_real_tensor(is));
    }
    return out;
}

// ---- key=value ----------------------------------------------------------

namespace {
std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}
}  // namespace

std::string format_double(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    if (std::isnan(value)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
    const std::string t = trim(text);
    if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
    if (t == "-inf") return -std::numeric_limits<double>::infinity();
    double value = 0.0;
    auto res = std::from_chars(t.data(), t.data() + t.size(), value);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw std::invalid_argument("not a number: '" + text + "'");
    return value;
}

KeyValueFile KeyValueFile::parse(const std::string& text) {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

std::string KeyValueFile::str() const {
    std::string out;
    for (const auto& k : order_) out += k + "=" + values_.at(k) + "\n";
    return out;
}

void KeyValueFile::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << str();
    if (!os) throw IoError("failed writing " + path.string());
}

const std::string& KeyValueFile::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::out_of_range("missing key '" + key + "'");
    return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
    try {
        return parse_double(get(key));
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("key '" + key + "': " + e.what());
    }
}

double KeyValueFile::get_double_or(const std::string& key, double fallback) const {
    return contains(key) ? get_double(key) : fallback;
}

long long KeyValueFile::get_int(const std::string& key) const {
    const std::string& v = get(key);
    long long value = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), value);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw std::invalid_argument("key '" + key + "': not an integer: '" + v + "'");
    return value;
}

long long KeyValueFile::get_int_or(const std::string& key, long long fallback) const {
    return contains(key) ? get_int(key) : fallback;
}

std::vector<std::string> KeyValueFile::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(parse_double(s));
    return out;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find('=') != std::string::npos || key.find('\n') != std::string::npos)
        throw std::invalid_argument("invalid key '" + key + "'");
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
}

void KeyValueFile::set(const std::string& key, double value) { set(key, format_double(value)); }

void KeyValueFile::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

void KeyValueFile::set(const std::string& key, const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ",";
        s += format_double(values[i]);
    }
    set(key, s);
}

}  // namespace csipred::io
