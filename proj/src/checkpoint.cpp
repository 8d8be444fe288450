// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "ardu/model.hpp"

namespace ardu {
namespace {

constexpr char kMagic[5] = {'A', 'R', 'D', 'U', '1'};
constexpr std::uint32_t kMaxNameLength = 4096;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Record {
    std::string name;
    std::array<std::uint32_t, 4> extents{};
    std::vector<float> values;
};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

void write_record(std::ostream& os, const std::string& name, Shape s, std::span<const float> values) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    for (int e : {s.n, s.c, s.h, s.w}) put_u32(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
}

class Reader {
public:
    Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

    void bytes(void* dst, std::size_t n, const char* what) {
        is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) {
            throw Error("checkpoint '" + path_ + "': truncated while reading " + what);
        }
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v = 0;
        bytes(&v, sizeof v, what);
        return v;
    }
    bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& is_;
    std::string path_;
};

std::vector<Record> read_records(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint '" + path.string() + "': cannot open for reading");
    Reader r(is, path.string());
    char magic[sizeof kMagic];
    r.bytes(magic, sizeof magic, "header");
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw Error("checkpoint '" + path.string() + "': bad magic (not an ARDU1 checkpoint)");
    }
    const std::uint32_t count = r.u32("record count");
    std::vector<Record> records;
    for (std::uint32_t i = 0; i < count; ++i) {
        Record rec;
        const std::uint32_t len = r.u32("name length");
        if (len == 0 || len > kMaxNameLength) {
            throw Error("checkpoint '" + path.string() + "': corrupt name length in record " + std::to_string(i));
        }
        rec.name.resize(len);
        r.bytes(rec.name.data(), len, "tensor name");
        std::uint64_t numel = 1;
        for (auto& e : rec.extents) {
            e = r.u32("tensor extents");
            numel *= e;
        }
        if (numel > (1ULL << 32)) throw Error("checkpoint '" + path.string() + "': implausible size for '" + rec.name + "'");
        rec.values.resize(numel);
        r.bytes(rec.values.data(), numel * sizeof(float), ("values of '" + rec.name + "'").c_str());
        records.push_back(std::move(rec));
    }
    if (!r.at_end()) throw Error("checkpoint '" + path.string() + "': trailing bytes after last record");
    return records;
}

std::string stats_key(const std::string& layer, const char* field) { return "bn_stats/" + layer + "/" + field; }

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const auto& params = model.store().parameters();
    const auto& stats = model.store().stats();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("checkpoint '" + path.string() + "': cannot open for writing");
    os.write(kMagic, sizeof kMagic);
    put_u32(os, static_cast<std::uint32_t>(params.size() + 2 * stats.size()));
    for (const auto& p : params) write_record(os, p.name, p.value.shape(), p.value.data());
    for (const auto& s : stats) {
        if (!s.stats->initialized()) throw Error("checkpoint: statistics of '" + s.name + "' are uninitialized");
        const int c = static_cast<int>(s.stats->mean.size());
        write_record(os, stats_key(s.name, "mean"), {1, c, 1, 1}, s.stats->mean);
        write_record(os, stats_key(s.name, "var"), {1, c, 1, 1}, s.stats->var);
    }
    if (!os) throw Error("checkpoint '" + path.string() + "': write failed");
}

void load_checkpoint_into(Model& model, const std::filesystem::path& path) {
    std::vector<Record> records = read_records(path);
    std::map<std::string, Record*> by_name;
    for (auto& r : records) {
        if (!by_name.emplace(r.name, &r).second) {
            throw Error("checkpoint '" + path.string() + "': duplicate tensor '" + r.name + "'");
        }
    }
    std::set<std::string> used;
    auto take = [&](const std::string& name, Shape expected) -> const std::vector<float>& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint '" + path.string() + "': missing tensor '" + name + "'");
        const auto& e = it->second->extents;
        const Shape got{static_cast<int>(e[0]), static_cast<int>(e[1]), static_cast<int>(e[2]), static_cast<int>(e[3])};
        if (!(got == expected)) {
            throw Error("checkpoint '" + path.string() + "': shape mismatch for '" + name + "' (file " + got.str() +
                        ", model " + expected.str() + ")");
        }
        used.insert(name);
        return it->second->values;
    };

    // Validate everything before mutating the model.
    const auto& params = model.store().parameters();
    const auto& stats = model.store().stats();
    std::vector<const std::vector<float>*> param_values;
    for (const auto& p : params) param_values.push_back(&take(p.name, p.value.shape()));
    std::vector<std::pair<const std::vector<float>*, const std::vector<float>*>> stat_values;
    for (const auto& s : stats) {
        const int c = static_cast<int>(s.stats->mean.size());
        const auto& mean = take(stats_key(s.name, "mean"), {1, c, 1, 1});
        const auto& var = take(stats_key(s.name, "var"), {1, c, 1, 1});
        stat_values.emplace_back(&mean, &var);
    }
    for (const auto& r : records) {
        if (!used.contains(r.name)) throw Error("checkpoint '" + path.string() + "': unknown tensor '" + r.name + "'");
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].value;
        std::copy(param_values[i]->begin(), param_values[i]->end(), t.data().begin());
    }
    for (std::size_t i = 0; i < stats.size(); ++i) {
        stats[i].stats->mean = *stat_values[i].first;
        stats[i].stats->var = *stat_values[i].second;
    }
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
    Model m = Model::build(config, 0);
    load_checkpoint_into(m, path);
    return m;
}

}  // namespace ardu
