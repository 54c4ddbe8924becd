#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "skillnet/errors.hpp"
#include "skillnet/model.hpp"

namespace skillnet {

// Binary layout, all integers little-endian:
//   magic "SKNTCKPT" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes | u8 dtype (0 = f64, 1 = u64)
//              | u32 rank | u64 dims[rank]
//   then every payload in entry order, row-major, 8 bytes per element.
inline constexpr char kCheckpointMagic[8] = {'S', 'K', 'N', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::variant<std::vector<double>, std::vector<std::uint64_t>> values;

    bool is_f64() const { return values.index() == 0; }
    const std::vector<double>& f64() const { return std::get<0>(values); }
    const std::vector<std::uint64_t>& u64() const { return std::get<1>(values); }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
  public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

    std::uint64_t u(int width) {
        if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw ShapeError("checkpoint: truncated file");
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::string str(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ShapeError("checkpoint: truncated file");
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

  private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

// "layer<L>.<param>" -> L
inline std::size_t layer_of(const std::string& name) { return std::stoul(name.substr(5, name.find('.') - 5)); }

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        const std::size_t count = e.is_f64() ? e.f64().size() : e.u64().size();
        if (count != shape_numel(e.shape)) throw ShapeError("checkpoint: entry '" + e.name + "' size/shape mismatch");
        detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.is_f64() ? 0 : 1));
        detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) detail::put_u64(out, d);
    }
    for (const auto& e : entries) {
        if (e.is_f64()) {
            for (double v : e.f64()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
        } else {
            for (auto v : e.u64()) detail::put_u64(out, v);
        }
    }
    return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
    detail::ByteReader in(bytes);
    if (in.str(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
        throw ContractError("checkpoint: bad magic");
    }
    const auto version = in.u(4);
    if (version != kCheckpointVersion) throw ContractError("checkpoint: unsupported version " + std::to_string(version));
    const auto n = in.u(4);
    std::vector<CheckpointEntry> entries(n);
    std::vector<bool> is_f64(n);
    for (auto& e : entries) {
        e.name = in.str(in.u(4));
        const auto dtype = in.u(1);
        if (dtype > 1) throw ContractError("checkpoint: unknown dtype in '" + e.name + "'");
        is_f64[static_cast<std::size_t>(&e - entries.data())] = dtype == 0;
        const auto rank = in.u(4);
        for (std::uint64_t r = 0; r < rank; ++r) e.shape.push_back(in.u(8));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t count = shape_numel(entries[i].shape);
        if (is_f64[i]) {
            std::vector<double> v(count);
            for (auto& x : v) x = std::bit_cast<double>(in.u(8));
            entries[i].values = std::move(v);
        } else {
            std::vector<std::uint64_t> v(count);
            for (auto& x : v) x = in.u(8);
            entries[i].values = std::move(v);
        }
    }
    if (!in.done()) throw ShapeError("checkpoint: trailing bytes");
    return entries;
}

// Model parameters as checkpoint entries. Frozen sparse inventories are
// stored as COO pairs "<name>.coo_index" (u64 flat positions) and
// "<name>.coo_value".
inline std::vector<CheckpointEntry> checkpoint_entries(const MultitaskModel& model) {
    std::vector<CheckpointEntry> entries;
    for (const auto& p : model.parameters()) {
        bool stored = false;
        if (p.role == ParamRole::skill && p.name.ends_with(".phi")) {
            const auto* sp = std::get_if<SparseSkills>(&model.skills(detail::layer_of(p.name)));
            if (sp && sp->frozen() && sp->pending_rows.empty()) {
                const SparseCoo coo = to_coo(*sp);
                entries.push_back({p.name + ".coo_index", Shape{coo.indices.size()}, coo.indices});
                entries.push_back({p.name + ".coo_value", Shape{coo.values.size()}, coo.values});
                stored = true;
            }
        }
        if (!stored) {
            entries.push_back({p.name, p.tensor.shape(),
                               std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
        }
    }
    return entries;
}

inline nlohmann::ordered_json checkpoint_sidecar(const MultitaskModel& model,
                                                 const std::vector<CheckpointEntry>& entries) {
    nlohmann::ordered_json doc;
    doc["format"] = std::string(kCheckpointMagic, sizeof kCheckpointMagic);
    doc["version"] = kCheckpointVersion;
    doc["byte_order"] = "little";
    doc["model_kind"] = to_string(model.kind());
    doc["parameterisation"] = to_string(model.spec().parameterisation);
    doc["tasks"] = model.task_names();
    doc["num_skills"] = model.num_skills();
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json item;
        item["name"] = e.name;
        item["dtype"] = e.is_f64() ? "f64" : "u64";
        item["shape"] = e.shape;
        list.push_back(item);
    }
    doc["entries"] = list;
    nlohmann::ordered_json dense = nlohmann::ordered_json::object();
    for (const auto& p : model.parameters()) dense[p.name] = p.tensor.shape();
    doc["parameter_shapes"] = dense;
    return doc;
}

inline void save_checkpoint(const MultitaskModel& model, const std::string& bin_path, const std::string& json_path) {
    const auto entries = checkpoint_entries(model);
    {
        std::ofstream out(bin_path, std::ios::binary | std::ios::trunc);
        if (!out) throw StateError("checkpoint: cannot write '" + bin_path + "'");
        const std::string bytes = encode_checkpoint(entries);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::ofstream side(json_path, std::ios::trunc);
    if (!side) throw StateError("checkpoint: cannot write '" + json_path + "'");
    side << checkpoint_sidecar(model, entries).dump(2) << "\n";
}

// Restores parameter values (and sparse masks) into a structurally identical model.
inline void restore_checkpoint(MultitaskModel& model, const std::vector<CheckpointEntry>& entries) {
    auto find = [&](const std::string& name) -> const CheckpointEntry* {
        for (const auto& e : entries) {
            if (e.name == name) return &e;
        }
        return nullptr;
    };
    for (auto& p : model.parameters()) {
        auto values = p.tensor.mutable_data();
        if (const auto* e = find(p.name)) {
            if (e->shape != p.tensor.shape() || !e->is_f64()) throw ShapeError("checkpoint: entry '" + p.name + "' mismatch");
            std::copy(e->f64().begin(), e->f64().end(), values.begin());
            continue;
        }
        const auto* idx = find(p.name + ".coo_index");
        const auto* val = find(p.name + ".coo_value");
        if (!idx || !val) throw LookupError("checkpoint: no entry for parameter '" + p.name + "'");
        std::fill(values.begin(), values.end(), 0.0);
        std::vector<double> mask(values.size(), 0.0);
        for (std::size_t k = 0; k < idx->u64().size(); ++k) {
            const auto at = idx->u64()[k];
            if (at >= values.size()) throw ShapeError("checkpoint: COO index out of range");
            values[at] = val->f64().at(k);
            mask[at] = 1.0;
        }
        auto& sp = std::get<SparseSkills>(model.skills(detail::layer_of(p.name)));
        sp.mask = Tensor(p.tensor.shape(), std::move(mask));
        sp.pending_rows.clear();
    }
}

inline std::vector<CheckpointEntry> load_checkpoint_file(const std::string& bin_path) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw LookupError("checkpoint: cannot open '" + bin_path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace skillnet
