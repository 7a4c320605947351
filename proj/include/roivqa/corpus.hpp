#pragma once

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "roivqa/bbox.hpp"
#include "roivqa/error.hpp"
#include "roivqa/png_io.hpp"
#include "roivqa/rng.hpp"

namespace roivqa {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

enum class QType { closed, open, multichoice, localization };
enum class Provenance { original, reconstructed };

inline const char* to_string(QType t) {
    switch (t) {
        case QType::closed: return "closed";
        case QType::open: return "open";
        case QType::multichoice: return "multichoice";
        case QType::localization: return "localization";
    }
    return "closed";
}

inline std::optional<QType> parse_qtype(std::string_view s) {
    if (s == "closed") return QType::closed;
    if (s == "open") return QType::open;
    if (s == "multichoice") return QType::multichoice;
    if (s == "localization") return QType::localization;
    return std::nullopt;
}

inline const char* to_string(Provenance p) {
    return p == Provenance::original ? "original" : "reconstructed";
}

inline std::optional<Provenance> parse_provenance(std::string_view s) {
    if (s == "original") return Provenance::original;
    if (s == "reconstructed") return Provenance::reconstructed;
    return std::nullopt;
}

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

inline std::vector<std::uint8_t> read_file_bytes(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write: " + path.string());
}

struct ImageRecord {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // RGB8 row-major
    std::string source_path;           // as written in the manifest
    std::map<std::string, json> extra;

    ImageRGB8 image() const {
        ImageRGB8 img;
        img.width = width;
        img.height = height;
        img.pixels = pixels;
        return img;
    }
};

struct RegionAnnotation {
    std::string region_id;
    std::string label;
    BBox bbox;
    std::map<std::string, json> extra;
};

struct QAPair {
    std::string qa_id;
    std::string image_id;
    QType qtype = QType::closed;
    std::string question;
    std::string answer;
    Provenance provenance = Provenance::original;
    std::optional<std::string> composite_ref;
    std::map<std::string, std::string> meta;
    std::map<std::string, json> extra;
};

struct Dataset {
    std::string name;
    std::filesystem::path root;  // directory relative paths resolve against
    std::vector<ImageRecord> images;  // sorted by image_id
    std::map<std::string, std::vector<RegionAnnotation>> regions;
    std::vector<QAPair> qa;  // sorted by qa_id

    const ImageRecord* find_image(const std::string& id) const {
        auto it = std::lower_bound(
            images.begin(), images.end(), id,
            [](const ImageRecord& r, const std::string& key) {
                return r.image_id < key;
            });
        if (it == images.end() || it->image_id != id) return nullptr;
        return &*it;
    }
};

inline void sort_dataset(Dataset& d) {
    std::sort(d.images.begin(), d.images.end(),
              [](const ImageRecord& a, const ImageRecord& b) {
                  return a.image_id < b.image_id;
              });
    for (auto& [id, regs] : d.regions)
        std::sort(regs.begin(), regs.end(),
                  [](const RegionAnnotation& a, const RegionAnnotation& b) {
                      return a.region_id < b.region_id;
                  });
    std::sort(d.qa.begin(), d.qa.end(), [](const QAPair& a, const QAPair& b) {
        return a.qa_id < b.qa_id;
    });
}

struct Fraction {
    long long num = 4;
    long long den = 5;
};

struct SplitSpec {
    std::uint64_t seed = 0;
    Fraction train_fraction{4, 5};
};

struct LoadOptions {
    bool strict = true;  // reject unknown fields; lenient mode preserves them
};

namespace detail {

inline std::filesystem::path absolute_dir(const std::filesystem::path& p) {
    std::filesystem::path q = p.empty() ? std::filesystem::path(".") : p;
    if (!q.is_absolute()) q = std::filesystem::absolute(q);
    return q.lexically_normal();
}

/// Path of `stored` (relative to `root` unless absolute), re-expressed
/// relative to `target_dir`. Saving back into root leaves clean relative
/// paths untouched, which is what keeps round-trips byte-identical.
inline std::string rebase_path(const std::filesystem::path& root,
                               const std::string& stored,
                               const std::filesystem::path& target_dir) {
    std::filesystem::path p(stored);
    std::filesystem::path abs =
        (p.is_absolute() ? p : absolute_dir(root) / p).lexically_normal();
    std::filesystem::path rel = abs.lexically_relative(absolute_dir(target_dir));
    if (rel.empty()) return abs.generic_string();
    return rel.generic_string();
}

inline std::filesystem::path resolve_path(const std::filesystem::path& root,
                                          const std::string& stored) {
    std::filesystem::path p(stored);
    return p.is_absolute() ? p : root / p;
}

struct LineParser {
    int line_no = 0;
    std::vector<std::string>& diags;
    bool ok = true;

    void fail(const std::string& msg) {
        diags.push_back("line " + std::to_string(line_no) + ": " + msg);
        ok = false;
    }

    std::string need_string(const json& j, const char* key) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string()) {
            fail(std::string("missing or non-string field \"") + key + "\"");
            return {};
        }
        return it->get<std::string>();
    }

    int need_int(const json& j, const char* key) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_number_integer()) {
            fail(std::string("missing or non-integer field \"") + key + "\"");
            return 0;
        }
        return it->get<int>();
    }

    std::optional<BBox> need_bbox(const json& j, const char* key) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_array() || it->size() != 4 ||
            !std::all_of(it->begin(), it->end(),
                         [](const json& v) { return v.is_number_integer(); })) {
            fail(std::string("field \"") + key +
                 "\" must be an array of 4 integers");
            return std::nullopt;
        }
        return BBox{(*it)[0].get<int>(), (*it)[1].get<int>(),
                    (*it)[2].get<int>(), (*it)[3].get<int>()};
    }

    template <std::size_t N>
    std::map<std::string, json> collect_extras(const json& j,
                                               const char* (&known)[N],
                                               bool strict) {
        std::map<std::string, json> extras;
        for (auto it = j.begin(); it != j.end(); ++it) {
            bool is_known = false;
            for (const char* k : known)
                if (it.key() == k) {
                    is_known = true;
                    break;
                }
            if (is_known) continue;
            if (strict)
                fail("unknown field \"" + it.key() + "\"");
            else
                extras[it.key()] = it.value();
        }
        return extras;
    }
};

}  // namespace detail

/// Per-qa invariant diagnostics (multichoice option metadata, localization
/// answer shape). Empty result means the pair is well-formed.
inline std::vector<std::string> qa_invariant_diagnostics(const QAPair& qa) {
    std::vector<std::string> out;
    if (qa.qtype == QType::multichoice) {
        auto it = qa.meta.find("correct");
        const bool letter_ok = it != qa.meta.end() && it->second.size() == 1 &&
                               it->second[0] >= 'A' && it->second[0] <= 'D';
        if (!letter_ok)
            out.push_back("qa " + qa.qa_id +
                          ": multichoice needs meta \"correct\" in {A,B,C,D}");
        for (char c = 'A'; c <= 'D'; ++c) {
            const std::string key = std::string("color_") + c;
            auto cit = qa.meta.find(key);
            if (cit == qa.meta.end() || trim(cit->second).empty())
                out.push_back("qa " + qa.qa_id + ": multichoice needs meta \"" +
                              key + "\"");
        }
    }
    if (qa.qtype == QType::localization && !parse_bbox(qa.answer))
        out.push_back("qa " + qa.qa_id +
                      ": localization answer does not contain a bbox");
    return out;
}

inline Dataset load_dataset(const std::filesystem::path& path,
                            const LoadOptions& opts = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open manifest: " + path.string());

    Dataset d;
    d.name = path.stem().string();
    d.root = path.has_parent_path() ? path.parent_path()
                                    : std::filesystem::path(".");

    std::vector<std::string> diags;
    std::string line;
    int line_no = 0;
    int records = 0;

    static const char* image_keys[] = {"kind", "image_id", "file", "width",
                                       "height"};
    static const char* region_keys[] = {"kind", "image_id", "region_id",
                                        "label", "bbox"};
    static const char* qa_keys[] = {"kind",     "qa_id",  "image_id",
                                    "qtype",    "question", "answer",
                                    "provenance", "meta"};

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ++records;
        detail::LineParser p{line_no, diags};

        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            p.fail(std::string("invalid JSON: ") + e.what());
            continue;
        }
        if (!j.is_object()) {
            p.fail("line is not a JSON object");
            continue;
        }

        const std::string kind = p.need_string(j, "kind");
        if (!p.ok) continue;

        if (kind == "image") {
            ImageRecord rec;
            rec.image_id = p.need_string(j, "image_id");
            rec.source_path = p.need_string(j, "file");
            rec.width = p.need_int(j, "width");
            rec.height = p.need_int(j, "height");
            rec.extra = p.collect_extras(j, image_keys, opts.strict);
            if (!p.ok) continue;
            if (rec.width < 1 || rec.height < 1) {
                p.fail("image " + rec.image_id + ": non-positive dimensions");
                continue;
            }
            d.images.push_back(std::move(rec));
        } else if (kind == "region") {
            RegionAnnotation rec;
            const std::string image_id = p.need_string(j, "image_id");
            rec.region_id = p.need_string(j, "region_id");
            rec.label = p.need_string(j, "label");
            auto bb = p.need_bbox(j, "bbox");
            rec.extra = p.collect_extras(j, region_keys, opts.strict);
            if (!p.ok || !bb) continue;
            rec.bbox = *bb;
            if (trim(rec.label).empty()) {
                p.fail("region " + rec.region_id + ": empty label");
                continue;
            }
            d.regions[image_id].push_back(std::move(rec));
        } else if (kind == "qa") {
            QAPair rec;
            rec.qa_id = p.need_string(j, "qa_id");
            rec.image_id = p.need_string(j, "image_id");
            const std::string qt = p.need_string(j, "qtype");
            rec.question = p.need_string(j, "question");
            rec.answer = p.need_string(j, "answer");
            const std::string prov = p.need_string(j, "provenance");
            rec.extra = p.collect_extras(j, qa_keys, opts.strict);
            if (auto it = j.find("meta"); it != j.end()) {
                if (!it->is_object()) {
                    p.fail("qa " + rec.qa_id + ": meta must be an object");
                } else {
                    for (auto mit = it->begin(); mit != it->end(); ++mit) {
                        if (!mit.value().is_string()) {
                            p.fail("qa " + rec.qa_id + ": meta value for \"" +
                                   mit.key() + "\" must be a string");
                            continue;
                        }
                        rec.meta[mit.key()] = mit.value().get<std::string>();
                    }
                }
            }
            if (!p.ok) continue;
            if (auto t = parse_qtype(qt))
                rec.qtype = *t;
            else {
                p.fail("qa " + rec.qa_id + ": unknown qtype \"" + qt + "\"");
                continue;
            }
            if (auto pv = parse_provenance(prov))
                rec.provenance = *pv;
            else {
                p.fail("qa " + rec.qa_id + ": unknown provenance \"" + prov +
                       "\"");
                continue;
            }
            if (auto mit = rec.meta.find("composite_ref");
                mit != rec.meta.end()) {
                rec.composite_ref = mit->second;
                rec.meta.erase(mit);
            }
            d.qa.push_back(std::move(rec));
        } else {
            p.fail("unknown kind \"" + kind + "\"");
        }
    }

    if (records == 0) diags.push_back("empty manifest");

    // Structural pass done; now referential and geometric validation.
    std::set<std::string> image_ids;
    for (const auto& img : d.images)
        if (!image_ids.insert(img.image_id).second)
            diags.push_back("duplicate image_id \"" + img.image_id + "\"");

    std::map<std::string, std::pair<int, int>> dims;
    for (const auto& img : d.images)
        dims[img.image_id] = {img.width, img.height};

    for (const auto& [image_id, regs] : d.regions) {
        auto dit = dims.find(image_id);
        if (dit == dims.end())
            diags.push_back("region on unknown image \"" + image_id + "\"");
        std::set<std::string> region_ids;
        for (const auto& r : regs) {
            if (!region_ids.insert(r.region_id).second)
                diags.push_back("duplicate region_id \"" + r.region_id +
                                "\" on image \"" + image_id + "\"");
            if (r.bbox.degenerate()) {
                diags.push_back("region " + r.region_id + ": degenerate bbox");
            } else if (dit != dims.end() &&
                       (r.bbox.x1 < 0 || r.bbox.y1 < 0 ||
                        r.bbox.x2 > dit->second.first ||
                        r.bbox.y2 > dit->second.second)) {
                diags.push_back("region " + r.region_id +
                                ": bbox outside image bounds");
            }
        }
    }

    std::set<std::string> qa_ids;
    for (const auto& qa : d.qa) {
        if (!qa_ids.insert(qa.qa_id).second)
            diags.push_back("duplicate qa_id \"" + qa.qa_id + "\"");
        if (!dims.count(qa.image_id))
            diags.push_back("qa " + qa.qa_id + ": unknown image \"" +
                            qa.image_id + "\"");
        for (auto& msg : qa_invariant_diagnostics(qa)) diags.push_back(msg);
    }

    // Decode every referenced PNG and confirm the declared dimensions.
    if (diags.empty()) {
        for (auto& img : d.images) {
            const auto file = detail::resolve_path(d.root, img.source_path);
            try {
                ImageRGB8 decoded = read_rgb8(file);
                if (decoded.width != img.width ||
                    decoded.height != img.height) {
                    diags.push_back("image " + img.image_id +
                                    ": declared " + std::to_string(img.width) +
                                    "x" + std::to_string(img.height) +
                                    " but file is " +
                                    std::to_string(decoded.width) + "x" +
                                    std::to_string(decoded.height));
                } else {
                    img.pixels = std::move(decoded.pixels);
                }
            } catch (const Error& e) {
                diags.push_back("image " + img.image_id + ": " + e.what());
            }
        }
    }

    if (!diags.empty()) throw ValidationError(diags);
    sort_dataset(d);
    return d;
}

/// Writes the dataset in canonical form: images, then regions, then qa,
/// each group sorted by id, one compact JSON object per line, image and
/// composite paths re-expressed relative to the manifest's directory.
inline void save_manifest(const Dataset& d, const std::filesystem::path& path) {
    const std::filesystem::path target_dir =
        path.has_parent_path() ? path.parent_path()
                               : std::filesystem::path(".");
    if (!target_dir.empty()) std::filesystem::create_directories(target_dir);

    Dataset sorted = d;
    sort_dataset(sorted);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open manifest for writing: " + path.string());

    for (const auto& img : sorted.images) {
        ojson j;
        j["kind"] = "image";
        j["image_id"] = img.image_id;
        j["file"] = detail::rebase_path(d.root, img.source_path, target_dir);
        j["width"] = img.width;
        j["height"] = img.height;
        for (const auto& [k, v] : img.extra) j[k] = v;
        out << j.dump() << '\n';
    }
    for (const auto& [image_id, regs] : sorted.regions) {
        for (const auto& r : regs) {
            ojson j;
            j["kind"] = "region";
            j["image_id"] = image_id;
            j["region_id"] = r.region_id;
            j["label"] = r.label;
            j["bbox"] = {r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2};
            for (const auto& [k, v] : r.extra) j[k] = v;
            out << j.dump() << '\n';
        }
    }
    for (const auto& qa : sorted.qa) {
        ojson j;
        j["kind"] = "qa";
        j["qa_id"] = qa.qa_id;
        j["image_id"] = qa.image_id;
        j["qtype"] = to_string(qa.qtype);
        j["question"] = qa.question;
        j["answer"] = qa.answer;
        j["provenance"] = to_string(qa.provenance);
        std::map<std::string, std::string> meta = qa.meta;
        if (qa.composite_ref) meta["composite_ref"] = *qa.composite_ref;
        if (auto it = meta.find("composite_file"); it != meta.end())
            it->second = detail::rebase_path(d.root, it->second, target_dir);
        ojson m = ojson::object();
        for (const auto& [k, v] : meta) m[k] = v;
        j["meta"] = m;
        for (const auto& [k, v] : qa.extra) j[k] = v;
        out << j.dump() << '\n';
    }
    if (!out) throw Error("short write: " + path.string());
}

inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d,
                                                 const SplitSpec& spec) {
    if (spec.train_fraction.num <= 0 ||
        spec.train_fraction.num >= spec.train_fraction.den)
        throw Error("train fraction must be strictly between 0 and 1");

    std::vector<std::string> ids;
    ids.reserve(d.images.size());
    for (const auto& img : d.images) ids.push_back(img.image_id);
    std::sort(ids.begin(), ids.end());
    if (ids.size() < 2) throw Error("cannot split: fewer than 2 images");

    SplitMix64 rng(spec.seed);
    shuffle(ids, rng);

    const long long n = static_cast<long long>(ids.size());
    const long long train_n =
        (spec.train_fraction.num * n + spec.train_fraction.den - 1) /
        spec.train_fraction.den;
    std::set<std::string> train_ids(ids.begin(), ids.begin() + train_n);

    Dataset train, test;
    train.name = d.name + "-train";
    test.name = d.name + "-test";
    train.root = test.root = d.root;
    for (const auto& img : d.images)
        (train_ids.count(img.image_id) ? train : test).images.push_back(img);
    for (const auto& [image_id, regs] : d.regions)
        (train_ids.count(image_id) ? train : test).regions[image_id] = regs;
    for (const auto& qa : d.qa)
        (train_ids.count(qa.image_id) ? train : test).qa.push_back(qa);
    sort_dataset(train);
    sort_dataset(test);
    return {std::move(train), std::move(test)};
}

inline Dataset merge_datasets(const std::vector<Dataset>& parts) {
    if (parts.empty()) throw Error("merge: no input datasets");

    Dataset out;
    out.root = "";
    std::set<std::string> image_ids, qa_ids;
    for (const auto& part : parts) {
        if (!out.name.empty()) out.name += "+";
        out.name += part.name;
        const std::string prefix = part.name + "/";

        for (const auto& img : part.images) {
            ImageRecord rec = img;
            rec.image_id = prefix + img.image_id;
            rec.source_path =
                detail::resolve_path(detail::absolute_dir(part.root),
                                     img.source_path)
                    .lexically_normal()
                    .generic_string();
            if (!image_ids.insert(rec.image_id).second)
                throw Error("merge collision on image_id \"" + rec.image_id +
                            "\"");
            out.images.push_back(std::move(rec));
        }
        for (const auto& [image_id, regs] : part.regions)
            out.regions[prefix + image_id] = regs;
        for (const auto& qa : part.qa) {
            QAPair rec = qa;
            rec.qa_id = prefix + qa.qa_id;
            rec.image_id = prefix + qa.image_id;
            if (rec.composite_ref)
                rec.composite_ref = prefix + *rec.composite_ref;
            if (auto it = rec.meta.find("composite_file");
                it != rec.meta.end())
                it->second =
                    detail::resolve_path(detail::absolute_dir(part.root),
                                         it->second)
                        .lexically_normal()
                        .generic_string();
            if (!qa_ids.insert(rec.qa_id).second)
                throw Error("merge collision on qa_id \"" + rec.qa_id + "\"");
            out.qa.push_back(std::move(rec));
        }
    }
    sort_dataset(out);
    return out;
}

}  // namespace roivqa
