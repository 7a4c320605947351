#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "roivqa/bbox.hpp"
#include "roivqa/compositor.hpp"
#include "roivqa/corpus.hpp"
#include "roivqa/error.hpp"
#include "roivqa/log.hpp"
#include "roivqa/rng.hpp"

namespace roivqa {

inline const std::set<std::string>& all_generated_types() {
    static const std::set<std::string> t = {"localization", "selection",
                                            "desc_coords", "desc_highlight"};
    return t;
}

struct GenerationConfig {
    std::set<std::string> enabled_types = all_generated_types();
    std::map<std::string, int> per_type_quota;  // per image; 0/absent = all
    std::uint64_t seed = 0;
    AlphaPolicy alpha_policy = AlphaPolicy::dynamic();
    int distractor_min_count = 3;
    Fraction distractor_max_iou{3, 10};
    bool bbox_in_prompt = true;
    int outline_thickness = 3;
};

inline ojson config_json(const GenerationConfig& cfg) {
    ojson j;
    j["types"] = cfg.enabled_types;
    ojson quota = ojson::object();
    for (const auto& [type, q] : cfg.per_type_quota) quota[type] = q;
    j["quota"] = quota;
    j["seed"] = cfg.seed;
    j["alpha"] = cfg.alpha_policy.describe();
    j["bbox_in_prompt"] = cfg.bbox_in_prompt;
    j["distractor_min_count"] = cfg.distractor_min_count;
    j["distractor_max_iou"] = std::to_string(cfg.distractor_max_iou.num) +
                              "/" + std::to_string(cfg.distractor_max_iou.den);
    j["outline_thickness"] = cfg.outline_thickness;
    return j;
}

/// Exact integer test for iou(a, b) < num/den, avoiding float rounding at
/// the threshold.
inline bool iou_below(const BBox& a, const BBox& b, const Fraction& f) {
    const std::int64_t inter = intersection_area(a, b);
    const std::int64_t uni = a.area() + b.area() - inter;
    return inter * f.den < f.num * uni;
}

struct GeneratedItem {
    QAPair qa;
    std::optional<CompositedImage> composite;
    std::string gen_type;
};

namespace detail {

inline std::string question_localization(const std::string& label) {
    return "Please provide the bounding box coordinate of the region this "
           "sentence describes: " +
           label;
}

inline std::string question_selection(const std::string& label,
                                      const std::vector<Color>& colors) {
    return "Select the bounding box (bbox) describes " + label + ". A. " +
           colors[0].name + " B. " + colors[1].name + " C. " + colors[2].name +
           " D. " + colors[3].name;
}

inline std::string question_desc_coords(const BBox& bbox) {
    return "Please provide a short description for this region: " +
           format_bbox(bbox);
}

inline std::string question_desc_highlight() {
    return "Please provide a short description inside the bounding box";
}

inline int outline_thickness_for(const BBox& b, int requested) {
    const int limit = std::min(b.width(), b.height()) / 2;
    if (limit < 1) return 1;  // render fills boxes too thin to hollow out
    return std::min(requested, limit);
}

/// Shifts the correct box by 0.5-1.5 of its own width/height in a random
/// direction, clamped back inside the image without changing its size.
inline BBox jittered_box(const BBox& correct, int img_w, int img_h,
                         SplitMix64& rng) {
    const int w = correct.width();
    const int h = correct.height();
    const double mx = 0.5 + rng.next_double();
    const double my = 0.5 + rng.next_double();
    int dx = static_cast<int>(mx * w);
    int dy = static_cast<int>(my * h);
    if (rng.next_bool()) dx = -dx;
    if (rng.next_bool()) dy = -dy;
    int x1 = correct.x1 + dx;
    int y1 = correct.y1 + dy;
    x1 = std::max(0, std::min(x1, img_w - w));
    y1 = std::max(0, std::min(y1, img_h - h));
    return BBox{x1, y1, x1 + w, y1 + h};
}

}  // namespace detail

inline GeneratedItem gen_localization(const ImageRecord& img,
                                      const RegionAnnotation& region) {
    GeneratedItem out;
    out.qa.qa_id = img.image_id + ".loc." + region.region_id;
    out.qa.image_id = img.image_id;
    out.qa.qtype = QType::localization;
    out.qa.question = detail::question_localization(region.label);
    out.qa.answer = format_bbox(region.bbox);
    out.qa.provenance = Provenance::reconstructed;
    out.gen_type = "localization";
    return out;
}

/// Builds one multi-choice item: the correct region plus three distractors,
/// each outlined in a distinct palette color. Returns nullopt when three
/// valid distractors cannot be placed.
inline std::optional<GeneratedItem> gen_selection(
    const ImageRecord& img, const RegionAnnotation& correct,
    const std::vector<RegionAnnotation>& all_regions,
    const GenerationConfig& cfg) {
    const std::string qa_id = img.image_id + ".sel." + correct.region_id;
    SplitMix64 rng(item_key(cfg.seed, qa_id + "|gen"));

    std::vector<Color> colors = palette();
    shuffle(colors, rng);
    const int correct_idx = static_cast<int>(rng.next_below(4));

    std::vector<BBox> distractors;
    std::vector<BBox> taken = {correct.bbox};
    auto distinct = [&](const BBox& b) {
        for (const auto& t : taken)
            if (t == b) return false;
        return true;
    };

    std::vector<BBox> candidates;
    for (const auto& r : all_regions) {
        if (r.region_id == correct.region_id) continue;
        if (!iou_below(r.bbox, correct.bbox, cfg.distractor_max_iou)) continue;
        bool dup = false;
        for (const auto& c : candidates)
            if (c == r.bbox) dup = true;
        if (!dup && r.bbox != correct.bbox) candidates.push_back(r.bbox);
    }
    shuffle(candidates, rng);
    for (const auto& c : candidates) {
        if (static_cast<int>(distractors.size()) >= cfg.distractor_min_count)
            break;
        if (!distinct(c)) continue;
        distractors.push_back(c);
        taken.push_back(c);
    }

    while (static_cast<int>(distractors.size()) < cfg.distractor_min_count) {
        bool placed = false;
        for (int attempt = 0; attempt < 64; ++attempt) {
            BBox b = detail::jittered_box(correct.bbox, img.width, img.height,
                                          rng);
            if (!iou_below(b, correct.bbox, cfg.distractor_max_iou)) continue;
            if (!distinct(b)) continue;
            distractors.push_back(b);
            taken.push_back(b);
            placed = true;
            break;
        }
        if (!placed) return std::nullopt;
    }

    std::vector<BBox> option_boxes(4);
    option_boxes[correct_idx] = correct.bbox;
    std::size_t next = 0;
    for (int i = 0; i < 4; ++i)
        if (i != correct_idx) option_boxes[i] = distractors[next++];

    OverlaySpec spec;
    for (int i = 0; i < 4; ++i)
        spec.boxes.push_back(
            {option_boxes[i], colors[i], BoxStyle::outline,
             detail::outline_thickness_for(option_boxes[i],
                                           cfg.outline_thickness)});

    GeneratedItem out;
    out.gen_type = "selection";
    out.qa.qa_id = qa_id;
    out.qa.image_id = img.image_id;
    out.qa.qtype = QType::multichoice;
    out.qa.question = detail::question_selection(correct.label, colors);
    out.qa.answer = std::string(1, static_cast<char>('A' + correct_idx));
    out.qa.provenance = Provenance::reconstructed;
    out.qa.meta["correct"] = out.qa.answer;
    for (int i = 0; i < 4; ++i)
        out.qa.meta[std::string("color_") + static_cast<char>('A' + i)] =
            colors[i].name;

    CompositedImage comp =
        composite_item(img, spec, cfg.alpha_policy, cfg.seed, qa_id);
    out.qa.meta["alpha_used"] = std::to_string(comp.alpha_used);
    if (comp.alpha_used > 0) {
        out.qa.composite_ref = qa_id;
        out.composite = std::move(comp);
    }
    return out;
}

inline GeneratedItem gen_desc_coords(const ImageRecord& img,
                                     const RegionAnnotation& region,
                                     const GenerationConfig& cfg) {
    GeneratedItem out;
    out.gen_type = "desc_coords";
    const std::string qa_id = img.image_id + ".dcoord." + region.region_id;
    out.qa.qa_id = qa_id;
    out.qa.image_id = img.image_id;
    out.qa.qtype = QType::open;
    out.qa.question = detail::question_desc_coords(region.bbox);
    out.qa.answer = region.label;
    out.qa.provenance = Provenance::reconstructed;

    OverlaySpec spec;
    spec.boxes.push_back(
        {region.bbox, palette_color("Red"), BoxStyle::outline,
         detail::outline_thickness_for(region.bbox, cfg.outline_thickness)});
    CompositedImage comp =
        composite_item(img, spec, cfg.alpha_policy, cfg.seed, qa_id);
    out.qa.meta["alpha_used"] = std::to_string(comp.alpha_used);
    if (comp.alpha_used > 0) {
        out.qa.composite_ref = qa_id;
        out.composite = std::move(comp);
    }
    return out;
}

inline GeneratedItem gen_desc_highlight(const ImageRecord& img,
                                        const RegionAnnotation& region,
                                        const GenerationConfig& cfg) {
    GeneratedItem out;
    out.gen_type = "desc_highlight";
    const std::string qa_id = img.image_id + ".dbox." + region.region_id;
    out.qa.qa_id = qa_id;
    out.qa.image_id = img.image_id;
    out.qa.qtype = QType::open;
    out.qa.question = detail::question_desc_highlight();
    out.qa.answer = region.label;
    out.qa.provenance = Provenance::reconstructed;

    OverlaySpec spec;
    spec.boxes.push_back(
        {region.bbox, palette_color("Red"), BoxStyle::outline,
         detail::outline_thickness_for(region.bbox, cfg.outline_thickness)});
    CompositedImage comp =
        composite_item(img, spec, cfg.alpha_policy, cfg.seed, qa_id);
    out.qa.meta["alpha_used"] = std::to_string(comp.alpha_used);
    if (comp.alpha_used > 0) {
        out.qa.composite_ref = qa_id;
        out.composite = std::move(comp);
    }
    return out;
}

namespace detail {

/// Applies the per-image quota for one type: a seeded choice of region
/// indices, keyed by (seed, image, type) so scheduling cannot affect it.
inline std::vector<std::size_t> pick_regions(std::size_t n_regions,
                                             const std::string& image_id,
                                             const std::string& type, int quota,
                                             std::uint64_t seed) {
    std::vector<std::size_t> idx(n_regions);
    for (std::size_t i = 0; i < n_regions; ++i) idx[i] = i;
    if (quota <= 0 || static_cast<std::size_t>(quota) >= n_regions) return idx;
    SplitMix64 rng(item_key(seed, image_id + "|" + type + "|quota"));
    shuffle(idx, rng);
    idx.resize(static_cast<std::size_t>(quota));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

inline std::vector<GeneratedItem> generate_for_image(
    const ImageRecord& img, const std::vector<RegionAnnotation>& regions,
    const GenerationConfig& cfg, std::vector<std::string>& warnings) {
    std::vector<GeneratedItem> out;
    if (regions.empty()) return out;

    auto quota_for = [&](const std::string& type) {
        auto it = cfg.per_type_quota.find(type);
        return it == cfg.per_type_quota.end() ? 0 : it->second;
    };
    auto enabled = [&](const std::string& type) {
        return cfg.enabled_types.count(type) > 0;
    };

    if (enabled("localization")) {
        for (std::size_t i : detail::pick_regions(
                 regions.size(), img.image_id, "localization",
                 quota_for("localization"), cfg.seed))
            out.push_back(gen_localization(img, regions[i]));
    }
    if (enabled("selection")) {
        for (std::size_t i : detail::pick_regions(
                 regions.size(), img.image_id, "selection",
                 quota_for("selection"), cfg.seed)) {
            auto item = gen_selection(img, regions[i], regions, cfg);
            if (item)
                out.push_back(std::move(*item));
            else
                warnings.push_back("skipped selection item for image " +
                                   img.image_id + " region " +
                                   regions[i].region_id +
                                   ": no valid distractor placement");
        }
    }
    if (enabled("desc_coords") && cfg.bbox_in_prompt) {
        for (std::size_t i : detail::pick_regions(
                 regions.size(), img.image_id, "desc_coords",
                 quota_for("desc_coords"), cfg.seed))
            out.push_back(gen_desc_coords(img, regions[i], cfg));
    }
    if (enabled("desc_highlight")) {
        for (std::size_t i : detail::pick_regions(
                 regions.size(), img.image_id, "desc_highlight",
                 quota_for("desc_highlight"), cfg.seed))
            out.push_back(gen_desc_highlight(img, regions[i], cfg));
    }
    return out;
}

struct GenerationReport {
    std::map<std::string, long long> per_type_counts;
    long long skipped = 0;
    std::uint64_t seed = 0;
    ojson cfg;
};

struct ReconstructResult {
    Dataset dataset;
    std::vector<GeneratedItem> generated;  // sorted by qa_id
    GenerationReport report;
};

/// Runs generation over every image with `workers` threads. Results are
/// keyed per item, merged in image order, and sorted, so the outcome is a
/// pure function of (dataset, config).
inline ReconstructResult reconstruct_dataset(const Dataset& d,
                                             const GenerationConfig& cfg,
                                             int workers = 1) {
    if (workers < 1) workers = 1;

    std::vector<std::vector<GeneratedItem>> per_image(d.images.size());
    std::vector<std::vector<std::string>> per_image_warnings(d.images.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= d.images.size()) return;
            try {
                const auto& img = d.images[i];
                auto rit = d.regions.find(img.image_id);
                static const std::vector<RegionAnnotation> none;
                const auto& regs = rit == d.regions.end() ? none : rit->second;
                per_image[i] = generate_for_image(img, regs, cfg,
                                                  per_image_warnings[i]);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (workers == 1 || d.images.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        const int n = std::min<int>(workers, static_cast<int>(d.images.size()));
        for (int t = 0; t < n; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    ReconstructResult result;
    result.dataset = d;
    result.report.seed = cfg.seed;
    result.report.cfg = config_json(cfg);
    for (const auto& type : cfg.enabled_types)
        result.report.per_type_counts[type] = 0;

    std::set<std::string> existing_ids;
    for (const auto& qa : d.qa) existing_ids.insert(qa.qa_id);

    for (std::size_t i = 0; i < per_image.size(); ++i) {
        for (auto& w : per_image_warnings[i]) {
            log_warn(w);
            ++result.report.skipped;
        }
        for (auto& item : per_image[i]) {
            if (!existing_ids.insert(item.qa.qa_id).second)
                throw Error("generated qa_id collides with existing id: " +
                            item.qa.qa_id);
            result.generated.push_back(std::move(item));
        }
    }
    std::sort(result.generated.begin(), result.generated.end(),
              [](const GeneratedItem& a, const GeneratedItem& b) {
                  return a.qa.qa_id < b.qa.qa_id;
              });

    for (const auto& item : result.generated) {
        ++result.report.per_type_counts[item.gen_type];
        result.dataset.qa.push_back(item.qa);
    }
    sort_dataset(result.dataset);
    return result;
}

inline std::string sanitize_filename(const std::string& id) {
    std::string out = id;
    for (char& c : out)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return out;
}

/// Materializes a reconstruction under out_dir: copies base images in,
/// writes composites and their sidecar, the manifest, and the generation
/// report. The directory is self-contained and relocatable afterwards.
inline GenerationReport write_reconstruction(const Dataset& input,
                                             const GenerationConfig& cfg,
                                             const std::filesystem::path& out_dir,
                                             int workers = 1) {
    ReconstructResult result = reconstruct_dataset(input, cfg, workers);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "images");

    Dataset& out = result.dataset;
    out.name = "manifest";
    std::set<std::string> image_files;
    for (auto& img : out.images) {
        const std::string file =
            "images/" + sanitize_filename(img.image_id) + ".png";
        if (!image_files.insert(file).second)
            throw Error("image filename collision after sanitizing: " + file);
        write_file_bytes(out_dir / file,
                         read_file_bytes(detail::resolve_path(
                             input.root, img.source_path)));
        img.source_path = file;
    }
    out.root = out_dir;

    bool any_composite = false;
    for (const auto& item : result.generated)
        if (item.composite) any_composite = true;
    if (any_composite) fs::create_directories(out_dir / "composites");

    std::map<std::string, const QAPair*> qa_by_id;
    for (auto& qa : out.qa) qa_by_id[qa.qa_id] = &qa;

    std::ofstream sidecar;
    if (any_composite) {
        sidecar.open(out_dir / "composites.jsonl", std::ios::binary);
        if (!sidecar) throw Error("cannot write composites sidecar");
    }
    std::set<std::string> composite_files;
    for (const auto& item : result.generated) {
        if (!item.composite) continue;
        const std::string file =
            "composites/" + sanitize_filename(item.qa.qa_id) + ".png";
        if (!composite_files.insert(file).second)
            throw Error("composite filename collision after sanitizing: " +
                        file);
        write_rgb8(out_dir / file, item.composite->pixels);
        auto* qa = const_cast<QAPair*>(qa_by_id.at(item.qa.qa_id));
        qa->meta["composite_file"] = file;
        sidecar << sidecar_record(item.qa.qa_id, *item.composite).dump()
                << '\n';
    }

    save_manifest(out, out_dir / "manifest.jsonl");

    ojson rj;
    ojson counts = ojson::object();
    for (const auto& [type, n] : result.report.per_type_counts)
        counts[type] = n;
    rj["per_type_counts"] = counts;
    rj["skipped"] = result.report.skipped;
    rj["seed"] = result.report.seed;
    rj["cfg"] = result.report.cfg;
    std::ofstream report_out(out_dir / "report.json", std::ios::binary);
    report_out << rj.dump(2) << '\n';

    return result.report;
}

}  // namespace roivqa
