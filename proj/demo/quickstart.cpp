// End-to-end walkthrough: build a tiny corpus, generate region QA items,
// split it, then score a scripted model on the held-out slice.
// Everything lands under ./quickstart-out.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "roivqa/corpus.hpp"
#include "roivqa/harness.hpp"
#include "roivqa/png_io.hpp"
#include "roivqa/roiqa.hpp"

namespace fs = std::filesystem;
using namespace roivqa;

static ImageRGB8 gradient_image(int w, int h, int phase) {
    ImageRGB8 img = ImageRGB8::filled(w, h, 0, 0, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto* p = img.px(x, y);
            p[0] = static_cast<std::uint8_t>((x * 3 + phase) % 256);
            p[1] = static_cast<std::uint8_t>((y * 5 + phase) % 256);
            p[2] = static_cast<std::uint8_t>((x + y + phase) % 256);
        }
    return img;
}

int main() {
    const fs::path root = "quickstart-out";
    fs::create_directories(root / "images");

    // A five-image corpus with one annotated region per image.
    const char* labels[] = {"Heart", "Liver", "Left Lung", "Spleen", "Aorta"};
    std::ofstream manifest(root / "corpus.jsonl");
    for (int i = 0; i < 5; ++i) {
        const std::string id = "img" + std::to_string(i);
        write_rgb8(root / "images" / (id + ".png"),
                   gradient_image(256, 256, i * 40));
        manifest << R"({"kind":"image","image_id":")" << id
                 << R"(","file":"images/)" << id
                 << R"(.png","width":256,"height":256})" << "\n";
        manifest << R"({"kind":"region","image_id":")" << id
                 << R"(","region_id":"r0","label":")" << labels[i]
                 << R"(","bbox":[40,50,120,140]})" << "\n";
        manifest << R"({"kind":"qa","qa_id":")" << id
                 << R"(.q0","image_id":")" << id
                 << R"(","qtype":"closed","question":"Is this a synthetic scan?","answer":"yes","provenance":"original","meta":{}})"
                 << "\n";
    }
    manifest.close();

    Dataset corpus = load_dataset(root / "corpus.jsonl");
    std::cout << "loaded " << corpus.images.size() << " images, "
              << corpus.qa.size() << " original qa pairs\n";

    GenerationConfig cfg;
    cfg.seed = 7;
    cfg.alpha_policy = AlphaPolicy::fixed(128);
    GenerationReport report = write_reconstruction(corpus, cfg, root / "recon");
    for (const auto& [type, n] : report.per_type_counts)
        std::cout << "  generated " << n << " " << type << " items\n";

    Dataset reconstructed = load_dataset(root / "recon" / "manifest.jsonl");
    auto [train, test] = split_dataset(reconstructed, SplitSpec{7});
    std::cout << "split: " << train.images.size() << " train / "
              << test.images.size() << " test images\n";

    // A mock model that already knows every gold answer.
    std::ofstream fixture(root / "gold.jsonl");
    for (const auto& qa : reconstructed.qa) {
        ojson line;
        line["qa_id"] = qa.qa_id;
        line["answer"] = qa.answer;
        fixture << line.dump() << "\n";
    }
    fixture.close();

    MockAdapter adapter(root / "gold.jsonl");
    RunOptions opts;
    opts.max_in_flight = 4;
    opts.seed = 7;
    opts.out_dir = (root / "eval").string();
    RunResult run = run_eval(test, adapter, opts);

    std::cout << "\n" << report_markdown(run.report);
    std::cout << "\nreport written to " << (root / "eval" / "report.json")
              << "\n";
    return 0;
}
