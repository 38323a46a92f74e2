#include "cclip/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "cclip/rng.hpp"

namespace cclip {

namespace {

std::string slug(const std::string& name) {
    std::string out;
    for (const char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            out += '-';
        }
    }
    return out;
}

} // namespace

SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
    require(!spec.classes.empty() && spec.samples_per_class > 0 && spec.feature_dim > 0,
            "InvalidArgument", "synthetic spec needs classes, samples, and a dimension");

    Pcg64 rng(spec.seed, kStreamSynthetic);
    const std::size_t n_classes = spec.classes.size();

    Matrix centroids(n_classes, spec.feature_dim);
    for (double& v : centroids.data) {
        v = rng.next_normal();
    }

    SyntheticDataset data;
    data.classes = spec.classes;
    data.features = Matrix(n_classes * spec.samples_per_class, spec.feature_dim);

    const std::string key = "synthetic.fvecs";
    std::size_t row = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        const std::string& cls = spec.classes[c];
        std::string caption = spec.template_text;
        const auto pos = caption.find("{CLS}");
        require(pos != std::string::npos, "InvalidArgument",
                "caption template lacks {CLS}");
        caption.replace(pos, 5, cls);

        for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
            for (std::size_t j = 0; j < spec.feature_dim; ++j) {
                data.features(row, j) = centroids(c, j) + spec.noise_sigma * rng.next_normal();
            }
            PairRecord rec;
            char suffix[16];
            std::snprintf(suffix, sizeof(suffix), "%04zu", s);
            rec.id = slug(cls) + "-" + suffix;
            rec.features = key;
            rec.index = row;
            rec.caption = caption;
            rec.label = cls;
            data.records.push_back(std::move(rec));
        }
    }
    return data;
}

std::filesystem::path write_synthetic(const SyntheticDataset& data,
                                      const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto features_path = dir / "features.fvecs";
    write_fvecs(features_path, data.features);

    std::vector<PairRecord> records = data.records;
    for (auto& rec : records) {
        rec.features = features_path.string();
    }
    const auto manifest_path = dir / "manifest.jsonl";
    save_manifest(records, manifest_path);
    return manifest_path;
}

} // namespace cclip
